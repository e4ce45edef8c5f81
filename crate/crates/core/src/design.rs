//! Factor designs, projectors and contrasts.
//!
//! Designs are encoded as one-hot indicator blocks, one block per factor, with
//! levels ordered by first appearance in the input. `(X'X)^-` is always the
//! Moore-Penrose inverse, so rank-deficient designs such as the additive
//! two-way model are handled without dropping columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, pinv_sym, sym_eigen};

/// One categorical factor and the design columns it occupies.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub name: String,
    /// Level names in first-appearance order.
    pub levels: Vec<String>,
    /// First design column of this factor's indicator block.
    pub offset: usize,
    /// Level index of every observation.
    pub codes: Vec<usize>,
}

impl Factor {
    fn from_labels<S: AsRef<str>>(name: &str, labels: &[S], offset: usize) -> Factor {
        let mut levels: Vec<String> = Vec::new();
        let codes = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                match levels.iter().position(|x| x == l) {
                    Some(k) => k,
                    None => {
                        levels.push(l.to_string());
                        levels.len() - 1
                    }
                }
            })
            .collect();
        Factor { name: name.to_string(), levels, offset, codes }
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

/// Design matrix together with its cached projectors.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    x: DMatrix<f64>,
    xtx_pinv: DMatrix<f64>,
    p_x: DMatrix<f64>,
    p_x_perp: DMatrix<f64>,
    leverages: DVector<f64>,
    rank: usize,
    factors: Vec<Factor>,
}

impl DesignBundle {
    /// Build from an arbitrary design matrix (no factor metadata).
    pub fn from_matrix(x: DMatrix<f64>) -> Result<Self> {
        Self::build(x, Vec::new())
    }

    fn build(x: DMatrix<f64>, factors: Vec<Factor>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::DegenerateDesign("design matrix is empty".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("design matrix contains non-finite values".into()));
        }
        let xtx = x.transpose() * &x;
        let (xtx_pinv, rank) = pinv_sym(&xtx);
        if rank == 0 {
            return Err(Error::DegenerateDesign("design matrix has rank zero".into()));
        }
        let p_x = &x * &xtx_pinv * x.transpose();
        let p_x = crate::linalg::symmetrize(&p_x);
        let p_x_perp = DMatrix::identity(n, n) - &p_x;
        let leverages = p_x.diagonal();
        Ok(DesignBundle { x, xtx_pinv, p_x, p_x_perp, leverages, rank, factors })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Moore-Penrose inverse of `X'X`.
    pub fn xtx_pinv(&self) -> &DMatrix<f64> {
        &self.xtx_pinv
    }

    pub fn p_x(&self) -> &DMatrix<f64> {
        &self.p_x
    }

    pub fn p_x_perp(&self) -> &DMatrix<f64> {
        &self.p_x_perp
    }

    /// Diagonal of `P_X`.
    pub fn leverages(&self) -> &DVector<f64> {
        &self.leverages
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, name: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.name == name)
    }

    /// Rename factors in order; extra names are ignored.
    pub fn with_factor_names<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        for (f, name) in self.factors.iter_mut().zip(names) {
            f.name = name.as_ref().to_string();
        }
        self
    }

    /// `P_X^perp * m`, computed as `m - X (X'X)^- X' m` without forming `P_X`.
    pub fn residualize(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m - self.project(m)
    }

    /// `P_X * m` in factored form.
    pub fn project(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let xtm = self.x.transpose() * m;
        &self.x * (&self.xtx_pinv * xtm)
    }

    /// Design restricted to the given observations (used for landmark fits).
    /// Factor metadata keeps the full level lists so column positions agree.
    /// The returned list names the levels with no observation left.
    pub fn select_rows(&self, indices: &[usize]) -> Result<(DesignBundle, Vec<String>)> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidInput(format!("row index {bad} out of range")));
        }
        let p = self.p();
        let x = DMatrix::from_fn(indices.len(), p, |i, j| self.x[(indices[i], j)]);
        let factors: Vec<Factor> = self
            .factors
            .iter()
            .map(|f| Factor { codes: indices.iter().map(|&i| f.codes[i]).collect(), ..f.clone() })
            .collect();
        let mut lost = Vec::new();
        for f in &factors {
            for (k, level) in f.levels.iter().enumerate() {
                if !f.codes.contains(&k) {
                    lost.push(format!("{}={}", f.name, level));
                }
            }
        }
        Ok((DesignBundle::build(x, factors)?, lost))
    }

    /// Group identifier per observation: the combination of all factor levels.
    pub fn cell_codes(&self) -> Vec<usize> {
        let mut cells: Vec<Vec<usize>> = Vec::new();
        (0..self.n())
            .map(|i| {
                let key: Vec<usize> = self.factors.iter().map(|f| f.codes[i]).collect();
                match cells.iter().position(|c| *c == key) {
                    Some(k) => k,
                    None => {
                        cells.push(key);
                        cells.len() - 1
                    }
                }
            })
            .collect()
    }
}

fn one_hot(factor: &Factor, x: &mut DMatrix<f64>) {
    for (i, &c) in factor.codes.iter().enumerate() {
        x[(i, factor.offset + c)] = 1.0;
    }
}

/// One-way design: one indicator column per level.
pub fn one_way_design<S: AsRef<str>>(labels: &[S]) -> Result<DesignBundle> {
    let f = Factor::from_labels("A", labels, 0);
    if f.level_count() < 2 {
        return Err(Error::DegenerateDesign("one-way design needs at least two levels".into()));
    }
    let mut x = DMatrix::zeros(labels.len(), f.level_count());
    one_hot(&f, &mut x);
    DesignBundle::build(x, vec![f])
}

/// Additive two-way design `[A | B]` without interaction.
pub fn two_way_additive_design<S: AsRef<str>, T: AsRef<str>>(labels_a: &[S], labels_b: &[T]) -> Result<DesignBundle> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::InvalidInput("factor label lists differ in length".into()));
    }
    let fa = Factor::from_labels("A", labels_a, 0);
    let fb = Factor::from_labels("B", labels_b, fa.level_count());
    if fa.level_count() < 2 || fb.level_count() < 2 {
        return Err(Error::DegenerateDesign("each factor needs at least two levels".into()));
    }
    let mut x = DMatrix::zeros(labels_a.len(), fa.level_count() + fb.level_count());
    one_hot(&fa, &mut x);
    one_hot(&fb, &mut x);
    DesignBundle::build(x, vec![fa, fb])
}

/// Surjective `d x p` contrast matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    l: DMatrix<f64>,
}

impl ContrastMatrix {
    /// Rows must be linearly independent (rank = row count, with singular
    /// values above `1e-10 * largest`).
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        let (d, p) = l.shape();
        if d == 0 || p == 0 {
            return Err(Error::InvalidInput("contrast matrix is empty".into()));
        }
        if !l.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("contrast matrix contains non-finite values".into()));
        }
        if d > p {
            return Err(Error::InvalidInput(format!("contrast has {d} rows but only {p} columns")));
        }
        let sv = l.clone().singular_values();
        let top = sv.max();
        let rank = sv.iter().filter(|&&s| top > 0.0 && s > 1e-10 * top).count();
        if rank != d {
            return Err(Error::InvalidInput(format!("contrast rows are dependent (rank {rank} < {d})")));
        }
        Ok(ContrastMatrix { l })
    }

    pub fn d(&self) -> usize {
        self.l.nrows()
    }

    pub fn p(&self) -> usize {
        self.l.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Column of the first nonzero coefficient in the first row.
    pub fn first_column(&self) -> usize {
        self.l.row(0).iter().position(|&v| v != 0.0).unwrap_or(0)
    }
}

/// `(u-1) x u` matrix with rows `e_k - e_{k+1}`: tests equality of all levels.
pub fn pairwise_contrast(u: usize) -> Result<ContrastMatrix> {
    if u < 2 {
        return Err(Error::InvalidInput(format!("pairwise contrast needs at least 2 levels, got {u}")));
    }
    let mut l = DMatrix::zeros(u - 1, u);
    for k in 0..u - 1 {
        l[(k, k)] = 1.0;
        l[(k, k + 1)] = -1.0;
    }
    ContrastMatrix::new(l)
}

/// Single-row contrast `e_a - e_b` over `u` levels.
pub fn pair_contrast(u: usize, a: usize, b: usize) -> Result<ContrastMatrix> {
    if a >= u || b >= u || a == b {
        return Err(Error::InvalidInput(format!("invalid level pair ({a}, {b}) for {u} levels")));
    }
    let mut l = DMatrix::zeros(1, u);
    l[(0, a)] = 1.0;
    l[(0, b)] = -1.0;
    ContrastMatrix::new(l)
}

/// Embed `inner` at column `offset` of a `d x total_cols` zero matrix.
pub fn padded_contrast(inner: &ContrastMatrix, offset: usize, total_cols: usize) -> Result<ContrastMatrix> {
    if offset + inner.p() > total_cols {
        return Err(Error::InvalidInput(format!(
            "contrast with {} columns at offset {offset} does not fit in {total_cols}",
            inner.p()
        )));
    }
    let mut l = DMatrix::zeros(inner.d(), total_cols);
    l.view_mut((0, offset), (inner.d(), inner.p())).copy_from(inner.matrix());
    Ok(ContrastMatrix { l })
}

/// Orthogonal projector `D = W C^{-1} W'` with `W = X (X'X)^- L'` and
/// `C = L (X'X)^- L'`.
#[derive(Debug, Clone)]
pub struct HypothesisProjector {
    d_matrix: DMatrix<f64>,
    w: DMatrix<f64>,
    c_inv: DMatrix<f64>,
}

impl HypothesisProjector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d_matrix
    }

    /// Contrast rank `d` (= trace of D).
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    /// `W = X (X'X)^- L'`, `n x d`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `(L (X'X)^- L')^{-1}`, `d x d`.
    pub fn c_inv(&self) -> &DMatrix<f64> {
        &self.c_inv
    }

    /// `trace(A D A')` for a `t x n` matrix `A`, via `(A W) C^{-1} (A W)'`.
    pub fn quadratic_trace(&self, a: &DMatrix<f64>) -> f64 {
        let aw = a * &self.w;
        (&aw * &self.c_inv * aw.transpose()).trace()
    }
}

pub fn hypothesis_projector(design: &DesignBundle, l: &ContrastMatrix) -> Result<HypothesisProjector> {
    if l.p() != design.p() {
        return Err(Error::InvalidInput(format!("contrast has {} columns but the design has {}", l.p(), design.p())));
    }
    let g = design.xtx_pinv();
    let lm = l.matrix();
    // Estimability: L must lie in the row space of X, i.e. L G X'X = L.
    let xtx = design.x().transpose() * design.x();
    let resid = max_abs(&(lm * g * &xtx - lm));
    if resid > 1e-8 * max_abs(lm).max(1.0) {
        return Err(Error::NonTestableContrast(format!(
            "contrast is not estimable under this design (residual {resid:e})"
        )));
    }
    let c = lm * g * lm.transpose();
    let eig = sym_eigen(&c);
    let top = eig.values[0];
    let bottom = *eig.values.last().unwrap();
    if top.is_nan() || top <= 0.0 || bottom <= top / 1e12 {
        return Err(Error::NonTestableContrast(format!(
            "L (X'X)^- L' is singular (eigenvalues in [{bottom:e}, {top:e}])"
        )));
    }
    let d = l.d();
    let mut c_inv = DMatrix::zeros(d, d);
    for (k, &lambda) in eig.values.iter().enumerate() {
        let v = eig.vectors.column(k);
        c_inv.ger(1.0 / lambda, &v, &v, 1.0);
    }
    let w = design.x() * g * lm.transpose();
    let d_matrix = crate::linalg::symmetrize(&(&w * &c_inv * w.transpose()));
    Ok(HypothesisProjector { d_matrix, w, c_inv })
}
