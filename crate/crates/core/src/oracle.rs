//! Brute-force reference implementation in an explicit finite feature space.
//!
//! Every quantity is built from the feature matrix `Φ` directly: coefficient
//! matrices, residual covariance, `H_L`, leave-one-out refits. Only kernels
//! with an exact finite feature map are supported. Compiled with the `oracle`
//! feature and meant for tests.

use nalgebra::DMatrix;

use crate::design::ContrastMatrix;
use crate::error::{Error, Result};
use crate::kernel::Kernel;

const PINV_REL_TOL: f64 = 1e-12;
const RANK_REL_TOL: f64 = 1e-10;

/// Explicit feature map with `<Φ(x), Φ(y)> = k(x, y)`.
///
/// Linear: identity. Polynomial of degree 2 with offset `c`: monomials
/// `x_i^2`, `√2 x_i x_j` (`i < j`), `√(2c) x_i` and the constant `c`; the last
/// two groups vanish when `c = 0` and are then left out.
pub fn explicit_features(data: &DMatrix<f64>, kernel: &Kernel) -> Result<DMatrix<f64>> {
    match *kernel {
        Kernel::Linear => Ok(data.clone()),
        Kernel::Polynomial { degree: 1, offset } => {
            let n = data.nrows();
            let p = data.ncols();
            let mut out = DMatrix::zeros(n, p + usize::from(offset > 0.0));
            out.columns_mut(0, p).copy_from(data);
            if offset > 0.0 {
                out.column_mut(p).fill(offset.sqrt());
            }
            Ok(out)
        }
        Kernel::Polynomial { degree: 2, offset } => {
            let (n, p) = data.shape();
            let mut cols: Vec<Vec<f64>> = Vec::new();
            for i in 0..p {
                cols.push((0..n).map(|r| data[(r, i)] * data[(r, i)]).collect());
            }
            for i in 0..p {
                for j in (i + 1)..p {
                    cols.push((0..n).map(|r| 2f64.sqrt() * data[(r, i)] * data[(r, j)]).collect());
                }
            }
            if offset > 0.0 {
                for i in 0..p {
                    cols.push((0..n).map(|r| (2.0 * offset).sqrt() * data[(r, i)]).collect());
                }
                cols.push(vec![offset; n]);
            }
            Ok(DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]))
        }
        other => Err(Error::UnsupportedKernel(format!("{other:?} has no exact finite feature map"))),
    }
}

/// SVD-based Moore-Penrose inverse.
fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.max();
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if top > 0.0 && s > PINV_REL_TOL * top {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| top > 0.0 && s > RANK_REL_TOL * top).count()
}

/// Descending eigenpairs of a symmetric matrix, trimmed to values above
/// `1e-10 * largest`.
fn eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order.first().map_or(0.0, |&k| eig.eigenvalues[k]);
    let keep: Vec<usize> =
        order.into_iter().filter(|&k| top > 0.0 && eig.eigenvalues[k] > RANK_REL_TOL * top).collect();
    let values = keep.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
    (values, vectors)
}

/// Linear model fitted on explicit features.
#[derive(Debug, Clone)]
pub struct ExplicitModel {
    /// `n x D` features.
    pub phi: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub xtx_pinv: DMatrix<f64>,
    /// `p x D`, `(X'X)^- X' Φ`.
    pub theta_hat: DMatrix<f64>,
    /// `n x D`, `Φ - X Θ`.
    pub residuals: DMatrix<f64>,
    /// `D x D`, `Ê'Ê / n`.
    pub sigma_hat: DMatrix<f64>,
    /// Positive eigenvalues of `sigma_hat`, descending.
    pub eigvals: Vec<f64>,
    /// Unit eigenfunctions as `D x r` columns. Signs follow the dual vectors
    /// `Ê f / √(nλ)`, whose largest entry is made positive.
    pub eigvecs: DMatrix<f64>,
}

impl ExplicitModel {
    pub fn new(phi: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = phi.nrows();
        if x.nrows() != n {
            return Err(Error::InvalidInput("feature and design row counts differ".into()));
        }
        let xtx_pinv = pinv(&(x.transpose() * &x));
        let theta_hat = &xtx_pinv * x.transpose() * &phi;
        let residuals = &phi - &x * &theta_hat;
        let sigma_hat = residuals.transpose() * &residuals / n as f64;
        let (eigvals, mut eigvecs) = eigen_desc(&sigma_hat);
        for (s, mut f) in eigvecs.column_iter_mut().enumerate() {
            let dual = &residuals * &f / (n as f64 * eigvals[s]).sqrt();
            let max = dual.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let pivot = dual.iter().position(|v| v.abs() >= max * (1.0 - 1e-9)).unwrap_or(0);
            if dual[pivot] < 0.0 {
                f.neg_mut();
            }
        }
        Ok(ExplicitModel { phi, x, xtx_pinv, theta_hat, residuals, sigma_hat, eigvals, eigvecs })
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.rank() {
            return Err(Error::Truncation { requested: t, rank: self.rank() });
        }
        Ok(())
    }

    /// Truncated inverse `Σ_T^{-1} = Σ_{s<t} f_s f_s' / λ_s`.
    pub fn sigma_t_inv(&self, t: usize) -> Result<DMatrix<f64>> {
        self.check_t(t)?;
        let dim = self.phi.ncols();
        let mut out = DMatrix::zeros(dim, dim);
        for s in 0..t {
            let f = self.eigvecs.column(s);
            out += f * f.transpose() / self.eigvals[s];
        }
        Ok(out)
    }

    /// `(L (X'X)^- L')^{-1}`.
    fn c_inv(&self, l: &ContrastMatrix) -> DMatrix<f64> {
        let lm = l.matrix();
        pinv(&(lm * &self.xtx_pinv * lm.transpose()))
    }

    /// `H_L = (LΘ)' (L (X'X)^- L')^{-1} (LΘ)`, `D x D`.
    pub fn h_l(&self, l: &ContrastMatrix) -> Result<DMatrix<f64>> {
        if l.p() != self.x.ncols() {
            return Err(Error::InvalidInput("contrast and design column counts differ".into()));
        }
        let lt = l.matrix() * &self.theta_hat;
        Ok(lt.transpose() * self.c_inv(l) * lt)
    }
}

/// `K_T` entries `λ_s^{-1/2} <f_s, φ(y_i)>`, `t x n`.
pub fn oracle_kt(em: &ExplicitModel, t: usize) -> Result<DMatrix<f64>> {
    em.check_t(t)?;
    let mut out = em.eigvecs.columns(0, t).transpose() * em.phi.transpose();
    for (s, mut row) in out.row_iter_mut().enumerate() {
        row /= em.eigvals[s].sqrt();
    }
    Ok(out)
}

/// `trace(Σ_T^{-1} H_L)`.
pub fn oracle_statistic(em: &ExplicitModel, l: &ContrastMatrix, t: usize) -> Result<f64> {
    Ok((em.sigma_t_inv(t)? * em.h_l(l)?).trace())
}

/// Nyström quantities in explicit coordinates.
#[derive(Debug, Clone)]
pub struct OracleNystrom {
    /// Positive eigenvalues of the residual covariance of anchor coordinates.
    pub spectrum: Vec<f64>,
    pub statistic: f64,
}

/// Fit the landmark rows, take the top `m` unit eigenfunctions of their
/// residual covariance as anchors, project every residual onto them and
/// evaluate `trace(Σ^a_T^{-1} A' H_L A)`.
pub fn oracle_nystrom(
    em: &ExplicitModel,
    landmarks: &[usize],
    m: usize,
    l: &ContrastMatrix,
    t: usize,
) -> Result<OracleNystrom> {
    let q = landmarks.len();
    let phi_z = DMatrix::from_fn(q, em.phi.ncols(), |i, j| em.phi[(landmarks[i], j)]);
    let x_z = DMatrix::from_fn(q, em.x.ncols(), |i, j| em.x[(landmarks[i], j)]);
    let g_z = pinv(&(x_z.transpose() * &x_z));
    let e_z = &phi_z - &x_z * (&g_z * x_z.transpose() * &phi_z);
    let (lz, fz) = eigen_desc(&(e_z.transpose() * &e_z / q as f64));
    if m == 0 || m > lz.len() {
        return Err(Error::AnchorRank { requested: m, rank: lz.len() });
    }
    let anchors = fz.columns(0, m).into_owned();
    let coords = &em.residuals * &anchors; // n x m
    let sigma_a = coords.transpose() * &coords / em.n() as f64;
    let (la, ua) = eigen_desc(&sigma_a);
    if t == 0 || t > la.len() {
        return Err(Error::Truncation { requested: t, rank: la.len() });
    }
    let mut inv = DMatrix::zeros(m, m);
    for (s, &ls) in la.iter().enumerate().take(t) {
        let u = ua.column(s);
        inv += u * u.transpose() / ls;
    }
    let h = anchors.transpose() * em.h_l(l)? * &anchors;
    Ok(OracleNystrom { spectrum: la, statistic: (inv * h).trace() })
}

/// Response, residual and prediction inner products with `f_1..f_t`, each `n x t`.
pub fn oracle_projection_tables(em: &ExplicitModel, t: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    em.check_t(t)?;
    let f = em.eigvecs.columns(0, t);
    let fitted = &em.phi - &em.residuals;
    Ok((&em.phi * f, &em.residuals * f, fitted * f))
}

/// Coordinates `<g_j, φ(y_i)>` on the unit eigenfunctions `g_j` of
/// `H_L Σ_T^{-1}` for the `a` largest eigenvalues (`n x a`). Each `g_j` is
/// found as the null vector of `H_L Σ_T^{-1} - ξ_j I`; the sign is arbitrary.
pub fn oracle_discriminant(em: &ExplicitModel, l: &ContrastMatrix, t: usize, a: usize) -> Result<DMatrix<f64>> {
    let h = em.h_l(l)?;
    let op = &h * em.sigma_t_inv(t)?;
    // ξ from the symmetric t x t form B' H B with B = F_T Λ_T^{-1/2}.
    let mut b = em.eigvecs.columns(0, t).into_owned();
    for (s, mut c) in b.column_iter_mut().enumerate() {
        c /= em.eigvals[s].sqrt();
    }
    let small = b.transpose() * &h * &b;
    let sym = (&small + small.transpose()) * 0.5;
    let mut xi: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    xi.sort_by(|x, y| y.total_cmp(x));
    if a > xi.len() {
        return Err(Error::InvalidInput(format!("{a} axes requested from {} eigenvalues", xi.len())));
    }
    let dim = op.nrows();
    let mut out = DMatrix::zeros(em.n(), a);
    for (j, &x) in xi.iter().enumerate().take(a) {
        let shifted = &op - DMatrix::identity(dim, dim) * x;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.unwrap();
        let k = svd.singular_values.imin();
        let g = vt.row(k).transpose();
        out.set_column(j, &(&em.phi * g));
    }
    Ok(out)
}

/// Cook distance of observation `i` from an explicit leave-one-out refit,
/// `(1/d) trace(C^{-1} Δ Σ_T^{-1} Δ')` with `Δ = L(Θ - Θ_(i))` and the full-fit
/// `Σ_T` and `C = L (X'X)^- L'`.
pub fn oracle_cook(em: &ExplicitModel, l: &ContrastMatrix, t: usize, i: usize) -> Result<f64> {
    let n = em.n();
    if i >= n {
        return Err(Error::InvalidInput(format!("observation {i} out of range")));
    }
    let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
    let x_i = DMatrix::from_fn(n - 1, em.x.ncols(), |r, c| em.x[(keep[r], c)]);
    let phi_i = DMatrix::from_fn(n - 1, em.phi.ncols(), |r, c| em.phi[(keep[r], c)]);
    if matrix_rank(&x_i) < matrix_rank(&em.x) {
        return Err(Error::Leverage { index: i, leverage: 1.0 });
    }
    let theta_i = pinv(&(x_i.transpose() * &x_i)) * x_i.transpose() * phi_i;
    let delta = l.matrix() * (&em.theta_hat - theta_i);
    let value = (em.c_inv(l) * &delta * em.sigma_t_inv(t)? * delta.transpose()).trace() / l.d() as f64;
    Ok(value)
}
