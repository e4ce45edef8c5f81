//! Nyström approximation of the residual covariance.
//!
//! `q` landmark observations are fitted on their own; the leading `m`
//! eigenfunctions of the landmark residual covariance (the anchors) span the
//! subspace onto which every residual is projected. The TKHL statistic is then
//! evaluated against the projected covariance. The hypothesis operator itself
//! is not approximated.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{hypothesis_projector, ContrastMatrix, DesignBundle};
use crate::error::{Error, Result};
use crate::kernel::{cross_gram, gram, GramMatrix, Kernel};
use crate::linalg::{sym_eigen, top_eigen, SymEigen};
use crate::model::{cap_truncation, residual_gram, TestMethod, TestResult, EIGEN_REL_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkStrategy {
    #[default]
    Uniform,
    /// Proportional allocation within groups.
    Stratified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkPlan {
    /// Sorted, distinct observation indices.
    pub indices: Vec<usize>,
    pub strategy: LandmarkStrategy,
    pub seed: u64,
}

impl LandmarkPlan {
    pub fn q(&self) -> usize {
        self.indices.len()
    }
}

/// Default landmark count: `min(n, max(100, n / 10))`.
pub fn default_landmarks(n: usize) -> usize {
    n.min(100.max(n / 10))
}

/// Default anchor count: `min(q - rank(X^I), 50)`, at least 1.
pub fn default_anchors(q: usize, landmark_rank: usize) -> usize {
    q.saturating_sub(landmark_rank).clamp(1, 50)
}

/// Draw `q` landmarks out of `n` observations without replacement.
///
/// Stratified sampling gives each group `floor(q * n_g / n)` landmarks and
/// hands the remaining ones out one at a time in group order.
pub fn sample_landmarks(
    n: usize,
    q: usize,
    groups: Option<&[usize]>,
    strategy: LandmarkStrategy,
    seed: u64,
) -> Result<LandmarkPlan> {
    if q < 2 || q > n {
        return Err(Error::InvalidInput(format!("landmark count {q} must lie in [2, {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = match strategy {
        LandmarkStrategy::Uniform => rand::seq::index::sample(&mut rng, n, q).into_vec(),
        LandmarkStrategy::Stratified => {
            let groups = groups.ok_or_else(|| Error::InvalidInput("stratified sampling needs group labels".into()))?;
            if groups.len() != n {
                return Err(Error::InvalidInput(format!("{} group labels for {n} observations", groups.len())));
            }
            let g_count = groups.iter().copied().max().map_or(0, |g| g + 1);
            let members: Vec<Vec<usize>> = (0..g_count).map(|g| (0..n).filter(|&i| groups[i] == g).collect()).collect();
            let mut alloc: Vec<usize> = members.iter().map(|m| q * m.len() / n).collect();
            let mut remaining = q - alloc.iter().sum::<usize>();
            while remaining > 0 {
                for (g, m) in members.iter().enumerate() {
                    if remaining > 0 && alloc[g] < m.len() {
                        alloc[g] += 1;
                        remaining -= 1;
                    }
                }
            }
            let mut out = Vec::with_capacity(q);
            for (m, &k) in members.iter().zip(&alloc) {
                out.extend(rand::seq::index::sample(&mut rng, m.len(), k).into_iter().map(|j| m[j]));
            }
            out
        }
    };
    indices.sort_unstable();
    Ok(LandmarkPlan { indices, strategy, seed })
}

/// `K_e^Z = P_{X^I}^perp K_Z P_{X^I}^perp / q`.
pub fn landmark_residual_gram(gram_z: &GramMatrix, landmark_design: &DesignBundle) -> Result<DMatrix<f64>> {
    let q = gram_z.n();
    if landmark_design.n() != q {
        return Err(Error::InvalidInput(format!(
            "landmark gram has {q} rows but the landmark design has {}",
            landmark_design.n()
        )));
    }
    Ok(residual_gram(gram_z.values(), landmark_design, q as f64))
}

/// Leading eigensystem of the landmark residual Gram matrix.
#[derive(Debug, Clone)]
pub struct AnchorSystem {
    /// `q x m` orthonormal eigenvectors.
    pub u_z: DMatrix<f64>,
    /// Descending positive eigenvalues.
    pub lambda_z: Vec<f64>,
    pub landmark_design: DesignBundle,
}

impl AnchorSystem {
    pub fn m(&self) -> usize {
        self.lambda_z.len()
    }

    pub fn q(&self) -> usize {
        self.u_z.nrows()
    }

    /// `Λ_Z^{-1/2} U_Z' P_{X^I}^perp K_{Z,Y}` (`m x n`). Scaled by `q^{-1/2}`
    /// its rows are the anchors' inner products with each `φ(y_i)`.
    fn whitened_projection(&self, cross: &DMatrix<f64>) -> DMatrix<f64> {
        let pz_cross = self.landmark_design.residualize(cross);
        let mut b = self.u_z.transpose() * pz_cross;
        for (s, mut row) in b.row_iter_mut().enumerate() {
            row /= self.lambda_z[s].sqrt();
        }
        b
    }
}

pub fn build_anchors(k_e_z: &DMatrix<f64>, landmark_design: DesignBundle, m: usize) -> Result<AnchorSystem> {
    if m == 0 {
        return Err(Error::InvalidInput("anchor count must be at least 1".into()));
    }
    if !k_e_z.is_square() || k_e_z.nrows() != landmark_design.n() {
        return Err(Error::InvalidInput("landmark residual gram does not match the landmark design".into()));
    }
    let eig = top_eigen(k_e_z, m, 1e-12);
    let found = eig.numerical_rank(EIGEN_REL_TOL);
    if found < m {
        let rank = sym_eigen(k_e_z).numerical_rank(EIGEN_REL_TOL);
        return Err(Error::AnchorRank { requested: m, rank });
    }
    let SymEigen { values, vectors } = eig.truncate(m);
    Ok(AnchorSystem { u_z: vectors, lambda_z: values, landmark_design })
}

fn check_cross(anchors: &AnchorSystem, cross: &DMatrix<f64>, design: &DesignBundle) -> Result<()> {
    if cross.nrows() != anchors.q() || cross.ncols() != design.n() {
        return Err(Error::InvalidInput(format!(
            "cross gram is {}x{}, expected {}x{}",
            cross.nrows(),
            cross.ncols(),
            anchors.q(),
            design.n()
        )));
    }
    Ok(())
}

fn nystrom_gram_from_projection(b: &DMatrix<f64>, design: &DesignBundle, q: usize) -> DMatrix<f64> {
    let n = design.n();
    let pb = design.residualize(&b.transpose());
    crate::linalg::symmetrize(&(pb.transpose() * &pb)) / (n * q) as f64
}

/// `K_e^a = (nq)^{-1} Λ_Z^{-1/2} U_Z' P_{X^I}^perp K_{Z,Y} P_X^perp K_{Y,Z} P_{X^I}^perp U_Z Λ_Z^{-1/2}`.
pub fn nystrom_gram(anchors: &AnchorSystem, cross: &DMatrix<f64>, design: &DesignBundle) -> Result<DMatrix<f64>> {
    check_cross(anchors, cross, design)?;
    let b = anchors.whitened_projection(cross);
    Ok(nystrom_gram_from_projection(&b, design, anchors.q()))
}

/// Nyström TKHL test. One-shot version of [`NystromModel::test`].
pub fn nystrom_test(
    anchors: &AnchorSystem,
    cross: &DMatrix<f64>,
    design: &DesignBundle,
    l: &ContrastMatrix,
    t: usize,
) -> Result<TestResult> {
    check_cross(anchors, cross, design)?;
    let parts = NystromParts::new(anchors, cross, design);
    parts.test(design, l, t, Vec::new())
}

struct NystromParts {
    projection: DMatrix<f64>,
    k_e_a: DMatrix<f64>,
    eig: SymEigen,
    q: usize,
}

impl NystromParts {
    fn new(anchors: &AnchorSystem, cross: &DMatrix<f64>, design: &DesignBundle) -> Self {
        let projection = anchors.whitened_projection(cross);
        let k_e_a = nystrom_gram_from_projection(&projection, design, anchors.q());
        let eig = sym_eigen(&k_e_a);
        let rank = eig.numerical_rank(EIGEN_REL_TOL);
        NystromParts { projection, k_e_a, eig: eig.truncate(rank), q: anchors.q() }
    }

    fn test(
        &self,
        design: &DesignBundle,
        l: &ContrastMatrix,
        t: usize,
        mut warnings: Vec<String>,
    ) -> Result<TestResult> {
        let rank = self.eig.values.len();
        if rank == 0 {
            return Err(Error::DegenerateFit);
        }
        let t = cap_truncation(t, rank, &mut warnings)?;
        let projector = hypothesis_projector(design, l)?;
        // K_T^a = (q Λ_a)^{-1/2} U_a' Λ_Z^{-1/2} U_Z' P_{X^I}^perp K_{Z,Y}
        let mut kt = self.eig.vectors.columns(0, t).transpose() * &self.projection;
        for (s, mut row) in kt.row_iter_mut().enumerate() {
            row /= (self.q as f64 * self.eig.values[s]).sqrt();
        }
        let statistic = projector.quadratic_trace(&kt).max(0.0);
        TestResult::from_statistic(statistic, l.d(), t, TestMethod::Nystrom, warnings)
    }
}

/// Landmarks, anchors and the diagonalised Nyström residual covariance,
/// ready to run tests for several contrasts and truncations.
pub struct NystromModel {
    plan: LandmarkPlan,
    anchors: AnchorSystem,
    design: DesignBundle,
    parts: NystromParts,
    warnings: Vec<String>,
}

impl NystromModel {
    /// Build from raw data: only `K_Z` and `K_{Z,Y}` are evaluated.
    pub fn fit(
        data: &DMatrix<f64>,
        kernel: &Kernel,
        design: &DesignBundle,
        plan: LandmarkPlan,
        m: usize,
    ) -> Result<Self> {
        if data.nrows() != design.n() {
            return Err(Error::InvalidInput(format!(
                "data has {} rows but the design has {}",
                data.nrows(),
                design.n()
            )));
        }
        let z = DMatrix::from_fn(plan.q(), data.ncols(), |i, j| data[(plan.indices[i], j)]);
        let gram_z = gram(&z, kernel)?;
        let cross = cross_gram(&z, data, kernel)?;
        Self::assemble(gram_z, cross, design, plan, m)
    }

    /// Build from a precomputed full Gram matrix.
    pub fn from_gram(full: &GramMatrix, design: &DesignBundle, plan: LandmarkPlan, m: usize) -> Result<Self> {
        let gram_z = full.select(&plan.indices);
        let n = full.n();
        let cross = DMatrix::from_fn(plan.q(), n, |i, j| full.values()[(plan.indices[i], j)]);
        Self::assemble(gram_z, cross, design, plan, m)
    }

    fn assemble(
        gram_z: GramMatrix,
        cross: DMatrix<f64>,
        design: &DesignBundle,
        plan: LandmarkPlan,
        m: usize,
    ) -> Result<Self> {
        let (landmark_design, lost) = design.select_rows(&plan.indices)?;
        let warnings = lost.into_iter().map(|lvl| format!("landmarks contain no observation of level {lvl}")).collect();
        let k_e_z = landmark_residual_gram(&gram_z, &landmark_design)?;
        let anchors = build_anchors(&k_e_z, landmark_design, m)?;
        check_cross(&anchors, &cross, design)?;
        let parts = NystromParts::new(&anchors, &cross, design);
        Ok(NystromModel { plan, anchors, design: design.clone(), parts, warnings })
    }

    pub fn plan(&self) -> &LandmarkPlan {
        &self.plan
    }

    pub fn anchors(&self) -> &AnchorSystem {
        &self.anchors
    }

    /// `m x m` Nyström residual Gram matrix `K_e^a`.
    pub fn k_e_a(&self) -> &DMatrix<f64> {
        &self.parts.k_e_a
    }

    /// Descending positive eigenvalues of `K_e^a`.
    pub fn eigvals(&self) -> &[f64] {
        &self.parts.eig.values
    }

    pub fn rank(&self) -> usize {
        self.parts.eig.values.len()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn design(&self) -> &DesignBundle {
        &self.design
    }

    pub fn test(&self, l: &ContrastMatrix, t: usize) -> Result<TestResult> {
        self.parts.test(&self.design, l, t, self.warnings.clone())
    }
}
