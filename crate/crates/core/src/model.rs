//! Linear model on kernel embeddings and the truncated kernel
//! Hotelling-Lawley (TKHL) test.
//!
//! The residual covariance operator is never formed. Its spectrum is read
//! off the dual matrix `K_E = P_X^perp K_Y P_X^perp / n`, and the statistic is
//! `trace(K_T D K_T')` with `K_T = n^{-1/2} Λ^{-1} U' P_X^perp K_Y`. That trace is
//! the quantity compared with `χ²(d T)`: it already carries the factor `n`
//! in front of the `1/n`-normalised trace.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{hypothesis_projector, padded_contrast, pair_contrast, ContrastMatrix, DesignBundle};
use crate::error::{Error, Result};
use crate::kernel::GramMatrix;
use crate::linalg::{max_abs, sym_eigen, top_eigen, SymEigen};
use crate::stats::{bh_adjust, chi2_sf};

/// Eigenvalues of `K_E` at or below this fraction of the largest are dropped.
pub const EIGEN_REL_TOL: f64 = 1e-10;

/// Statistics below this value are reported as exactly zero (`p = 1`).
pub(crate) const ZERO_STATISTIC: f64 = 1e-20;

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Compute only this many leading eigenpairs (Lanczos). `None` runs the
    /// full dense eigendecomposition.
    pub max_components: Option<usize>,
}

/// Residual Gram matrix and its eigensystem.
#[derive(Debug, Clone)]
pub struct FittedModel {
    gram: GramMatrix,
    design: DesignBundle,
    k_e: DMatrix<f64>,
    eigvals: Vec<f64>,
    eigvecs: DMatrix<f64>,
}

pub fn fit(gram: GramMatrix, design: DesignBundle) -> Result<FittedModel> {
    fit_with(gram, design, &FitOptions::default())
}

pub fn fit_with(gram: GramMatrix, design: DesignBundle, options: &FitOptions) -> Result<FittedModel> {
    let n = gram.n();
    if n != design.n() {
        return Err(Error::InvalidInput(format!("gram matrix has {n} rows but the design has {}", design.n())));
    }
    let k_e = residual_gram(gram.values(), &design, n as f64);
    let scale = max_abs(gram.values()) / n as f64;
    if max_abs(&k_e) <= 1e-12 * scale {
        return Err(Error::DegenerateFit);
    }
    let eig = match options.max_components {
        Some(k) => top_eigen(&k_e, k, 1e-12),
        None => sym_eigen(&k_e),
    };
    let rank = eig.numerical_rank(EIGEN_REL_TOL);
    if rank == 0 {
        return Err(Error::DegenerateFit);
    }
    let SymEigen { values, vectors } = eig.truncate(rank);
    Ok(FittedModel { gram, design, k_e, eigvals: values, eigvecs: vectors })
}

/// `P^perp K P^perp / scale` for symmetric `K`, using the factored projector.
pub(crate) fn residual_gram(k: &DMatrix<f64>, design: &DesignBundle, scale: f64) -> DMatrix<f64> {
    let left = design.residualize(k);
    let both = design.residualize(&left.transpose());
    crate::linalg::symmetrize(&both) / scale
}

impl FittedModel {
    pub fn n(&self) -> usize {
        self.gram.n()
    }

    /// Number of retained eigenpairs.
    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn design(&self) -> &DesignBundle {
        &self.design
    }

    pub fn k_e(&self) -> &DMatrix<f64> {
        &self.k_e
    }

    /// Descending positive eigenvalues of `K_E`.
    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    /// `n x rank` orthonormal eigenvectors of `K_E`.
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub(crate) fn check_truncation(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.rank() {
            return Err(Error::Truncation { requested: t, rank: self.rank() });
        }
        Ok(())
    }

    /// `P_X^perp U_t`, `n x t`.
    pub(crate) fn residual_basis(&self, t: usize) -> DMatrix<f64> {
        self.design.residualize(&self.eigvecs.columns(0, t).into_owned())
    }
}

/// `K_T = n^{-1/2} Λ_t^{-1} U_t' P_X^perp K_Y` (`t x n`). Entry `(s, i)` is
/// `λ_s^{-1/2} <f_s, φ(y_i)>` for the unit eigenfunction `f_s` of the
/// residual covariance operator.
pub fn kt_matrix(model: &FittedModel, t: usize) -> Result<DMatrix<f64>> {
    model.check_truncation(t)?;
    let n = model.n() as f64;
    let pu = model.residual_basis(t);
    let mut kt = pu.transpose() * model.gram.values();
    for (s, mut row) in kt.row_iter_mut().enumerate() {
        row /= n.sqrt() * model.eigvals[s];
    }
    Ok(kt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMethod {
    Exact,
    Nystrom,
}

/// Outcome of one TKHL test. JSON shape: `{statistic, df, p_value, truncation, method}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub truncation: usize,
    pub method: TestMethod,
    /// Non-fatal conditions (capped truncation, lost landmark levels).
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl TestResult {
    pub(crate) fn from_statistic(
        statistic: f64,
        d: usize,
        t: usize,
        method: TestMethod,
        warnings: Vec<String>,
    ) -> Result<TestResult> {
        let statistic = if statistic <= ZERO_STATISTIC { 0.0 } else { statistic };
        let df = d * t;
        Ok(TestResult { statistic, df, p_value: chi2_sf(statistic, df)?, truncation: t, method, warnings })
    }
}

/// Caps `t` at `rank`, recording a warning when it does.
pub(crate) fn cap_truncation(t: usize, rank: usize, warnings: &mut Vec<String>) -> Result<usize> {
    if t == 0 {
        return Err(Error::InvalidInput("truncation must be at least 1".into()));
    }
    if t > rank {
        warnings.push(format!("truncation {t} capped at residual rank {rank}"));
        Ok(rank)
    } else {
        Ok(t)
    }
}

/// TKHL test of `H0: L Θ = 0` with spectral truncation `t`.
///
/// `t` above the numerical rank is capped (with a warning in the result).
pub fn tkhl_test(model: &FittedModel, l: &ContrastMatrix, t: usize) -> Result<TestResult> {
    let mut warnings = Vec::new();
    let t = cap_truncation(t, model.rank(), &mut warnings)?;
    let projector = hypothesis_projector(&model.design, l)?;
    let kt = kt_matrix(model, t)?;
    let statistic = projector.quadratic_trace(&kt).max(0.0);
    TestResult::from_statistic(statistic, l.d(), t, TestMethod::Exact, warnings)
}

/// One pairwise comparison between two levels of a factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub level_a: String,
    pub level_b: String,
    #[serde(flatten)]
    pub result: TestResult,
    /// Benjamini-Hochberg adjusted p-value across all pairs of the factor.
    pub adjusted_p_value: f64,
}

/// Run `test` on every unordered level pair of `factor` and BH-adjust.
pub fn pairwise_with<F>(design: &DesignBundle, factor: &str, mut test: F) -> Result<Vec<PairwiseResult>>
where
    F: FnMut(&ContrastMatrix) -> Result<TestResult>,
{
    let f = design.factor(factor).ok_or_else(|| Error::InvalidInput(format!("unknown factor '{factor}'")))?;
    let u = f.level_count();
    if u < 2 {
        return Err(Error::InvalidInput(format!("factor '{factor}' has fewer than two levels")));
    }
    let mut out = Vec::with_capacity(u * (u - 1) / 2);
    for a in 0..u {
        for b in (a + 1)..u {
            let l = padded_contrast(&pair_contrast(u, a, b)?, f.offset, design.p())?;
            let result = test(&l)?;
            out.push(PairwiseResult {
                level_a: f.levels[a].clone(),
                level_b: f.levels[b].clone(),
                result,
                adjusted_p_value: 0.0,
            });
        }
    }
    let raw: Vec<f64> = out.iter().map(|r| r.result.p_value).collect();
    for (r, adj) in out.iter_mut().zip(bh_adjust(&raw)) {
        r.adjusted_p_value = adj;
    }
    Ok(out)
}

/// Exact TKHL test for every level pair of `factor`, with BH adjustment.
pub fn pairwise_tests(model: &FittedModel, factor: &str, t: usize) -> Result<Vec<PairwiseResult>> {
    pairwise_with(&model.design, factor, |l| tkhl_test(model, l, t))
}

/// Symmetric `U x U` matrix of pairwise statistics (zero diagonal), levels in
/// factor order.
pub fn pairwise_statistic_matrix(levels: &[String], results: &[PairwiseResult]) -> DMatrix<f64> {
    let u = levels.len();
    let mut m = DMatrix::zeros(u, u);
    for r in results {
        let a = levels.iter().position(|l| *l == r.level_a);
        let b = levels.iter().position(|l| *l == r.level_b);
        if let (Some(a), Some(b)) = (a, b) {
            m[(a, b)] = r.result.statistic;
            m[(b, a)] = r.result.statistic;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{one_way_design, pairwise_contrast};
    use crate::kernel::{gram, Kernel};

    fn data(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        DMatrix::from_fn(n, p, |_, j| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * (1.0 + 0.3 * j as f64)
        })
    }

    fn labels(n: usize, u: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{}", i % u)).collect()
    }

    #[test]
    fn perfect_fit_is_degenerate() {
        let design = one_way_design(&labels(6, 2)).unwrap();
        let g = gram(&design.x().clone(), &Kernel::Linear).unwrap();
        assert!(matches!(fit(g, design), Err(Error::DegenerateFit)));
    }

    #[test]
    fn gram_size_mismatch() {
        let design = one_way_design(&labels(6, 2)).unwrap();
        let g = gram(&data(5, 2, 1), &Kernel::Linear).unwrap();
        assert!(matches!(fit(g, design), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rank_bounded_by_residual_dimension() {
        let y = data(9, 4, 2);
        let design = one_way_design(&labels(9, 3)).unwrap();
        let g = gram(&y, &Kernel::Gaussian { bandwidth: 0.5 }).unwrap();
        let m = fit(g, design).unwrap();
        assert!(m.rank() <= 9 - 3);
        let utu = m.eigvecs().transpose() * m.eigvecs();
        assert!(max_abs(&(utu - DMatrix::identity(m.rank(), m.rank()))) < 1e-8);
        assert!(m.eigvals().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identical_groups_give_zero_statistic() {
        let base = data(5, 3, 3);
        let y = DMatrix::from_fn(10, 3, |i, j| base[(i % 5, j)]);
        let lab: Vec<&str> = (0..10).map(|i| if i < 5 { "a" } else { "b" }).collect();
        let design = one_way_design(&lab).unwrap();
        let g = gram(&y, &Kernel::Gaussian { bandwidth: 1.0 }).unwrap();
        let m = fit(g, design).unwrap();
        let r = tkhl_test(&m, &pairwise_contrast(2).unwrap(), m.rank()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(kt_matrix(&m, m.rank()).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn df_is_d_times_t() {
        let y = data(30, 2, 4);
        let design = one_way_design(&labels(30, 2)).unwrap();
        let g = gram(&y, &Kernel::Gaussian { bandwidth: 0.6 }).unwrap();
        let m = fit(g, design).unwrap();
        let r = tkhl_test(&m, &pairwise_contrast(2).unwrap(), 5).unwrap();
        assert_eq!(r.df, 5);
        assert_eq!(r.truncation, 5);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn truncation_is_capped_with_warning() {
        let y = data(12, 2, 5);
        let design = one_way_design(&labels(12, 2)).unwrap();
        let g = gram(&y, &Kernel::Linear).unwrap();
        let m = fit(g, design).unwrap();
        assert_eq!(m.rank(), 2);
        let r = tkhl_test(&m, &pairwise_contrast(2).unwrap(), 7).unwrap();
        assert_eq!(r.truncation, 2);
        assert_eq!(r.warnings.len(), 1);
        assert!(matches!(kt_matrix(&m, 3), Err(Error::Truncation { requested: 3, rank: 2 })));
        assert!(tkhl_test(&m, &pairwise_contrast(2).unwrap(), 0).is_err());
    }

    #[test]
    fn partial_fit_matches_dense_fit() {
        let y = data(150, 3, 6);
        let design = one_way_design(&labels(150, 2)).unwrap();
        let g = gram(&y, &Kernel::Gaussian { bandwidth: 0.4 }).unwrap();
        let dense = fit(g.clone(), design.clone()).unwrap();
        let part = fit_with(g, design, &FitOptions { max_components: Some(4) }).unwrap();
        let l = pairwise_contrast(2).unwrap();
        for t in 1..=4 {
            let a = tkhl_test(&dense, &l, t).unwrap().statistic;
            let b = tkhl_test(&part, &l, t).unwrap().statistic;
            assert!((a - b).abs() <= 1e-8 * a.max(1.0), "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn pairwise_counts_and_matrix() {
        let y = data(40, 2, 7);
        let design = one_way_design(&labels(40, 4)).unwrap();
        let g = gram(&y, &Kernel::Gaussian { bandwidth: 0.5 }).unwrap();
        let m = fit(g, design).unwrap();
        let res = pairwise_tests(&m, "A", 2).unwrap();
        assert_eq!(res.len(), 6);
        for r in &res {
            assert!(r.adjusted_p_value >= r.result.p_value - 1e-15 && r.adjusted_p_value <= 1.0);
        }
        let levels = m.design().factors()[0].levels.clone();
        let mat = pairwise_statistic_matrix(&levels, &res);
        assert_eq!(mat, mat.transpose());
        assert!(pairwise_tests(&m, "nope", 2).is_err());
    }

    #[test]
    fn result_json_fields() {
        let r = TestResult::from_statistic(1.5, 1, 2, TestMethod::Exact, vec!["w".into()]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, vec!["df", "method", "p_value", "statistic", "truncation"]);
        assert_eq!(v["method"], "exact");
    }
}
