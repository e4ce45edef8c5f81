//! Projection tables, discriminant axes and the kernel Cook distance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::design::{hypothesis_projector, ContrastMatrix};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::model::{kt_matrix, FittedModel};

/// Coordinates of embeddings on the leading unit eigenfunctions `f_t` of the
/// residual covariance. All three tables are `n x t`.
#[derive(Debug, Clone)]
pub struct DiagnosticsBundle {
    /// `<φ(y_i), f_t>`.
    pub response_proj: DMatrix<f64>,
    /// `<ê_i, f_t>`.
    pub residual_proj: DMatrix<f64>,
    /// `<ŷ_i, f_t>` for the fitted embedding `ŷ_i`.
    pub prediction_proj: DMatrix<f64>,
    pub truncation: usize,
}

pub fn projection_tables(model: &FittedModel, t: usize) -> Result<DiagnosticsBundle> {
    model.check_truncation(t)?;
    let n = model.n() as f64;
    let mut pu = model.residual_basis(t);
    for (s, mut col) in pu.column_iter_mut().enumerate() {
        col /= (n * model.eigvals()[s]).sqrt();
    }
    let response_proj = model.gram().values() * &pu;
    let design = model.design();
    let residual_proj = design.residualize(&response_proj);
    let prediction_proj = design.project(&response_proj);
    Ok(DiagnosticsBundle { response_proj, residual_proj, prediction_proj, truncation: t })
}

/// Eigen-directions of `K_T D K_T'` and the coordinates of observations on
/// the matching unit discriminant functions.
#[derive(Debug, Clone)]
pub struct DiscriminantAxes {
    /// All `t` eigenvalues of `K_T D K_T'`, descending. They sum to the statistic.
    pub axis_eigvals: Vec<f64>,
    /// `t x a` unit eigenvectors `v_j` of the retained axes.
    pub directions: DMatrix<f64>,
    /// `n x a` coordinates of the sample.
    pub sample_coords: DMatrix<f64>,
    /// `n0 x a` coordinates of the extra points, when given.
    pub new_coords: Option<DMatrix<f64>>,
    pub warnings: Vec<String>,
}

impl DiscriminantAxes {
    /// Number of retained axes.
    pub fn a(&self) -> usize {
        self.directions.ncols()
    }
}

/// Coordinates on the discriminant axes of the contrast `l`.
///
/// `new_cross` is the `n x n0` cross-Gram `k(Y, Y0)` of extra points. `axes`
/// defaults to `min(t, d)`. Axes with a numerically zero eigenvalue are
/// dropped with a warning. Each axis is oriented so that the observations of
/// the first level named in the contrast have a nonpositive mean coordinate.
pub fn discriminant_coordinates(
    model: &FittedModel,
    l: &ContrastMatrix,
    t: usize,
    new_cross: Option<&DMatrix<f64>>,
    axes: Option<usize>,
) -> Result<DiscriminantAxes> {
    let kt = kt_matrix(model, t)?;
    let projector = hypothesis_projector(model.design(), l)?;
    let n = model.n();
    if let Some(c) = new_cross {
        if c.nrows() != n {
            return Err(Error::InvalidInput(format!("cross gram has {} rows, expected {n}", c.nrows())));
        }
    }
    let want = axes.unwrap_or_else(|| t.min(l.d()));
    if want == 0 || want > t {
        return Err(Error::InvalidInput(format!("axis count {want} must lie in [1, {t}]")));
    }

    let w = projector.w();
    let c_inv = projector.c_inv();
    let ktw = &kt * w;
    let m = &ktw * c_inv * ktw.transpose();
    let eig = sym_eigen(&m);
    let axis_eigvals: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();

    let wk = w.transpose() * model.gram().values(); // d x n
    let wkw = &wk * w;
    let top = axis_eigvals[0];
    let mut warnings = Vec::new();
    let mut keep = Vec::new();
    for (j, &xi) in axis_eigvals.iter().enumerate().take(want) {
        let a_j = c_inv * ktw.transpose() * eig.vectors.column(j);
        let norm2 = (a_j.transpose() * &wkw * &a_j)[(0, 0)];
        if xi <= 1e-12 * top.max(0.0) || xi <= 1e-20 || norm2.is_nan() || norm2 <= 0.0 {
            warnings.push(format!("discriminant axis {} has zero eigenvalue and was dropped", j + 1));
            continue;
        }
        keep.push((j, a_j / norm2.sqrt()));
    }

    let a = keep.len();
    let mut directions = DMatrix::zeros(t, a);
    let mut sample_coords = DMatrix::zeros(n, a);
    let mut new_coords = new_cross.map(|c| DMatrix::zeros(c.ncols(), a));
    let col = l.first_column();
    let first_level: Vec<usize> = (0..n).filter(|&i| model.design().x()[(i, col)] != 0.0).collect();
    for (k, (j, a_j)) in keep.iter().enumerate() {
        let mut v = eig.vectors.column(*j).into_owned();
        let mut coords = (a_j.transpose() * &wk).transpose();
        let mut sign = 1.0;
        if !first_level.is_empty() {
            let mean: f64 = first_level.iter().map(|&i| coords[i]).sum::<f64>() / first_level.len() as f64;
            if mean > 0.0 {
                sign = -1.0;
            }
        }
        v *= sign;
        coords *= sign;
        directions.set_column(k, &v);
        sample_coords.set_column(k, &coords);
        if let (Some(c), Some(out)) = (new_cross, new_coords.as_mut()) {
            let nc = (a_j.transpose() * w.transpose() * c).transpose() * sign;
            out.set_column(k, &nc);
        }
    }
    Ok(DiscriminantAxes { axis_eigvals, directions, sample_coords, new_coords, warnings })
}

/// Leverage above which an observation is treated as self-determined.
const LEVERAGE_LIMIT: f64 = 1.0 - 1e-10;

/// Truncated kernel Cook distance of every observation for the contrast `l`:
///
/// `D(i) = W_i C^{-1} W_i' / (d n (1 - π_ii)^2) * (R U Λ^{-2} U' R)_ii`
///
/// with `R = P_X^perp K P_X^perp` and the leading `t` eigenpairs of `K_E`.
pub fn cook_distances(model: &FittedModel, l: &ContrastMatrix, t: usize) -> Result<DVector<f64>> {
    model.check_truncation(t)?;
    let design = model.design();
    if let Some((i, &h)) = design.leverages().iter().enumerate().find(|(_, &h)| h >= LEVERAGE_LIMIT) {
        return Err(Error::Leverage { index: i, leverage: h });
    }
    let projector = hypothesis_projector(design, l)?;
    let n = model.n();
    let d = l.d() as f64;
    // R U_t Λ_t^{-1} = P^perp K P^perp U_t Λ_t^{-1}
    let u = model.eigvecs().columns(0, t).into_owned();
    let mut right = design.residualize(&(model.gram().values() * design.residualize(&u)));
    for (s, mut c) in right.column_iter_mut().enumerate() {
        c /= model.eigvals()[s];
    }
    let w = projector.w();
    let c_inv = projector.c_inv();
    let lev = design.leverages();
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let wi = w.row(i);
            let left = (wi * c_inv * wi.transpose())[(0, 0)];
            let r = right.row(i).norm_squared();
            let one_minus = 1.0 - lev[i];
            (left * r / (d * n as f64 * one_minus * one_minus)).max(0.0)
        })
        .collect();
    Ok(DVector::from_vec(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{one_way_design, pairwise_contrast};
    use crate::kernel::{cross_gram, gram, Kernel};
    use crate::linalg::max_abs;
    use crate::model::{fit, tkhl_test};

    fn data(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        DMatrix::from_fn(n, p, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    fn labels(n: usize, u: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{}", i % u)).collect()
    }

    fn model(n: usize, u: usize, seed: u64) -> (DMatrix<f64>, FittedModel, Kernel) {
        let y = data(n, 3, seed);
        let kernel = Kernel::Gaussian { bandwidth: 0.5 };
        let design = one_way_design(&labels(n, u)).unwrap();
        let m = fit(gram(&y, &kernel).unwrap(), design).unwrap();
        (y, m, kernel)
    }

    #[test]
    fn tables_are_additive_and_normed() {
        let (_, m, _) = model(20, 2, 1);
        let t = 4;
        let b = projection_tables(&m, t).unwrap();
        let sum = &b.residual_proj + &b.prediction_proj;
        assert!(max_abs(&(sum - &b.response_proj)) < 1e-10);
        for s in 0..t {
            let norm2 = b.residual_proj.column(s).norm_squared();
            let expect = 20.0 * m.eigvals()[s];
            assert!((norm2 - expect).abs() < 1e-8 * expect);
        }
        assert_eq!(b.response_proj.shape(), (20, t));
        assert!(projection_tables(&m, m.rank() + 1).is_err());
    }

    #[test]
    fn axis_eigenvalues_sum_to_statistic() {
        let (_, m, _) = model(30, 3, 2);
        let l = pairwise_contrast(3).unwrap();
        let axes = discriminant_coordinates(&m, &l, 4, None, None).unwrap();
        let stat = tkhl_test(&m, &l, 4).unwrap().statistic;
        let sum: f64 = axes.axis_eigvals.iter().sum();
        assert!((sum - stat).abs() < 1e-8 * stat.max(1.0));
        assert_eq!(axes.a(), 2);
        assert_eq!(axes.axis_eigvals.len(), 4);
    }

    #[test]
    fn new_points_reproduce_sample_coordinates() {
        let (y, m, kernel) = model(24, 2, 3);
        let l = pairwise_contrast(2).unwrap();
        let rows = DMatrix::from_fn(2, 3, |i, j| y[([5, 17][i], j)]);
        let cross = cross_gram(&y, &rows, &kernel).unwrap();
        let axes = discriminant_coordinates(&m, &l, 3, Some(&cross), None).unwrap();
        let nc = axes.new_coords.unwrap();
        assert!((nc[(0, 0)] - axes.sample_coords[(5, 0)]).abs() < 1e-10);
        assert!((nc[(1, 0)] - axes.sample_coords[(17, 0)]).abs() < 1e-10);
    }

    #[test]
    fn first_level_mean_is_nonpositive() {
        let (_, m, _) = model(30, 2, 4);
        let l = pairwise_contrast(2).unwrap();
        let axes = discriminant_coordinates(&m, &l, 3, None, None).unwrap();
        let codes = &m.design().factors()[0].codes;
        let mean: f64 = (0..30).filter(|&i| codes[i] == 0).map(|i| axes.sample_coords[(i, 0)]).sum::<f64>() / 15.0;
        assert!(mean <= 0.0);
    }

    #[test]
    fn single_axis_request() {
        let (_, m, _) = model(30, 2, 5);
        let l = pairwise_contrast(2).unwrap();
        let axes = discriminant_coordinates(&m, &l, 3, None, Some(1)).unwrap();
        assert_eq!(axes.a(), 1);
        assert!(axes.sample_coords.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_effect_drops_axes() {
        let base = data(8, 2, 6);
        let y = DMatrix::from_fn(16, 2, |i, j| base[(i % 8, j)]);
        let lab: Vec<&str> = (0..16).map(|i| if i < 8 { "a" } else { "b" }).collect();
        let design = one_way_design(&lab).unwrap();
        let m = fit(gram(&y, &Kernel::Gaussian { bandwidth: 0.5 }).unwrap(), design).unwrap();
        let axes = discriminant_coordinates(&m, &pairwise_contrast(2).unwrap(), 2, None, None).unwrap();
        assert_eq!(axes.a(), 0);
        assert_eq!(axes.warnings.len(), 1);
    }

    #[test]
    fn too_many_axes_is_error() {
        let (_, m, _) = model(20, 2, 7);
        let l = pairwise_contrast(2).unwrap();
        assert!(discriminant_coordinates(&m, &l, 2, None, Some(3)).is_err());
        assert!(discriminant_coordinates(&m, &l, 2, None, Some(0)).is_err());
    }

    #[test]
    fn cook_nonnegative_and_zero_for_group_mean() {
        // One-dimensional linear kernel: an observation sitting exactly at its
        // group mean has zero residual.
        let y = DMatrix::from_column_slice(9, 1, &[1.0, 2.0, 3.0, 5.0, 7.0, 9.0, 0.0, 4.0, 2.0]);
        let lab = ["a", "a", "a", "b", "b", "b", "c", "c", "c"];
        let design = one_way_design(&lab).unwrap();
        let m = fit(gram(&y, &Kernel::Linear).unwrap(), design).unwrap();
        let d = cook_distances(&m, &pairwise_contrast(3).unwrap(), 1).unwrap();
        assert!(d.iter().all(|&v| v >= 0.0));
        assert!(d[1].abs() < 1e-20 && d[4].abs() < 1e-20 && d[8].abs() < 1e-20);
        assert!(d[0] > 0.0);
    }

    #[test]
    fn cook_rejects_singleton_level() {
        let y = data(5, 2, 8);
        let design = one_way_design(&["a", "a", "b", "b", "c"]).unwrap();
        let m = fit(gram(&y, &Kernel::Gaussian { bandwidth: 0.5 }).unwrap(), design).unwrap();
        match cook_distances(&m, &pairwise_contrast(3).unwrap(), 1) {
            Err(Error::Leverage { index: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
