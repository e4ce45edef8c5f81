//! Kernel functions, bandwidth selection and Gram matrices.
//!
//! The gaussian kernel is parameterised as `exp(-|y - y'|^2 / (2 sigma^2))`,
//! with `sigma` defaulting to the median pairwise Euclidean distance of the
//! sample (the median heuristic).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this many rows the median heuristic works on a random subset of pairs.
const MEDIAN_EXACT_MAX_ROWS: usize = 5000;
const MEDIAN_SUBSAMPLE_PAIRS: usize = 1_000_000;
const MEDIAN_SUBSAMPLE_SEED: u64 = 0x6d65_6469_616e;

/// User-facing kernel choice, serialised as e.g. `{"kind":"gaussian","bandwidth":null}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Gaussian {
        /// `None` selects the median heuristic.
        #[serde(default)]
        bandwidth: Option<f64>,
    },
    Linear,
    Polynomial {
        degree: u32,
        offset: f64,
    },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { bandwidth: None }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth: Some(b) } if !(b.is_finite() && b > 0.0) => {
                Err(Error::InvalidInput(format!("gaussian bandwidth must be positive, got {b}")))
            }
            KernelSpec::Polynomial { degree, .. } if degree < 1 => {
                Err(Error::InvalidInput("polynomial degree must be at least 1".into()))
            }
            KernelSpec::Polynomial { offset, .. } if !(offset.is_finite() && offset >= 0.0) => {
                Err(Error::InvalidInput(format!("polynomial offset must be nonnegative, got {offset}")))
            }
            _ => Ok(()),
        }
    }

    /// Fix every free parameter, running the median heuristic on `data` when
    /// the gaussian bandwidth is unset.
    pub fn resolve(&self, data: &DMatrix<f64>) -> Result<Kernel> {
        self.validate()?;
        Ok(match *self {
            KernelSpec::Gaussian { bandwidth: Some(b) } => Kernel::Gaussian { bandwidth: b },
            KernelSpec::Gaussian { bandwidth: None } => {
                check_finite(data)?;
                Kernel::Gaussian { bandwidth: median_heuristic(data)? }
            }
            KernelSpec::Linear => Kernel::Linear,
            KernelSpec::Polynomial { degree, offset } => Kernel::Polynomial { degree, offset },
        })
    }
}

/// A kernel with all parameters fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Gaussian { bandwidth: f64 },
    Linear,
    Polynomial { degree: u32, offset: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Gaussian { bandwidth } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            Kernel::Linear => dot(a, b),
            Kernel::Polynomial { degree, offset } => (dot(a, b) + offset).powi(degree as i32),
        }
    }

    pub fn spec(&self) -> KernelSpec {
        match *self {
            Kernel::Gaussian { bandwidth } => KernelSpec::Gaussian { bandwidth: Some(bandwidth) },
            Kernel::Linear => KernelSpec::Linear,
            Kernel::Polynomial { degree, offset } => KernelSpec::Polynomial { degree, offset },
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric matrix of pairwise kernel evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
}

impl GramMatrix {
    /// Wrap an existing symmetric matrix. Symmetry is checked to 1e-12 relative
    /// and then enforced exactly.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::InvalidInput("gram matrix must be square".into()));
        }
        check_finite(&values)?;
        let scale = crate::linalg::max_abs(&values).max(f64::MIN_POSITIVE);
        let asym = crate::linalg::max_abs(&(&values - values.transpose()));
        if asym > 1e-12 * scale {
            return Err(Error::InvalidInput(format!("gram matrix is not symmetric (max asymmetry {asym:e})")));
        }
        Ok(GramMatrix { values: crate::linalg::symmetrize(&values) })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// Principal submatrix on `indices` (rows and columns in the given order).
    pub fn select(&self, indices: &[usize]) -> GramMatrix {
        let q = indices.len();
        GramMatrix { values: DMatrix::from_fn(q, q, |i, j| self.values[(indices[i], indices[j])]) }
    }

    /// Multiply every entry by `c`.
    pub fn scaled(&self, c: f64) -> GramMatrix {
        GramMatrix { values: &self.values * c }
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("input contains non-finite values".into()))
    }
}

fn rows_of(data: &DMatrix<f64>) -> Vec<Vec<f64>> {
    data.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Median of the pairwise Euclidean distances between rows of `data`.
///
/// Zero distances (duplicate rows) are counted; only a zero median is an error.
/// With more than 5000 rows the median is taken over one million pairs drawn
/// uniformly with a fixed seed.
pub fn median_heuristic(data: &DMatrix<f64>) -> Result<f64> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::DegenerateData("median heuristic needs at least two rows".into()));
    }
    let rows = rows_of(data);
    let mut dists: Vec<f64> = if n <= MEDIAN_EXACT_MAX_ROWS {
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                d.push(euclid(&rows[i], &rows[j]));
            }
        }
        d
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MEDIAN_SUBSAMPLE_SEED);
        (0..MEDIAN_SUBSAMPLE_PAIRS)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                euclid(&rows[i], &rows[j])
            })
            .collect()
    };
    let median = median_in_place(&mut dists);
    if !median.is_finite() {
        return Err(Error::InvalidInput("input contains non-finite values".into()));
    }
    if median == 0.0 {
        return Err(Error::DegenerateData("median pairwise distance is zero".into()));
    }
    Ok(median)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let len = v.len();
    let mid = len / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// Gram matrix `K[i, j] = k(y_i, y_j)` of the rows of `data`.
pub fn gram(data: &DMatrix<f64>, kernel: &Kernel) -> Result<GramMatrix> {
    check_finite(data)?;
    let n = data.nrows();
    let rows = rows_of(data);
    // Upper triangle per row in parallel; every entry is evaluated on its own
    // so the result does not depend on the partitioning.
    let upper: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| (i..n).map(|j| kernel.eval(&rows[i], &rows[j])).collect()).collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(GramMatrix { values })
}

/// Cross-Gram matrix `C[i, j] = k(a_i, b_j)`.
pub fn cross_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, kernel: &Kernel) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::InvalidInput(format!(
            "cross_gram dimension mismatch: {} vs {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    check_finite(a)?;
    check_finite(b)?;
    let ra = rows_of(a);
    let rb = rows_of(b);
    let rows: Vec<Vec<f64>> = ra.par_iter().map(|x| rb.iter().map(|y| kernel.eval(x, y)).collect()).collect();
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| rows[i][j]))
}
