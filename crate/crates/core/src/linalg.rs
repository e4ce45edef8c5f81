//! Dense symmetric eigen-solvers and small matrix helpers.
//!
//! Every eigensystem returned from this module is sorted by descending
//! eigenvalue and sign-normalised so that the largest-magnitude entry of each
//! eigenvector is positive. The convention makes eigenvectors (and everything
//! derived from them) reproducible across runs.

use nalgebra::{DMatrix, DVector};

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// Number of eigenvalues strictly greater than `rel_tol * values[0]`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        match self.values.first() {
            Some(&top) if top > 0.0 => self.values.iter().take_while(|&&v| v > rel_tol * top).count(),
            _ => 0,
        }
    }

    /// Keep the leading `k` eigenpairs.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.values.len());
        self.values.truncate(k);
        self.vectors = self.vectors.columns(0, k).into_owned();
        self
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Full eigendecomposition of a symmetric matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymEigen {
    assert!(m.is_square(), "sym_eigen needs a square matrix");
    let n = m.nrows();
    if n == 0 {
        return SymEigen { values: Vec::new(), vectors: DMatrix::zeros(0, 0) };
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_signs(&mut vectors);
    SymEigen { values, vectors }
}

/// Flip each column so its largest-magnitude entry is positive.
///
/// Near-ties (within 1e-9 relative) resolve to the lowest row index.
pub fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let max = col.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if max == 0.0 {
            continue;
        }
        let pivot = col.iter().position(|v| v.abs() >= max * (1.0 - 1e-9)).unwrap_or(0);
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix; eigenvalues at or
/// below `1e-12 * largest` are treated as zero. Returns the inverse and rank.
pub fn pinv_sym(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    let eig = sym_eigen(m);
    let top = eig.values.first().copied().unwrap_or(0.0);
    let mut inv = DMatrix::zeros(n, n);
    let mut rank = 0;
    if top > 0.0 {
        for (k, &lambda) in eig.values.iter().enumerate() {
            if lambda <= 1e-12 * top {
                break;
            }
            rank += 1;
            let v = eig.vectors.column(k);
            inv.ger(1.0 / lambda, &v, &v, 1.0);
        }
    }
    (inv, rank)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Leading `k` eigenpairs of a symmetric PSD matrix by Lanczos iteration with
/// full reorthogonalisation.
///
/// Iteration stops once every wanted Ritz pair has residual below
/// `tol * theta_1`, or when the Krylov space becomes invariant. Small problems
/// fall through to the dense solver. Fewer than `k` pairs are returned when the
/// matrix has fewer than `k` eigenvalues above `1e-14 * theta_1`.
pub fn top_eigen(m: &DMatrix<f64>, k: usize, tol: f64) -> SymEigen {
    let n = m.nrows();
    if k == 0 || n == 0 {
        return SymEigen { values: Vec::new(), vectors: DMatrix::zeros(n, 0) };
    }
    if n <= 64 || 4 * k + 20 >= n {
        return sym_eigen(m).truncate(k);
    }

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(64);
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();

    // Fixed pseudo-random start: deterministic and generic with respect to
    // structured subspaces such as constant vectors.
    let mut state = 0x9E37_79B9_7F4A_7C15_u64;
    let mut start = DVector::from_fn(n, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    });
    start.normalize_mut();
    basis.push(start);

    let mut w = DVector::zeros(n);
    let max_steps = n;
    let mut ritz: Option<(Vec<f64>, DMatrix<f64>)> = None;
    for j in 0..max_steps {
        m.mul_to(&basis[j], &mut w);
        let a = basis[j].dot(&w);
        alpha.push(a);
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let b = w.norm();

        let steps = j + 1;
        let check = steps >= k && (steps % 5 == 0 || steps == max_steps);
        let top_scale = alpha.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
        let breakdown = b <= 1e-14 * top_scale;
        if check || breakdown || steps == max_steps {
            let (vals, vecs) = tridiagonal_eigen(&alpha, &beta);
            let theta1 = vals[0].abs().max(f64::MIN_POSITIVE);
            let wanted = k.min(vals.len());
            let converged = (0..wanted).all(|i| (b * vecs[(steps - 1, i)]).abs() <= tol * theta1);
            if converged || breakdown || steps == max_steps {
                ritz = Some((vals, vecs));
                break;
            }
        }
        beta.push(b);
        basis.push(&w / b);
    }

    let (vals, s) = ritz.expect("lanczos loop always records a final Ritz system");
    let steps = alpha.len();
    let theta1 = vals[0];
    let keep = vals.iter().take(k).take_while(|&&v| theta1 > 0.0 && v > 1e-14 * theta1).count();
    let mut vectors = DMatrix::zeros(n, keep);
    for i in 0..keep {
        let mut col = DVector::zeros(n);
        for (j, q) in basis.iter().take(steps).enumerate() {
            col.axpy(s[(j, i)], q, 1.0);
        }
        col.normalize_mut();
        vectors.set_column(i, &col);
    }
    fix_signs(&mut vectors);
    SymEigen { values: vals[..keep].to_vec(), vectors }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = sym_eigen(&t);
    (eig.values, eig.vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_psd(n: usize, rank: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let a = DMatrix::from_fn(n, rank, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        &a * a.transpose()
    }

    #[test]
    fn dense_eigen_is_sorted_and_reconstructs() {
        let m = random_psd(12, 12, 3);
        let eig = sym_eigen(&m);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        let recon =
            &eig.vectors * DMatrix::from_diagonal(&DVector::from_vec(eig.values.clone())) * eig.vectors.transpose();
        assert!(max_abs(&(recon - &m)) < 1e-12);
    }

    #[test]
    fn sign_convention_holds() {
        let eig = sym_eigen(&random_psd(10, 10, 5));
        for col in eig.vectors.column_iter() {
            let idx = col.iamax();
            assert!(col[idx] > 0.0);
        }
    }

    #[test]
    fn pinv_of_rank_deficient_matrix() {
        let m = random_psd(8, 3, 11);
        let (inv, rank) = pinv_sym(&m);
        assert_eq!(rank, 3);
        assert!(max_abs(&(&m * &inv * &m - &m)) < 1e-10);
        assert!(max_abs(&(&inv * &m * &inv - &inv)) < 1e-8 * max_abs(&inv));
    }

    #[test]
    fn lanczos_matches_dense_solver() {
        let m = random_psd(200, 40, 7);
        let dense = sym_eigen(&m);
        let part = top_eigen(&m, 6, 1e-13);
        assert_eq!(part.values.len(), 6);
        for i in 0..6 {
            assert!((part.values[i] - dense.values[i]).abs() < 1e-10 * dense.values[0]);
            let diff = (part.vectors.column(i) - dense.vectors.column(i)).amax();
            assert!(diff < 1e-7, "eigvec {i} differs by {diff}");
        }
    }

    #[test]
    fn lanczos_stops_at_low_rank() {
        let m = random_psd(150, 3, 9);
        let part = top_eigen(&m, 8, 1e-13);
        assert_eq!(part.values.len(), 3);
    }
}
