//! Invariants checked over random inputs.

mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use tkhl_core::design::{one_way_design, pairwise_contrast};
use tkhl_core::diagnostics::{cook_distances, projection_tables};
use tkhl_core::kernel::{gram, GramMatrix, Kernel};
use tkhl_core::model::{fit, tkhl_test};
use tkhl_core::nystrom::{sample_landmarks, LandmarkPlan, LandmarkStrategy, NystromModel};
use tkhl_core::stats::{bh_adjust, chi2_sf};

fn instance(seed: u64, n: usize, u: usize) -> (DMatrix<f64>, Vec<String>) {
    let mut r = rng(seed);
    let lab = shuffled_levels(&mut r, n, u);
    let y = normal_matrix(&mut r, n, 2);
    (y, lab)
}

fn permutation(seed: u64, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed ^ 0x5eed));
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn statistic_is_permutation_invariant(seed in any::<u64>(), n in 12usize..40, bw in 0.3f64..3.0) {
        let (y, lab) = instance(seed, n, 3);
        let perm = permutation(seed, n);
        let y2 = DMatrix::from_fn(n, 2, |i, j| y[(perm[i], j)]);
        let lab2: Vec<String> = perm.iter().map(|&i| lab[i].clone()).collect();
        let k = Kernel::Gaussian { bandwidth: bw };
        let m1 = fit(gram(&y, &k).unwrap(), one_way_design(&lab).unwrap()).unwrap();
        let m2 = fit(gram(&y2, &k).unwrap(), one_way_design(&lab2).unwrap()).unwrap();
        prop_assert_eq!(m1.rank(), m2.rank());
        // Level order follows first appearance, so contrasts may be written
        // in a different level order; the global hypothesis is the same.
        let l = pairwise_contrast(3).unwrap();
        for t in [1, 2, m1.rank().min(5)] {
            let a = tkhl_test(&m1, &l, t).unwrap().statistic;
            let b = tkhl_test(&m2, &l, t).unwrap().statistic;
            prop_assert!((a - b).abs() <= 1e-8 * a.max(1e-6), "t={} {} vs {}", t, a, b);
        }
    }

    #[test]
    fn statistic_nonnegative_and_monotone_in_t(seed in any::<u64>(), n in 10usize..40, bw in 0.3f64..3.0) {
        let (y, lab) = instance(seed, n, 2);
        let m = fit(gram(&y, &Kernel::Gaussian { bandwidth: bw }).unwrap(), one_way_design(&lab).unwrap()).unwrap();
        let l = pairwise_contrast(2).unwrap();
        let mut prev = 0.0;
        for t in 1..=m.rank().min(8) {
            let r = tkhl_test(&m, &l, t).unwrap();
            prop_assert!(r.statistic >= 0.0);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!(r.statistic >= prev * (1.0 - 1e-10));
            prev = r.statistic;
        }
    }

    #[test]
    fn statistic_invariant_to_kernel_scale(seed in any::<u64>(), c in 0.01f64..100.0) {
        let (y, lab) = instance(seed, 24, 3);
        let g = gram(&y, &Kernel::Gaussian { bandwidth: 1.0 }).unwrap();
        let design = one_way_design(&lab).unwrap();
        let m1 = fit(g.clone(), design.clone()).unwrap();
        let m2 = fit(g.scaled(c), design).unwrap();
        let l = pairwise_contrast(3).unwrap();
        for t in [1, 3] {
            let a = tkhl_test(&m1, &l, t).unwrap().statistic;
            let b = tkhl_test(&m2, &l, t).unwrap().statistic;
            prop_assert!((a - b).abs() <= 1e-8 * a.max(1e-6));
        }
        for (a, b) in m1.eigvals().iter().zip(m2.eigvals()) {
            prop_assert!((c * a - b).abs() <= 1e-8 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn tables_additive_and_cook_nonnegative(seed in any::<u64>(), n in 12usize..40) {
        let (y, lab) = instance(seed, n, 3);
        let m = fit(gram(&y, &Kernel::Gaussian { bandwidth: 1.0 }).unwrap(), one_way_design(&lab).unwrap()).unwrap();
        let t = m.rank().min(3);
        let b = projection_tables(&m, t).unwrap();
        let diff = &b.response_proj - (&b.residual_proj + &b.prediction_proj);
        prop_assert!(diff.amax() < 1e-10 * b.response_proj.amax().max(1.0));
        let cook = cook_distances(&m, &pairwise_contrast(3).unwrap(), t).unwrap();
        prop_assert!(cook.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn nystrom_nonnegative_and_permutation_invariant(seed in any::<u64>(), q in 10usize..30) {
        let n = 30;
        let (y, lab) = instance(seed, n, 2);
        let k = Kernel::Gaussian { bandwidth: 1.0 };
        let g = gram(&y, &k).unwrap();
        let design = one_way_design(&lab).unwrap();
        let plan = sample_landmarks(n, q, None, LandmarkStrategy::Uniform, seed).unwrap();
        let ny = NystromModel::from_gram(&g, &design, plan.clone(), 4).unwrap();
        let l = pairwise_contrast(2).unwrap();
        let a = ny.test(&l, 3).unwrap().statistic;
        prop_assert!(a >= 0.0);

        // Relabel observations; the landmark set maps to the same points.
        let perm = permutation(seed, n);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let g2 = GramMatrix::from_matrix(DMatrix::from_fn(n, n, |i, j| g.values()[(perm[i], perm[j])])).unwrap();
        let lab2: Vec<String> = perm.iter().map(|&i| lab[i].clone()).collect();
        let mut idx: Vec<usize> = plan.indices.iter().map(|&i| inv[i]).collect();
        idx.sort_unstable();
        let plan2 = LandmarkPlan { indices: idx, ..plan };
        let ny2 = NystromModel::from_gram(&g2, &one_way_design(&lab2).unwrap(), plan2, 4).unwrap();
        let b = ny2.test(&l, 3).unwrap().statistic;
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1e-6), "{} vs {}", a, b);
    }

    #[test]
    fn bh_bounds_and_order(p in proptest::collection::vec(0.0f64..1.0, 1..30)) {
        let adj = bh_adjust(&p);
        for (a, r) in adj.iter().zip(&p) {
            prop_assert!(*a >= *r - 1e-15 && *a <= 1.0);
        }
        for i in 0..p.len() {
            for j in 0..p.len() {
                if p[i] < p[j] {
                    prop_assert!(adj[i] <= adj[j] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn chi2_sf_decreasing(x in 0.0f64..200.0, dx in 0.001f64..10.0, df in 1usize..60) {
        let a = chi2_sf(x, df).unwrap();
        let b = chi2_sf(x + dx, df).unwrap();
        prop_assert!(b <= a + 1e-15);
        prop_assert!((0.0..=1.0).contains(&b));
    }
}
