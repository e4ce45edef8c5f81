#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tkhl_core::design::{one_way_design, padded_contrast, pairwise_contrast, two_way_additive_design};
use tkhl_core::{ContrastMatrix, DesignBundle};

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Labels `0..u` repeated and shuffled, so every level appears at least twice when `n >= 2u`.
pub fn shuffled_levels(rng: &mut ChaCha8Rng, n: usize, u: usize) -> Vec<String> {
    let mut lab: Vec<String> = (0..n).map(|i| format!("L{}", i % u)).collect();
    lab.shuffle(rng);
    lab
}

#[derive(Debug, Clone, Copy)]
pub enum Layout {
    OneWay,
    TwoWay,
}

/// Random design plus the contrast under test: all three levels of the
/// one-way factor, or all three levels of factor B in the 2 x 3 layout.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, layout: Layout) -> (DesignBundle, ContrastMatrix) {
    match layout {
        Layout::OneWay => {
            let lab = shuffled_levels(rng, n, 3);
            (one_way_design(&lab).unwrap(), pairwise_contrast(3).unwrap())
        }
        Layout::TwoWay => {
            let mut cells: Vec<(usize, usize)> = (0..n).map(|i| (i % 2, (i / 2) % 3)).collect();
            cells.shuffle(rng);
            let a: Vec<String> = cells.iter().map(|c| format!("a{}", c.0)).collect();
            let b: Vec<String> = cells.iter().map(|c| format!("b{}", c.1)).collect();
            let design = two_way_additive_design(&a, &b).unwrap();
            let f = design.factor("B").unwrap().clone();
            let l = padded_contrast(&pairwise_contrast(3).unwrap(), f.offset, design.p()).unwrap();
            (design, l)
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative scalar error against a reference, with an absolute floor.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-12)
}

/// Max entrywise error relative to the largest reference entry.
pub fn mat_rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    assert_eq!(got.shape(), want.shape());
    let scale = want.amax().max(1e-12);
    (got - want).amax() / scale
}

/// Like `mat_rel_err` but each column may be flipped.
pub fn mat_rel_err_up_to_sign(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    assert_eq!(got.shape(), want.shape());
    let mut worst = 0.0_f64;
    for j in 0..got.ncols() {
        let g = got.column(j);
        let w = want.column(j);
        let scale = w.amax().max(1e-12);
        let plus = (g - w).amax();
        let minus = (g + w).amax();
        worst = worst.max(plus.min(minus) / scale);
    }
    worst
}

use tkhl_core::diagnostics::{cook_distances, discriminant_coordinates, projection_tables};
use tkhl_core::kernel::{gram, Kernel};
use tkhl_core::model::{fit, kt_matrix, tkhl_test};
use tkhl_core::nystrom::{sample_landmarks, LandmarkStrategy, NystromModel};
use tkhl_core::oracle::{
    explicit_features, oracle_cook, oracle_discriminant, oracle_kt, oracle_nystrom, oracle_projection_tables,
    oracle_statistic, ExplicitModel,
};

/// Worst relative disagreement per quantity over one instance.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleErrors {
    pub spectrum: f64,
    pub kt: f64,
    pub statistic: f64,
    pub nystrom: f64,
    pub tables: f64,
    pub discriminant: f64,
    pub cook: f64,
}

impl OracleErrors {
    pub fn max(&self) -> f64 {
        [self.spectrum, self.kt, self.statistic, self.nystrom, self.tables, self.discriminant, self.cook]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn merge(&mut self, o: &OracleErrors) {
        self.spectrum = self.spectrum.max(o.spectrum);
        self.kt = self.kt.max(o.kt);
        self.statistic = self.statistic.max(o.statistic);
        self.nystrom = self.nystrom.max(o.nystrom);
        self.tables = self.tables.max(o.tables);
        self.discriminant = self.discriminant.max(o.discriminant);
        self.cook = self.cook.max(o.cook);
    }
}

pub fn oracle_kernels() -> [Kernel; 2] {
    [Kernel::Linear, Kernel::Polynomial { degree: 2, offset: 1.0 }]
}

/// Compare every kernel-trick quantity with the explicit-feature oracle on
/// one random instance.
pub fn compare_with_oracle(seed: u64, n: usize, layout: Layout, kernel: Kernel) -> OracleErrors {
    let mut r = rng(seed);
    let (design, l) = random_design(&mut r, n, layout);
    let y = normal_matrix(&mut r, n, 3);
    let model = fit(gram(&y, &kernel).unwrap(), design.clone()).unwrap();
    let phi = explicit_features(&y, &kernel).unwrap();
    let em = ExplicitModel::new(phi, design.x().clone()).unwrap();
    let mut e = OracleErrors::default();

    assert_eq!(model.rank(), em.rank(), "residual rank differs (seed {seed})");
    let top = em.eigvals[0];
    e.spectrum = model.eigvals().iter().zip(&em.eigvals).map(|(a, b)| (a - b).abs() / top).fold(0.0, f64::max);

    let rank = model.rank();
    let plan = sample_landmarks(n, n, None, LandmarkStrategy::Uniform, seed).unwrap();
    let ny = NystromModel::from_gram(model.gram(), &design, plan.clone(), rank).unwrap();
    let mut ts = vec![1, 2, rank];
    ts.dedup();
    for t in ts.into_iter().filter(|&t| t <= rank) {
        e.kt = e.kt.max(mat_rel_err(&kt_matrix(&model, t).unwrap(), &oracle_kt(&em, t).unwrap()));

        let want = oracle_statistic(&em, &l, t).unwrap();
        e.statistic = e.statistic.max(rel_err(tkhl_test(&model, &l, t).unwrap().statistic, want));
        let ny_oracle = oracle_nystrom(&em, &plan.indices, rank, &l, t).unwrap().statistic;
        e.nystrom = e.nystrom.max(rel_err(ny.test(&l, t).unwrap().statistic, want));
        e.nystrom = e.nystrom.max(rel_err(ny_oracle, want));

        let tables = projection_tables(&model, t).unwrap();
        let (resp, resid, pred) = oracle_projection_tables(&em, t).unwrap();
        e.tables = e
            .tables
            .max(mat_rel_err(&tables.response_proj, &resp))
            .max(mat_rel_err(&tables.residual_proj, &resid))
            .max(mat_rel_err(&tables.prediction_proj, &pred));

        let axes = discriminant_coordinates(&model, &l, t, None, None).unwrap();
        let want_axes = oracle_discriminant(&em, &l, t, axes.a()).unwrap();
        e.discriminant = e.discriminant.max(mat_rel_err_up_to_sign(&axes.sample_coords, &want_axes));

        let cook = cook_distances(&model, &l, t).unwrap();
        let want_cook: Vec<f64> = (0..n).map(|i| oracle_cook(&em, &l, t, i).unwrap()).collect();
        let scale = want_cook.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        for (g, w) in cook.iter().zip(&want_cook) {
            e.cook = e.cook.max((g - w).abs() / scale.max(1e-12));
        }
    }
    e
}

/// The twenty seeded instances: `n` alternates 20 / 50, layouts alternate in pairs.
pub fn oracle_instances() -> Vec<(u64, usize, Layout)> {
    (0..20u64)
        .map(|s| {
            let n = if s % 2 == 0 { 20 } else { 50 };
            let layout = if (s / 2) % 2 == 0 { Layout::OneWay } else { Layout::TwoWay };
            (1000 + s, n, layout)
        })
        .collect()
}
