//! Monte Carlo harness: level calibration, power curves and Nyström agreement
//! on synthetic multivariate normal groups.
//!
//! Replicate `r` draws everything from `ChaCha8Rng::seed_from_u64(seed)` with
//! stream `r`, so results do not depend on scheduling and any single replicate
//! can be regenerated on its own.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{one_way_design, pairwise_contrast, DesignBundle};
use crate::error::{Error, Result};
use crate::kernel::{gram, KernelSpec};
use crate::model::{fit_with, tkhl_test, FitOptions};
use crate::nystrom::{sample_landmarks, LandmarkStrategy, NystromModel};
use crate::stats::{chi2_quantile, clopper_pearson, empirical_quantile, ks_uniform_distance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NystromSimConfig {
    /// Landmarks as a fraction of `n`.
    pub q_fraction: f64,
    /// Anchor count.
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_per_group: Vec<usize>,
    pub dims: usize,
    /// One mean vector per group; empty means all zero.
    #[serde(default)]
    pub mean_shift: Vec<Vec<f64>>,
    /// Shared covariance; `None` is the identity.
    #[serde(default)]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub kernel: KernelSpec,
    pub truncations: Vec<usize>,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub nystrom: Option<NystromSimConfig>,
    /// Wall-clock timing makes reports differ between runs, so it is opt-in.
    #[serde(default)]
    pub record_timing: bool,
}

impl SimConfig {
    /// Two balanced groups of `n_per_group` draws from `N(0, I_dims)`.
    pub fn two_group_null(n_per_group: usize, dims: usize, truncations: Vec<usize>, reps: usize, seed: u64) -> Self {
        SimConfig {
            n_per_group: vec![n_per_group; 2],
            dims,
            mean_shift: Vec::new(),
            covariance: None,
            kernel: KernelSpec::default(),
            truncations,
            alpha: 0.05,
            reps,
            seed,
            nystrom: None,
            record_timing: false,
        }
    }

    /// Same config with the second group's mean moved by `delta` along the
    /// first axis.
    pub fn with_shift(mut self, delta: f64) -> Self {
        let g = self.n_per_group.len();
        let mut means = vec![vec![0.0; self.dims]; g];
        if g > 1 && self.dims > 0 {
            means[1][0] = delta;
        }
        self.mean_shift = means;
        self
    }

    /// Small preset: two groups of 50 in three dimensions, 200 replicates.
    pub fn small() -> Self {
        SimConfig::two_group_null(50, 3, vec![1, 3, 5], 200, 20240501)
    }

    pub fn n(&self) -> usize {
        self.n_per_group.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.n_per_group.len() < 2 {
            return bad("simulation needs at least two groups".into());
        }
        if self.n_per_group.contains(&0) {
            return bad("every group needs at least one observation".into());
        }
        if self.dims == 0 {
            return bad("dims must be positive".into());
        }
        if !self.mean_shift.is_empty()
            && (self.mean_shift.len() != self.n_per_group.len() || self.mean_shift.iter().any(|m| m.len() != self.dims))
        {
            return bad(format!("mean_shift must hold {} vectors of length {}", self.n_per_group.len(), self.dims));
        }
        if let Some(c) = &self.covariance {
            if c.len() != self.dims || c.iter().any(|r| r.len() != self.dims) {
                return bad(format!("covariance must be {0}x{0}", self.dims));
            }
        }
        if self.truncations.is_empty() || self.truncations.contains(&0) {
            return bad("truncations must be a nonempty list of positive integers".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.reps == 0 {
            return bad("reps must be positive".into());
        }
        if let Some(ny) = &self.nystrom {
            if !(ny.q_fraction > 0.0 && ny.q_fraction <= 1.0) || ny.m == 0 {
                return bad("nystrom needs q_fraction in (0, 1] and m >= 1".into());
            }
        }
        self.kernel.validate()
    }

    fn covariance_factor(&self) -> Result<DMatrix<f64>> {
        let cov = match &self.covariance {
            None => return Ok(DMatrix::identity(self.dims, self.dims)),
            Some(rows) => DMatrix::from_fn(self.dims, self.dims, |i, j| rows[i][j]),
        };
        if crate::linalg::max_abs(&(&cov - cov.transpose())) > 1e-12 * crate::linalg::max_abs(&cov) {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        Cholesky::new(cov)
            .map(|c| c.l())
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))
    }

    fn is_null(&self) -> bool {
        self.mean_shift.iter().all(|m| m.iter().all(|&v| v == 0.0))
    }
}

fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Draw replicate `rep_index`: rows in group order, labels `g0`, `g1`, ...
pub fn generate_dataset(config: &SimConfig, rep_index: usize) -> Result<(DMatrix<f64>, Vec<String>)> {
    config.validate()?;
    let factor = config.covariance_factor()?;
    let mut rng = rep_rng(config.seed, rep_index);
    Ok(draw(config, &factor, &mut rng))
}

fn draw(config: &SimConfig, factor: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<String>) {
    let n = config.n();
    let p = config.dims;
    let mut data = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (g, &size) in config.n_per_group.iter().enumerate() {
        for _ in 0..size {
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut y = factor * z;
            if let Some(mu) = config.mean_shift.get(g) {
                for j in 0..p {
                    y[j] += mu[j];
                }
            }
            data.set_row(row, &y.transpose());
            labels.push(format!("g{g}"));
            row += 1;
        }
    }
    (data, labels)
}

/// Per-replicate, per-truncation outcome (one CSV row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub truncation: usize,
    pub df: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub nystrom_statistic: Option<f64>,
    pub nystrom_p_value: Option<f64>,
    pub nystrom_reject: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NystromSummary {
    pub rejection_rate: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Fraction of replicates where both tests reach the same decision.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationSummary {
    pub truncation: usize,
    pub df: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// Exact 95% binomial interval.
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub quantile_95: f64,
    pub quantile_99: f64,
    pub chi2_quantile_95: f64,
    pub chi2_quantile_99: f64,
    /// Kolmogorov-Smirnov distance of the p-values from Uniform(0, 1).
    pub ks_distance: f64,
    pub nystrom: Option<NystromSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub n: usize,
    pub results: Vec<TruncationSummary>,
    /// Mean seconds per exact test, only with `record_timing`.
    pub mean_test_seconds: Option<f64>,
}

struct RepOutcome {
    records: Vec<RepRecord>,
    seconds: f64,
    tests: usize,
}

fn run_rep(config: &SimConfig, factor: &DMatrix<f64>, rep: usize) -> Result<RepOutcome> {
    let mut rng = rep_rng(config.seed, rep);
    let (data, labels) = draw(config, factor, &mut rng);
    let landmark_seed: u64 = rng.random();
    let kernel = config.kernel.resolve(&data)?;
    let design: DesignBundle = one_way_design(&labels)?;
    let l = pairwise_contrast(config.n_per_group.len())?;
    let t_max = *config.truncations.iter().max().unwrap();

    let start = Instant::now();
    let k = gram(&data, &kernel)?;
    let model = fit_with(k, design.clone(), &FitOptions { max_components: Some(t_max) })?;
    let exact: Vec<_> = config.truncations.iter().map(|&t| tkhl_test(&model, &l, t)).collect::<Result<_>>()?;
    let seconds = start.elapsed().as_secs_f64();
    // A capped truncation would change the degrees of freedom between replicates.
    if let Some(e) = exact.iter().zip(&config.truncations).find(|(e, &t)| e.truncation != t) {
        return Err(Error::Truncation { requested: *e.1, rank: e.0.truncation });
    }

    let nystrom = match &config.nystrom {
        None => None,
        Some(ny) => {
            let n = config.n();
            let q = ((ny.q_fraction * n as f64).round() as usize).clamp(2, n);
            let plan = sample_landmarks(n, q, None, LandmarkStrategy::Uniform, landmark_seed)?;
            let nm = NystromModel::fit(&data, &kernel, &design, plan, ny.m)?;
            let res = config.truncations.iter().map(|&t| nm.test(&l, t)).collect::<Result<Vec<_>>>()?;
            if let Some(r) = res.iter().zip(&config.truncations).find(|(r, &t)| r.truncation != t) {
                return Err(Error::Truncation { requested: *r.1, rank: r.0.truncation });
            }
            Some(res)
        }
    };

    let records = config
        .truncations
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let e = &exact[k];
            let ny = nystrom.as_ref().map(|v| &v[k]);
            RepRecord {
                rep,
                truncation: t,
                df: e.df,
                statistic: e.statistic,
                p_value: e.p_value,
                reject: e.p_value < config.alpha,
                nystrom_statistic: ny.map(|r| r.statistic),
                nystrom_p_value: ny.map(|r| r.p_value),
                nystrom_reject: ny.map(|r| r.p_value < config.alpha),
            }
        })
        .collect();
    Ok(RepOutcome { records, seconds, tests: config.truncations.len() })
}

/// Run all replicates, returning the report and the per-replicate records
/// ordered by replicate then truncation.
pub fn run_experiment(config: &SimConfig) -> Result<(SimReport, Vec<RepRecord>)> {
    config.validate()?;
    let factor = config.covariance_factor()?;
    let outcomes: Vec<RepOutcome> =
        (0..config.reps).into_par_iter().map(|r| run_rep(config, &factor, r)).collect::<Result<_>>()?;

    let d = config.n_per_group.len() - 1;
    let mut results = Vec::with_capacity(config.truncations.len());
    for (k, &t) in config.truncations.iter().enumerate() {
        let recs: Vec<&RepRecord> = outcomes.iter().map(|o| &o.records[k]).collect();
        let df = recs[0].df;
        let stats: Vec<f64> = recs.iter().map(|r| r.statistic).collect();
        let pvals: Vec<f64> = recs.iter().map(|r| r.p_value).collect();
        let rejections = recs.iter().filter(|r| r.reject).count();
        let (ci_lower, ci_upper) = clopper_pearson(rejections, config.reps, 0.95)?;
        let nystrom = if config.nystrom.is_some() {
            let ny_rej = recs.iter().filter(|r| r.nystrom_reject == Some(true)).count();
            let agree = recs.iter().filter(|r| r.nystrom_reject == Some(r.reject)).count();
            let (lo, hi) = clopper_pearson(ny_rej, config.reps, 0.95)?;
            Some(NystromSummary {
                rejection_rate: ny_rej as f64 / config.reps as f64,
                ci_lower: lo,
                ci_upper: hi,
                agreement: agree as f64 / config.reps as f64,
            })
        } else {
            None
        };
        debug_assert_eq!(df, d * t);
        results.push(TruncationSummary {
            truncation: t,
            df,
            rejections,
            rejection_rate: rejections as f64 / config.reps as f64,
            ci_lower,
            ci_upper,
            quantile_95: empirical_quantile(&stats, 0.95),
            quantile_99: empirical_quantile(&stats, 0.99),
            chi2_quantile_95: chi2_quantile(0.95, df)?,
            chi2_quantile_99: chi2_quantile(0.99, df)?,
            ks_distance: ks_uniform_distance(&pvals),
            nystrom,
        });
    }

    let mean_test_seconds = config.record_timing.then(|| {
        let secs: f64 = outcomes.iter().map(|o| o.seconds).sum();
        let tests: usize = outcomes.iter().map(|o| o.tests).sum();
        secs / tests as f64
    });
    let records = outcomes.into_iter().flat_map(|o| o.records).collect();
    Ok((SimReport { config: config.clone(), n: config.n(), results, mean_test_seconds }, records))
}

/// Null experiment; every mean shift must be zero.
pub fn run_level_experiment(config: &SimConfig) -> Result<(SimReport, Vec<RepRecord>)> {
    if !config.is_null() {
        return Err(Error::InvalidInput("level experiment requires zero mean shifts".into()));
    }
    run_experiment(config)
}

/// Experiment under the configured shifts, optionally with the Nyström test
/// run on the same replicates.
pub fn run_power_experiment(config: &SimConfig) -> Result<(SimReport, Vec<RepRecord>)> {
    run_experiment(config)
}
