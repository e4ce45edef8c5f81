use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use tkhl_core::diagnostics::{cook_distances, discriminant_coordinates, projection_tables};
use tkhl_core::kernel::gram;
use tkhl_core::model::{fit, pairwise_statistic_matrix, pairwise_with, tkhl_test};
use tkhl_core::nystrom::{default_anchors, default_landmarks, sample_landmarks, LandmarkStrategy, NystromModel};
use tkhl_core::sim::{run_power_experiment, RepRecord, SimConfig};
use tkhl_core::{ContrastMatrix, DesignBundle, FittedModel, Kernel, KernelSpec, PairwiseResult, TestResult};

use crate::input::{build_design, contrast_spec, kernel_spec, read_dataset, Dataset};
use crate::output::{csv_bytes, emit_warnings, fmt_f64, rows, to_json, write_bytes};
use crate::{DiagnosticsArgs, Format, PairwiseArgs, RunArgs, SimulateArgs, Strategy};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs detected by the front end.
    Usage(String),
    /// File system or CSV failures.
    Io(String),
    Core(tkhl_core::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<tkhl_core::Error> for CliError {
    fn from(e: tkhl_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Core(e) => e.kind(),
        }
    }
}

/// Exact fit or Nyström approximation, chosen by the flags.
enum Engine {
    Exact(Box<FittedModel>),
    Nystrom(Box<NystromModel>),
}

impl Engine {
    fn test(&self, l: &ContrastMatrix, t: usize) -> tkhl_core::Result<TestResult> {
        match self {
            Engine::Exact(m) => tkhl_test(m, l, t),
            Engine::Nystrom(m) => m.test(l, t),
        }
    }
}

struct Prepared {
    data: Dataset,
    design: DesignBundle,
    kernel: Kernel,
}

fn prepare(args: &RunArgs) -> Result<Prepared, CliError> {
    if args.truncation.is_empty() || args.truncation.contains(&0) {
        return Err(CliError::Usage("truncation values must be positive".into()));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let spec = kernel_spec(args)?;
    let data = read_dataset(&args.data, &args.factors)?;
    let design = build_design(&data)?;
    let kernel = spec.resolve(&data.y)?;
    Ok(Prepared { data, design, kernel })
}

fn uses_nystrom(args: &RunArgs) -> bool {
    args.nystrom_landmarks.is_some() || args.nystrom_anchors.is_some()
}

fn engine(args: &RunArgs, p: &Prepared) -> Result<(Engine, Vec<String>), CliError> {
    if !uses_nystrom(args) {
        let model = fit(gram(&p.data.y, &p.kernel)?, p.design.clone())?;
        return Ok((Engine::Exact(Box::new(model)), Vec::new()));
    }
    let n = p.data.n();
    let q = args.nystrom_landmarks.unwrap_or_else(|| default_landmarks(n));
    let (strategy, groups) = match args.nystrom_strategy {
        Strategy::Uniform => (LandmarkStrategy::Uniform, None),
        Strategy::Stratified => (LandmarkStrategy::Stratified, Some(p.design.cell_codes())),
    };
    let plan = sample_landmarks(n, q, groups.as_deref(), strategy, args.seed)?;
    let m = match args.nystrom_anchors {
        Some(m) => m,
        None => default_anchors(q, p.design.select_rows(&plan.indices)?.0.rank()),
    };
    let model = NystromModel::fit(&p.data.y, &p.kernel, &p.design, plan, m)?;
    let warnings = model.warnings().to_vec();
    Ok((Engine::Nystrom(Box::new(model)), warnings))
}

#[derive(Serialize)]
struct TestRow {
    #[serde(flatten)]
    result: TestResult,
    reject: bool,
}

#[derive(Serialize)]
struct TestOutput {
    kernel: KernelSpec,
    contrast: String,
    n: usize,
    results: Vec<TestRow>,
    warnings: Vec<String>,
}

fn test_csv_row(r: &TestResult, alpha: f64) -> Vec<String> {
    vec![
        fmt_f64(r.statistic),
        r.df.to_string(),
        fmt_f64(r.p_value),
        r.truncation.to_string(),
        serde_json::to_value(r.method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        (r.p_value < alpha).to_string(),
    ]
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn cmd_test(args: &RunArgs) -> Result<(), CliError> {
    let p = prepare(args)?;
    let cspec = contrast_spec(args)?;
    let l = cspec.build(&p.design)?;
    let (engine, mut warnings) = engine(args, &p)?;
    let mut results = Vec::new();
    for &t in &args.truncation {
        let r = engine.test(&l, t)?;
        warnings.extend(r.warnings.iter().cloned());
        results.push(r);
    }
    emit_warnings(&warnings);
    let bytes = match args.format {
        Format::Json => to_json(&TestOutput {
            kernel: p.kernel.spec(),
            contrast: cspec.describe(),
            n: p.data.n(),
            results: results.into_iter().map(|r| TestRow { reject: r.p_value < args.alpha, result: r }).collect(),
            warnings,
        })?,
        Format::Csv => {
            let header = strings(&["statistic", "df", "p_value", "truncation", "method", "reject"]);
            let recs: Vec<Vec<String>> = results.iter().map(|r| test_csv_row(r, args.alpha)).collect();
            csv_bytes(&header, &recs)?
        }
    };
    write_bytes(args.out.as_deref(), &bytes)
}

#[derive(Serialize)]
struct PairwiseBlock {
    truncation: usize,
    comparisons: Vec<PairwiseResult>,
    /// Symmetric matrix of statistics, rows and columns in `levels` order.
    statistic_matrix: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct PairwiseOutput {
    kernel: KernelSpec,
    factor: String,
    levels: Vec<String>,
    n: usize,
    results: Vec<PairwiseBlock>,
    warnings: Vec<String>,
}

pub fn cmd_pairwise(args: &PairwiseArgs) -> Result<(), CliError> {
    let run = &args.run;
    if run.contrast.is_some() {
        return Err(CliError::Usage("pairwise builds its own contrasts; use --pairwise-factor".into()));
    }
    let p = prepare(run)?;
    let factor = args.pairwise_factor.clone().unwrap_or_else(|| run.factors[0].clone());
    let levels =
        p.design.factor(&factor).ok_or_else(|| CliError::Usage(format!("unknown factor '{factor}'")))?.levels.clone();
    let (engine, mut warnings) = engine(run, &p)?;
    let mut blocks = Vec::new();
    for &t in &run.truncation {
        let comparisons = pairwise_with(&p.design, &factor, |l| engine.test(l, t))?;
        for c in &comparisons {
            for w in &c.result.warnings {
                if !warnings.contains(w) {
                    warnings.push(w.clone());
                }
            }
        }
        let matrix = pairwise_statistic_matrix(&levels, &comparisons);
        blocks.push(PairwiseBlock { truncation: t, statistic_matrix: rows(&matrix), comparisons });
    }
    emit_warnings(&warnings);
    let bytes = match run.format {
        Format::Json => to_json(&PairwiseOutput {
            kernel: p.kernel.spec(),
            factor,
            levels,
            n: p.data.n(),
            results: blocks,
            warnings,
        })?,
        Format::Csv => {
            let header = strings(&[
                "level_a",
                "level_b",
                "statistic",
                "df",
                "p_value",
                "truncation",
                "method",
                "reject",
                "adjusted_p_value",
            ]);
            let mut recs = Vec::new();
            for b in &blocks {
                for c in &b.comparisons {
                    let mut row = vec![c.level_a.clone(), c.level_b.clone()];
                    row.extend(test_csv_row(&c.result, run.alpha));
                    row.push(fmt_f64(c.adjusted_p_value));
                    recs.push(row);
                }
            }
            csv_bytes(&header, &recs)?
        }
    };
    write_bytes(run.out.as_deref(), &bytes)
}

#[derive(Serialize)]
struct DiagnosticsOutput {
    kernel: KernelSpec,
    contrast: String,
    truncation: usize,
    response: Vec<Vec<f64>>,
    residual: Vec<Vec<f64>>,
    prediction: Vec<Vec<f64>>,
    axis_eigenvalues: Vec<f64>,
    discriminant: Vec<Vec<f64>>,
    cook: Vec<f64>,
    warnings: Vec<String>,
}

/// Rows of `m` prefixed with the observation index and factor labels.
fn table(data: &Dataset, m: &DMatrix<f64>, prefix: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["obs_id".to_string()];
    header.extend(data.factor_names.iter().cloned());
    header.extend((1..=m.ncols()).map(|j| format!("{prefix}{j}")));
    let recs = (0..m.nrows())
        .map(|i| {
            let mut r = vec![i.to_string()];
            r.extend(data.factor_labels.iter().map(|l| l[i].clone()));
            r.extend(m.row(i).iter().map(|&v| fmt_f64(v)));
            r
        })
        .collect();
    (header, recs)
}

pub fn cmd_diagnostics(args: &DiagnosticsArgs) -> Result<(), CliError> {
    let run = &args.run;
    if uses_nystrom(run) {
        return Err(CliError::Usage("diagnostics are computed from the exact fit; drop the Nyström flags".into()));
    }
    let [t] = run.truncation[..] else {
        return Err(CliError::Usage("diagnostics take a single --truncation value".into()));
    };
    let p = prepare(run)?;
    let cspec = contrast_spec(run)?;
    let l = cspec.build(&p.design)?;
    let model = fit(gram(&p.data.y, &p.kernel)?, p.design.clone())?;
    let mut warnings = Vec::new();
    let t = if t > model.rank() {
        warnings.push(format!("truncation {t} capped at residual rank {}", model.rank()));
        model.rank()
    } else {
        t
    };
    let tables = projection_tables(&model, t)?;
    let axes = discriminant_coordinates(&model, &l, t, None, args.axes)?;
    warnings.extend(axes.warnings.iter().cloned());
    let cook = cook_distances(&model, &l, t)?;
    emit_warnings(&warnings);

    match run.format {
        Format::Json => {
            let bytes = to_json(&DiagnosticsOutput {
                kernel: p.kernel.spec(),
                contrast: cspec.describe(),
                truncation: t,
                response: rows(&tables.response_proj),
                residual: rows(&tables.residual_proj),
                prediction: rows(&tables.prediction_proj),
                axis_eigenvalues: axes.axis_eigvals.clone(),
                discriminant: rows(&axes.sample_coords),
                cook: cook.iter().copied().collect(),
                warnings,
            })?;
            write_bytes(run.out.as_deref(), &bytes)
        }
        Format::Csv => {
            let dir = run.out.as_deref().ok_or_else(|| CliError::Usage("CSV diagnostics need --out DIR".into()))?;
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            let cook_m = DMatrix::from_column_slice(cook.len(), 1, cook.as_slice());
            let outputs = [
                ("response.csv", table(&p.data, &tables.response_proj, "t")),
                ("residual.csv", table(&p.data, &tables.residual_proj, "t")),
                ("prediction.csv", table(&p.data, &tables.prediction_proj, "t")),
                ("discriminant.csv", table(&p.data, &axes.sample_coords, "axis")),
                ("cook.csv", {
                    let (mut h, r) = table(&p.data, &cook_m, "cook");
                    *h.last_mut().unwrap() = "cook".into();
                    (h, r)
                }),
            ];
            for (name, (header, recs)) in outputs {
                write_bytes(Some(&dir.join(name)), &csv_bytes(&header, &recs)?)?;
            }
            Ok(())
        }
    }
}

fn load_sim_config(args: &SimulateArgs) -> Result<SimConfig, CliError> {
    match (&args.config, args.preset.as_deref()) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid simulation config: {e}")))
        }
        (None, Some("small")) => Ok(SimConfig::small()),
        _ => Err(CliError::Usage("simulate needs --config or --preset".into())),
    }
}

fn records_csv(records: &[RepRecord]) -> Result<Vec<u8>, CliError> {
    let header = strings(&[
        "rep",
        "truncation",
        "df",
        "statistic",
        "p_value",
        "reject",
        "nystrom_statistic",
        "nystrom_p_value",
        "nystrom_reject",
    ]);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let recs: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.rep.to_string(),
                r.truncation.to_string(),
                r.df.to_string(),
                fmt_f64(r.statistic),
                fmt_f64(r.p_value),
                r.reject.to_string(),
                opt(r.nystrom_statistic),
                opt(r.nystrom_p_value),
                r.nystrom_reject.map(|b| b.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    csv_bytes(&header, &recs)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let config = load_sim_config(args)?;
    let (report, records) = run_power_experiment(&config)?;
    if let Some(path) = &args.records {
        write_bytes(Some(Path::new(path)), &records_csv(&records)?)?;
    }
    write_bytes(args.out.as_deref(), &to_json(&report)?)
}
