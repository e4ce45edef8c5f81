//! CSV ingestion and translation of flags into library objects.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use tkhl_core::design::{one_way_design, padded_contrast, pair_contrast, pairwise_contrast, two_way_additive_design};
use tkhl_core::{ContrastMatrix, DesignBundle, KernelSpec};

use crate::commands::CliError;
use crate::{KernelKind, RunArgs};

pub struct Dataset {
    pub y: DMatrix<f64>,
    pub factor_names: Vec<String>,
    /// One label column per factor.
    pub factor_labels: Vec<Vec<String>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn read_dataset(path: &Path, factors: &[String]) -> Result<Dataset, CliError> {
    if factors.is_empty() || factors.len() > 2 {
        return Err(usage(format!("expected one or two factors, got {}", factors.len())));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::Io(e.to_string()))?.clone();
    let y_cols: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| h.starts_with("y_")).map(|(i, _)| i).collect();
    if y_cols.is_empty() {
        return Err(usage("no response columns (prefix y_) in data"));
    }
    let mut f_cols = Vec::new();
    for f in factors {
        let idx = headers.iter().position(|h| h == f).ok_or_else(|| usage(format!("factor column '{f}' not found")))?;
        if y_cols.contains(&idx) {
            return Err(usage(format!("factor column '{f}' is a response column")));
        }
        f_cols.push(idx);
    }
    let mut values = Vec::new();
    let mut labels = vec![Vec::new(); factors.len()];
    let mut rows = 0;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Io(e.to_string()))?;
        for &c in &y_cols {
            let field = rec.get(c).unwrap_or("").trim();
            let v: f64 = field.parse().map_err(|_| {
                usage(format!("row {}: column '{}' value '{field}' is not a number", line + 1, &headers[c]))
            })?;
            if !v.is_finite() {
                return Err(usage(format!("row {}: non-finite value in '{}'", line + 1, &headers[c])));
            }
            values.push(v);
        }
        for (k, &c) in f_cols.iter().enumerate() {
            labels[k].push(rec.get(c).unwrap_or("").trim().to_string());
        }
        rows += 1;
    }
    if rows < 3 {
        return Err(usage(format!("need at least 3 rows, got {rows}")));
    }
    Ok(Dataset {
        y: DMatrix::from_row_slice(rows, y_cols.len(), &values),
        factor_names: factors.to_vec(),
        factor_labels: labels,
    })
}

pub fn build_design(ds: &Dataset) -> Result<DesignBundle, CliError> {
    let design = match ds.factor_labels.as_slice() {
        [a] => one_way_design(a)?,
        [a, b] => two_way_additive_design(a, b)?,
        _ => return Err(usage("expected one or two factors")),
    };
    Ok(design.with_factor_names(&ds.factor_names))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContrastSpec {
    Global(String),
    Pair(String, String, String),
    Custom(PathBuf),
}

impl ContrastSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let bad = || usage(format!("cannot parse contrast '{s}' (global:F, pair:F:A:B or custom:PATH)"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "global" if !rest.is_empty() => Ok(ContrastSpec::Global(rest.to_string())),
            "pair" => {
                let parts: Vec<&str> = rest.split(':').collect();
                match parts.as_slice() {
                    [f, a, b] => Ok(ContrastSpec::Pair(f.to_string(), a.to_string(), b.to_string())),
                    _ => Err(bad()),
                }
            }
            "custom" if !rest.is_empty() => Ok(ContrastSpec::Custom(PathBuf::from(rest))),
            _ => Err(bad()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ContrastSpec::Global(f) => format!("global:{f}"),
            ContrastSpec::Pair(f, a, b) => format!("pair:{f}:{a}:{b}"),
            ContrastSpec::Custom(p) => format!("custom:{}", p.display()),
        }
    }

    pub fn build(&self, design: &DesignBundle) -> Result<ContrastMatrix, CliError> {
        let factor = |name: &str| {
            design.factor(name).cloned().ok_or_else(|| usage(format!("contrast names unknown factor '{name}'")))
        };
        match self {
            ContrastSpec::Global(f) => {
                let f = factor(f)?;
                Ok(padded_contrast(&pairwise_contrast(f.level_count())?, f.offset, design.p())?)
            }
            ContrastSpec::Pair(f, a, b) => {
                let f = factor(f)?;
                let ia = f.level_index(a).ok_or_else(|| usage(format!("level '{a}' not in factor '{}'", f.name)))?;
                let ib = f.level_index(b).ok_or_else(|| usage(format!("level '{b}' not in factor '{}'", f.name)))?;
                Ok(padded_contrast(&pair_contrast(f.level_count(), ia, ib)?, f.offset, design.p())?)
            }
            ContrastSpec::Custom(path) => {
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(false)
                    .from_path(path)
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                let mut rows: Vec<Vec<f64>> = Vec::new();
                for rec in reader.records() {
                    let rec = rec.map_err(|e| CliError::Io(e.to_string()))?;
                    let row: Result<Vec<f64>, _> = rec.iter().map(|v| v.trim().parse::<f64>()).collect();
                    rows.push(row.map_err(|_| usage(format!("{}: non-numeric contrast entry", path.display())))?);
                }
                let d = rows.len();
                let p = rows.first().map_or(0, Vec::len);
                if d == 0 || rows.iter().any(|r| r.len() != p) {
                    return Err(usage(format!("{}: contrast rows must be nonempty and equally long", path.display())));
                }
                Ok(ContrastMatrix::new(DMatrix::from_fn(d, p, |i, j| rows[i][j]))?)
            }
        }
    }
}

pub fn contrast_spec(args: &RunArgs) -> Result<ContrastSpec, CliError> {
    match &args.contrast {
        Some(s) => ContrastSpec::parse(s),
        None => Ok(ContrastSpec::Global(args.factors[0].clone())),
    }
}

pub fn kernel_spec(args: &RunArgs) -> Result<KernelSpec, CliError> {
    let spec = match args.kernel {
        KernelKind::Gaussian => KernelSpec::Gaussian { bandwidth: args.bandwidth },
        KernelKind::Linear => KernelSpec::Linear,
        KernelKind::Polynomial => KernelSpec::Polynomial { degree: args.degree, offset: args.offset },
    };
    if args.bandwidth.is_some() && args.kernel != KernelKind::Gaussian {
        return Err(usage("--bandwidth only applies to the gaussian kernel"));
    }
    spec.validate()?;
    Ok(spec)
}
