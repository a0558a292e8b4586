//! Per-level convergence records, their CSV form, and exponential fits.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::flops::FLOP_MODEL_VERSION;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRecord {
    pub p: usize,
    pub layers: usize,
    pub elements: usize,
    pub n_free: usize,
    pub iterations: usize,
    pub error_energy: f64,
    pub flops_factor: u64,
    pub flops_iterate_total: u64,
    pub flops_total: u64,
    pub wall_seconds: f64,
}

pub const RECORD_HEADER: [&str; 10] = [
    "p",
    "layers",
    "elements",
    "n_free",
    "iterations",
    "error_energy",
    "flops_factor",
    "flops_iterate_total",
    "flops_total",
    "wall_seconds",
];

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed record file: {0}")]
    Malformed(String),
    #[error("need at least 4 records with positive error, got {0}")]
    TooFewRecords(usize),
}

/// Floats are written with 17 significant digits.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_records<W: Write>(records: &[ConvergenceRecord], w: W) -> Result<(), RecordError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORD_HEADER)?;
    for r in records {
        out.write_record([
            r.p.to_string(),
            r.layers.to_string(),
            r.elements.to_string(),
            r.n_free.to_string(),
            r.iterations.to_string(),
            fmt_f64(r.error_energy),
            r.flops_factor.to_string(),
            r.flops_iterate_total.to_string(),
            r.flops_total.to_string(),
            fmt_f64(r.wall_seconds),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<ConvergenceRecord>, RecordError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RECORD_HEADER.iter().copied()) {
        return Err(RecordError::Malformed(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let int = |i: usize| {
            field(i)
                .parse::<u64>()
                .map_err(|e| RecordError::Malformed(format!("{}: {e}", RECORD_HEADER[i])))
        };
        let float = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| RecordError::Malformed(format!("{}: {e}", RECORD_HEADER[i])))
        };
        out.push(ConvergenceRecord {
            p: int(0)? as usize,
            layers: int(1)? as usize,
            elements: int(2)? as usize,
            n_free: int(3)? as usize,
            iterations: int(4)? as usize,
            error_energy: float(5)?,
            flops_factor: int(6)?,
            flops_iterate_total: int(7)?,
            flops_total: int(8)?,
            wall_seconds: float(9)?,
        });
    }
    Ok(out)
}

/// Writes `path` and the sidecar `path.meta` with the config echo and the
/// flop model version.
pub fn emit_records(records: &[ConvergenceRecord], path: &Path, config_echo: &str) -> Result<(), RecordError> {
    write_records(records, fs::File::create(path)?)?;
    let mut meta = fs::File::create(meta_path(path))?;
    writeln!(meta, "flop_model = {FLOP_MODEL_VERSION}")?;
    meta.write_all(config_echo.as_bytes())?;
    Ok(())
}

pub fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta");
    name.into()
}

pub fn parse_records(path: &Path) -> Result<Vec<ConvergenceRecord>, RecordError> {
    read_records(fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkKey {
    Dofs,
    Flops,
    Seconds,
}

impl WorkKey {
    pub fn value(self, r: &ConvergenceRecord) -> f64 {
        match self {
            WorkKey::Dofs => r.n_free as f64,
            WorkKey::Flops => r.flops_total as f64,
            WorkKey::Seconds => r.wall_seconds,
        }
    }

    /// 3 for DOFs, 7 for work.
    pub fn default_root(self) -> u32 {
        match self {
            WorkKey::Dofs => 3,
            WorkKey::Flops | WorkKey::Seconds => 7,
        }
    }
}

impl std::str::FromStr for WorkKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dofs" => Ok(WorkKey::Dofs),
            "flops" => Ok(WorkKey::Flops),
            "seconds" => Ok(WorkKey::Seconds),
            _ => Err(format!("unknown work key '{s}'")),
        }
    }
}

/// `error ~ C exp(-b work^(1/root))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialFit {
    pub c: f64,
    pub b: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x_i, y_i)`: `(slope, intercept, R^2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - xbar) * (y - ybar);
        sxx += (x - xbar).powi(2);
        syy += (y - ybar).powi(2);
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

pub fn fit_exponential(records: &[ConvergenceRecord], work: WorkKey, root: u32) -> Result<ExponentialFit, RecordError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.error_energy > 0.0 && work.value(r) > 0.0)
        .map(|r| (work.value(r).powf(1.0 / root as f64), r.error_energy.ln()))
        .unzip();
    if xs.len() < 4 {
        return Err(RecordError::TooFewRecords(xs.len()));
    }
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok(ExponentialFit {
        c: intercept.exp(),
        b: -slope,
        r_squared,
    })
}
