//! Text formats for matrices and measurements.
//!
//! Matrices are headerless CSV, one row per line. Measurements are one row per
//! `(sample, bus)` pair with the header `n,bus,p,q,v_re,v_im,v_mag,theta`;
//! both indices are 1-based and columns a model does not use are left empty.
//! Numbers are written in shortest round-trip form.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::{AcSample, DcSample, DlpfSample, MeasurementSet, ModelKind, NoiseModel, Samples};

pub const MEASUREMENT_HEADER: [&str; 8] = ["n", "bus", "p", "q", "v_re", "v_im", "v_mag", "theta"];

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(line, e.to_string())
}

pub fn write_matrix(out: &mut impl Write, a: &DMatrix<f64>) -> Result<()> {
    let mut line = String::new();
    for row in a.row_iter() {
        line.clear();
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            write!(line, "{x:?}").expect("writing to a String");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Parses a headerless numeric CSV. Blank lines and `#` comments are skipped;
/// all rows must have the same length.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let row = raw
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| parse_err(k + 1, format!("bad number {:?}", s.trim()))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(k + 1, format!("expected {} columns, got {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(0, "empty matrix"));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

/// Noise covariance from a matrix CSV.
pub fn parse_noise(text: &str) -> Result<NoiseModel> {
    NoiseModel::new(parse_matrix(text)?)
}

pub fn write_measurements(out: &mut impl Write, meas: &MeasurementSet) -> Result<()> {
    writeln!(out, "{}", MEASUREMENT_HEADER.join(","))?;
    let f = |x: f64| format!("{x:?}");
    let m = meas.m();
    match meas.samples() {
        Samples::Ac(s) => {
            for (n, x) in s.iter().enumerate() {
                for i in 0..m {
                    let v = x.v[i];
                    writeln!(out, "{},{},{},{},{},{},,", n + 1, i + 1, f(x.p[i]), f(x.q[i]), f(v.re), f(v.im))?;
                }
            }
        }
        Samples::Dlpf(s) => {
            for (n, x) in s.iter().enumerate() {
                for i in 0..m {
                    writeln!(
                        out,
                        "{},{},{},{},,,{},{}",
                        n + 1,
                        i + 1,
                        f(x.p[i]),
                        f(x.q[i]),
                        f(x.v_mag[i]),
                        f(x.theta[i])
                    )?;
                }
            }
        }
        Samples::Dc(s) => {
            for (n, x) in s.iter().enumerate() {
                for i in 0..m {
                    writeln!(out, "{},{},{},,,,,{}", n + 1, i + 1, f(x.p[i]), f(x.theta[i]))?;
                }
            }
        }
    }
    Ok(())
}

/// Columns filled for each model, in header order after `n,bus`.
fn columns_of(kind: ModelKind) -> [bool; 6] {
    match kind {
        ModelKind::Ac => [true, true, true, true, false, false],
        ModelKind::Dlpf => [true, true, false, false, true, true],
        ModelKind::Dc => [true, false, false, false, false, true],
    }
}

fn kind_of(filled: [bool; 6]) -> Option<ModelKind> {
    ModelKind::ALL.into_iter().find(|&k| columns_of(k) == filled)
}

/// Noise covariance accompanying a measurement file.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    Covariance(NoiseModel),
    /// `R_η = σ²I` sized by the largest bus index in the file.
    Sigma2(f64),
}

impl From<NoiseModel> for NoiseSource {
    fn from(n: NoiseModel) -> Self {
        NoiseSource::Covariance(n)
    }
}

/// Parses a measurement CSV. The model is inferred from which columns are
/// filled; every `(n, bus)` pair must appear exactly once.
pub fn parse_measurements(text: &str, noise: impl Into<NoiseSource>) -> Result<MeasurementSet> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>() != MEASUREMENT_HEADER {
        return Err(parse_err(1, format!("expected header {}", MEASUREMENT_HEADER.join(","))));
    }
    let mut kind = None;
    let mut rows: Vec<(usize, usize, [f64; 6])> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let index = |k: usize| -> Result<usize> {
            match record[k].parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(parse_err(line, format!("{} must be a positive integer, got {:?}", MEASUREMENT_HEADER[k], &record[k]))),
            }
        };
        let (n, bus) = (index(0)?, index(1)?);
        let mut filled = [false; 6];
        let mut values = [0.0; 6];
        for c in 0..6 {
            let s = &record[c + 2];
            if !s.is_empty() {
                filled[c] = true;
                values[c] = s
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad {} value {s:?}", MEASUREMENT_HEADER[c + 2])))?;
            }
        }
        let row_kind =
            kind_of(filled).ok_or_else(|| parse_err(line, "filled columns match no measurement model"))?;
        match kind {
            None => kind = Some(row_kind),
            Some(k) if k != row_kind => {
                return Err(Error::WrongModel { expected: k.to_string(), actual: row_kind.to_string() });
            }
            _ => {}
        }
        rows.push((n, bus, values));
    }
    let kind = kind.ok_or_else(|| Error::InsufficientData("measurement file has no rows".into()))?;
    let noise = match noise.into() {
        NoiseSource::Covariance(n) => n,
        NoiseSource::Sigma2(s) => NoiseModel::isotropic(rows.iter().map(|r| r.1).max().unwrap_or(0), s)?,
    };
    let m = noise.m();
    let n_samples = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let mut grid: Vec<Option<[f64; 6]>> = vec![None; n_samples * m];
    for &(n, bus, values) in &rows {
        if bus > m {
            return Err(Error::Dimension(format!("bus {bus} exceeds the {m}-bus noise model")));
        }
        let slot = &mut grid[(n - 1) * m + bus - 1];
        if slot.is_some() {
            return Err(Error::InvalidInput(format!("sample {n}, bus {bus} appears twice")));
        }
        *slot = Some(values);
    }
    if let Some(k) = grid.iter().position(Option::is_none) {
        return Err(Error::InvalidInput(format!("sample {}, bus {} is missing", k / m + 1, k % m + 1)));
    }
    let col = |n: usize, c: usize| DVector::from_fn(m, |i, _| grid[n * m + i].expect("checked above")[c]);
    let samples = match kind {
        ModelKind::Ac => Samples::Ac(
            (0..n_samples)
                .map(|n| AcSample {
                    p: col(n, 0),
                    q: col(n, 1),
                    v: col(n, 2).zip_map(&col(n, 3), Complex64::new),
                })
                .collect(),
        ),
        ModelKind::Dlpf => Samples::Dlpf(
            (0..n_samples)
                .map(|n| DlpfSample { p: col(n, 0), q: col(n, 1), v_mag: col(n, 4), theta: col(n, 5) })
                .collect(),
        ),
        ModelKind::Dc => Samples::Dc((0..n_samples).map(|n| DcSample { p: col(n, 0), theta: col(n, 5) }).collect()),
    };
    MeasurementSet::new(samples, noise)
}

pub fn read_measurements(path: &Path, noise: impl Into<NoiseSource>) -> Result<MeasurementSet> {
    parse_measurements(&std::fs::read_to_string(path)?, noise)
}
