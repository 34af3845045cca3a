//! ETT-style CSV ingestion, chronological splits, train-only
//! standardization, and sliding-window dataset construction.

use std::path::Path;

use tea_core::tensor::DenseTensor;

use crate::config::SplitSpec;
use crate::error::{CliError, Result};

/// A loaded timestamped series: `T × D_raw` values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub timestamps: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<f64>,
}

impl RawSeries {
    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> RawSeries {
        let c = self.cols();
        RawSeries {
            timestamps: self.timestamps[start..start + len].to_vec(),
            columns: self.columns.clone(),
            values: self.values[start * c..(start + len) * c].to_vec(),
        }
    }
}

/// Minimal `YYYY-MM-DD[ HH:MM:SS]` validation returning `(year, month)`,
/// which is all the month-based splitter needs.
fn parse_timestamp(s: &str, line: usize) -> Result<(i32, u32)> {
    let err = || CliError::parse(format!("line {line}: invalid timestamp `{s}`"));
    let date = s.split(' ').next().unwrap_or("");
    let mut parts = date.split('-');
    let year: i32 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(err)?;
    let month: u32 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(err)?;
    let day: u32 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(err)?;
    if parts.next().is_some() || !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return Err(err());
    }
    if let Some(time) = s.split(' ').nth(1) {
        let mut t = time.split(':');
        let h: u32 = t.next().and_then(|p| p.parse().ok()).ok_or_else(err)?;
        let m: u32 = t.next().and_then(|p| p.parse().ok()).ok_or_else(err)?;
        let sec: u32 = t.next().and_then(|p| p.parse().ok()).unwrap_or(0);
        if h > 23 || m > 59 || sec > 59 {
            return Err(err());
        }
    }
    Ok((year, month))
}

/// Loads a comma-separated series: header row with a leading timestamp
/// column, then one numeric row per time step. No imputation — any missing
/// or malformed cell is a parse error carrying its line number.
pub fn load_csv(path: &Path) -> Result<RawSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<RawSeries> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::parse("line 1: empty file"))?;
    let mut cols = header.split(',').map(str::trim);
    cols.next()
        .filter(|c| !c.is_empty())
        .ok_or_else(|| CliError::parse("line 1: missing timestamp column"))?;
    let columns: Vec<String> = cols.map(String::from).collect();
    if columns.is_empty() {
        return Err(CliError::parse("line 1: no feature columns"));
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',').map(str::trim);
        let ts = cells
            .next()
            .ok_or_else(|| CliError::parse(format!("line {line_no}: missing timestamp")))?;
        parse_timestamp(ts, line_no)?;
        let mut count = 0;
        for cell in cells {
            if cell.is_empty() {
                return Err(CliError::parse(format!(
                    "line {line_no}: missing value in column {}",
                    columns.get(count).map(String::as_str).unwrap_or("?")
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                CliError::parse(format!("line {line_no}: non-numeric cell `{cell}`"))
            })?;
            values.push(v);
            count += 1;
        }
        if count != columns.len() {
            return Err(CliError::parse(format!(
                "line {line_no}: expected {} values, found {count}",
                columns.len()
            )));
        }
        timestamps.push(ts.to_string());
    }
    Ok(RawSeries {
        timestamps,
        columns,
        values,
    })
}

/// Chronological three-way split, by row ratios or by month boundaries.
pub fn split(series: &RawSeries, spec: &SplitSpec) -> Result<(RawSeries, RawSeries, RawSeries)> {
    let t = series.rows();
    let (n_train, n_val, n_test) = match spec {
        SplitSpec::Ratio { train, val, test } => {
            if *train <= 0.0 || *val < 0.0 || *test < 0.0 || train + val + test > 1.0 + 1e-9 {
                return Err(CliError::data("split ratios must be positive and sum ≤ 1"));
            }
            let n_train = (t as f64 * train).floor() as usize;
            let n_val = (t as f64 * val).floor() as usize;
            let n_test = if (train + val + test - 1.0).abs() <= 1e-9 {
                t - n_train - n_val
            } else {
                (t as f64 * test).floor() as usize
            };
            (n_train, n_val, n_test)
        }
        SplitSpec::Months { train, val, test } => {
            // Month index of each row relative to the first row's month.
            let (y0, m0) = parse_timestamp(&series.timestamps[0], 2)?;
            let month_of = |i: usize| -> Result<u32> {
                let (y, m) = parse_timestamp(&series.timestamps[i], i + 2)?;
                let delta = (y - y0) * 12 + m as i32 - m0 as i32;
                u32::try_from(delta)
                    .map_err(|_| CliError::data("timestamps are not chronological"))
            };
            let mut n_train = 0;
            let mut n_val = 0;
            let mut n_test = 0;
            for i in 0..t {
                let m = month_of(i)?;
                if m < *train {
                    n_train += 1;
                } else if m < train + val {
                    n_val += 1;
                } else if m < train + val + test {
                    n_test += 1;
                }
            }
            (n_train, n_val, n_test)
        }
    };
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(CliError::data(format!(
            "empty split segment (train {n_train}, val {n_val}, test {n_test})"
        )));
    }
    Ok((
        series.slice_rows(0, n_train),
        series.slice_rows(n_train, n_val),
        series.slice_rows(n_train + n_val, n_test),
    ))
}

/// Per-column z-score statistics, fit on the training split only.
/// Constant columns get `std := 1` and are reported in `constant_columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant_columns: Vec<String>,
}

impl Scaler {
    pub fn fit(train: &RawSeries) -> Result<Self> {
        let (t, c) = (train.rows(), train.cols());
        if t == 0 {
            return Err(CliError::data("cannot fit scaler on empty split"));
        }
        let mut mean = vec![0.0; c];
        for r in 0..t {
            for j in 0..c {
                mean[j] += train.at(r, j);
            }
        }
        for m in &mut mean {
            *m /= t as f64;
        }
        let mut var = vec![0.0; c];
        for r in 0..t {
            for j in 0..c {
                let d = train.at(r, j) - mean[j];
                var[j] += d * d;
            }
        }
        let mut constant_columns = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let s = (v / t as f64).sqrt();
                if s <= 0.0 {
                    constant_columns.push(train.columns[j].clone());
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self {
            mean,
            std,
            constant_columns,
        })
    }

    pub fn transform(&self, series: &RawSeries) -> RawSeries {
        let mut out = series.clone();
        let c = series.cols();
        for (i, v) in out.values.iter_mut().enumerate() {
            let j = i % c;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        out
    }

    pub fn inverse_transform(&self, series: &RawSeries) -> RawSeries {
        let mut out = series.clone();
        let c = series.cols();
        for (i, v) in out.values.iter_mut().enumerate() {
            let j = i % c;
            *v = *v * self.std[j] + self.mean[j];
        }
        out
    }
}

/// One supervised window over the standardized series.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastWindow {
    /// `seq_len × d_raw` encoder input.
    pub encoder_input: DenseTensor,
    /// `label_len × d_raw` decoder seed — the tail rows of the encoder
    /// input (label-overlap convention).
    pub decoder_seed: DenseTensor,
    /// `pred_len × d_raw` forecast target.
    pub target: DenseTensor,
    pub start: usize,
}

/// Stride-1 sliding windows; count is `T − seq_len − pred_len + 1`.
pub fn windows(
    series: &RawSeries,
    seq_len: usize,
    label_len: usize,
    pred_len: usize,
) -> Result<Vec<ForecastWindow>> {
    let t = series.rows();
    let c = series.cols();
    if label_len > seq_len {
        return Err(CliError::data("label_len cannot exceed seq_len"));
    }
    if t < seq_len + pred_len {
        return Err(CliError::data(format!(
            "series of {t} rows is shorter than one window ({seq_len}+{pred_len})"
        )));
    }
    let grab = |start: usize, len: usize| -> DenseTensor {
        DenseTensor::new(
            vec![len, c],
            series.values[start * c..(start + len) * c].to_vec(),
        )
        .expect("window slice")
    };
    Ok((0..=t - seq_len - pred_len)
        .map(|k| ForecastWindow {
            encoder_input: grab(k, seq_len),
            decoder_seed: grab(k + seq_len - label_len, label_len),
            target: grab(k + seq_len, pred_len),
            start: k,
        })
        .collect())
}

/// MSE of the persistence forecaster (repeat the last observed row across
/// the horizon) over a window list — the desk-scale skill floor.
pub fn persistence_mse(windows: &[ForecastWindow]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for w in windows {
        let c = w.target.shape()[1];
        let l = w.encoder_input.shape()[0];
        for t in 0..w.target.shape()[0] {
            for j in 0..c {
                let d = w.target.get(&[t, j]) - w.encoder_input.get(&[l - 1, j]);
                total += d * d;
                n += 1;
            }
        }
    }
    total / n as f64
}
