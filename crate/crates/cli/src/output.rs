//! CSV and JSON artifacts written by the harness.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use attnmix_core::trainer::MetricsRow;
use serde_json::{json, Value};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 11] = [
    "episode",
    "env_steps",
    "epsilon",
    "loss_td",
    "loss_aux",
    "loss_total",
    "train_return_mean",
    "test_win_rate",
    "test_return_mean",
    "mean_sparse_support",
    "mean_dense_support",
];

/// Formats a float like C's `%.9g`: nine significant digits, trailing zeros
/// dropped, scientific notation outside `[1e-4, 1e9)`. Non-finite values
/// become `nan`, `inf` and `-inf`.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Round to nine significant digits first; the exponent of the rounded
    // value decides the notation.
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp) as usize;
    strip_zeros(&format!("{x:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn metrics_record(row: &MetricsRow) -> [String; 11] {
    [
        row.episode.to_string(),
        row.env_steps.to_string(),
        fmt_g9(row.epsilon),
        fmt_g9(row.loss_td),
        fmt_g9(row.loss_aux),
        fmt_g9(row.loss_total),
        fmt_g9(row.train_return_mean),
        fmt_g9(row.test_win_rate),
        fmt_g9(row.test_return_mean),
        fmt_g9(row.mean_sparse_support),
        fmt_g9(row.mean_dense_support),
    ]
}

/// Streams metrics rows to a CSV file, flushing after every row so partial
/// runs leave usable curves behind.
pub struct MetricsWriter {
    inner: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(metrics_record(row))?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Wall-clock time of each evaluation point, kept apart from `metrics.csv`
/// so that file stays byte-for-byte reproducible.
pub struct TimingWriter {
    inner: csv::Writer<std::fs::File>,
}

impl TimingWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(["episode", "env_steps", "wall_ms"])?;
        inner.flush()?;
        Ok(TimingWriter { inner })
    }

    pub fn write(&mut self, row: &MetricsRow, wall_ms: u128) -> Result<()> {
        self.inner.write_record([row.episode.to_string(), row.env_steps.to_string(), wall_ms.to_string()])?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Percentile with linear interpolation between closest ranks
/// (`q` in `[0, 1]`). Returns NaN for an empty sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Median of the finite entries, NaN if there are none.
pub fn finite_median(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    percentile(&v, 0.5)
}

fn spread(values: &[f64]) -> Value {
    json!({
        "median": percentile(values, 0.5),
        "p25": percentile(values, 0.25),
        "p75": percentile(values, 0.75),
        "per_seed": values,
    })
}

/// Final and best greedy win rate of one seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub final_win_rate: f64,
    pub best_win_rate: f64,
    pub final_return: f64,
}

impl SeedResult {
    pub fn from_rows(seed: u64, rows: &[MetricsRow]) -> Self {
        let last = rows.last();
        SeedResult {
            seed,
            final_win_rate: last.map_or(f64::NAN, |r| r.test_win_rate),
            best_win_rate: rows.iter().map(|r| r.test_win_rate).fold(f64::NAN, f64::max),
            final_return: last.map_or(f64::NAN, |r| r.test_return_mean),
        }
    }
}

/// `summary.json`: median and interquartile range across seeds.
pub fn summary_json(results: &[SeedResult]) -> Value {
    let finals: Vec<f64> = results.iter().map(|r| r.final_win_rate).collect();
    let bests: Vec<f64> = results.iter().map(|r| r.best_win_rate).collect();
    let returns: Vec<f64> = results.iter().map(|r| r.final_return).collect();
    json!({
        "seeds": results.iter().map(|r| r.seed).collect::<Vec<_>>(),
        "final_win_rate": spread(&finals),
        "best_win_rate": spread(&bests),
        "final_test_return": spread(&returns),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_printf() {
        let cases = [
            (1.0, "1"),
            (0.5, "0.5"),
            (-2.25, "-2.25"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (9.9999999999, "10"),
            (999999999.7, "1e+09"),
            (5e-4, "0.0005"),
            (1e300, "1e+300"),
            (0.0, "0"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g9(x), want, "{x}");
        }
        assert_eq!(fmt_g9(f64::NAN), "nan");
        assert_eq!(fmt_g9(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn percentiles_interpolate() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert_eq!(percentile(&v, 0.25), 1.75);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert!(percentile(&[], 0.5).is_nan());
        assert_eq!(finite_median([f64::NAN, 1.0, 3.0]), 2.0);
    }
}
