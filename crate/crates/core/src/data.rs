//! Dataset ingestion (libsvm text format) and synthetic designs.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::mat_vec;
use crate::objectives::Dataset;
use crate::seed;

/// One line of a libsvm file: `label idx:val idx:val …`, 1-based indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LibsvmRecord {
    pub label: f64,
    pub features: Vec<(usize, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelMode {
    /// Keep labels as read.
    Raw,
    /// Map `{−1, +1}` to `{0, 1}`; reject anything else.
    Binary,
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

/// Parses one non-empty line. `line_no` is 1-based and only used in errors.
pub fn parse_record(text: &str, line_no: usize) -> Result<LibsvmRecord> {
    let mut tokens = text.split_whitespace();
    let label_tok = tokens
        .next()
        .ok_or_else(|| parse_err(line_no, "missing label"))?;
    let label: f64 = label_tok
        .parse()
        .map_err(|_| parse_err(line_no, format!("bad label {label_tok:?}")))?;
    if !label.is_finite() {
        return Err(parse_err(line_no, "label is not finite"));
    }
    let mut features = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| parse_err(line_no, format!("expected idx:val, got {tok:?}")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad feature index {idx:?}")))?;
        if idx == 0 {
            return Err(parse_err(line_no, "feature indices are 1-based"));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad feature value {val:?}")))?;
        if !val.is_finite() {
            return Err(parse_err(line_no, "feature value is not finite"));
        }
        if let Some(&(prev, _)) = features.last() {
            if idx == prev {
                return Err(parse_err(line_no, format!("duplicate feature index {idx}")));
            }
            if idx < prev {
                return Err(parse_err(
                    line_no,
                    format!("feature index {idx} follows {prev}"),
                ));
            }
        }
        features.push((idx, val));
    }
    Ok(LibsvmRecord { label, features })
}

/// Reads all records; blank lines and `#` comments are skipped.
pub fn read_libsvm_records(reader: impl Read) -> Result<Vec<LibsvmRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        out.push(parse_record(body, i + 1)?);
    }
    if out.is_empty() {
        return Err(invalid("data", "no records found"));
    }
    Ok(out)
}

/// Densifies records into an n×d dataset with `d` the largest index seen.
pub fn records_to_dataset(records: &[LibsvmRecord], mode: LabelMode) -> Result<Dataset> {
    let d = records
        .iter()
        .filter_map(|r| r.features.last().map(|&(i, _)| i))
        .max()
        .unwrap_or(0);
    if d == 0 {
        return Err(invalid("data", "no features present"));
    }
    let mut x = Mat::<f64>::zeros(records.len(), d);
    for (row, r) in records.iter().enumerate() {
        for &(idx, val) in &r.features {
            x[(row, idx - 1)] = val;
        }
    }
    let y = records.iter().map(|r| r.label).collect();
    let data = Dataset::new(x, y)?;
    match mode {
        LabelMode::Raw => Ok(data),
        LabelMode::Binary => data.into_binary_labels(),
    }
}

pub fn parse_libsvm_str(text: &str, mode: LabelMode) -> Result<Dataset> {
    records_to_dataset(&read_libsvm_records(text.as_bytes())?, mode)
}

pub fn parse_libsvm(path: impl AsRef<Path>, mode: LabelMode) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    records_to_dataset(&read_libsvm_records(file)?, mode)
}

/// Writes nonzero entries only, values in shortest round-trip form.
pub fn write_libsvm(data: &Dataset, mut out: impl Write) -> Result<()> {
    let x = data.x();
    let mut line = String::new();
    for (i, &label) in data.y().iter().enumerate() {
        line.clear();
        write!(line, "{label:?}").expect("writing to a String");
        for j in 0..data.d() {
            let v = x[(i, j)];
            if v != 0.0 {
                write!(line, " {}:{v:?}", j + 1).expect("writing to a String");
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// An n×k matrix with orthonormal columns, Haar distributed: QR of a
/// Gaussian matrix with the signs of `diag(R)` folded into `Q`.
pub fn haar_orthonormal(n: usize, k: usize, seed: u64) -> Result<Mat<f64>> {
    if k > n || k == 0 {
        return Err(invalid(
            "k",
            format!("need 1 <= k <= n, got k = {k}, n = {n}"),
        ));
    }
    let mut rng = seed::rng(seed);
    let g = Mat::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R();
    Ok(Mat::from_fn(n, k, |i, j| {
        if r[(j, j)] < 0.0 {
            -q[(i, j)]
        } else {
            q[(i, j)]
        }
    }))
}

/// `X = U D Vᵀ` with Haar `U` (n×d), `V` (d×d) and the given singular values.
pub fn design_with_singular_values(n: usize, singular: &[f64], seed: u64) -> Result<Mat<f64>> {
    let d = singular.len();
    if n < d {
        return Err(invalid("n", format!("need n >= d, got n = {n}, d = {d}")));
    }
    let u = haar_orthonormal(n, d, seed::mix(seed, 0, 1))?;
    let v = haar_orthonormal(d, d, seed::mix(seed, 0, 2))?;
    let ud = Mat::from_fn(n, d, |i, j| u[(i, j)] * singular[j]);
    Ok(&ud * v.transpose())
}

/// Singular values `0.99^{k/2}`, `k = 1..=d`.
pub fn exponential_decay(d: usize) -> Vec<f64> {
    (1..=d).map(|k| 0.99f64.powf(k as f64 / 2.0)).collect()
}

fn planted(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub const RIDGE_NOISE_SD: f64 = 0.1;
pub const LOGISTIC_NOISE_SD: f64 = 100.0;

/// `y = Xθ* + ε` with `θ* ~ N(0, I)` and `ε ~ N(0, 0.1²)`.
pub fn synth_ridge(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    synth_ridge_with_noise(n, d, seed, RIDGE_NOISE_SD)
}

pub fn synth_ridge_with_noise(n: usize, d: usize, seed: u64, noise_sd: f64) -> Result<Dataset> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(invalid(
            "noise_sd",
            format!("must be non-negative, got {noise_sd}"),
        ));
    }
    let x = design_with_singular_values(n, &exponential_decay(d), seed)?;
    let theta = planted(d, seed::mix(seed, 0, 3));
    let mut rng = seed::rng(seed::mix(seed, 0, 4));
    let y = mat_vec(x.as_ref(), &theta)
        .into_iter()
        .map(|v| v + noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new(x, y)
}

/// `yᵢ = (sign(xᵢᵀθ* + ε) + 1)/2` with `ε ~ N(0, noise_sd²)`.
pub fn synth_logistic(n: usize, d: usize, seed: u64, noise_sd: f64) -> Result<Dataset> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(invalid(
            "noise_sd",
            format!("must be non-negative, got {noise_sd}"),
        ));
    }
    let x = design_with_singular_values(n, &exponential_decay(d), seed)?;
    let theta = planted(d, seed::mix(seed, 0, 3));
    let mut rng = seed::rng(seed::mix(seed, 0, 4));
    let y = mat_vec(x.as_ref(), &theta)
        .into_iter()
        .map(|v| {
            if v + noise_sd * rng.sample::<f64, _>(StandardNormal) > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Dataset::new(x, y)
}
