//! Datasets, synthetic generators, the household power series reader and
//! train/test splitting.

use crate::error::{ensure_finite, Error, Result};
use crate::model::CnrParams;
use crate::normal::HALF_LN_2PI;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// `n` labelled samples with `k` features each, features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    k: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    pub provenance: Option<String>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, k: usize) -> Result<Self> {
        if x.len() != y.len() * k {
            return Err(Error::InvalidInput(format!(
                "{} feature values do not form {} rows of {k}",
                x.len(),
                y.len()
            )));
        }
        for &v in x.iter().chain(&y) {
            ensure_finite(v, "dataset entry")?;
        }
        Ok(Self { k, x, y, provenance: None })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput("ragged feature rows".into()));
        }
        Self::new(rows.concat(), y, k)
    }

    pub fn with_provenance(mut self, tag: impl Into<String>) -> Self {
        self.provenance = Some(tag.into());
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Row-major feature storage.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(idx.len() * self.k);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset { k: self.k, x, y, provenance: self.provenance.clone() }
    }

    /// Same rows with a trailing constant-one feature.
    pub fn with_intercept(&self) -> Dataset {
        let mut x = Vec::with_capacity(self.n() * (self.k + 1));
        for r in self.rows() {
            x.extend_from_slice(r);
            x.push(1.0);
        }
        Dataset { k: self.k + 1, x, y: self.y.clone(), provenance: self.provenance.clone() }
    }

    /// Same features with replaced labels.
    pub fn with_labels(&self, y: Vec<f64>) -> Result<Dataset> {
        Ok(Dataset::new(self.x.clone(), y, self.k)?.tagged(self.provenance.clone()))
    }

    fn tagged(mut self, tag: Option<String>) -> Self {
        self.provenance = tag;
        self
    }

    /// CSV with header `x1,…,xk,y`; floats use the shortest exact representation.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.k).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let rec: Vec<String> =
                self.row(i).iter().chain(std::iter::once(&self.y[i])).map(f64::to_string).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().last() != Some("y") {
            return Err(Error::SchemaError("last column must be 'y'".into()));
        }
        let k = header.len() - 1;
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != k + 1 {
                return Err(Error::ParseError { line, message: "wrong field count".into() });
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::ParseError {
                    line,
                    message: format!("not a number: '{field}'"),
                })?;
                if j < k {
                    x.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        Dataset::new(x, y, k)
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Standard normal features, optionally followed by a constant one.
fn draw_features<R: Rng + ?Sized>(rng: &mut R, k: usize, intercept: bool) -> Vec<f64> {
    let mut x = normal_vec(rng, k);
    if intercept {
        x.push(1.0);
    }
    x
}

/// Generating model behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    /// `y = wᵀx + σ ε`.
    Lr { w: Vec<f64>, sigma: f64 },
    /// `g(y; x) ~ N(0, 1)` under the given parameters.
    Cnr(CnrParams),
    /// `y = ±aᵀx + noise·ε` with a fair random sign.
    Mr { a: Vec<f64>, noise: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Lr,
    Cnr,
    Mr,
}

/// A synthetic regime: its truth, raw feature count and generation seed.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    /// Number of standard normal features.
    pub k: usize,
    /// Whether a constant-one feature is appended after the random ones.
    pub intercept: bool,
    pub truth: Truth,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn kind(&self) -> GeneratorKind {
        match self.truth {
            Truth::Lr { .. } => GeneratorKind::Lr,
            Truth::Cnr(_) => GeneratorKind::Cnr,
            Truth::Mr { .. } => GeneratorKind::Mr,
        }
    }

    /// Feature dimension of generated rows.
    pub fn input_dim(&self) -> usize {
        self.k + usize::from(self.intercept)
    }

    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        match &self.truth {
            Truth::Lr { w, sigma } => gen_lr(self.k, self.intercept, w, *sigma, n, rng),
            Truth::Cnr(params) => gen_cnr(self.k, self.intercept, params, n, rng).map(|(d, _)| d),
            Truth::Mr { a, noise } => gen_mr(self.k, self.intercept, a, *noise, n, rng),
        }
    }
}

impl Truth {
    /// `log p(y | x)` under the generating model.
    pub fn log_density(&self, x: &[f64], y: f64) -> Result<f64> {
        match self {
            Truth::Lr { w, sigma } => Ok(gaussian_log_pdf(y, dot(w, x), sigma * sigma)),
            Truth::Cnr(p) => p.log_density(x, y),
            Truth::Mr { a, noise } => {
                let t = dot(a, x);
                let var = noise * noise;
                let l1 = gaussian_log_pdf(y, t, var);
                let l2 = gaussian_log_pdf(y, -t, var);
                let m = l1.max(l2);
                Ok(m + (0.5 * (l1 - m).exp() + 0.5 * (l2 - m).exp()).ln())
            }
        }
    }

    /// Mean negative log-likelihood of `data` under the truth.
    pub fn mean_nll(&self, data: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        for (i, x) in data.rows().enumerate() {
            total -= self.log_density(x, data.y()[i])?;
        }
        Ok(total / data.n() as f64)
    }

    /// `E[y | x]` under the truth.
    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        match self {
            Truth::Lr { w, .. } => Ok(dot(w, x)),
            Truth::Cnr(p) => p.posterior_mean(x),
            Truth::Mr { .. } => Ok(0.0),
        }
    }
}

/// `log N(y; mean, var)`.
pub fn gaussian_log_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let r = y - mean;
    -0.5 * r * r / var - 0.5 * var.ln() - HALF_LN_2PI
}

/// Linear-regression data: `x ~ N(0, I_k)`, `y = wᵀx + σ ε`.
pub fn gen_lr<R: Rng + ?Sized>(
    k: usize,
    intercept: bool,
    w: &[f64],
    sigma: f64,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let dim = k + usize::from(intercept);
    if w.len() != dim {
        return Err(Error::InvalidInput(format!("w has length {}, expected {dim}", w.len())));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("noise scale {sigma} must be non-negative")));
    }
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row = draw_features(rng, k, intercept);
        let eps: f64 = rng.sample(StandardNormal);
        y.push(dot(w, &row) + sigma * eps);
        x.extend(row);
    }
    Ok(Dataset::new(x, y, dim)?.with_provenance("synthetic-lr"))
}

/// Data drawn from a CNR truth by inverse-transform sampling. Feature draws
/// at which the truth is invalid are redrawn; the number of rejected draws is
/// returned alongside the data.
pub fn gen_cnr<R: Rng + ?Sized>(
    k: usize,
    intercept: bool,
    truth: &CnrParams,
    n: usize,
    rng: &mut R,
) -> Result<(Dataset, usize)> {
    let dim = k + usize::from(intercept);
    if truth.input_dim() != dim {
        return Err(Error::InvalidInput(format!(
            "truth expects {} features, generator produces {dim}",
            truth.input_dim()
        )));
    }
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    let mut rejected = 0usize;
    while y.len() < n {
        let row = draw_features(rng, k, intercept);
        if !truth.is_valid(&row)? {
            rejected += 1;
            if rejected > 1000 + 100 * n {
                return Err(Error::InfeasiblePoint { index: None });
            }
            continue;
        }
        y.push(truth.sample(&row, rng)?);
        x.extend(row);
    }
    let tag = format!("synthetic-cnr (rejected {rejected} feature draws)");
    Ok((Dataset::new(x, y, dim)?.with_provenance(tag), rejected))
}

/// Mixture-of-regressions data: `y = s·aᵀx + noise·ε`, `s = ±1` with equal odds.
pub fn gen_mr<R: Rng + ?Sized>(
    k: usize,
    intercept: bool,
    a: &[f64],
    noise: f64,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let dim = k + usize::from(intercept);
    if a.len() != dim {
        return Err(Error::InvalidInput(format!("a has length {}, expected {dim}", a.len())));
    }
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row = draw_features(rng, k, intercept);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let eps: f64 = rng.sample(StandardNormal);
        y.push(sign * dot(a, &row) + noise * eps);
        x.extend(row);
    }
    Ok(Dataset::new(x, y, dim)?.with_provenance("synthetic-mr"))
}

/// Default noise scale of the mixture-of-regressions regime.
pub const MR_NOISE: f64 = 0.2;

/// Random LR truth: `w ~ N(0, I)`.
pub fn random_lr_truth<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> Truth {
    Truth::Lr { w: normal_vec(rng, dim), sigma }
}

/// Random MR truth: `a ~ N(0, I)`.
pub fn random_mr_truth<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Truth {
    Truth::Mr { a: normal_vec(rng, dim), noise: MR_NOISE }
}

/// Random CNR truth on the given knots with identity features.
///
/// Slope intercepts are uniform on `[0.5, 2]` and slope rows of `A` uniform
/// on `[−c, c]` with `c = 0.5 / (3√k)`; the location row and intercept are
/// standard normal scaled by `1/√k` and `1/2` respectively.
pub fn random_cnr_truth<R: Rng + ?Sized>(
    dim: usize,
    knots: crate::dictionary::KnotGrid,
    rng: &mut R,
) -> Result<Truth> {
    use nalgebra::{DMatrix, DVector};
    let dict = crate::dictionary::Dictionary::piecewise(knots);
    let rows = dict.dim();
    let c = 0.5 / (3.0 * (dim.max(1) as f64).sqrt());
    let slope_coef = Uniform::new_inclusive(-c, c).expect("valid range");
    let slope_base = Uniform::new_inclusive(0.5, 2.0).expect("valid range");
    let loc_scale = 1.0 / (dim.max(1) as f64).sqrt();
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    for col in 0..dim {
        a[(0, col)] = loc_scale * rng.sample::<f64, _>(StandardNormal);
    }
    b[0] = 0.5 * rng.sample::<f64, _>(StandardNormal);
    for r in 1..rows {
        for col in 0..dim {
            a[(r, col)] = slope_coef.sample(rng);
        }
        b[r] = slope_base.sample(rng);
    }
    Ok(Truth::Cnr(CnrParams::new(dict, crate::features::FeatureMap::Identity, dim, a, b)?))
}

/// Reads one numeric column of a delimited text file with a header row.
/// Cells equal to `missing` become `None`.
pub fn load_series(
    path: impl AsRef<Path>,
    column: &str,
    delimiter: u8,
    missing: &str,
) -> Result<Vec<Option<f64>>> {
    let file = std::fs::File::open(path)?;
    read_series(file, column, delimiter, missing)
}

pub fn read_series<R: Read>(
    input: R,
    column: &str,
    delimiter: u8,
    missing: &str,
) -> Result<Vec<Option<f64>>> {
    let mut r = csv::ReaderBuilder::new().delimiter(delimiter).flexible(true).from_reader(input);
    let col = r
        .headers()?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::SchemaError(format!("column '{column}' not found")))?;
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        match r.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return Err(Error::ParseError { line, message: e.to_string() });
            }
        }
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let field = rec
            .get(col)
            .ok_or_else(|| Error::ParseError { line, message: "missing field".into() })?
            .trim();
        if field == missing {
            out.push(None);
            continue;
        }
        let v: f64 = field
            .parse()
            .map_err(|_| Error::ParseError { line, message: format!("not a number: '{field}'") })?;
        if !v.is_finite() {
            return Err(Error::ParseError { line, message: format!("non-finite value '{field}'") });
        }
        out.push(Some(v));
    }
    Ok(out)
}

/// `n` random length-`len` windows without missing values (starts drawn
/// uniformly with replacement): the first `len − 1` values are features and
/// the last is the label.
pub fn windows<R: Rng + ?Sized>(
    series: &[Option<f64>],
    len: usize,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if len < 2 {
        return Err(Error::InvalidInput("window length must be at least 2".into()));
    }
    if series.len() < len {
        return Err(Error::InsufficientData(format!(
            "series of length {} is shorter than the window {len}",
            series.len()
        )));
    }
    // A start is valid when the window it opens holds no missing value.
    let mut valid = Vec::new();
    let mut run = 0usize;
    for (i, v) in series.iter().enumerate() {
        run = if v.is_some() { run + 1 } else { 0 };
        if run >= len {
            valid.push(i + 1 - len);
        }
    }
    if valid.is_empty() {
        return Err(Error::InsufficientData("no window free of missing values".into()));
    }
    let pick = Uniform::new(0, valid.len()).expect("non-empty");
    let mut x = Vec::with_capacity(n * (len - 1));
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = valid[pick.sample(rng)];
        let w = &series[start..start + len];
        x.extend(w[..len - 1].iter().map(|v| v.expect("checked")));
        y.push(w[len - 1].expect("checked"));
    }
    Ok(Dataset::new(x, y, len - 1)?.with_provenance("series-windows"))
}

/// Uniform random partition into `n − n_test` training and `n_test` test rows.
pub fn split<R: Rng + ?Sized>(
    data: &Dataset,
    n_test: usize,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    let n = data.n();
    if n <= n_test {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot leave a training set after {n_test} test samples"
        )));
    }
    let mut test_idx = index::sample(rng, n, n_test).into_vec();
    test_idx.sort_unstable();
    let mut is_test = vec![false; n];
    for &i in &test_idx {
        is_test[i] = true;
    }
    let train_idx: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}
