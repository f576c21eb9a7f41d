//! Repeated-trial harness: synthetic and windowed-series regimes, LR / GR /
//! CNR fits with per-point LR fallback, aggregation with population error
//! bars, and density curves for a single feature vector.

use crate::baselines::{gr_fit, lr_fit, LrModel};
use crate::data::{
    gen_mr, load_series, random_cnr_truth, random_lr_truth, random_mr_truth, split, windows,
    Dataset, GeneratorSpec, Truth,
};
use crate::dictionary::{Dictionary, KnotGrid};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::model::CnrParams;
use crate::solver::{admm_fit, assemble, AdmmConfig, FitDiagnostics};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

/// Header of the aggregate CSV table.
pub const SUMMARY_HEADER: &str =
    "model,n_train,nll_mean,nll_std,logmse_mean,logmse_std,invalid_frac,clairvoyant_nll";

/// Peaks whose prominence is below this fraction of the curve maximum are
/// not counted as modes.
pub const MODE_PROMINENCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SynthLr,
    SynthCnr,
    SynthMr,
    Household,
    Density,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SynthLr => "synth-lr",
            Scenario::SynthCnr => "synth-cnr",
            Scenario::SynthMr => "synth-mr",
            Scenario::Household => "household",
            Scenario::Density => "density",
        }
    }

    pub fn is_synthetic(&self) -> bool {
        !matches!(self, Scenario::Household)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "synth-lr" => Scenario::SynthLr,
            "synth-cnr" => Scenario::SynthCnr,
            "synth-mr" => Scenario::SynthMr,
            "household" => Scenario::Household,
            "density" => Scenario::Density,
            other => return Err(Error::InvalidInput(format!("unknown scenario '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Gr,
    Cnr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Lr, ModelKind::Gr, ModelKind::Cnr];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Gr => "gr",
            ModelKind::Cnr => "cnr",
        }
    }
}

/// Everything a run needs. Construct with [`TrialConfig::new`] for the
/// scenario defaults and override fields as required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub scenario: Scenario,
    pub n_train: Vec<usize>,
    pub n_test: usize,
    pub trials: usize,
    /// Label quantiles of the training set that become the knots.
    pub quantiles: Vec<f64>,
    /// Use the generating knots instead of quantiles (CNR-generated data only).
    pub use_true_knots: bool,
    pub admm: AdmmConfig,
    pub base_seed: u64,
    /// Number of standard normal features in the synthetic regimes.
    pub k: usize,
    /// Append a constant feature to every row.
    pub intercept: bool,
    /// `ψ` shared by the GR and CNR fits. LR always sees the raw features.
    pub feature_map: FeatureMap,
    /// Noise scale of the LR regime.
    pub lr_sigma: f64,
    /// Knots of the random CNR truths.
    pub truth_knots: Vec<f64>,
    /// Window length for series data; the last entry is the label.
    pub window: usize,
    pub data: Option<PathBuf>,
    pub column: String,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Density scenario: smallest `|aᵀx|` accepted for the plotted point.
    pub min_abs_mean: f64,
    /// Density scenario: number of grid points.
    pub grid_points: usize,
}

impl TrialConfig {
    pub fn new(scenario: Scenario) -> Self {
        // Hermite features let the slopes follow (aᵀx)², which the mixture
        // needs; a larger ρ suits their slope scale.
        let bimodal = matches!(scenario, Scenario::SynthMr | Scenario::Density);
        let admm = if bimodal {
            AdmmConfig { rho: 10.0, ..AdmmConfig::default() }
        } else {
            AdmmConfig::default()
        };
        Self {
            scenario,
            n_train: if scenario == Scenario::Density { vec![5000] } else { vec![50, 200, 1000, 5000] },
            n_test: 500,
            trials: 2000,
            quantiles: vec![0.3, 0.5, 0.7],
            use_true_knots: false,
            admm,
            base_seed: 0,
            k: if scenario == Scenario::Household { 9 } else { 5 },
            intercept: false,
            feature_map: if bimodal { FeatureMap::Hermite } else { FeatureMap::Identity },
            lr_sigma: 1.0,
            truth_knots: vec![-1.0, 0.0, 1.0],
            window: 10,
            data: None,
            column: "Global_active_power".into(),
            workers: 0,
            min_abs_mean: 1.0,
            grid_points: 2001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_train.is_empty() || self.n_train.contains(&0) {
            return bad("training sizes must be positive".into());
        }
        if self.n_test == 0 || self.trials == 0 {
            return bad("test size and trial count must be positive".into());
        }
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0))
            || self.quantiles.windows(2).any(|w| w[1] <= w[0])
        {
            return bad(format!("quantiles {:?} must be ascending in (0, 1)", self.quantiles));
        }
        if self.scenario.is_synthetic() && self.k == 0 {
            return bad("feature dimension must be positive".into());
        }
        if self.scenario == Scenario::Household {
            if self.window < 2 {
                return bad("window length must be at least 2".into());
            }
            if self.data.is_none() {
                return bad("household runs need --data".into());
            }
        }
        if !(self.lr_sigma > 0.0 && self.lr_sigma.is_finite()) {
            return bad(format!("noise scale {} must be positive", self.lr_sigma));
        }
        if self.grid_points < 3 {
            return bad("density grids need at least 3 points".into());
        }
        KnotGrid::new(self.truth_knots.clone())?;
        self.admm.validate()
    }

    /// Feature dimension of the rows handed to the models.
    pub fn input_dim(&self) -> usize {
        let raw = if self.scenario == Scenario::Household { self.window - 1 } else { self.k };
        raw + usize::from(self.intercept)
    }

    fn trial_rng(&self, trial_index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.base_seed.wrapping_add(trial_index as u64))
    }
}

/// Source data shared by every trial of a run.
#[derive(Debug, Clone)]
pub enum Source {
    Synthetic,
    Series(Vec<Option<f64>>),
}

impl Source {
    /// Loads the series for household runs.
    pub fn load(config: &TrialConfig) -> Result<Self> {
        match (&config.scenario, &config.data) {
            (Scenario::Household, Some(path)) => {
                Ok(Source::Series(load_series(path, &config.column, b';', "?")?))
            }
            (Scenario::Household, None) => {
                Err(Error::InvalidInput("household runs need a data file".into()))
            }
            _ => Ok(Source::Synthetic),
        }
    }
}

/// Train/test data of one trial together with the generating truth.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub truth: Option<Truth>,
}

/// Draws a truth for the synthetic regimes.
pub fn draw_truth(config: &TrialConfig, rng: &mut ChaCha8Rng) -> Result<Option<Truth>> {
    let dim = config.input_dim();
    Ok(match config.scenario {
        Scenario::SynthLr => Some(random_lr_truth(dim, config.lr_sigma, rng)),
        Scenario::SynthCnr => {
            Some(random_cnr_truth(dim, KnotGrid::new(config.truth_knots.clone())?, rng)?)
        }
        Scenario::SynthMr | Scenario::Density => Some(random_mr_truth(dim, rng)),
        Scenario::Household => None,
    })
}

/// Generates (or windows) and splits the data of trial `trial_index`.
/// The truth is drawn first from the trial's stream, so every training size
/// of a trial shares it.
pub fn trial_data(
    config: &TrialConfig,
    source: &Source,
    n_train: usize,
    trial_index: usize,
) -> Result<TrialData> {
    let seed = config.base_seed.wrapping_add(trial_index as u64);
    let mut rng = config.trial_rng(trial_index);
    let total = n_train + config.n_test;
    let truth = draw_truth(config, &mut rng)?;
    let all = match (source, &truth) {
        (_, Some(truth)) => GeneratorSpec {
            k: config.k,
            intercept: config.intercept,
            truth: truth.clone(),
            seed,
        }
        .generate(total, &mut rng)?,
        (Source::Series(series), None) => {
            let d = windows(series, config.window, total, &mut rng)?;
            if config.intercept {
                d.with_intercept()
            } else {
                d
            }
        }
        (Source::Synthetic, None) => {
            return Err(Error::InvalidInput("series scenario without a loaded series".into()))
        }
    };
    let (train, test) = split(&all, config.n_test, &mut rng)?;
    Ok(TrialData { seed, train, test, truth })
}

/// Knots for a trial: training-label quantiles, or the generating knots when
/// requested for CNR-generated data.
pub fn trial_knots(config: &TrialConfig, train: &Dataset, truth: Option<&Truth>) -> Result<KnotGrid> {
    if config.use_true_knots {
        if let Some(Truth::Cnr(p)) = truth {
            if let Some(knots) = p.dictionary().knots() {
                return Ok(knots.clone());
            }
        }
    }
    KnotGrid::from_quantiles(train.y(), &config.quantiles)
}

/// The three fitted models of a trial.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub lr: LrModel,
    pub gr: CnrParams,
    pub gr_diag: FitDiagnostics,
    pub cnr: CnrParams,
    pub cnr_diag: FitDiagnostics,
}

/// Fits LR, GR and CNR on the training set only.
pub fn fit_models(config: &TrialConfig, train: &Dataset, knots: KnotGrid) -> Result<FittedModels> {
    let lr = lr_fit(train)?;
    let (gr, gr_diag) = gr_fit(train, config.feature_map, &config.admm)?;
    let design = assemble(train, &Dictionary::piecewise(knots), config.feature_map)?;
    let (cnr, cnr_diag) = admm_fit(&design, &config.admm)?;
    Ok(FittedModels { lr, gr: gr.inner, gr_diag, cnr, cnr_diag })
}

/// Test metrics of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelKind,
    pub nll_test: f64,
    /// Natural log of the mean squared prediction error.
    pub log_mse: f64,
    pub invalid_fraction: f64,
    /// Test points scored by the model itself.
    pub model_points: usize,
    /// Test points scored by the LR fallback.
    pub fallback_points: usize,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

/// Per-point evaluation of a CNR-family model with LR fallback.
pub fn evaluate_with_fallback(
    model: &CnrParams,
    kind: ModelKind,
    diag: Option<&FitDiagnostics>,
    test: &Dataset,
    lr: &LrModel,
) -> Result<ModelReport> {
    let mut nll = 0.0;
    let mut sq = 0.0;
    let mut fallback = 0;
    for (x, &y) in test.rows().zip(test.y()) {
        let (ld, pred) = if model.is_valid(x)? {
            (model.log_density(x, y)?, model.posterior_mean(x)?)
        } else {
            fallback += 1;
            (lr.log_density(x, y), lr.predict(x))
        };
        nll -= ld;
        sq += (pred - y) * (pred - y);
    }
    let n = test.n() as f64;
    Ok(ModelReport {
        model: kind,
        nll_test: nll / n,
        log_mse: (sq / n).ln(),
        invalid_fraction: fallback as f64 / n,
        model_points: test.n() - fallback,
        fallback_points: fallback,
        iterations: diag.map(|d| d.iterations),
        converged: diag.map(|d| d.converged),
    })
}

fn evaluate_lr(lr: &LrModel, test: &Dataset) -> ModelReport {
    let sq: f64 = test.rows().zip(test.y()).map(|(x, &y)| (lr.predict(x) - y).powi(2)).sum();
    ModelReport {
        model: ModelKind::Lr,
        nll_test: lr.nll(test),
        log_mse: (sq / test.n() as f64).ln(),
        invalid_fraction: 0.0,
        model_points: test.n(),
        fallback_points: 0,
        iterations: None,
        converged: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub n_train: usize,
    /// Empty when the trial was excluded.
    pub models: Vec<ModelReport>,
    pub clairvoyant_nll: Option<f64>,
    /// Why the trial was excluded from aggregation, if it was.
    pub excluded: Option<String>,
}

impl TrialReport {
    pub fn model(&self, kind: ModelKind) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == kind)
    }
}

/// Runs one trial. Fitting failures (divergence, degenerate data) exclude
/// the trial with the reason recorded; configuration errors are returned.
pub fn run_trial(
    config: &TrialConfig,
    source: &Source,
    n_train: usize,
    trial_index: usize,
) -> Result<TrialReport> {
    let data = trial_data(config, source, n_train, trial_index)?;
    let mut report = TrialReport {
        trial: trial_index,
        seed: data.seed,
        n_train,
        models: Vec::new(),
        clairvoyant_nll: None,
        excluded: None,
    };
    let fitted = trial_knots(config, &data.train, data.truth.as_ref())
        .and_then(|knots| fit_models(config, &data.train, knots));
    let fitted = match fitted {
        Ok(f) => f,
        Err(e) => {
            report.excluded = Some(e.to_string());
            return Ok(report);
        }
    };
    let test = &data.test;
    report.models = vec![
        evaluate_lr(&fitted.lr, test),
        evaluate_with_fallback(&fitted.gr, ModelKind::Gr, Some(&fitted.gr_diag), test, &fitted.lr)?,
        evaluate_with_fallback(&fitted.cnr, ModelKind::Cnr, Some(&fitted.cnr_diag), test, &fitted.lr)?,
    ];
    if let Some(truth) = &data.truth {
        report.clairvoyant_nll = Some(truth.mean_nll(test)?);
    }
    if let Some(m) = report.models.iter().find(|m| !(m.nll_test.is_finite() && m.log_mse.is_finite())) {
        report.excluded = Some(format!("non-finite {} metrics", m.model.name()));
        report.models.clear();
    }
    Ok(report)
}

/// Runs every (training size, trial) pair, in parallel over `workers`
/// threads, and returns the reports sorted by training size then trial.
pub fn run_all(config: &TrialConfig, source: &Source) -> Result<Vec<TrialReport>> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = config
        .n_train
        .iter()
        .flat_map(|&n| (0..config.trials).map(move |t| (n, t)))
        .collect();
    let run = || -> Result<Vec<TrialReport>> {
        jobs.par_iter().map(|&(n, t)| run_trial(config, source, n, t)).collect()
    };
    let mut reports = if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };
    reports.sort_by_key(|r| (r.n_train, r.trial));
    Ok(reports)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One row of the aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub n_train: usize,
    pub nll_mean: f64,
    pub nll_std: f64,
    pub logmse_mean: f64,
    pub logmse_std: f64,
    pub invalid_frac: f64,
    pub clairvoyant_nll: Option<f64>,
    pub clairvoyant_std: Option<f64>,
    /// Trials aggregated.
    pub trials: usize,
    /// Trials excluded from the group.
    pub excluded: usize,
}

impl SummaryRow {
    /// Standard error of the mean NLL.
    pub fn nll_se(&self) -> f64 {
        self.nll_std / (self.trials as f64).sqrt()
    }
}

/// Aggregates per (training size, model). Groups follow ascending training
/// size and the LR, GR, CNR order.
pub fn aggregate(reports: &[TrialReport]) -> Result<Vec<SummaryRow>> {
    let mut sizes: Vec<usize> = reports.iter().map(|r| r.n_train).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(Error::InsufficientData("no trial reports".into()));
    }
    let mut rows = Vec::new();
    for n in sizes {
        let group: Vec<&TrialReport> = reports.iter().filter(|r| r.n_train == n).collect();
        let kept: Vec<&TrialReport> = group.iter().copied().filter(|r| r.excluded.is_none()).collect();
        if kept.is_empty() {
            return Err(Error::InsufficientData(format!(
                "every trial at n_train={n} was excluded"
            )));
        }
        let clair: Vec<f64> = kept.iter().filter_map(|r| r.clairvoyant_nll).collect();
        let (c_mean, c_std) = if clair.len() == kept.len() {
            let (m, s) = mean_std(&clair);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        for kind in ModelKind::ALL {
            let ms: Vec<&ModelReport> = kept.iter().filter_map(|r| r.model(kind)).collect();
            let nll: Vec<f64> = ms.iter().map(|m| m.nll_test).collect();
            let lm: Vec<f64> = ms.iter().map(|m| m.log_mse).collect();
            let inv: Vec<f64> = ms.iter().map(|m| m.invalid_fraction).collect();
            let (nll_mean, nll_std) = mean_std(&nll);
            let (logmse_mean, logmse_std) = mean_std(&lm);
            rows.push(SummaryRow {
                model: kind,
                n_train: n,
                nll_mean,
                nll_std,
                logmse_mean,
                logmse_std,
                invalid_frac: mean_std(&inv).0,
                clairvoyant_nll: c_mean,
                clairvoyant_std: c_std,
                trials: ms.len(),
                excluded: group.len() - kept.len(),
            });
        }
    }
    Ok(rows)
}

/// Writes the aggregate table as CSV with [`SUMMARY_HEADER`]. A missing
/// clairvoyant value is an empty cell.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.model.name().to_string(),
            r.n_train.to_string(),
            r.nll_mean.to_string(),
            r.nll_std.to_string(),
            r.logmse_mean.to_string(),
            r.logmse_std.to_string(),
            r.invalid_frac.to_string(),
            r.clairvoyant_nll.map_or(String::new(), |c| c.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Density of the fitted model at `x` on a grid, or of the LR fallback when
/// the model is invalid there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub x: Vec<f64>,
    pub fallback: bool,
    pub y: Vec<f64>,
    pub density: Vec<f64>,
}

/// Evenly spaced grid over `[p₀ − 4/α₀, p_L + 4/α_{L+1}]` at `x`. The
/// affine dictionary and the fallback use mean ± 4 standard deviations.
pub fn curve_grid(model: &CnrParams, x: &[f64], fallback: &LrModel, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidInput("a grid needs at least 2 points".into()));
    }
    let (lo, hi) = if model.is_valid(x)? {
        let c = model.coef(x)?;
        match model.dictionary().knots() {
            Some(k) => {
                let p = k.points();
                (p[0] - 4.0 / c.alphas[0], p[p.len() - 1] + 4.0 / c.alphas[c.alphas.len() - 1])
            }
            None => {
                let (m, s) = (-c.mu / c.alphas[0], 1.0 / c.alphas[0]);
                (m - 4.0 * s, m + 4.0 * s)
            }
        }
    } else {
        let (m, s) = (fallback.predict(x), fallback.sigma2.sqrt());
        (m - 4.0 * s, m + 4.0 * s)
    };
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| lo + step * i as f64).collect())
}

pub fn density_curve(model: &CnrParams, x: &[f64], grid: &[f64], fallback: &LrModel) -> Result<DensityCurve> {
    let valid = model.is_valid(x)?;
    let density = grid
        .iter()
        .map(|&y| {
            if valid {
                model.density(x, y)
            } else {
                Ok(fallback.log_density(x, y).exp())
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DensityCurve { x: x.to_vec(), fallback: !valid, y: grid.to_vec(), density })
}

/// Trapezoid integral of a sampled curve.
pub fn trapezoid(y: &[f64], f: &[f64]) -> f64 {
    y.windows(2).zip(f.windows(2)).map(|(y, f)| 0.5 * (y[1] - y[0]) * (f[0] + f[1])).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub y: f64,
    pub height: f64,
    pub prominence: f64,
}

/// Local maxima of a sampled curve whose topographic prominence is at least
/// `min_prominence` times the curve maximum. Plateaus count once, at their
/// left end.
pub fn find_modes(y: &[f64], f: &[f64], min_prominence: f64) -> Vec<Peak> {
    let n = f.len();
    let top = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if f[i] > f[i - 1] {
            let mut j = i;
            while j + 1 < n && f[j + 1] == f[i] {
                j += 1;
            }
            if j + 1 < n && f[j + 1] < f[i] {
                let prominence = f[i] - side_floor(f, i, -1).max(side_floor(f, j, 1));
                if prominence >= min_prominence * top {
                    peaks.push(Peak { index: i, y: y[i], height: f[i], prominence });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Lowest value walking from `start` in direction `dir` until a point higher
/// than `f[start]` or the edge.
fn side_floor(f: &[f64], start: usize, dir: isize) -> f64 {
    let h = f[start];
    let mut low = h;
    let mut k = start as isize + dir;
    while k >= 0 && (k as usize) < f.len() {
        let v = f[k as usize];
        if v > h {
            break;
        }
        low = low.min(v);
        k += dir;
    }
    low
}

/// Index of the lowest grid value strictly between two indices.
pub fn valley_between(f: &[f64], a: usize, b: usize) -> Option<usize> {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    (lo + 1..hi).min_by(|&i, &j| f[i].total_cmp(&f[j]))
}

/// Outcome of the density scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub seed: u64,
    pub n_train: usize,
    pub a: Vec<f64>,
    /// `aᵀx` at the plotted point.
    pub mean_offset: f64,
    pub curve: DensityCurve,
    pub true_density: Vec<f64>,
    pub modes: Vec<Peak>,
    pub knots: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

/// Fits a CNR on mixture-of-regressions data and emits its density at the
/// first test point with `|aᵀx| ≥ min_abs_mean` where the fit is valid
/// (else the first such point, on the LR fallback).
pub fn density_experiment(config: &TrialConfig) -> Result<DensityReport> {
    config.validate()?;
    let n_train = config.n_train[0];
    let mut rng = config.trial_rng(0);
    let truth = random_mr_truth(config.input_dim(), &mut rng);
    let Truth::Mr { a, noise } = &truth else { unreachable!("mixture truth") };
    let train = gen_mr(config.k, config.intercept, a, *noise, n_train, &mut rng)?;
    let test = gen_mr(config.k, config.intercept, a, *noise, config.n_test, &mut rng)?;
    let knots = KnotGrid::from_quantiles(train.y(), &config.quantiles)?;
    let lr = lr_fit(&train)?;
    let design = assemble(&train, &Dictionary::piecewise(knots.clone()), config.feature_map)?;
    let (model, diagnostics) = admm_fit(&design, &config.admm)?;

    let offset = |x: &[f64]| a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
    let candidates: Vec<&[f64]> = test.rows().filter(|x| offset(x).abs() >= config.min_abs_mean).collect();
    let mut chosen = None;
    for x in &candidates {
        if model.is_valid(x)? {
            chosen = Some(*x);
            break;
        }
    }
    let x = chosen.or_else(|| candidates.first().copied()).ok_or_else(|| {
        Error::InsufficientData(format!("no test point with |aᵀx| ≥ {}", config.min_abs_mean))
    })?;
    let grid = curve_grid(&model, x, &lr, config.grid_points)?;
    let curve = density_curve(&model, x, &grid, &lr)?;
    let true_density = grid.iter().map(|&y| truth.log_density(x, y).map(f64::exp)).collect::<Result<_>>()?;
    let modes = find_modes(&curve.y, &curve.density, MODE_PROMINENCE);
    Ok(DensityReport {
        seed: config.base_seed,
        n_train,
        a: a.clone(),
        mean_offset: offset(x),
        curve,
        true_density,
        modes,
        knots: knots.points().to_vec(),
        diagnostics,
    })
}

/// Writes `y,density,true_density,fallback` rows.
pub fn write_density_csv<W: Write>(report: &DensityReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["y", "density", "true_density", "fallback"])?;
    let flag = u8::from(report.curve.fallback).to_string();
    for ((y, d), t) in report.curve.y.iter().zip(&report.curve.density).zip(&report.true_density) {
        w.write_record([y.to_string(), d.to_string(), t.to_string(), flag.clone()])?;
    }
    w.flush()?;
    Ok(())
}
