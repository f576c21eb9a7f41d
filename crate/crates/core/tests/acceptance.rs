//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any gating criterion fails.

mod common;

use cnr::data::gen_lr;
use cnr::experiments::{
    aggregate, density_experiment, run_all, valley_between, ModelKind, Scenario, Source, SummaryRow, TrialConfig,
};
use cnr::solver::{reference_fit, z_update, ReferenceOptions};
use cnr::{admm_fit, assemble, lr_fit, AdmmConfig, Dataset, Dictionary, FeatureMap, GrModel};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let spent = start.elapsed();
    if let Some(limit) = limit {
        o.pass &= spent < limit;
        o.detail = format!("{}; {:.1}s (limit {}s)", o.detail, spent.as_secs_f64(), limit.as_secs());
    } else {
        o.detail = format!("{}; {:.1}s", o.detail, spent.as_secs_f64());
    }
    o
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn posterior_mean_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (p, x) = random_case(&mut rng, 3.0);
        let (_, first) = quadrature_moments(&p, &x);
        worst = worst.max((p.posterior_mean(&x).unwrap() - first).abs());
    }
    outcome(worst < 1e-6, format!("worst |closed - quadrature| = {worst:.2e} over 100 cases"))
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut mass_err, mut seg_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (p, x) = random_case(&mut rng, 3.0);
        let (mass, _) = quadrature_moments(&p, &x);
        mass_err = mass_err.max((mass - 1.0).abs());
        let seg = hand_segments(&p, &x);
        let domain = seg.domain();
        let (lo, hi) = (domain[0] - 1.0, domain[domain.len() - 1] + 1.0);
        for i in 0..=200 {
            let y = lo + (hi - lo) * i as f64 / 200.0;
            let g = p.transform(&x, y).unwrap();
            let dg = p.transform_deriv(&x, y).unwrap();
            seg_err = seg_err.max((seg.segment_density(y) - dg * phi(g)).abs());
        }
    }
    outcome(
        mass_err < 1e-6 && seg_err <= 1e-12,
        format!("worst |mass - 1| = {mass_err:.2e}, worst segment error = {seg_err:.2e}"),
    )
}

fn admm_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (data, dict) = small_instance(&mut rng);
        let design = assemble(&data, &dict, FeatureMap::Identity).unwrap();
        let (_, diag) = admm_fit(&design, &AdmmConfig::default()).unwrap();
        let reference = reference_fit(&data, &dict, FeatureMap::Identity, &ReferenceOptions::default()).unwrap();
        worst = worst.max(rel(diag.objective, reference.objective));
    }
    let mut z_worst: f64 = 0.0;
    let mut zr = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100_000 {
        let v = zr.random_range(-10.0..10.0);
        let rho = 10f64.powf(zr.random_range(-1.0..1.0));
        let z = z_update(v, rho);
        let resid = if z > 0.0 { (rho * z * z - v * z - 2.0).abs() } else { f64::INFINITY };
        z_worst = z_worst.max(resid);
    }
    outcome(
        worst <= 1e-3 && z_worst <= 1e-10,
        format!("worst relative objective gap = {worst:.2e}, worst z residual = {z_worst:.2e}"),
    )
}

fn ols(data: &Dataset) -> (DVector<f64>, f64) {
    let x = DMatrix::from_row_slice(data.n(), data.k(), data.x());
    let y = DVector::from_column_slice(data.y());
    let qr = x.clone().qr();
    let w = qr.r().solve_upper_triangular(&(qr.q().transpose() * &y)).unwrap();
    let resid = &y - &x * &w;
    (w, resid.norm_squared() / data.n() as f64)
}

fn reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let data = gen_lr(3, true, &[0.8, -1.5, 0.3, 2.0], 0.7, 10_000, &mut rng).unwrap();
    let k = data.k();
    let design = assemble(&data, &Dictionary::Affine, FeatureMap::Identity).unwrap();
    let mut keep: Vec<usize> = (0..k).collect();
    keep.push(2 * k + 1);
    let (p, _) = admm_fit(&design.restrict(&keep).unwrap(), &AdmmConfig::default()).unwrap();
    let gr = GrModel::from_params(p).unwrap();
    let v = gr.canonical(&vec![0.0; k]).unwrap().1;
    let w_cnr = DVector::from_iterator(k, (0..k).map(|c| -gr.inner.a()[(0, c)] / v));
    let (w_ols, s2) = ols(&data);
    let w_err = (&w_cnr - &w_ols).norm() / w_ols.norm();
    let s_err = rel(1.0 / (v * v), s2);

    let lr = lr_fit(&data).unwrap();
    let mapped = lr.to_cnr_params();
    let mut d_err: f64 = 0.0;
    for x in data.rows().take(200) {
        for i in 0..=40 {
            let y = -8.0 + 0.4 * i as f64;
            d_err = d_err.max((mapped.density(x, y).unwrap() - lr.log_density(x, y).exp()).abs());
        }
    }
    outcome(
        w_err <= 1e-3 && s_err <= 1e-3 && d_err <= 1e-10,
        format!("weights {w_err:.2e}, variance {s_err:.2e} relative; density {d_err:.2e} absolute"),
    )
}

type Summary = Vec<(Scenario, Vec<SummaryRow>)>;

fn run_scenarios() -> Summary {
    let mut out = Vec::new();
    for scenario in [Scenario::SynthLr, Scenario::SynthCnr, Scenario::SynthMr] {
        let mut c = TrialConfig::new(scenario);
        c.trials = 200;
        c.use_true_knots = scenario == Scenario::SynthCnr;
        let reports = run_all(&c, &Source::Synthetic).unwrap();
        out.push((scenario, aggregate(&reports).unwrap()));
    }
    out
}

fn row(rows: &[SummaryRow], model: ModelKind, n: usize) -> &SummaryRow {
    rows.iter().find(|r| r.model == model && r.n_train == n).expect("summary row")
}

fn pooled_se(a: &SummaryRow, b: &SummaryRow) -> f64 {
    a.nll_se().hypot(b.nll_se())
}

fn orderings(summary: &Summary) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for (scenario, rows) in summary {
        let lr = |n| row(rows, ModelKind::Lr, n);
        let gr = |n| row(rows, ModelKind::Gr, n);
        let cnr = |n| row(rows, ModelKind::Cnr, n);
        match scenario {
            Scenario::SynthLr => {
                let small = lr(50).nll_mean < gr(50).nll_mean && lr(50).nll_mean < cnr(50).nll_mean;
                let (g50, g5000) = (cnr(50).nll_mean - lr(50).nll_mean, cnr(5000).nll_mean - lr(5000).nll_mean);
                pass &= small && g5000 < g50;
                notes.push(format!("lr: lr lowest at 50 = {small}, gap {g50:.3} -> {g5000:.3}"));
            }
            _ => {
                let c = cnr(5000);
                let margin_gr = gr(5000).nll_mean - c.nll_mean - pooled_se(c, gr(5000));
                let margin_lr = lr(5000).nll_mean - c.nll_mean - pooled_se(c, lr(5000));
                pass &= margin_gr > 0.0 && margin_lr > 0.0;
                notes.push(format!(
                    "{}: cnr {:.3}, gr {:.3}, lr {:.3}",
                    scenario.name(),
                    c.nll_mean,
                    gr(5000).nll_mean,
                    lr(5000).nll_mean
                ));
            }
        }
    }
    outcome(pass, notes.join("; "))
}

fn bimodality() -> Outcome {
    let report = density_experiment(&TrialConfig::new(Scenario::Density)).unwrap();
    let m = report.mean_offset;
    let modes = &report.modes;
    let mut pass = !report.curve.fallback && modes.len() == 2 && m.abs() >= 1.0;
    if modes.len() == 2 {
        let (lo, hi) = (&modes[0], &modes[1]);
        pass &= (lo.y + m.abs()).abs() <= 0.3 && (hi.y - m.abs()).abs() <= 0.3;
        let f = &report.curve.density;
        pass &= valley_between(f, lo.index, hi.index).is_some_and(|v| f[v] < lo.height.min(hi.height));
    }
    let at: Vec<String> = modes.iter().map(|p| format!("{:.3}", p.y)).collect();
    outcome(pass, format!("aᵀx = {m:.3}, modes at [{}]", at.join(", ")))
}

fn clairvoyant(summary: &Summary) -> Outcome {
    let mut worst = f64::INFINITY;
    for (_, rows) in summary {
        for r in rows {
            let (Some(c), Some(c_std)) = (r.clairvoyant_nll, r.clairvoyant_std) else {
                return outcome(false, "missing clairvoyant NLL".into());
            };
            let se = (r.nll_std.powi(2) + c_std.powi(2)).sqrt() / (r.trials as f64).sqrt();
            worst = worst.min(r.nll_mean + 2.0 * se - c);
        }
    }
    outcome(worst >= 0.0, format!("smallest slack (model + 2 SE - truth) = {worst:.4}"))
}

fn mse(summary: &Summary) -> Outcome {
    let rows = &summary.iter().find(|(s, _)| *s == Scenario::SynthLr).unwrap().1;
    let gap = (row(rows, ModelKind::Cnr, 5000).logmse_mean - row(rows, ModelKind::Lr, 5000).logmse_mean).abs();
    outcome(gap < 0.1, format!("|log-MSE cnr - lr| at 5000 = {gap:.4}"))
}

fn gradient_and_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut grad_worst: f64 = 0.0;
    let mut monotone_fail = 0;
    for _ in 0..10_000 {
        grad_worst = grad_worst.max(gradient_check(rng.random()));
        let (seed, y0, gap) = (rng.random(), rng.random_range(-20.0..20.0), rng.random_range(1e-6..5.0));
        monotone_fail += usize::from(!monotone_check(seed, y0, gap));
    }
    outcome(
        grad_worst <= 1e-5 && monotone_fail == 0,
        format!("worst gradient error = {grad_worst:.2e}, monotonicity failures = {monotone_fail}/10000"),
    )
}

fn household(path: std::path::PathBuf, n_train: usize, trials: usize) -> cnr::Result<Vec<SummaryRow>> {
    let mut c = TrialConfig::new(Scenario::Household);
    c.data = Some(path);
    c.n_train = vec![n_train];
    c.trials = trials;
    aggregate(&run_all(&c, &Source::load(&c)?)?)
}

fn household_fixture() -> Outcome {
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/household_1000.txt");
    let rows = match household(path, 200, 20) {
        Ok(rows) => rows,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let pass = rows.len() == 3
        && rows.iter().all(|r| {
            r.nll_mean.is_finite() && r.logmse_mean.is_finite() && (0.0..=1.0).contains(&r.invalid_frac)
        });
    let cells: Vec<String> = rows
        .iter()
        .map(|r| format!("{} nll {:.3} invalid {:.3}", r.model.name(), r.nll_mean, r.invalid_frac))
        .collect();
    outcome(pass, cells.join(", "))
}

fn main() {
    let mut failed = false;
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed |= !o.pass;
    };
    report(1, timed(Some(Duration::from_secs(60)), posterior_mean_oracle));
    report(2, timed(None, normalization));
    report(3, timed(Some(Duration::from_secs(300)), admm_correctness));
    report(4, timed(None, reductions));
    let start = Instant::now();
    let summary = run_scenarios();
    let spent = start.elapsed();
    let mut o = orderings(&summary);
    o.pass &= spent < Duration::from_secs(1800);
    o.detail = format!("{}; {:.1}s (limit 1800s)", o.detail, spent.as_secs_f64());
    report(5, o);
    report(6, timed(None, bimodality));
    report(7, clairvoyant(&summary));
    report(8, mse(&summary));
    report(9, timed(None, gradient_and_monotone));
    report(10, timed(None, household_fixture));

    // The full household file is optional and its ordering is informational.
    if let Some(path) = std::env::var_os("CNR_HOUSEHOLD_DATA") {
        match household(path.into(), 5000, 50) {
            Ok(rows) => {
                let nll = |m| rows.iter().find(|r| r.model == m).unwrap();
                let (c, g, l) = (nll(ModelKind::Cnr), nll(ModelKind::Gr), nll(ModelKind::Lr));
                let ordered = c.nll_mean <= g.nll_mean && g.nll_mean <= l.nll_mean + l.nll_se();
                println!(
                    "household (informational): cnr {:.3}, gr {:.3}, lr {:.3}, ordered = {ordered}",
                    c.nll_mean, g.nll_mean, l.nll_mean
                );
            }
            Err(e) => println!("household (informational): run failed: {e}"),
        }
    }
    if failed {
        std::process::exit(1);
    }
}
