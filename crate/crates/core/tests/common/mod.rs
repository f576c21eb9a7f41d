#![allow(dead_code)]

use cnr::data::{gen_cnr, random_cnr_truth, Truth};
use cnr::solver::DesignMatrices;
use cnr::{CnrParams, Dataset, Dictionary, FeatureMap, KnotGrid};
use rand_chacha::ChaCha8Rng;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use std::f64::consts::PI;

pub fn phi(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Φ through the complementary error function, independent of the crate's
/// own normal helpers.
pub fn big_phi(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Strictly ascending knots with gaps of at least 0.05.
pub fn random_knots<R: Rng>(rng: &mut R, count: usize) -> KnotGrid {
    let mut p = vec![rng.random_range(-2.0..0.0)];
    for _ in 1..count {
        let last = *p.last().unwrap();
        p.push(last + rng.random_range(0.05..1.5));
    }
    KnotGrid::new(p).unwrap()
}

/// Parameters whose slopes at `x` are log-uniform on
/// `[10^(−spread/2), 10^(spread/2)]`, so slope ratios reach `10^spread`.
/// `A` is random; `b` is solved so that `u(x)` hits the drawn targets.
pub fn params_valid_at<R: Rng>(
    rng: &mut R,
    knots: KnotGrid,
    k: usize,
    x: &[f64],
    spread: f64,
) -> CnrParams {
    let dict = Dictionary::piecewise(knots);
    let dim = dict.dim();
    let a = DMatrix::from_fn(dim, k, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
    let mut target = vec![1.5 * rng.sample::<f64, _>(StandardNormal)];
    for _ in 1..dim {
        target.push(10f64.powf(rng.random_range(-spread / 2.0..=spread / 2.0)));
    }
    let ax = &a * DVector::from_column_slice(x);
    let b = DVector::from_fn(dim, |r, _| target[r] - ax[r]);
    CnrParams::new(dict, FeatureMap::Identity, k, a, b).unwrap()
}

/// One random (params, x) case with k ≤ 5 and L ≤ 6.
pub fn random_case<R: Rng>(rng: &mut R, spread: f64) -> (CnrParams, Vec<f64>) {
    let k = rng.random_range(1..=5);
    let count = rng.random_range(1..=7);
    let knots = random_knots(rng, count);
    let x = normal_vec(rng, k);
    let p = params_valid_at(rng, knots, k, &x, spread);
    (p, x)
}

/// Adaptive Simpson on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// `μ`, slopes and breakpoint values `g(p_j)` recomputed by hand from `u(x)`.
pub struct HandSegments {
    pub mu: f64,
    pub points: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `g(p_j) = μ + Δ_j`.
    pub at_knots: Vec<f64>,
}

pub fn hand_segments(p: &CnrParams, x: &[f64]) -> HandSegments {
    let u = p.u(x).unwrap();
    let points = p.dictionary().knots().unwrap().points().to_vec();
    let alphas = u[1..].to_vec();
    let mut at_knots = vec![u[0]];
    for j in 1..points.len() {
        let last = *at_knots.last().unwrap();
        at_knots.push(last + (points[j] - points[j - 1]) * alphas[j]);
    }
    HandSegments { mu: u[0], points, alphas, at_knots }
}

impl HandSegments {
    /// The per-segment exponential form of the density:
    /// `α/√(2π) · exp(−½(μ + Δ_j + α_{j+1}(y − p_j))²)` inside, with the
    /// analogous tails.
    pub fn segment_density(&self, y: f64) -> f64 {
        let (p, al, g) = (&self.points, &self.alphas, &self.at_knots);
        let last = p.len() - 1;
        let (slope, arg) = if y < p[0] {
            (al[0], self.mu + al[0] * (y - p[0]))
        } else if y >= p[last] {
            (al[last + 1], g[last] + al[last + 1] * (y - p[last]))
        } else {
            let j = p.partition_point(|&v| v <= y) - 1;
            (al[j + 1], g[j] + al[j + 1] * (y - p[j]))
        };
        slope / (2.0 * PI).sqrt() * (-0.5 * arg * arg).exp()
    }

    /// Breakpoints of the integration domain: the knots plus the points
    /// where `g = μ − 10` (left) and `g = μ + Δ_L + 10` (right).
    pub fn domain(&self) -> Vec<f64> {
        let last = self.points.len() - 1;
        let mut v = vec![self.points[0] - 10.0 / self.alphas[0]];
        v.extend_from_slice(&self.points);
        v.push(self.points[last] + 10.0 / self.alphas[last + 1]);
        v
    }

    /// Mass and first moment beyond the domain, in closed form.
    pub fn tails(&self) -> (f64, f64) {
        let last = self.points.len() - 1;
        let lo = self.mu - 10.0;
        let (a0, p0) = (self.alphas[0], self.points[0]);
        let left_mass = big_phi(lo);
        let left_mean = (p0 - self.mu / a0) * left_mass - phi(lo) / a0;
        let top = self.at_knots[last];
        let hi = top + 10.0;
        let (al, pl) = (self.alphas[last + 1], self.points[last]);
        let right_mass = big_phi(-hi);
        let right_mean = (pl - top / al) * right_mass + phi(hi) / al;
        (left_mass + right_mass, left_mean + right_mean)
    }
}

/// `∫ f` over every segment of `domain` by adaptive Simpson.
pub fn integrate_segments<F: Fn(f64) -> f64>(f: &F, domain: &[f64], tol: f64) -> f64 {
    domain.windows(2).map(|w| simpson(f, w[0], w[1], tol)).sum()
}

/// Two-sided KS statistic of `samples` against N(0, 1).
pub fn ks_normal(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = big_phi(v);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// A dataset whose labels lie in valid territory of `p`: draws from `p`
/// itself at standard normal features where `p` is valid.
pub fn sample_dataset<R: Rng>(rng: &mut R, p: &CnrParams, n: usize) -> Dataset {
    let k = p.input_dim();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    while y.len() < n {
        let x = normal_vec(rng, k);
        if p.is_valid(&x).unwrap() {
            y.push(p.sample(&x, rng).unwrap());
            rows.push(x);
        }
    }
    Dataset::from_rows(&rows, y).unwrap()
}

/// Like [`sample_dataset`] but with features `x0 + scale·N(0, I)`, which
/// keeps most draws inside the region where `p` is valid.
pub fn sample_near<R: Rng>(rng: &mut R, p: &CnrParams, x0: &[f64], scale: f64, n: usize) -> Dataset {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    while y.len() < n {
        let x: Vec<f64> = x0.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        if p.is_valid(&x).unwrap() {
            y.push(p.sample(&x, rng).unwrap());
            rows.push(x);
        }
    }
    Dataset::from_rows(&rows, y).unwrap()
}

/// Knots at label quantiles, as in real fits. Knots placed anywhere else
/// can leave a bin with too few points, and then the objective has no
/// minimizer.
pub fn quantile_dict(data: &Dataset, count: usize) -> Dictionary {
    let qs: &[f64] = match count {
        1 => &[0.5],
        2 => &[0.3, 0.7],
        3 => &[0.3, 0.5, 0.7],
        _ => &[0.2, 0.4, 0.6, 0.8],
    };
    Dictionary::piecewise(KnotGrid::from_quantiles(data.y(), qs).unwrap())
}

pub fn cnr_data(rng: &mut ChaCha8Rng, k: usize, n: usize) -> (Dataset, CnrParams) {
    let knots = KnotGrid::new(vec![-1.0, 0.0, 1.0]).unwrap();
    let Truth::Cnr(truth) = random_cnr_truth(k, knots, rng).unwrap() else { unreachable!() };
    (gen_cnr(k, false, &truth, n, rng).unwrap().0, truth)
}

/// A random fitting problem with `m ≤ 30` and `100 ≤ n ≤ 200`.
pub fn small_instance(rng: &mut ChaCha8Rng) -> (Dataset, Dictionary) {
    let k = rng.random_range(1..=4);
    let count = rng.random_range(1..=4);
    let n = rng.random_range(100..=200);
    let (data, _) = cnr_data(rng, k, n);
    let dict = quantile_dict(&data, count);
    (data, dict)
}

/// `∇ = 2Pw − 2P'ᵀ(1 / P'w)`, written out independently of the solvers.
pub fn analytic_gradient(design: &DesignMatrices, w: &[f64]) -> DVector<f64> {
    let wv = DVector::from_column_slice(w);
    let inv: Vec<f64> = design.deriv().mul(w).iter().map(|s| 1.0 / s).collect();
    design.gram() * &wv * 2.0 - design.deriv().tr_mul(&inv) * 2.0
}

/// Relative error between the analytic objective gradient and central
/// differences of `nll_objective`, for the random case drawn from `seed`.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, x) = random_case(&mut rng, 1.0);
    let data = sample_near(&mut rng, &p, &x, 0.1, 20);
    let design = cnr::assemble(&data, p.dictionary(), FeatureMap::Identity).unwrap();
    let w = p.flatten();
    let grad = analytic_gradient(&design, &w);
    let f = |v: &[f64]| {
        CnrParams::from_flat(p.dictionary().clone(), FeatureMap::Identity, p.input_dim(), v)
            .unwrap()
            .nll_objective(&data)
            .unwrap()
    };
    let mut fd = DVector::zeros(w.len());
    for j in 0..w.len() {
        let h = 1e-6 * w[j].abs().max(1.0);
        let (mut up, mut down) = (w.clone(), w.clone());
        up[j] += h;
        down[j] -= h;
        fd[j] = (f(&up) - f(&down)) / (2.0 * h);
    }
    (&fd - &grad).norm() / grad.norm().max(1.0)
}

/// Whether `g` strictly increases from `y0` to `y0 + gap` at the random case
/// drawn from `seed`, with a positive derivative at `y0`.
pub fn monotone_check(seed: u64, y0: f64, gap: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, x) = random_case(&mut rng, 3.0);
    p.transform(&x, y0 + gap).unwrap() > p.transform(&x, y0).unwrap()
        && p.transform_deriv(&x, y0).unwrap() > 0.0
}

/// Mass and first moment of the density at `x` by adaptive quadrature,
/// with closed-form tails beyond the integration domain.
pub fn quadrature_moments(p: &CnrParams, x: &[f64]) -> (f64, f64) {
    let seg = hand_segments(p, x);
    let domain = seg.domain();
    let (tail_mass, tail_mean) = seg.tails();
    let f = |y: f64| p.density(x, y).unwrap();
    let fy = |y: f64| y * p.density(x, y).unwrap();
    let mass = integrate_segments(&f, &domain, 1e-13) + tail_mass;
    let first = integrate_segments(&fy, &domain, 1e-13) + tail_mean;
    (mass, first)
}
