//! Statistics over emission and travel-time samples: Gini, CCDF, histograms
//! with KL/JS divergence, KDE, rank correlation, and maximum-likelihood fits
//! of five heavy-tail families with pairwise likelihood-ratio selection.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty input")]
    Empty,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("input contains a negative value")]
    Negative,
    #[error("all values are zero")]
    AllZero,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("{model} fit did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence {
        model: Model,
        iterations: usize,
        grad_norm: f64,
    },
    #[error("{model} fit failed: {message}")]
    Optimizer { model: Model, message: String },
    #[error("invalid histogram: {0}")]
    BadHistogram(String),
    #[error("histograms have different bin edges")]
    BinMismatch,
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_finite(values: &[f64]) -> Result<(), AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Gini index via the sorted identity
/// `G = Σ_i (2i − n − 1)·x_(i) / (n·Σx)`.
pub fn gini(values: &[f64]) -> Result<f64, AnalysisError> {
    check_finite(values)?;
    if values.iter().any(|&v| v < 0.0) {
        return Err(AnalysisError::Negative);
    }
    let x = sorted(values);
    let total: f64 = x.iter().sum();
    if total <= 0.0 {
        return Err(AnalysisError::AllZero);
    }
    let n = x.len() as f64;
    let weighted: f64 = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (2.0 * (i as f64 + 1.0) - n - 1.0) * v)
        .sum();
    Ok((weighted / (n * total)).clamp(0.0, 1.0))
}

/// Empirical `P(X >= x)` at each distinct value, ascending.
pub fn ccdf(values: &[f64]) -> Result<Vec<(f64, f64)>, AnalysisError> {
    check_finite(values)?;
    let x = sorted(values);
    let n = x.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < x.len() {
        out.push((x[i], (x.len() - i) as f64 / n));
        let v = x[i];
        while i < x.len() && x[i] == v {
            i += 1;
        }
    }
    Ok(out)
}

/// Probability masses over strictly increasing bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    mass: Vec<f64>,
}

impl Histogram {
    /// Validates and stores the masses; they must sum to 1 within 1e-12.
    pub fn new(edges: Vec<f64>, mass: Vec<f64>) -> Result<Self, AnalysisError> {
        if edges.len() < 2 || mass.len() + 1 != edges.len() {
            return Err(AnalysisError::BadHistogram(format!(
                "{} edges for {} bins",
                edges.len(),
                mass.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AnalysisError::BadHistogram("edges must be finite and strictly increasing".into()));
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(AnalysisError::BadHistogram("masses must be nonnegative".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(AnalysisError::BadHistogram(format!("masses sum to {total}")));
        }
        Ok(Self { edges, mass })
    }

    /// Normalizes raw weights (e.g. counts).
    pub fn from_weights(edges: Vec<f64>, weights: &[f64]) -> Result<Self, AnalysisError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(AnalysisError::BadHistogram("no mass".into()));
        }
        let mass = weights.iter().map(|w| w / total).collect();
        Self::new(edges, mass)
    }

    /// Counts `values` into the bins; the last bin includes its upper edge and
    /// values outside the edges are ignored.
    pub fn from_samples(values: &[f64], edges: Vec<f64>) -> Result<Self, AnalysisError> {
        check_finite(values)?;
        let nb = edges.len().saturating_sub(1);
        let mut counts = vec![0.0; nb];
        if nb > 0 {
            let (lo, hi) = (edges[0], edges[nb]);
            for &v in values {
                if v < lo || v > hi {
                    continue;
                }
                let k = edges[1..].partition_point(|&e| e <= v).min(nb - 1);
                counts[k] += 1.0;
            }
        }
        Self::from_weights(edges, &counts)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }
}

/// `bins + 1` equal-width edges over `[lo, hi]`; a degenerate range is widened
/// to `[lo - 0.5, lo + 0.5]`.
pub fn equal_width_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>, AnalysisError> {
    if bins == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(AnalysisError::InvalidParameter(format!(
            "cannot bin [{lo}, {hi}] into {bins} bins"
        )));
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let w = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|k| lo + k as f64 * w).collect();
    edges.push(hi);
    Ok(edges)
}

/// `Σ P log₂(P/Q)`; `+∞` when P puts mass where Q has none.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64, AnalysisError> {
    if p.edges != q.edges {
        return Err(AnalysisError::BinMismatch);
    }
    let mut kl = 0.0;
    for (&a, &b) in p.mass.iter().zip(&q.mass) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += a * (a / b).log2();
    }
    Ok(kl.max(0.0))
}

/// Jensen–Shannon divergence in bits, in `[0, 1]`.
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<f64, AnalysisError> {
    if p.edges != q.edges {
        return Err(AnalysisError::BinMismatch);
    }
    // Summed symmetrically term by term so JS(P,Q) and JS(Q,P) are bitwise equal.
    let mut js = 0.0;
    for (&a, &b) in p.mass.iter().zip(&q.mass) {
        let m = 0.5 * (a + b);
        let ta = if a > 0.0 { a * (a / m).log2() } else { 0.0 };
        let tb = if b > 0.0 { b * (b / m).log2() } else { 0.0 };
        js += 0.5 * (ta + tb);
    }
    Ok(js.clamp(0.0, 1.0))
}

/// Scott's rule `σ̂·n^(−1/5)`, falling back to 1 for a zero spread.
pub fn scott_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 1.0;
    }
    let m = mean(values);
    let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd > 0.0 {
        sd * n.powf(-0.2)
    } else {
        1.0
    }
}

/// Gaussian kernel density evaluated at `points`.
pub fn kde(values: &[f64], bandwidth: Option<f64>, points: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    check_finite(values)?;
    let h = bandwidth.unwrap_or_else(|| scott_bandwidth(values));
    if !(h > 0.0 && h.is_finite()) {
        return Err(AnalysisError::InvalidParameter(format!("bandwidth {h}")));
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(points
        .iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect())
}

/// KDE on `n_points` evenly spaced points spanning the data ± 4 bandwidths.
pub fn kde_curve(
    values: &[f64],
    bandwidth: Option<f64>,
    n_points: usize,
) -> Result<Vec<(f64, f64)>, AnalysisError> {
    check_finite(values)?;
    if n_points < 2 {
        return Err(AnalysisError::InvalidParameter("need at least 2 points".into()));
    }
    let h = bandwidth.unwrap_or_else(|| scott_bandwidth(values));
    let x = sorted(values);
    let (lo, hi) = (x[0] - 4.0 * h, x[x.len() - 1] + 4.0 * h);
    let pts: Vec<f64> = (0..n_points)
        .map(|k| lo + (hi - lo) * k as f64 / (n_points - 1) as f64)
        .collect();
    let dens = kde(values, Some(h), &pts)?;
    Ok(pts.into_iter().zip(dens).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeComparison {
    pub js: f64,
    pub abs_mean_diff: f64,
}

pub const DEFAULT_TT_BINS: usize = 60;

/// JS divergence of the two samples histogrammed on shared equal-width bins
/// over the pooled range, plus the absolute difference of their means.
pub fn travel_time_comparison(
    sim: &[f64],
    real: &[f64],
    bins: usize,
) -> Result<TravelTimeComparison, AnalysisError> {
    check_finite(sim)?;
    check_finite(real)?;
    let (lo, hi) = sim
        .iter()
        .chain(real)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let edges = equal_width_edges(lo, hi, bins)?;
    let p = Histogram::from_samples(sim, edges.clone())?;
    let q = Histogram::from_samples(real, edges)?;
    Ok(TravelTimeComparison {
        js: js_divergence(&p, &q)?,
        abs_mean_diff: (mean(sim) - mean(real)).abs(),
    })
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    check_finite(x)?;
    check_finite(y)?;
    if x.len() < 2 {
        return Err(AnalysisError::TooFewSamples { need: 2, got: x.len() });
    }
    let r = pearson(&ranks(x), &ranks(y));
    if r.is_nan() {
        return Err(AnalysisError::Degenerate("constant ranks".into()));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    PowerLaw,
    TruncatedPowerLaw,
    Lognormal,
    Exponential,
    StretchedExponential,
}

impl Model {
    pub const ALL: [Model; 5] = [
        Model::PowerLaw,
        Model::TruncatedPowerLaw,
        Model::Lognormal,
        Model::Exponential,
        Model::StretchedExponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Model::PowerLaw => "power_law",
            Model::TruncatedPowerLaw => "truncated_power_law",
            Model::Lognormal => "lognormal",
            Model::Exponential => "exponential",
            Model::StretchedExponential => "stretched_exponential",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fitted tail model. Parameters that do not apply to `model` are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: Model,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    pub x_min: f64,
    pub n: usize,
    pub loglik: f64,
}

impl FitResult {
    fn blank(model: Model, x_min: f64, n: usize) -> Self {
        Self {
            model,
            alpha: None,
            lambda: None,
            mu: None,
            sigma: None,
            beta: None,
            x_min,
            n,
            loglik: f64::NAN,
        }
    }

    /// Log density of the fitted model at `x >= x_min`.
    pub fn log_pdf(&self, x: f64) -> f64 {
        self.log_density()(x)
    }

    /// The log density with its normalizing constants computed once.
    pub fn log_density(&self) -> Box<dyn Fn(f64) -> f64 + Send + Sync> {
        let xm = self.x_min;
        let p = |v: Option<f64>| v.unwrap_or(f64::NAN);
        match self.model {
            Model::PowerLaw => {
                let a = p(self.alpha);
                let k = (a - 1.0).ln() - xm.ln();
                Box::new(move |x| k - a * (x / xm).ln())
            }
            Model::Exponential => {
                let l = p(self.lambda);
                Box::new(move |x| l.ln() - l * (x - xm))
            }
            Model::TruncatedPowerLaw => {
                let (a, l) = (p(self.alpha), p(self.lambda));
                let ln_z = tpl_moments(a, l, xm).ln_z;
                Box::new(move |x| -a * x.ln() - l * x - ln_z)
            }
            Model::Lognormal => {
                let (m, s) = (p(self.mu), p(self.sigma));
                let k = -s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - lognormal_ln_q(m, s, xm);
                Box::new(move |x| {
                    let z = (x.ln() - m) / s;
                    -0.5 * z * z - x.ln() + k
                })
            }
            Model::StretchedExponential => {
                let (b, l) = (p(self.beta), p(self.lambda));
                let k = b.ln() + l.ln() + l * xm.powf(b);
                Box::new(move |x| k + (b - 1.0) * x.ln() - l * x.powf(b))
            }
        }
    }

    fn with_loglik(mut self, tail: &[f64]) -> Self {
        let f = self.log_density();
        self.loglik = tail.iter().map(|&x| f(x)).sum();
        self
    }
}

/// Values `>= x_min`, validated.
pub fn tail(values: &[f64], x_min: f64) -> Result<Vec<f64>, AnalysisError> {
    check_finite(values)?;
    if !(x_min > 0.0 && x_min.is_finite()) {
        return Err(AnalysisError::InvalidParameter(format!("x_min must be positive, got {x_min}")));
    }
    let t: Vec<f64> = values.iter().copied().filter(|&v| v >= x_min).collect();
    if t.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(t)
}

/// Smallest positive value, the default lower cutoff for tail fits.
pub fn default_x_min(values: &[f64]) -> Result<f64, AnalysisError> {
    values
        .iter()
        .copied()
        .filter(|&v| v > 0.0 && v.is_finite())
        .reduce(f64::min)
        .ok_or(AnalysisError::AllZero)
}

fn require_spread(t: &[f64]) -> Result<(), AnalysisError> {
    let first = t[0];
    if t.iter().all(|&v| v == first) {
        return Err(AnalysisError::Degenerate("all values are identical".into()));
    }
    Ok(())
}

/// Continuous power law, `α = 1 + n / Σ ln(x / x_min)`.
pub fn fit_power_law(values: &[f64], x_min: f64) -> Result<FitResult, AnalysisError> {
    let t = tail(values, x_min)?;
    let s: f64 = t.iter().map(|&x| (x / x_min).ln()).sum();
    if !(s > 0.0) {
        return Err(AnalysisError::Degenerate("all values equal x_min".into()));
    }
    let mut f = FitResult::blank(Model::PowerLaw, x_min, t.len());
    f.alpha = Some(1.0 + t.len() as f64 / s);
    Ok(f.with_loglik(&t))
}

/// Shifted exponential on `[x_min, ∞)`.
pub fn fit_exponential(values: &[f64], x_min: f64) -> Result<FitResult, AnalysisError> {
    let t = tail(values, x_min)?;
    let excess = mean(&t) - x_min;
    if !(excess > 0.0) {
        return Err(AnalysisError::Degenerate("all values equal x_min".into()));
    }
    let mut f = FitResult::blank(Model::Exponential, x_min, t.len());
    f.lambda = Some(1.0 / excess);
    Ok(f.with_loglik(&t))
}

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];
const PANEL: f64 = 0.5;

/// Normalizer and first two moments of `(ln x, x)` under the truncated power
/// law `x^(−α) e^(−λx)` on `[x_min, ∞)`.
#[derive(Debug, Clone, Copy)]
struct TplMoments {
    ln_z: f64,
    e_ln: f64,
    e_x: f64,
    var_ln: f64,
    cov: f64,
    var_x: f64,
}

fn log_sum_exp(terms: &[(f64, f64)]) -> (f64, f64) {
    // (log-scale, weighted sum) pairs → shift and scaled sum
    let shift = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let s = terms.iter().map(|&(l, w)| w * (l - shift).exp()).sum();
    (shift, s)
}

/// Integrates in `t = ln(x / x_min)`, where the integrand is
/// `exp((1 − α)t − λ·x_min·e^t)`, with panel-wise Gauss–Legendre quadrature
/// out to where every needed integrand is negligible.
fn tpl_moments(alpha: f64, lambda: f64, x_min: f64) -> TplMoments {
    let nan = TplMoments {
        ln_z: f64::NAN,
        e_ln: f64::NAN,
        e_x: f64::NAN,
        var_ln: f64::NAN,
        cov: f64::NAN,
        var_x: f64::NAN,
    };
    let c = lambda * x_min;
    if !(c >= 0.0) || !alpha.is_finite() {
        return nan;
    }
    let ln_xm = x_min.ln();
    if c < 1e-100 {
        if alpha <= 1.0 {
            return nan;
        }
        let k = alpha - 1.0;
        let e_x = if alpha > 2.0 { x_min * k / (alpha - 2.0) } else { f64::INFINITY };
        let var_x = if alpha > 3.0 {
            x_min * x_min * k / (alpha - 3.0) - e_x * e_x
        } else {
            f64::INFINITY
        };
        return TplMoments {
            ln_z: (1.0 - alpha) * ln_xm - k.ln(),
            e_ln: ln_xm + 1.0 / k,
            e_x,
            var_ln: 1.0 / (k * k),
            cov: if alpha > 2.0 { x_min / ((alpha - 2.0) * (alpha - 2.0)) } else { f64::INFINITY },
            var_x,
        };
    }
    let b = 1.0 - alpha;
    let log_f = |t: f64| b * t - c * t.exp();
    // nodes: (t, log weight·integrand)
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    let mut best = [f64::NEG_INFINITY; 3];
    let mut p = 0usize;
    let mut a1 = 0.0;
    loop {
        // keep the log-integrand change per panel near PANEL when it is steep
        let a0 = a1;
        let slope = |t: f64| (b - c * t.exp()).abs().max(1.0);
        let mut h = PANEL / slope(a0);
        h = h.min(PANEL / slope(a0 + h));
        a1 = a0 + h;
        let (mid, half) = (0.5 * (a0 + a1), 0.5 * h);
        for (&x, &w) in GL8_NODES.iter().zip(&GL8_WEIGHTS) {
            for t in [mid - half * x, mid + half * x] {
                let l = log_f(t) + (w * half).ln();
                for (k, bk) in best.iter_mut().enumerate() {
                    *bk = bk.max(l + k as f64 * t);
                }
                nodes.push((t, l));
            }
        }
        p += 1;
        let te = a1;
        let lf = log_f(te);
        let done = (0..3).all(|k| {
            let kf = k as f64;
            lf + kf * te < best[k] - 60.0 && b + kf - c * te.exp() < 0.0
        });
        if done || p > 20_000 {
            break;
        }
    }
    let moment = |k: f64, m: i32| -> (f64, f64) {
        let terms: Vec<(f64, f64)> = nodes
            .iter()
            .map(|&(t, l)| (l + k * t, t.powi(m)))
            .collect();
        log_sum_exp(&terms)
    };
    let (l0, s0) = moment(0.0, 0);
    let ratio = |k: f64, m: i32| {
        let (lk, sk) = moment(k, m);
        sk / s0 * (lk - l0).exp()
    };
    let et = ratio(0.0, 1);
    let et2 = ratio(0.0, 2);
    let ee = ratio(1.0, 0);
    let ete = ratio(1.0, 1);
    let ee2 = ratio(2.0, 0);
    TplMoments {
        ln_z: (1.0 - alpha) * ln_xm + l0 + s0.ln(),
        e_ln: ln_xm + et,
        e_x: x_min * ee,
        var_ln: (et2 - et * et).max(0.0),
        cov: x_min * (ete - et * ee),
        var_x: (x_min * x_min * (ee2 - ee * ee)).max(0.0),
    }
}

fn tpl_loglik(alpha: f64, lambda: f64, x_min: f64, n: f64, sum_ln: f64, sum_x: f64) -> f64 {
    if lambda < 0.0 || (lambda * x_min < 1e-100 && alpha <= 1.0) {
        return f64::NEG_INFINITY;
    }
    let m = tpl_moments(alpha, lambda, x_min);
    let ll = -alpha * sum_ln - lambda * sum_x - n * m.ln_z;
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}

/// Per-sample gradient tolerance for the truncated power-law fit.
pub const TPL_GRAD_TOL: f64 = 1e-8;
const TPL_MAX_ITER: usize = 200;

/// Maximum-likelihood truncated power law `p(x) ∝ x^(−α) e^(−λx)` on
/// `[x_min, ∞)` with `λ >= 0`.
///
/// The log-likelihood is concave in `(α, λ)` (an exponential family), so a
/// damped Newton iteration with projection onto `λ >= 0` is used. It stops when
/// the per-sample gradient in `(α, λ·x̄)` has norm below [`TPL_GRAD_TOL`]
/// (only the feasible component counts at `λ = 0`), and reports
/// non-convergence after 200 iterations.
pub fn fit_truncated_power_law(values: &[f64], x_min: f64) -> Result<FitResult, AnalysisError> {
    let t = tail(values, x_min)?;
    if t.len() < 100 {
        return Err(AnalysisError::TooFewSamples { need: 100, got: t.len() });
    }
    require_spread(&t)?;
    let n = t.len() as f64;
    let sum_ln: f64 = t.iter().map(|x| x.ln()).sum();
    let sum_x: f64 = t.iter().sum();
    let (mean_ln, mean_x) = (sum_ln / n, sum_x / n);
    if !(mean_x > x_min) {
        return Err(AnalysisError::Degenerate("all values equal x_min".into()));
    }

    let hill = 1.0 + 1.0 / (mean_ln - x_min.ln());
    let mut alpha = hill.min(3.0);
    let mut lambda = 0.1 / (mean_x - x_min);
    let mut ll = tpl_loglik(alpha, lambda, x_min, n, sum_ln, sum_x);
    let mut grad_norm = f64::INFINITY;

    for _ in 0..TPL_MAX_ITER {
        let m = tpl_moments(alpha, lambda, x_min);
        // per-sample gradient of ℓ/n in (α, λ)
        let ga = m.e_ln - mean_ln;
        let gl = m.e_x - mean_x;
        let at_bound = lambda == 0.0;
        let gl_proj = if at_bound { gl.max(0.0) } else { gl };
        grad_norm = ga.hypot(gl_proj / mean_x);
        if grad_norm < TPL_GRAD_TOL {
            let mut f = FitResult::blank(Model::TruncatedPowerLaw, x_min, t.len());
            f.alpha = Some(alpha);
            f.lambda = Some(lambda);
            return Ok(f.with_loglik(&t));
        }

        // Newton direction: Cov · d = g (the Hessian of ℓ/n is −Cov).
        let (a, b, c) = (m.var_ln, m.cov, m.var_x);
        let det = a * c - b * b;
        let (mut da, mut dl) = if at_bound && gl <= 0.0 {
            (ga / a, 0.0)
        } else if det.is_finite() && det > 1e-300 * (a * c).max(f64::MIN_POSITIVE) && c.is_finite()
        {
            ((c * ga - b * gl) / det, (a * gl - b * ga) / det)
        } else {
            // fall back to a scaled gradient step
            (ga, gl / (mean_x * mean_x))
        };
        if !da.is_finite() || !dl.is_finite() {
            da = ga;
            dl = if gl.is_finite() { gl / (mean_x * mean_x) } else { 0.1 / mean_x };
        }

        let slope = ga * da + gl * dl;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let na = alpha + step * da;
            let mut nl = lambda + step * dl;
            if nl < 0.0 {
                // Project, snapping to the boundary only when λ is already tiny.
                nl = if lambda * mean_x < 1e-10 { 0.0 } else { lambda * 0.1 };
            }
            let nll = tpl_loglik(na, nl, x_min, n, sum_ln, sum_x);
            let slack = 1e-12 * (1.0 + ll.abs());
            if nll >= ll + 1e-4 * step * n * slope.min(0.0).abs().min(0.0) - slack
                && nll.is_finite()
            {
                alpha = na;
                lambda = nl;
                ll = nll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(AnalysisError::NonConvergence {
        model: Model::TruncatedPowerLaw,
        iterations: TPL_MAX_ITER,
        grad_norm,
    })
}

/// `ln erfc(z)`, accurate far into the upper tail.
fn ln_erfc(z: f64) -> f64 {
    if z < 20.0 {
        erfc(z).ln()
    } else {
        let z2 = z * z;
        let series = 1.0 - 1.0 / (2.0 * z2) + 3.0 / (4.0 * z2 * z2) - 15.0 / (8.0 * z2 * z2 * z2);
        -z2 - (z * std::f64::consts::PI.sqrt()).ln() + series.ln()
    }
}

/// `ln P(X >= x_min)` for the untruncated lognormal.
fn lognormal_ln_q(mu: f64, sigma: f64, x_min: f64) -> f64 {
    ln_erfc((x_min.ln() - mu) / (sigma * std::f64::consts::SQRT_2)) - 2f64.ln()
}

struct Objective<F: Fn(&[f64]) -> f64>(F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Objective<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        let v = (self.0)(p);
        Ok(if v.is_finite() { v } else { f64::MAX })
    }
}

/// Multi-start Nelder–Mead minimization; returns the best (params, value).
fn minimize<F: Fn(&[f64]) -> f64>(
    model: Model,
    f: F,
    starts: &[Vec<f64>],
    scale: f64,
) -> Result<(Vec<f64>, f64), AnalysisError> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for x0 in starts {
        let mut simplex = vec![x0.clone()];
        for k in 0..x0.len() {
            let mut v = x0.clone();
            v[k] += scale;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-12)
            .map_err(|e| AnalysisError::Optimizer {
                model,
                message: e.to_string(),
            })?;
        let res = Executor::new(Objective(&f), solver)
            .configure(|s| s.max_iters(2000))
            .run()
            .map_err(|e| AnalysisError::Optimizer {
                model,
                message: e.to_string(),
            })?;
        let state = res.state();
        if let Some(p) = state.get_best_param() {
            let c = state.get_best_cost();
            if best.as_ref().map_or(true, |b| c < b.1) {
                best = Some((p.clone(), c));
            }
        }
    }
    best.filter(|b| b.1 < f64::MAX).ok_or_else(|| AnalysisError::Optimizer {
        model,
        message: "no start produced a finite likelihood".into(),
    })
}

/// Lognormal truncated to `[x_min, ∞)`, fitted over `(μ, ln σ)` from three starts.
pub fn fit_lognormal(values: &[f64], x_min: f64) -> Result<FitResult, AnalysisError> {
    let t = tail(values, x_min)?;
    require_spread(&t)?;
    let logs: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    let m = mean(&logs);
    let sd = (logs.iter().map(|l| (l - m).powi(2)).sum::<f64>() / logs.len() as f64)
        .sqrt()
        .max(1e-3);
    let n = logs.len() as f64;
    let sum_ln: f64 = logs.iter().sum();
    let nll = |p: &[f64]| -> f64 {
        let (mu, sigma) = (p[0], p[1].exp());
        if !(sigma > 1e-8 && sigma < 1e4) {
            return f64::INFINITY;
        }
        let sq: f64 = logs.iter().map(|l| (l - mu).powi(2)).sum();
        0.5 * sq / (sigma * sigma)
            + sum_ln
            + n * (sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln() + lognormal_ln_q(mu, sigma, x_min))
    };
    let starts = [
        vec![m, sd.ln()],
        vec![x_min.ln(), (2.0 * sd).ln()],
        vec![m - 2.0 * sd, sd.ln()],
    ];
    let (p, _) = minimize(Model::Lognormal, nll, &starts, 0.5)?;
    let mut f = FitResult::blank(Model::Lognormal, x_min, t.len());
    f.mu = Some(p[0]);
    f.sigma = Some(p[1].exp());
    Ok(f.with_loglik(&t))
}

/// Stretched exponential `βλ x^(β−1) e^(−λ(x^β − x_min^β))`. For fixed β the
/// MLE of λ is closed form, so only `ln β` is searched (three starts).
pub fn fit_stretched_exponential(values: &[f64], x_min: f64) -> Result<FitResult, AnalysisError> {
    let t = tail(values, x_min)?;
    require_spread(&t)?;
    let n = t.len() as f64;
    let sum_ln: f64 = t.iter().map(|x| x.ln()).sum();
    let profile = |beta: f64| -> (f64, f64) {
        let s: f64 = t.iter().map(|&x| x.powf(beta) - x_min.powf(beta)).sum();
        let lambda = n / s;
        let ll = n * beta.ln() + n * lambda.ln() + (beta - 1.0) * sum_ln - lambda * s;
        (lambda, ll)
    };
    let nll = |p: &[f64]| -> f64 {
        let beta = p[0].exp();
        if !(1e-4..=50.0).contains(&beta) {
            return f64::INFINITY;
        }
        -profile(beta).1
    };
    let starts = [vec![0.5f64.ln()], vec![0.0], vec![0.2f64.ln()]];
    let (p, _) = minimize(Model::StretchedExponential, nll, &starts, 0.3)?;
    let beta = p[0].exp();
    let mut f = FitResult::blank(Model::StretchedExponential, x_min, t.len());
    f.beta = Some(beta);
    f.lambda = Some(profile(beta).0);
    Ok(f.with_loglik(&t))
}

pub fn fit_model(model: Model, values: &[f64], x_min: f64) -> Result<FitResult, AnalysisError> {
    match model {
        Model::PowerLaw => fit_power_law(values, x_min),
        Model::TruncatedPowerLaw => fit_truncated_power_law(values, x_min),
        Model::Lognormal => fit_lognormal(values, x_min),
        Model::Exponential => fit_exponential(values, x_min),
        Model::StretchedExponential => fit_stretched_exponential(values, x_min),
    }
}

/// All five families on the tail `x >= x_min`, fitted concurrently.
pub fn fit_all_models(values: &[f64], x_min: f64) -> Result<Vec<FitResult>, AnalysisError> {
    use rayon::prelude::*;
    Model::ALL
        .par_iter()
        .map(|&m| fit_model(m, values, x_min))
        .collect()
}

/// Normalized log-likelihood-ratio comparison of `a` against `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Model,
    pub b: Model,
    /// `Σ (ln p_a − ln p_b)`; positive favors `a`
    pub r: f64,
    /// two-sided p-value
    pub p: f64,
}

impl Comparison {
    pub fn winner(&self, significance: f64) -> Option<Model> {
        if self.p >= significance || self.r == 0.0 {
            None
        } else if self.r > 0.0 {
            Some(self.a)
        } else {
            Some(self.b)
        }
    }
}

pub const SIGNIFICANCE: f64 = 0.05;

pub fn compare(a: &FitResult, b: &FitResult, values: &[f64]) -> Result<Comparison, AnalysisError> {
    let x_min = a.x_min.max(b.x_min);
    let t = tail(values, x_min)?;
    let (fa, fb) = (a.log_density(), b.log_density());
    let d: Vec<f64> = t.iter().map(|&x| fa(x) - fb(x)).collect();
    let n = d.len() as f64;
    let r: f64 = d.iter().sum();
    let md = r / n;
    let var = d.iter().map(|v| (v - md).powi(2)).sum::<f64>() / n;
    let p = if var > 0.0 && r.is_finite() {
        erfc(r.abs() / (2.0 * n * var).sqrt())
    } else {
        1.0
    };
    Ok(Comparison {
        a: a.model,
        b: b.model,
        r,
        p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub winner: Model,
    pub wins: BTreeMap<Model, usize>,
    pub comparisons: Vec<Comparison>,
}

/// Pairwise comparisons; the model winning the most (R in its favor with
/// p < 0.05) is selected, ties going to the higher log-likelihood.
pub fn select_best(fits: &[FitResult], values: &[f64]) -> Result<Selection, AnalysisError> {
    if fits.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut wins: BTreeMap<Model, usize> = fits.iter().map(|f| (f.model, 0)).collect();
    let mut comparisons = Vec::new();
    for i in 0..fits.len() {
        for j in i + 1..fits.len() {
            let c = compare(&fits[i], &fits[j], values)?;
            if let Some(w) = c.winner(SIGNIFICANCE) {
                *wins.get_mut(&w).expect("model present") += 1;
            }
            comparisons.push(c);
        }
    }
    let winner = fits
        .iter()
        .max_by(|a, b| {
            wins[&a.model]
                .cmp(&wins[&b.model])
                .then(a.loglik.total_cmp(&b.loglik))
        })
        .expect("nonempty")
        .model;
    Ok(Selection {
        winner,
        wins,
        comparisons,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub x_min: f64,
    pub n_tail: usize,
    pub fits: Vec<FitResult>,
    pub comparisons: Vec<Comparison>,
    pub wins: BTreeMap<Model, usize>,
    pub winner: Model,
}

/// Fits every family and selects the best one.
pub fn fit_report(values: &[f64], x_min: f64) -> Result<FitReport, AnalysisError> {
    let fits = fit_all_models(values, x_min)?;
    let sel = select_best(&fits, values)?;
    Ok(FitReport {
        x_min,
        n_tail: fits[0].n,
        fits,
        comparisons: sel.comparisons,
        wins: sel.wins,
        winner: sel.winner,
    })
}

/// Samples the truncated power law by drawing from the pure power law and
/// accepting with probability `e^(−λ(x − x_min))`. Needs `α > 1`.
pub fn sample_truncated_power_law<R: Rng + ?Sized>(
    alpha: f64,
    lambda: f64,
    x_min: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>, AnalysisError> {
    if !(alpha > 1.0) || !(lambda >= 0.0) || !(x_min > 0.0) {
        return Err(AnalysisError::InvalidParameter(format!(
            "alpha={alpha}, lambda={lambda}, x_min={x_min}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u: f64 = rng.gen();
        let x = x_min * (1.0 - u).powf(-1.0 / (alpha - 1.0));
        if lambda == 0.0 || rng.gen::<f64>() < (-lambda * (x - x_min)).exp() {
            out.push(x);
        }
    }
    Ok(out)
}

/// Picks `x_min` among up to `max_candidates` distinct values by minimizing
/// the Kolmogorov–Smirnov distance of the power-law fit to the tail above it.
pub fn scan_x_min(values: &[f64], max_candidates: usize) -> Result<f64, AnalysisError> {
    check_finite(values)?;
    let x: Vec<f64> = sorted(values).into_iter().filter(|&v| v > 0.0).collect();
    let mut uniq = x.clone();
    uniq.dedup();
    if uniq.len() < 2 || max_candidates == 0 {
        return Err(AnalysisError::Degenerate("need at least two distinct positive values".into()));
    }
    // keep at least 10 points in every candidate tail
    let last = x.len().saturating_sub(10);
    let pool: Vec<f64> = uniq.into_iter().filter(|&v| v <= x[last.min(x.len() - 1)]).collect();
    let step = (pool.len() as f64 / max_candidates as f64).max(1.0);
    let mut best = (f64::INFINITY, pool[0]);
    let mut k = 0.0;
    while (k as usize) < pool.len() {
        let xm = pool[k as usize];
        k += step;
        let start = x.partition_point(|&v| v < xm);
        let tail = &x[start..];
        let s: f64 = tail.iter().map(|&v| (v / xm).ln()).sum();
        if !(s > 0.0) {
            continue;
        }
        let alpha = 1.0 + tail.len() as f64 / s;
        let n = tail.len() as f64;
        let ks = tail
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let model = 1.0 - (v / xm).powf(1.0 - alpha);
                ((i as f64 + 1.0) / n - model).abs().max((i as f64 / n - model).abs())
            })
            .fold(0.0, f64::max);
        if ks < best.0 {
            best = (ks, xm);
        }
    }
    Ok(best.1)
}

/// Writes `x,ccdf` rows.
pub fn write_ccdf_csv<W: io::Write>(writer: W, points: &[(f64, f64)]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "ccdf"])?;
    for (x, p) in points {
        w.write_record([x.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `x,density` rows.
pub fn write_kde_csv<W: io::Write>(writer: W, points: &[(f64, f64)]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "density"])?;
    for (x, d) in points {
        w.write_record([x.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
