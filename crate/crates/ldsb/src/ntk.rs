//! Closed-form max-margin analysis on the point-mass dataset, for both
//! training regimes.
//!
//! Lazy regime: the infinite-width kernel of a 1-hidden-layer ReLU network
//! is `K(x, x') = ‖x‖‖x'‖ κ(cos∠(x, x'))` with
//! `κ(u) = (1/π)(2u(π − cos⁻¹u) + √(1−u²))`. On the point-mass dataset
//! (bias coordinate appended) the max-margin dual has only two distinct
//! multipliers by symmetry — one shared by the positive points, one for
//! the negative point — and they solve a 2×2 system whose coefficients are
//! binomially weighted sums of κ values. [`NtkSetup`] carries those duals;
//! [`margin_fn_pos`]/[`margin_fn_neg`] then evaluate the classifier along
//! the linear coordinate for either base pattern. Everything is expressed
//! through normalized binomial weights computed in log space, so dimensions
//! up to 10⁶ run without overflow.
//!
//! Rich regime: training concentrates the neuron distribution on the pair
//! of antipodal neurons along the linear coordinate. [`rich_dual_value`]
//! evaluates the dual objective `g(w, b, a)` exactly by enumerating the
//! sign patterns, [`rich_maximizer_check`] probes that the closed-form pair
//! maximizes it, and [`rich_margin_of_nustar`] evaluates the margin of the
//! induced two-neuron network on a finite dataset.

use ndarray::Array1;
use rand::Rng;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::sample_unit_sphere;

/// Angular kernel profile `κ(u) = (1/π)(2u(π − cos⁻¹u) + √(1−u²))`.
///
/// Inputs within 1e-12 of ±1 are clamped; anything further outside the
/// domain is an error. `κ(−1) = 0`, `κ(0) = 1/π`, `κ(1) = 2`.
pub fn kappa(u: f64) -> Result<f64> {
    if u.abs() > 1.0 + 1e-9 || !u.is_finite() {
        return Err(Error::Domain(u));
    }
    let u = u.clamp(-1.0, 1.0);
    Ok((2.0 * u * (std::f64::consts::PI - u.acos()) + (1.0 - u * u).sqrt())
        / std::f64::consts::PI)
}

/// Compensated (Neumaier) summation; the binomially weighted κ sums run
/// over up to 10⁶ terms and feed 1e-7-level comparisons.
fn neumaier_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for t in terms {
        let new = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - new) + t;
        } else {
            comp += (t - new) + sum;
        }
        sum = new;
    }
    sum + comp
}

/// Closed-form dual data for the point-mass dataset in dimension `d` with
/// margin `gamma` (bias coordinate appended).
///
/// `a_tilde` stores `2^{d−1} · a`, i.e. the positive dual multiplier
/// rescaled by the number of positive points, which keeps every downstream
/// formula overflow-free. `b_dual` is the negative point's multiplier
/// (signed: negative).
#[derive(Debug, Clone)]
pub struct NtkSetup {
    pub d: usize,
    pub gamma: f64,
    /// Norm of the positive points, `√(d + γ²)`.
    pub rho1: f64,
    /// Norm of the negative point, `√(1 + γ²)`.
    pub rho2: f64,
    /// `β_i = κ((d − 2i + γ²)/(d + γ²))` for `i < d`;
    /// `β_d = κ((1 − γ²)/(ρ₁ρ₂))`.
    pub beta: Vec<f64>,
    /// Normalized denominator `Σ wᵢ (κ(1)βᵢ − β_d²)` with
    /// `wᵢ = C(d−1, i)/2^{d−1}`.
    pub xi: f64,
    pub a_tilde: f64,
    pub b_dual: f64,
    /// `ln wᵢ`, reused by the margin evaluations.
    log_weights: Vec<f64>,
}

/// Log-space normalized binomial weights `ln(C(n, i)/2^n)` for `i = 0..=n`.
fn log_binomial_weights(n: usize) -> Vec<f64> {
    let ln2 = std::f64::consts::LN_2;
    let mut out = Vec::with_capacity(n + 1);
    let mut lw = -(n as f64) * ln2;
    out.push(lw);
    for i in 0..n {
        lw += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        out.push(lw);
    }
    out
}

/// Builds the closed-form duals. Requires `d ≥ 3`, `gamma > 0`; works for
/// `d` up to at least 10⁶.
pub fn build_setup(d: usize, gamma: f64) -> Result<NtkSetup> {
    if d < 3 {
        return Err(Error::InvalidInput(format!("d = {d} must be >= 3")));
    }
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidInput(format!("gamma = {gamma} must be > 0")));
    }
    let df = d as f64;
    let g2 = gamma * gamma;
    let rho1 = (df + g2).sqrt();
    let rho2 = (1.0 + g2).sqrt();

    let mut beta = Vec::with_capacity(d + 1);
    for i in 0..d {
        beta.push(kappa((df - 2.0 * i as f64 + g2) / (df + g2))?);
    }
    let beta_d = kappa((1.0 - g2) / (rho1 * rho2))?;
    beta.push(beta_d);

    let kappa1 = kappa(1.0)?;
    let log_weights = log_binomial_weights(d - 1);
    let xi = neumaier_sum(
        (0..d).map(|i| log_weights[i].exp() * (kappa1 * beta[i] - beta_d * beta_d)),
    );
    if xi <= 0.0 {
        return Err(Error::InternalInconsistency(format!(
            "xi = {xi} <= 0 for d = {d}, gamma = {gamma}"
        )));
    }
    let a_tilde = (rho2 * kappa1 + rho1 * beta_d) / (xi * rho1 * rho1 * rho2);
    let b_dual = (-1.0 - a_tilde * rho1 * rho2 * beta_d) / (rho2 * rho2 * kappa1);

    Ok(NtkSetup { d, gamma, rho1, rho2, beta, xi, a_tilde, b_dual, log_weights })
}

/// `f(x)/‖x‖` for `x = (ζ, ±1, …, ±1, 1)`, i.e. a positive base pattern
/// with the linear coordinate moved to `ζ`. The sign pattern does not
/// matter by symmetry. Support-vector identity: at `ζ = γ` this equals
/// `1/‖x‖` so `f(x) = +1`.
pub fn margin_fn_pos(setup: &NtkSetup, zeta: f64) -> Result<f64> {
    if !zeta.is_finite() {
        return Err(Error::InvalidInput(format!("zeta = {zeta}")));
    }
    let df = setup.d as f64;
    let norm = (df + zeta * zeta).sqrt();
    let gz = setup.gamma * zeta;
    let sum = neumaier_sum((0..setup.d).map(|i| {
        let tau = ((df - 2.0 * i as f64 + gz) / (setup.rho1 * norm)).clamp(-1.0, 1.0);
        setup.log_weights[i].exp() * kappa_unchecked(tau)
    }));
    let tau_neg = ((1.0 - gz) / (setup.rho2 * norm)).clamp(-1.0, 1.0);
    Ok(setup.a_tilde * setup.rho1 * sum
        + setup.b_dual * setup.rho2 * kappa_unchecked(tau_neg))
}

/// `f(x)/‖x‖` for `x = (ζ, 0, …, 0, 1)`, the negative base pattern. At
/// `ζ = −γ` this is the negative training point, so `f(x) = −1`.
pub fn margin_fn_neg(setup: &NtkSetup, zeta: f64) -> Result<f64> {
    if !zeta.is_finite() {
        return Err(Error::InvalidInput(format!("zeta = {zeta}")));
    }
    let norm = (1.0 + zeta * zeta).sqrt();
    let gz = setup.gamma * zeta;
    let tau_pos = ((1.0 + gz) / (setup.rho1 * norm)).clamp(-1.0, 1.0);
    let tau_neg = ((1.0 - gz) / (setup.rho2 * norm)).clamp(-1.0, 1.0);
    Ok(setup.a_tilde * setup.rho1 * kappa_unchecked(tau_pos)
        + setup.b_dual * setup.rho2 * kappa_unchecked(tau_neg))
}

/// κ on a pre-clamped argument; the margin loops clamp τ themselves.
fn kappa_unchecked(u: f64) -> f64 {
    (2.0 * u * (std::f64::consts::PI - u.acos()) + (1.0 - u * u).sqrt()) / std::f64::consts::PI
}

/// Which margin function a scan bisects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginBase {
    Pos,
    Neg,
}

/// Bisection for the sign crossing of the selected margin function on
/// `[lo, hi]`, to within `tol` on ζ.
pub fn threshold_scan(
    setup: &NtkSetup,
    base: MarginBase,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    let eval = |z: f64| match base {
        MarginBase::Pos => margin_fn_pos(setup, z),
        MarginBase::Neg => margin_fn_neg(setup, z),
    };
    let (mut lo, mut hi) = (lo, hi);
    let mut flo = eval(lo)?;
    let fhi = eval(hi)?;
    if flo * fhi >= 0.0 {
        return Err(Error::NoCrossing { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fmid = eval(mid)?;
        if fmid == 0.0 {
            return Ok(mid);
        }
        if flo * fmid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fmid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One neuron of the rich-regime optimum: `(w, b, a)` on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    pub w: Array1<f64>,
    pub b: f64,
    pub a: f64,
}

impl Neuron {
    pub fn norm(&self) -> f64 {
        (self.w.dot(&self.w) + self.b * self.b + self.a * self.a).sqrt()
    }
}

/// The antipodal neuron pair the rich regime converges to: both neurons
/// read only the linear coordinate, with weights
/// `(±γ/√(2(1+γ²)) e₁, 1/√(2(1+γ²)), ±1/√2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxMarginPair {
    pub gamma: f64,
    pub d: usize,
    pub theta1: Neuron,
    pub theta2: Neuron,
}

/// Constructs the closed-form pair in dimension `d`.
pub fn max_margin_pair(gamma: f64, d: usize) -> Result<MaxMarginPair> {
    if d < 1 || gamma <= 0.0 || gamma.is_nan() {
        return Err(Error::InvalidInput(format!("need d >= 1 and gamma > 0, got {d}, {gamma}")));
    }
    let scale = 1.0 / (2.0 * (1.0 + gamma * gamma)).sqrt();
    let mut w1 = Array1::zeros(d);
    w1[0] = gamma * scale;
    let mut w2 = Array1::zeros(d);
    w2[0] = -gamma * scale;
    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
    Ok(MaxMarginPair {
        gamma,
        d,
        theta1: Neuron { w: w1, b: scale, a: inv_sqrt2 },
        theta2: Neuron { w: w2, b: scale, a: -inv_sqrt2 },
    })
}

const MAX_EXACT_PATTERN_DIM: usize = 24;

/// The rich-regime dual objective
/// `g(w, b, a) = (a/2)·(E_σ[φ(γw₁ + b + Σᵢ σᵢ wᵢ)] − φ(b − γw₁))`,
/// with the expectation over sign patterns evaluated exactly by
/// enumeration. `w.len()` is the data dimension `d`; patterns range over
/// the `d−1` non-linear coordinates.
pub fn rich_dual_value(w: &[f64], b: f64, a: f64, gamma: f64) -> Result<f64> {
    let d = w.len();
    if d == 0 {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    if d > MAX_EXACT_PATTERN_DIM {
        return Err(Error::TooLarge(format!(
            "exact enumeration caps at d = {MAX_EXACT_PATTERN_DIM}; use rich_dual_value_sampled"
        )));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let patterns = 1usize << (d - 1);
    let alpha = gamma * w[0] + b;
    let mut acc = 0.0;
    for p in 0..patterns {
        let mut pre = alpha;
        for (j, &wj) in w[1..].iter().enumerate() {
            pre += if (p >> j) & 1 == 1 { -wj } else { wj };
        }
        acc += pre.max(0.0);
    }
    let expect = acc / patterns as f64;
    Ok(0.5 * a * (expect - (b - gamma * w[0]).max(0.0)))
}

/// Monte-Carlo variant of [`rich_dual_value`] for dimensions beyond the
/// exact enumeration cap. Returns `(estimate, standard_error)`.
pub fn rich_dual_value_sampled(
    w: &[f64],
    b: f64,
    a: f64,
    gamma: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let d = w.len();
    if d == 0 || samples == 0 {
        return Err(Error::InvalidInput("need a weight vector and samples >= 1".into()));
    }
    let alpha = gamma * w[0] + b;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let mut pre = alpha;
        for &wj in &w[1..] {
            pre += if rng.gen::<bool>() { wj } else { -wj };
        }
        let v = pre.max(0.0);
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let half_a = 0.5 * a;
    let estimate = half_a * (mean - (b - gamma * w[0]).max(0.0));
    Ok((estimate, half_a.abs() * (var / n).sqrt()))
}

fn neuron_dual_value(neuron: &Neuron, gamma: f64) -> Result<f64> {
    rich_dual_value(neuron.w.as_slice().expect("contiguous"), neuron.b, neuron.a, gamma)
}

/// Random-search and local-perturbation probe of the claim that the
/// closed-form pair uniquely maximizes the dual objective on the sphere.
#[derive(Debug, Clone)]
pub struct MaximizerReport {
    pub g_theta1: f64,
    pub g_theta2: f64,
    /// Largest dual value among the random sphere points.
    pub best_random: f64,
    pub num_random: usize,
    /// Of 100 renormalized tangent perturbations of θ₁, how many strictly
    /// decreased the objective.
    pub perturbations_below: usize,
    pub perturbation_eps: f64,
}

/// Evaluates `g` at θ₁, θ₂ and at `num_random` uniform points of the
/// sphere in `R^{d+2}`, plus 100 renormalized ε-perturbations of θ₁.
pub fn rich_maximizer_check(
    gamma: f64,
    d: usize,
    num_random: usize,
    rng: &mut impl Rng,
) -> Result<MaximizerReport> {
    if d > 16 {
        return Err(Error::TooLarge("maximizer probe caps at d = 16".into()));
    }
    if num_random == 0 {
        return Err(Error::InvalidInput("num_random must be >= 1".into()));
    }
    let pair = max_margin_pair(gamma, d)?;
    let g1 = neuron_dual_value(&pair.theta1, gamma)?;
    let g2 = neuron_dual_value(&pair.theta2, gamma)?;

    let mut best_random = f64::NEG_INFINITY;
    for _ in 0..num_random {
        let point = sample_unit_sphere(d + 2, rng)?;
        let w = &point.as_slice().expect("contiguous")[..d];
        let value = rich_dual_value(w, point[d], point[d + 1], gamma)?;
        if value > best_random {
            best_random = value;
        }
    }

    let eps = 1e-3;
    let mut below = 0usize;
    for _ in 0..100 {
        let tangent = sample_unit_sphere(d + 2, rng)?;
        let mut point = Array1::zeros(d + 2);
        for j in 0..d {
            point[j] = pair.theta1.w[j];
        }
        point[d] = pair.theta1.b;
        point[d + 1] = pair.theta1.a;
        point.scaled_add(eps, &tangent);
        let norm = point.dot(&point).sqrt();
        point.mapv_inplace(|v| v / norm);
        let value = rich_dual_value(
            &point.as_slice().expect("contiguous")[..d],
            point[d],
            point[d + 1],
            gamma,
        )?;
        if value < g1 {
            below += 1;
        }
    }

    Ok(MaximizerReport {
        g_theta1: g1,
        g_theta2: g2,
        best_random,
        num_random,
        perturbations_below: below,
        perturbation_eps: eps,
    })
}

/// Per-point margins `y·f(x)` of the two-neuron network induced by the
/// closed-form pair (equal mass on each neuron) over a binary dataset.
pub fn nustar_margins(gamma: f64, dataset: &LabeledDataset) -> Result<Vec<f64>> {
    if dataset.num_classes != 2 {
        return Err(Error::InvalidInput("margin is defined for binary datasets".into()));
    }
    let pair = max_margin_pair(gamma, dataset.d())?;
    let mut out = Vec::with_capacity(dataset.n());
    for (i, row) in dataset.x.rows().into_iter().enumerate() {
        let z1 = (row.dot(&pair.theta1.w) + pair.theta1.b).max(0.0);
        let z2 = (row.dot(&pair.theta2.w) + pair.theta2.b).max(0.0);
        let f = 0.5 * pair.theta1.a * z1 + 0.5 * pair.theta2.a * z2;
        out.push(dataset.signed_label(i) * f);
    }
    Ok(out)
}

/// Minimum of [`nustar_margins`]; on the defining point-mass dataset this
/// equals `√(1+γ²)/4` with every point tied.
pub fn rich_margin_of_nustar(gamma: f64, dataset: &LabeledDataset) -> Result<f64> {
    Ok(nustar_margins(gamma, dataset)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Report bundle for the CLI `ntk` subcommand: duals, the threshold values
/// on the negative base, the sign crossing on the positive base, and the
/// worst support-vector residual.
pub fn report(d: usize, gamma: f64) -> Result<serde_json::Value> {
    let setup = build_setup(d, gamma)?;
    let resid_pos = (setup.rho1 * margin_fn_pos(&setup, gamma)? - 1.0).abs();
    let resid_neg = (setup.rho2 * margin_fn_neg(&setup, -gamma)? + 1.0).abs();
    let pos_crossing = threshold_scan(&setup, MarginBase::Pos, -0.95 * gamma, gamma, 1e-6).ok();
    Ok(serde_json::json!({
        "d": d,
        "gamma": gamma,
        "xi": setup.xi,
        "a_tilde": setup.a_tilde,
        "b_dual": setup.b_dual,
        "pos_crossing": pos_crossing,
        "neg_values": {
            "at_0": margin_fn_neg(&setup, 0.0)?,
            "at_0.73": margin_fn_neg(&setup, 0.73)?,
        },
        "support_vector_residual_max": resid_pos.max(resid_neg),
    }))
}
