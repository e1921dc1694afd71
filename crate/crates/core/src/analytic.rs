//! Closed-form threshold solvers and the exit-problem closed forms.
//!
//! Everything here is pure arithmetic on top of [`crate::special`]: the
//! continuum threshold `q* = (beta/sqrt(eps)) F^{-1}(eta)` with
//! `eta = Gamma eps^{3/2} / beta`, the asymptotic limits it interpolates
//! between, and the closed forms `L(p)` / `P(p)` for the expected predictor
//! sum and the lower-exit probability of the interval `(-q, q)`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::sde::OuParams;
use crate::special::{big_f_inv, brent, dawson, Tolerances};

/// Linear transaction cost `gamma` per unit traded plus a hard cap `max_pos`
/// on the absolute position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    gamma: f64,
    max_pos: f64,
}

impl CostModel {
    pub fn new(gamma: f64, max_pos: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::Domain {
                what: "gamma must be finite and > 0",
                value: gamma,
            });
        }
        if !max_pos.is_finite() || max_pos <= 0.0 {
            return Err(Error::Domain {
                what: "max_pos must be finite and > 0",
                value: max_pos,
            });
        }
        Ok(Self { gamma, max_pos })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn max_pos(&self) -> f64 {
        self.max_pos
    }
}

/// How a threshold estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    AnalyticContinuum,
    AnalyticLimitNaive,
    AnalyticLimitBrownian,
    AnalyticDiscrete,
    FixedPoint,
    Bellman,
    GridSearch,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::AnalyticContinuum => "analytic-continuum",
            Method::AnalyticLimitNaive => "analytic-limit-naive",
            Method::AnalyticLimitBrownian => "analytic-limit-brownian",
            Method::AnalyticDiscrete => "analytic-discrete",
            Method::FixedPoint => "fixed-point",
            Method::Bellman => "bellman",
            Method::GridSearch => "grid-search",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which asymptotic regime a parameter point sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Discrete,
    Continuum,
    Crossover,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Discrete => "discrete",
            Regime::Continuum => "continuum",
            Regime::Crossover => "crossover",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A threshold value together with how it was obtained and numeric
/// diagnostics (adimensional ratios, raw pre-clamp values, ...).
#[derive(Debug, Clone)]
pub struct ThresholdEstimate {
    pub q_star: f64,
    pub method: Method,
    pub regime: Regime,
    pub eta: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

/// The adimensional parameter `eta = gamma eps^{3/2} / beta` separating the
/// naive regime (`eta >> 1`) from the Brownian one (`eta << 1`).
pub fn eta(params: &OuParams, cost: &CostModel) -> f64 {
    cost.gamma() * params.epsilon().powf(1.5) / params.beta()
}

/// Default cut ratios for [`regime_classify`]: continuum when
/// `q*/beta >= 20`, discrete when `beta/gamma >= 10`.
pub const DEFAULT_REGIME_CUTS: (f64, f64) = (20.0, 10.0);

fn classify(q_cont: f64, params: &OuParams, cost: &CostModel, cuts: (f64, f64)) -> Regime {
    if q_cont / params.beta() >= cuts.0 {
        Regime::Continuum
    } else if params.beta() / cost.gamma() >= cuts.1 {
        Regime::Discrete
    } else {
        Regime::Crossover
    }
}

/// Continuum (drift-diffusion) threshold: `q* = (beta/sqrt(eps)) F^{-1}(eta)`.
///
/// The raw formula value is kept in `diagnostics["q_raw"]`; the returned
/// `q_star` is clamped into `[gamma*eps, gamma]`, the interval the threshold
/// provably lives in. The lower clamp is cosmetic (the formula already
/// respects it up to root-finder tolerance); the upper one matters when the
/// formula is extrapolated out of its validity region (`beta >~ gamma`,
/// where the raw value grows like `(gamma beta^2)^{1/3}` without bound).
pub fn threshold_continuum(params: &OuParams, cost: &CostModel) -> Result<ThresholdEstimate> {
    let tol = Tolerances::default();
    let eta_v = eta(params, cost);
    let x_star = big_f_inv(eta_v, &tol)?;
    let q_raw = params.beta() / params.epsilon().sqrt() * x_star;
    let lo = cost.gamma() * params.epsilon();
    let hi = cost.gamma();
    let q_star = q_raw.clamp(lo, hi);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("eta".to_string(), eta_v);
    diagnostics.insert("x_star".to_string(), x_star);
    diagnostics.insert("q_raw".to_string(), q_raw);
    diagnostics.insert("q_over_beta".to_string(), q_star / params.beta());
    diagnostics.insert(
        "clamped".to_string(),
        if q_star == q_raw { 0.0 } else { 1.0 },
    );
    Ok(ThresholdEstimate {
        q_star,
        method: Method::AnalyticContinuum,
        regime: classify(q_star, params, cost, DEFAULT_REGIME_CUTS),
        eta: eta_v,
        diagnostics,
    })
}

/// The four closed-form limits of the threshold, plus the diagnostics
/// `kappa = (3/2)^{1/3}` and `x_star = (2 - eps) gamma / beta` (the size, in
/// innovation units, of the jump needed to cross from one trigger to the
/// other in the discrete regime).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdLimits {
    /// Naive threshold `gamma * eps` (integrated predictability covers cost).
    pub naive: f64,
    /// Brownian-regime threshold `(3/2 gamma beta^2)^{1/3}`.
    pub brownian: f64,
    /// Discrete-regime threshold `gamma`.
    pub discrete: f64,
    /// Discrete threshold with its first systematic correction:
    /// `gamma - (1 - eps) sqrt(2/pi) gamma^2 / beta` (meaningful for
    /// `beta >> gamma`).
    pub discrete_corrected: f64,
    pub kappa: f64,
    pub x_star: f64,
}

impl ThresholdLimits {
    pub fn as_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("naive".to_string(), self.naive);
        m.insert("brownian".to_string(), self.brownian);
        m.insert("discrete".to_string(), self.discrete);
        m.insert("discrete_corrected".to_string(), self.discrete_corrected);
        m.insert("kappa".to_string(), self.kappa);
        m.insert("x_star".to_string(), self.x_star);
        m
    }
}

pub fn threshold_limits(params: &OuParams, cost: &CostModel) -> ThresholdLimits {
    let gamma = cost.gamma();
    let eps = params.epsilon();
    let beta = params.beta();
    ThresholdLimits {
        naive: gamma * eps,
        brownian: (1.5 * gamma * beta * beta).cbrt(),
        discrete: gamma,
        discrete_corrected: gamma
            - (1.0 - eps) * (2.0 / std::f64::consts::PI).sqrt() * gamma * gamma / beta,
        kappa: 1.5f64.cbrt(),
        x_star: (2.0 - eps) * gamma / beta,
    }
}

/// Classify a parameter point. `cuts = (continuum_min_ratio,
/// discrete_min_ratio)`; continuum validity is decided by `q*/beta`, not by
/// `beta/gamma`.
pub fn regime_classify(params: &OuParams, cost: &CostModel, cuts: (f64, f64)) -> Result<Regime> {
    let est = threshold_continuum(params, cost)?;
    Ok(classify(est.q_star, params, cost, cuts))
}

/// `ln of integral_0^x e^{a v^2} dv` for `x >= 0`, `a > 0`, overflow-free:
/// the integral equals `e^{a x^2} D(x sqrt(a)) / sqrt(a)`.
fn ln_grow_integral(x: f64, a: f64) -> f64 {
    let s = x * a.sqrt();
    a * x * x + dawson(s).ln() - 0.5 * a.ln()
}

/// `integral_0^p / integral_0^q` of `e^{a v^2}`, odd in `p`; equals `+-1`
/// exactly at `p = +-q`.
fn interval_ratio(p: f64, q: f64, a: f64) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    let r = (ln_grow_integral(p.abs(), a) - ln_grow_integral(q, a)).exp();
    r.copysign(p)
}

fn check_interval(p: f64, q: f64) -> Result<()> {
    if !q.is_finite() || q <= 0.0 {
        return Err(Error::Domain {
            what: "q must be finite and > 0",
            value: q,
        });
    }
    if !p.is_finite() || p.abs() > q {
        return Err(Error::Domain {
            what: "p must satisfy |p| <= q",
            value: p,
        });
    }
    Ok(())
}

/// Probability that the diffusion limit of the chain, started at `p` in
/// `[-q, q]`, exits at the lower boundary `-q` before the upper one.
pub fn hitting_prob_closed(p: f64, q: f64, params: &OuParams) -> Result<f64> {
    check_interval(p, q)?;
    let a = params.epsilon() / (params.beta() * params.beta());
    Ok(0.5 * (1.0 - interval_ratio(p, q, a)))
}

/// Expected time-integral of the predictor before first exit from `(-q, q)`,
/// started at `p`: `L(p) = (p - q R(p)) / eps` where `R` is the grow-integral
/// ratio. Vanishes at `p = 0` and at both boundaries.
pub fn expected_sum_closed(p: f64, q: f64, params: &OuParams) -> Result<f64> {
    check_interval(p, q)?;
    let a = params.epsilon() / (params.beta() * params.beta());
    Ok((p - q * interval_ratio(p, q, a)) / params.epsilon())
}

/// Max absolute residuals of the closed forms in their backward equations
/// `b^2/2 u'' - eps p u' = rhs` (`rhs = -p` for `L`, `0` for `P`), measured
/// by central differences on an `n_grid`-point interior grid and normalized
/// by `max(1, |p|)`. Returns `(max_residual_l, max_residual_p)`.
pub fn kolmogorov_residual(q: f64, params: &OuParams, n_grid: usize) -> Result<(f64, f64)> {
    if n_grid < 16 {
        return Err(Error::Domain {
            what: "n_grid must be >= 16",
            value: n_grid as f64,
        });
    }
    check_interval(0.0, q)?;
    let eps = params.epsilon();
    let half_b2 = 0.5 * params.beta() * params.beta();
    let h = 2.0 * q / (n_grid as f64 + 1.0);
    // u at p_k = -q + k h for k = 0 ..= n_grid + 1 (boundaries included).
    let mut l = Vec::with_capacity(n_grid + 2);
    let mut pr = Vec::with_capacity(n_grid + 2);
    for k in 0..=(n_grid + 1) {
        let p = (-q + k as f64 * h).clamp(-q, q);
        l.push(expected_sum_closed(p, q, params)?);
        pr.push(hitting_prob_closed(p, q, params)?);
    }
    let mut max_l = 0.0f64;
    let mut max_p = 0.0f64;
    for k in 1..=n_grid {
        let p = -q + k as f64 * h;
        let scale = 1.0f64.max(p.abs());
        let ode = |u: &[f64], rhs: f64| -> f64 {
            let d2 = (u[k + 1] - 2.0 * u[k] + u[k - 1]) / (h * h);
            let d1 = (u[k + 1] - u[k - 1]) / (2.0 * h);
            (half_b2 * d2 - eps * p * d1 - rhs).abs() / scale
        };
        max_l = max_l.max(ode(&l, -p));
        max_p = max_p.max(ode(&pr, 0.0));
    }
    Ok((max_l, max_p))
}

/// `L(q - u) / P(q - u)`: the expected path contribution per lower-exit.
/// At the optimal threshold this tends to `2 gamma` as `u -> 0`.
pub fn path_identity_ratio(q: f64, params: &OuParams, u: f64) -> Result<f64> {
    check_interval(0.0, q)?;
    if !(u > 0.0) || u > q / 10.0 {
        return Err(Error::Domain {
            what: "u must satisfy 0 < u <= q/10",
            value: u,
        });
    }
    let p = q - u;
    Ok(expected_sum_closed(p, q, params)? / hitting_prob_closed(p, q, params)?)
}

/// Root in `q` of `path_identity_ratio(q, u) = 2 gamma` on `[gamma eps,
/// gamma]`; an independent route to the continuum threshold, used for
/// cross-checks.
pub fn threshold_from_path_identity(
    params: &OuParams,
    cost: &CostModel,
    u_rel: f64,
    tol: &Tolerances,
) -> Result<f64> {
    let target = 2.0 * cost.gamma();
    let f = |q: f64| path_identity_ratio(q, params, q * u_rel).unwrap_or(f64::NAN);
    let lo = cost.gamma() * params.epsilon() * 0.5;
    let hi = cost.gamma() * 1.0001;
    brent(f, lo, hi, tol.rel_tol * target, target, tol.max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::OuParams;

    fn params(eps: f64, beta: f64) -> OuParams {
        OuParams::new(eps, beta).unwrap()
    }

    fn cost(gamma: f64) -> CostModel {
        CostModel::new(gamma, 1.0).unwrap()
    }

    #[test]
    fn cost_model_rejects_bad_inputs() {
        assert!(CostModel::new(0.0, 1.0).is_err());
        assert!(CostModel::new(-1.0, 1.0).is_err());
        assert!(CostModel::new(1.0, 0.0).is_err());
        assert!(CostModel::new(f64::NAN, 1.0).is_err());
        assert!(CostModel::new(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn continuum_threshold_crossover_value() {
        // eps = 0.001, beta = 0.002, gamma = 1: q* ~ 0.0184.
        let est = threshold_continuum(&params(0.001, 0.002), &cost(1.0)).unwrap();
        assert!(
            (est.q_star / 0.0184 - 1.0).abs() < 5e-3,
            "q* = {}",
            est.q_star
        );
        assert_eq!(est.regime, Regime::Crossover);
        assert!((est.eta - 1.0f64 * 0.001f64.powf(1.5) / 0.002).abs() < 1e-18);
    }

    #[test]
    fn continuum_threshold_continuum_value() {
        // eps = 0.001, beta = 1e-4, gamma = 1: q* ~ 0.00270, eta ~ 0.3162.
        let est = threshold_continuum(&params(0.001, 1e-4), &cost(1.0)).unwrap();
        assert!(
            (est.q_star / 0.00270 - 1.0).abs() < 2e-3,
            "q* = {}",
            est.q_star
        );
        assert!((est.eta / 0.31623 - 1.0).abs() < 1e-4);
        assert_eq!(est.regime, Regime::Continuum);
    }

    #[test]
    fn continuum_threshold_approaches_naive() {
        // Deep naive regime: beta = 1e-5 gives eta ~ 3.16, q* within 10% of
        // gamma eps.
        let est = threshold_continuum(&params(0.001, 1e-5), &cost(1.0)).unwrap();
        let naive = 1e-3;
        assert!((est.q_star / naive - 1.0).abs() < 0.10, "q* = {}", est.q_star);
        assert_eq!(est.regime, Regime::Continuum);
    }

    #[test]
    fn continuum_threshold_clamps_at_gamma() {
        // White noise with large beta: raw formula blows past gamma.
        let est = threshold_continuum(&params(1.0, 5.0), &cost(0.2)).unwrap();
        assert_eq!(est.q_star, 0.2);
        assert_eq!(est.diagnostics["clamped"], 1.0);
        assert!(est.diagnostics["q_raw"] > 0.2);
    }

    #[test]
    fn threshold_bounds_hold_on_lattice() {
        // gamma eps <= q* <= gamma, and monotone in beta and gamma.
        let eps = 0.001;
        let betas: Vec<f64> = (0..20)
            .map(|i| 1e-5 * 10f64.powf(i as f64 * 6.0 / 19.0))
            .collect();
        let gammas: Vec<f64> = (0..20)
            .map(|i| 1e-2 * 10f64.powf(i as f64 * 4.0 / 19.0))
            .collect();
        for &g in &gammas {
            let mut prev = 0.0;
            for &b in &betas {
                let est = threshold_continuum(&params(eps, b), &cost(g)).unwrap();
                assert!(est.q_star >= g * eps * (1.0 - 1e-9));
                assert!(est.q_star <= g * (1.0 + 1e-9));
                assert!(
                    est.q_star >= prev * (1.0 - 1e-12),
                    "not monotone in beta at gamma={g}, beta={b}"
                );
                prev = est.q_star;
            }
        }
        for &b in &betas {
            let mut prev = 0.0;
            for &g in &gammas {
                let est = threshold_continuum(&params(eps, b), &cost(g)).unwrap();
                assert!(
                    est.q_star >= prev * (1.0 - 1e-12),
                    "not monotone in gamma at gamma={g}, beta={b}"
                );
                prev = est.q_star;
            }
        }
    }

    #[test]
    fn limits_match_closed_forms() {
        let lim = threshold_limits(&params(0.001, 0.01), &cost(1.0));
        assert_eq!(lim.naive, 1e-3);
        assert!((lim.brownian - 0.05313).abs() < 5e-5);
        assert_eq!(lim.discrete, 1.0);
        assert!((lim.kappa - 1.1447).abs() < 1e-4);

        let lim50 = threshold_limits(&params(0.001, 50.0), &cost(1.0));
        assert!((lim50.discrete_corrected - 0.98405).abs() < 1e-4);
        assert!((lim50.x_star - (2.0 - 0.001) / 50.0).abs() < 1e-15);
    }

    #[test]
    fn regimes_classified_per_cuts() {
        let cuts = DEFAULT_REGIME_CUTS;
        let c = cost(1.0);
        assert_eq!(
            regime_classify(&params(0.001, 1e-5), &c, cuts).unwrap(),
            Regime::Continuum
        );
        assert_eq!(
            regime_classify(&params(0.001, 50.0), &c, cuts).unwrap(),
            Regime::Discrete
        );
        assert_eq!(
            regime_classify(&params(0.001, 0.002), &c, cuts).unwrap(),
            Regime::Crossover
        );
    }

    #[test]
    fn hitting_prob_boundaries_and_center_exact() {
        let pr = params(0.001, 1e-4);
        let q = 0.0027;
        assert_eq!(hitting_prob_closed(q, q, &pr).unwrap(), 0.0);
        assert_eq!(hitting_prob_closed(-q, q, &pr).unwrap(), 1.0);
        assert_eq!(hitting_prob_closed(0.0, q, &pr).unwrap(), 0.5);
        assert!(hitting_prob_closed(1.1 * q, q, &pr).is_err());
        assert!(hitting_prob_closed(0.0, -1.0, &pr).is_err());
    }

    #[test]
    fn hitting_prob_strictly_decreasing_in_p() {
        let pr = params(0.001, 1e-4);
        let q = 0.0027;
        let mut prev = f64::INFINITY;
        for k in 0..=200 {
            let p = -q + 2.0 * q * k as f64 / 200.0;
            let v = hitting_prob_closed(p, q, &pr).unwrap();
            assert!(v < prev, "not decreasing at p = {p}");
            assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn expected_sum_odd_and_zero_at_boundaries() {
        let pr = params(0.001, 1e-4);
        let q = 0.0027;
        assert_eq!(expected_sum_closed(q, q, &pr).unwrap(), 0.0);
        assert_eq!(expected_sum_closed(-q, q, &pr).unwrap(), 0.0);
        assert_eq!(expected_sum_closed(0.0, q, &pr).unwrap(), 0.0);
        for k in 1..50 {
            let p = q * k as f64 / 50.0;
            let plus = expected_sum_closed(p, q, &pr).unwrap();
            let minus = expected_sum_closed(-p, q, &pr).unwrap();
            assert_eq!(plus, -minus, "not odd at p = {p}");
            assert!(plus > 0.0);
        }
    }

    #[test]
    fn small_a_limits_match_gamblers_ruin() {
        // a = eps/beta^2 = 5e-5: the grow integral is nearly linear, so
        // P -> (q - p)/(2q) and L -> p (q^2 - p^2) / (3 beta^2).
        let pr = params(0.5, 100.0);
        let q = 1.0;
        let p = 0.5;
        let hit = hitting_prob_closed(p, q, &pr).unwrap();
        assert!((hit - 0.25).abs() < 1e-4, "hit = {hit}");
        let l = expected_sum_closed(p, q, &pr).unwrap();
        let expect = p * (q * q - p * p) / (3.0 * 100.0f64 * 100.0);
        assert!((l / expect - 1.0).abs() < 1e-3, "L = {l}, expect {expect}");
        // At p = q/2 the limit value is q^3/(8 beta^2).
        assert!((expect / (q.powi(3) / 8e4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_residual_small_and_second_order() {
        let pr = params(0.001, 1e-4);
        let q = 0.0027;
        let (l_fine, p_fine) = kolmogorov_residual(q, &pr, 10_000).unwrap();
        assert!(l_fine < 1e-5, "L residual {l_fine}");
        assert!(p_fine < 1e-5, "P residual {p_fine}");

        let (l1, p1) = kolmogorov_residual(q, &pr, 512).unwrap();
        let (l2, p2) = kolmogorov_residual(q, &pr, 1024).unwrap();
        let h1 = 2.0 * q / 513.0;
        let h2 = 2.0 * q / 1025.0;
        let rate_l = (l1 / l2).ln() / (h1 / h2).ln();
        let rate_p = (p1 / p2).ln() / (h1 / h2).ln();
        assert!((rate_l - 2.0).abs() < 0.1, "L rate {rate_l}");
        assert!((rate_p - 2.0).abs() < 0.1, "P rate {rate_p}");
    }

    #[test]
    fn kolmogorov_residual_rejects_small_grid() {
        assert!(kolmogorov_residual(0.01, &params(0.001, 1e-4), 8).is_err());
    }

    #[test]
    fn path_ratio_hits_two_gamma_at_brownian_optimum() {
        // Brownian regime: eps = 0.01, beta = 100, gamma = 1 (eta = 1e-5,
        // a q^2 ~ 6e-4). At q = (3/2 gamma beta^2)^{1/3} the ratio is 2 gamma.
        let pr = params(0.01, 100.0);
        let q = (1.5f64 * 1e4).cbrt();
        let ratio = path_identity_ratio(q, &pr, q * 1e-3).unwrap();
        assert!((ratio / 2.0 - 1.0).abs() < 5e-3, "ratio = {ratio}");
    }

    #[test]
    fn path_ratio_hits_two_gamma_at_continuum_threshold() {
        let pr = params(0.001, 1e-4);
        let c = cost(1.0);
        let q = threshold_continuum(&pr, &c).unwrap().q_star;
        let ratio = path_identity_ratio(q, &pr, q * 1e-3).unwrap();
        assert!((ratio / 2.0 - 1.0).abs() < 0.01, "ratio = {ratio}");
        // Halving u must not move the ratio to first order.
        let ratio2 = path_identity_ratio(q, &pr, q * 5e-4).unwrap();
        assert!((ratio2 / ratio - 1.0).abs() < 2e-3);
    }

    #[test]
    fn path_ratio_below_two_gamma_below_optimum() {
        let pr = params(0.001, 1e-4);
        let q = 0.5 * 1.0 * 0.001; // gamma eps / 2
        let ratio = path_identity_ratio(q, &pr, q * 1e-3).unwrap();
        assert!(ratio < 2.0, "ratio = {ratio}");
    }

    #[test]
    fn path_ratio_rejects_degenerate_u() {
        let pr = params(0.001, 1e-4);
        assert!(path_identity_ratio(0.002, &pr, 0.0).is_err());
        assert!(path_identity_ratio(0.002, &pr, 0.001).is_err());
        assert!(path_identity_ratio(0.002, &pr, -1e-6).is_err());
    }

    #[test]
    fn path_identity_root_matches_continuum_threshold() {
        let pr = params(0.001, 1e-4);
        let c = cost(1.0);
        let from_f = threshold_continuum(&pr, &c).unwrap().q_star;
        let from_ratio =
            threshold_from_path_identity(&pr, &c, 1e-3, &Tolerances::default()).unwrap();
        assert!(
            (from_ratio / from_f - 1.0).abs() < 0.01,
            "{from_ratio} vs {from_f}"
        );
    }

    #[test]
    fn seam_consistency_at_extremes() {
        // beta -> 0: threshold collapses to gamma eps.
        let est = threshold_continuum(&params(0.001, 1e-7), &cost(1.0)).unwrap();
        assert!((est.q_star / 1e-3 - 1.0).abs() < 0.01);
        // beta = gamma: threshold is order gamma.
        let est = threshold_continuum(&params(0.001, 1.0), &cost(1.0)).unwrap();
        assert!(est.q_star / 1.0 > 0.9 && est.q_star <= 1.0, "q* = {}", est.q_star);
    }
}
