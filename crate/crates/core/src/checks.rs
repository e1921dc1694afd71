//! Runtime invariant battery behind the `verify` command. Every check
//! re-derives a property from scratch and reports observed vs expected, so a
//! fresh build can prove the numerics hold on the machine it runs on.

use crate::analytic::{
    kolmogorov_residual, threshold_continuum, threshold_from_path_identity, CostModel,
};
use crate::backtest::{grid_search, run_threshold_strategy, Objective, SearchConfig};
use crate::bellman::{finite_horizon_solve, stationary_g_solve, GridSpec, Quadrature};
use crate::sde::{self, simulate_path, OuParams, StartState};
use crate::special::{big_f, big_f_inv, ks_statistic_normal, Tolerances};
use serde::Serialize;
use std::time::Instant;

/// Outcome of one named invariant check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// The measured quantity (an error, a violation count, a statistic).
    pub observed: f64,
    /// The bound `observed` must stay below (or the exact target).
    pub expected: f64,
    pub detail: String,
    pub millis: f64,
}

fn run_check(
    name: &'static str,
    body: impl FnOnce() -> (bool, f64, f64, String),
) -> CheckResult {
    let t0 = Instant::now();
    let (passed, observed, expected, detail) = body();
    CheckResult {
        name,
        passed,
        observed,
        expected,
        detail,
        millis: t0.elapsed().as_secs_f64() * 1e3,
    }
}

/// Run the full battery. `inject_fault` tightens exactly one tolerance (the
/// special-function round-trip bound) far beyond what the implementation
/// attains, so a faulted run must report exactly one failure — a sanity
/// check that the harness can actually fail.
pub fn run_all(inject_fault: bool) -> Vec<CheckResult> {
    let tol = Tolerances::default();
    let mut out = Vec::new();

    out.push(run_check("special-inverse-roundtrip", || {
        // Worst |F(F^-1(y)) - y| measured in units of its allowance
        // 10 * max(abs_tol, rel_tol * y).
        let mut worst = 0.0f64;
        let mut y = 1e-6;
        while y <= 1e3 {
            let x = big_f_inv(y, &tol).unwrap();
            let back = big_f(x).unwrap();
            worst = worst.max((back - y).abs() / (10.0 * tol.for_scale(y)));
            y *= 1.45;
        }
        let bound = if inject_fault { 1e-6 } else { 1.0 };
        (
            worst < bound,
            worst,
            bound,
            format!("worst round-trip error at {worst:.3e} of its allowance over y in [1e-6, 1e3]"),
        )
    }));

    out.push(run_check("special-f-monotone", || {
        let mut violations = 0u32;
        let mut last = f64::NEG_INFINITY;
        for i in 0..=10_000 {
            let x = 20.0 * i as f64 / 10_000.0;
            let f = big_f(x).unwrap();
            if f <= last && i > 0 {
                violations += 1;
            }
            last = f;
        }
        (
            violations == 0,
            violations as f64,
            0.0,
            format!("{violations} monotonicity violations of F on [0, 20]"),
        )
    }));

    out.push(run_check("special-f-asymptotics", || {
        let mut worst = 0.0f64;
        for i in 0..=50 {
            let x = 10.0 + 2.0 * i as f64;
            worst = worst.max(((big_f(x).unwrap() / x - 1.0).abs() / 0.01) as f64);
        }
        for i in 1..=50 {
            let x = 0.1 * i as f64 / 50.0;
            let cubic = 2.0 * x * x * x / 3.0;
            worst = worst.max((big_f(x).unwrap() / cubic - 1.0).abs() / 0.02);
        }
        (
            worst < 1.0,
            worst,
            1.0,
            format!("worst asymptotic deviation at {worst:.3} of its allowance"),
        )
    }));

    out.push(run_check("sde-stationary-law", || {
        let params = OuParams::new(0.05, 0.3).unwrap();
        let n = 40_000;
        let path = simulate_path(&params, n, 424_242, StartState::Stationary).unwrap();
        let sd = sde::stationary_std(&params);
        // Thin to roughly independent samples before the KS test.
        let stride = (2.0 / params.epsilon()) as usize;
        let sample: Vec<f64> = path.values.iter().step_by(stride).map(|v| v / sd).collect();
        let ks = ks_statistic_normal(&sample);
        let bound = 1.63 / (sample.len() as f64).sqrt();
        (
            ks < bound,
            ks,
            bound,
            format!("KS statistic {ks:.4} vs 1% critical value {bound:.4} ({} thinned samples)", sample.len()),
        )
    }));

    out.push(run_check("sde-determinism", || {
        let params = OuParams::new(0.01, 0.1).unwrap();
        let a = simulate_path(&params, 10_000, 7, StartState::Stationary).unwrap();
        let b = simulate_path(&params, 10_000, 7, StartState::Stationary).unwrap();
        let diff = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        (
            diff == 0.0,
            diff,
            0.0,
            format!("max |difference| between same-seed paths {diff:e}"),
        )
    }));

    out.push(run_check("analytic-threshold-bounds", || {
        let mut violations = 0u32;
        let mut cases = 0u32;
        for i in 0..20 {
            let eps = 10f64.powf(-3.0 + 3.0 * i as f64 / 19.0);
            for j in 0..20 {
                let beta = 10f64.powf(-4.0 + 5.0 * j as f64 / 19.0);
                let params = OuParams::new(eps, beta).unwrap();
                let cost = CostModel::new(1.0, 1.0).unwrap();
                let q = threshold_continuum(&params, &cost).unwrap().q_star;
                cases += 1;
                if !(q >= eps - 1e-12 && q <= 1.0 + 1e-12) {
                    violations += 1;
                }
            }
        }
        (
            violations == 0,
            violations as f64,
            0.0,
            format!("{violations} of {cases} lattice points broke gamma*eps <= q* <= gamma"),
        )
    }));

    out.push(run_check("analytic-threshold-monotone", || {
        let mut violations = 0u32;
        for i in 0..10 {
            let eps = 10f64.powf(-3.0 + 3.0 * i as f64 / 9.0);
            for j in 0..10 {
                let beta = 10f64.powf(-4.0 + 5.0 * j as f64 / 9.0);
                let params = OuParams::new(eps, beta).unwrap();
                let q1 = threshold_continuum(&params, &CostModel::new(1.0, 1.0).unwrap())
                    .unwrap()
                    .q_star;
                let q2 = threshold_continuum(&params, &CostModel::new(2.0, 1.0).unwrap())
                    .unwrap()
                    .q_star;
                if q2 < q1 {
                    violations += 1;
                }
            }
        }
        (
            violations == 0,
            violations as f64,
            0.0,
            format!("{violations} lattice points where q* fell as gamma rose"),
        )
    }));

    out.push(run_check("analytic-kolmogorov-residual", || {
        let params = OuParams::new(0.001, 1e-4).unwrap();
        let (rl, rp) = kolmogorov_residual(0.0027, &params, 256).unwrap();
        let worst = rl.max(rp);
        (
            worst < 1e-5,
            worst,
            1e-5,
            format!("max backward-equation residual {worst:.3e} (L {rl:.3e}, P {rp:.3e})"),
        )
    }));

    out.push(run_check("analytic-path-identity", || {
        let params = OuParams::new(0.001, 1e-4).unwrap();
        let cost = CostModel::new(1.0, 1.0).unwrap();
        let q_formula = threshold_continuum(&params, &cost).unwrap().q_star;
        let q_identity =
            threshold_from_path_identity(&params, &cost, 1e-4, &Tolerances::default()).unwrap();
        let err = (q_identity / q_formula - 1.0).abs();
        // The identity is evaluated a relative 1e-4 inside the boundary,
        // which biases the root linearly in that offset.
        (
            err < 1e-3,
            err,
            1e-3,
            format!("threshold via path identity {q_identity:.6e} vs formula {q_formula:.6e}"),
        )
    }));

    out.push(run_check("bellman-bang-bang", || {
        let params = OuParams::new(0.1, 0.2).unwrap();
        let cost = CostModel::new(0.5, 1.0).unwrap();
        let grid = GridSpec::for_params(&params, &cost).unwrap();
        let sol = finite_horizon_solve(&params, &cost, 60, &grid, 11).unwrap();
        (
            sol.bang_bang_violations == 0,
            sol.bang_bang_violations as f64,
            0.0,
            format!(
                "{} interior-position wins (worst overshoot {:.2e})",
                sol.bang_bang_violations, sol.max_interior_overshoot
            ),
        )
    }));

    out.push(run_check("bellman-stationary-agreement", || {
        let params = OuParams::new(0.1, 0.2).unwrap();
        let cost = CostModel::new(0.5, 1.0).unwrap();
        let sgrid = GridSpec::stationary_auto(&params, &cost).unwrap();
        let stat = stationary_g_solve(&params, &cost, &sgrid, &Tolerances::default()).unwrap();
        let bgrid = GridSpec::for_params(&params, &cost).unwrap();
        let bell = finite_horizon_solve(&params, &cost, 400, &bgrid, 5).unwrap();
        let spacing = 2.0 * bgrid.p_max() / (bgrid.n_points() - 1) as f64;
        let diff = (stat.q_star - bell.thresholds[0]).abs();
        (
            diff < 2.0 * spacing,
            diff,
            2.0 * spacing,
            format!(
                "stationary q* {:.6e} vs long-horizon q_0 {:.6e} (allow 2 spacings {:.2e})",
                stat.q_star, bell.thresholds[0], 2.0 * spacing
            ),
        )
    }));

    out.push(run_check("bellman-white-noise-exact", || {
        let params = OuParams::new(1.0, 1.0).unwrap();
        let cost = CostModel::new(0.2, 1.0).unwrap();
        let grid = GridSpec::stationary_auto(&params, &cost).unwrap();
        let sol = stationary_g_solve(&params, &cost, &grid, &Tolerances::default()).unwrap();
        let err = (sol.q_star - 0.2).abs();
        (
            err < 1e-9,
            err,
            1e-9,
            format!("white-noise fixed point q* {:.12e} vs gamma", sol.q_star),
        )
    }));

    out.push(run_check("backtest-accounting", || {
        let params = OuParams::new(0.05, 0.3).unwrap();
        let path = simulate_path(&params, 20_000, 99, StartState::Stationary).unwrap();
        let cost = CostModel::new(0.4, 1.0).unwrap();
        let r = run_threshold_strategy(&path, 0.2, &cost).unwrap();
        let drift = (r.net - (r.gross_gain - r.cost_paid - r.risk_penalty)).abs();
        (
            drift == 0.0,
            drift,
            0.0,
            format!("identity drift {drift:e} over {} steps", r.steps),
        )
    }));

    out.push(run_check("backtest-crn-reproducibility", || {
        let params = OuParams::new(0.1, 0.3).unwrap();
        let cost = CostModel::new(0.5, 1.0).unwrap();
        let search = SearchConfig {
            n_candidates: 7,
            rounds: 2,
            shrink: 0.4,
            initial_range: (0.05, 0.6),
        };
        let run = || {
            grid_search(&params, Objective::Threshold(cost), &search, 20_000, 2, 5)
                .unwrap()
                .0
                .q_star
        };
        let (a, b) = (run(), run());
        (
            a == b,
            (a - b).abs(),
            0.0,
            format!("same-seed grid searches returned {a:.6e} and {b:.6e}"),
        )
    }));

    out.push(run_check("bellman-quadrature-agreement", || {
        let params = OuParams::new(0.3, 0.3).unwrap();
        let cost = CostModel::new(1.0, 1.0).unwrap();
        let mut qs = Vec::new();
        for quad in [Quadrature::PwlExact, Quadrature::Trapezoid] {
            let grid = GridSpec::new(1.0, 801, quad).unwrap();
            qs.push(
                stationary_g_solve(&params, &cost, &grid, &Tolerances::default())
                    .unwrap()
                    .q_star,
            );
        }
        let err = (qs[1] / qs[0] - 1.0).abs();
        (
            err < 1e-3,
            err,
            1e-3,
            format!("exact vs trapezoid fixed point differ by {err:.2e} relative"),
        )
    }));

    out
}
