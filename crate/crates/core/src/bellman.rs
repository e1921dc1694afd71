//! Bellman solvers for the threshold problem.
//!
//! Two routes to `q*`:
//!
//! * [`finite_horizon_solve`] runs the backward recurrence for the value
//!   function. The value is exactly linear in the held position over
//!   `[-M, M]`, so it is carried as an (intercept, slope) pair per predictor
//!   node with no approximation in the position direction; the position grid
//!   exists purely to audit that no interior position ever beats the
//!   bang-bang candidates.
//! * [`stationary_g_solve`] solves the stationary self-consistency equation
//!   for the per-lot gain `g` on `[-q, q]` at candidate thresholds `q`, and
//!   finds the root of `g(q) = gamma` by a bracketed outer iteration. The
//!   inner linear system is folded onto the positive half-grid (`g` is odd),
//!   which removes the near-singular even modes of deep-continuum kernels.

use crate::analytic::{threshold_continuum, CostModel};
use crate::error::{Error, Result};
use crate::sde::{self, OuParams};
use crate::special::{brent, gauss_legendre, normal_cdf, normal_pdf, normal_sf, Tolerances};
use nalgebra::{DMatrix, DVector};
use std::sync::OnceLock;

/// How kernel integrals over tabulated functions are evaluated.
///
/// `PwlExact` integrates the Gaussian kernel against the piecewise-linear
/// interpolant in closed form (differences of the normal CDF and PDF at cell
/// edges), so its accuracy is set by the interpolant alone, not by how many
/// nodes fall under the kernel. The other two are conventional rules that
/// need the node spacing to resolve the kernel width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    Trapezoid,
    GaussLegendre,
    PwlExact,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::PwlExact
    }
}

/// Discretization of the predictor axis.
///
/// `p_max` is the half-span of the finite-horizon grid and must cover eight
/// stationary deviations of the target dynamics (validated at solve time;
/// the stationary solver builds its own nodes on `[-q, q]` and uses only
/// `n_points` and `quadrature`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    p_max: f64,
    n_points: usize,
    quadrature: Quadrature,
}

impl GridSpec {
    pub fn new(p_max: f64, n_points: usize, quadrature: Quadrature) -> Result<Self> {
        if !(p_max > 0.0) || !p_max.is_finite() {
            return Err(Error::Domain {
                what: "p_max must be finite and > 0",
                value: p_max,
            });
        }
        if n_points < 33 || n_points % 2 == 0 {
            return Err(Error::Domain {
                what: "n_points must be odd and >= 33",
                value: n_points as f64,
            });
        }
        Ok(Self {
            p_max,
            n_points,
            quadrature,
        })
    }

    /// Spec sized for [`finite_horizon_solve`]: span covering both the
    /// stationary law (8 sigma) and the threshold region, nodes every
    /// `beta/4` (clamped to [201, 4001] points).
    pub fn for_params(params: &OuParams, cost: &CostModel) -> Result<Self> {
        let q_est = threshold_continuum(params, cost)?.q_star;
        let p_max = (8.0 * sde::stationary_std(params)).max(2.5 * q_est);
        let raw = (8.0 * p_max / params.beta()).ceil() as usize;
        let n_points = (raw.clamp(201, 4001)) | 1;
        Self::new(p_max, n_points, Quadrature::PwlExact)
    }

    /// Spec sized for [`stationary_g_solve`]: ten nodes per `beta` across the
    /// half-interval `[0, q]` (clamped to [100, 2000] half-grid points).
    pub fn stationary_auto(params: &OuParams, cost: &CostModel) -> Result<Self> {
        let q_est = threshold_continuum(params, cost)?.q_star;
        let m = ((10.0 * q_est / params.beta()).ceil() as usize).clamp(100, 2000);
        Self::new(q_est.max(cost.gamma()), 2 * m + 1, Quadrature::PwlExact)
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }
}

/// A function tabulated on strictly increasing nodes, evaluated by linear
/// interpolation (clamped to the end values outside the span).
#[derive(Debug, Clone)]
pub struct GridFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != values.len() || nodes.len() < 2 {
            return Err(Error::Domain {
                what: "grid function needs equally many nodes and values (>= 2)",
                value: nodes.len() as f64,
            });
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain {
                what: "grid nodes must be strictly increasing",
                value: f64::NAN,
            });
        }
        Ok(Self { nodes, values })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return self.values[0];
        }
        if x >= self.nodes[n - 1] {
            return self.values[n - 1];
        }
        let j = self.nodes.partition_point(|&t| t < x).max(1);
        let (x0, x1) = (self.nodes[j - 1], self.nodes[j]);
        let t = (x - x0) / (x1 - x0);
        self.values[j - 1] + t * (self.values[j] - self.values[j - 1])
    }
}

/// Linear-interpolated root of `g(p) = gamma` for increasing `g`.
pub fn extract_threshold(g: &GridFunction, gamma: f64) -> Result<f64> {
    let v = g.values();
    let n = v.len();
    let idx = v.partition_point(|&x| x < gamma);
    if idx == 0 || idx == n {
        return Err(Error::Bracket {
            low: g.nodes()[0],
            high: g.nodes()[n - 1],
            f_low: v[0] - gamma,
            f_high: v[n - 1] - gamma,
        });
    }
    let (v0, v1) = (v[idx - 1], v[idx]);
    let (p0, p1) = (g.nodes()[idx - 1], g.nodes()[idx]);
    if v1 == v0 {
        return Ok(p1);
    }
    Ok(p0 + (gamma - v0) / (v1 - v0) * (p1 - p0))
}

/// The bang-bang policy: `+M` at `p >= q` (ties to `+M` by convention),
/// `-M` at `p <= -q`, hold otherwise.
pub fn policy(p: f64, prev_pos: f64, q: f64, max_pos: f64) -> Result<f64> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::Domain {
            what: "q must be finite and >= 0",
            value: q,
        });
    }
    if !(prev_pos.abs() <= max_pos) {
        return Err(Error::Domain {
            what: "|prev_pos| must not exceed max_pos",
            value: prev_pos,
        });
    }
    Ok(if p >= q {
        max_pos
    } else if p <= -q {
        -max_pos
    } else {
        prev_pos
    })
}

/// `n` (odd) nodes with exact mirror symmetry: `node[i] = -node[n-1-i]`,
/// `node[n/2] = 0`.
fn symmetric_nodes(half_span: f64, n: usize) -> Vec<f64> {
    debug_assert!(n % 2 == 1);
    let m = (n / 2) as isize;
    let h = half_span / m as f64;
    (0..n as isize).map(|i| (i - m) as f64 * h).collect()
}

/// One row of kernel weights: `w_j` approximating
/// `integral N(p'; mean, std) hat_j(p') dp'` over the grid span. With
/// `lump_tails`, the Gaussian mass beyond the span is assigned to the edge
/// nodes (constant extrapolation of the integrand); without it, that mass is
/// dropped (the stationary equation accounts for exits separately).
struct KernelRow {
    start: usize,
    w: Vec<f64>,
}

impl KernelRow {
    fn get(&self, j: usize) -> f64 {
        if j < self.start || j >= self.start + self.w.len() {
            0.0
        } else {
            self.w[j - self.start]
        }
    }

    fn dot(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (k, &w) in self.w.iter().enumerate() {
            acc += w * values[self.start + k];
        }
        acc
    }
}

fn gl4() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(4))
}

fn kernel_row(
    nodes: &[f64],
    mean: f64,
    std: f64,
    quadrature: Quadrature,
    lump_tails: bool,
) -> KernelRow {
    let n = nodes.len();
    // Mass beyond 10 standard deviations (< 8e-24) may be placed anywhere.
    let reach = 10.0 * std;
    let first = nodes
        .partition_point(|&x| x < mean - reach)
        .saturating_sub(1);
    let last = nodes.partition_point(|&x| x < mean + reach).min(n - 1);
    let z = |x: f64| (x - mean) / std;
    let mut w = vec![0.0; last - first + 1];
    match quadrature {
        Quadrature::PwlExact => {
            let mut cdf_l = normal_cdf(z(nodes[first]));
            let mut pdf_l = normal_pdf(z(nodes[first]));
            for j in first..last {
                let cdf_r = normal_cdf(z(nodes[j + 1]));
                let pdf_r = normal_pdf(z(nodes[j + 1]));
                let h = nodes[j + 1] - nodes[j];
                let i0 = cdf_r - cdf_l;
                // integral of p' N(p') over the cell
                let ip = mean * i0 + std * (pdf_l - pdf_r);
                let t = (ip - nodes[j] * i0) / h;
                w[j - first] += i0 - t;
                w[j + 1 - first] += t;
                cdf_l = cdf_r;
                pdf_l = pdf_r;
            }
        }
        Quadrature::Trapezoid => {
            for j in first..=last {
                let cell = match j {
                    0 => nodes[1] - nodes[0],
                    _ if j == n - 1 => nodes[n - 1] - nodes[n - 2],
                    _ => nodes[j + 1] - nodes[j - 1],
                };
                w[j - first] = 0.5 * cell * normal_pdf(z(nodes[j])) / std;
            }
        }
        Quadrature::GaussLegendre => {
            let (gx, gw) = gl4();
            for j in first..last {
                let h = nodes[j + 1] - nodes[j];
                let mid = 0.5 * (nodes[j] + nodes[j + 1]);
                for (&x_hat, &w_hat) in gx.iter().zip(gw) {
                    let x = mid + 0.5 * h * x_hat;
                    let dens = 0.5 * h * w_hat * normal_pdf(z(x)) / std;
                    let lam = (nodes[j + 1] - x) / h;
                    w[j - first] += dens * lam;
                    w[j + 1 - first] += dens * (1.0 - lam);
                }
            }
        }
    }
    if lump_tails {
        w[0] += normal_cdf(z(nodes[first]));
        w[last - first] += normal_sf(z(nodes[last]));
    }
    KernelRow { start: first, w }
}

/// The value function at one time, tabulated over (position node, predictor
/// node). The value is exactly linear in the position, so it is stored as an
/// intercept and a slope per predictor node.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    pos_nodes: Vec<f64>,
    p_nodes: Vec<f64>,
    intercept: Vec<f64>,
    slope: Vec<f64>,
}

impl ValueGrid {
    /// `V(pos_nodes[pos_idx], p_nodes[p_idx])`.
    pub fn value(&self, pos_idx: usize, p_idx: usize) -> f64 {
        self.intercept[p_idx] + self.slope[p_idx] * self.pos_nodes[pos_idx]
    }

    pub fn pos_nodes(&self) -> &[f64] {
        &self.pos_nodes
    }

    pub fn p_nodes(&self) -> &[f64] {
        &self.p_nodes
    }

    /// Per-node slope of the value in the position: `clamp(g, -gamma, gamma)`.
    pub fn slopes(&self) -> &[f64] {
        &self.slope
    }
}

/// Output of [`finite_horizon_solve`]; index 0 of every sequence is the
/// earliest time.
#[derive(Debug, Clone)]
pub struct BellmanSolution {
    pub thresholds: Vec<f64>,
    pub value_grids: Vec<ValueGrid>,
    pub g_grids: Vec<GridFunction>,
    /// Count of (time, p-node, prev-position) triples where some strictly
    /// interior position beat every bang-bang candidate by more than the tie
    /// tolerance `1e-12 * gamma * max_pos`.
    pub bang_bang_violations: usize,
    /// Largest margin by which any interior position ever beat the bang-bang
    /// candidates (negative or tiny positive means the structure held).
    pub max_interior_overshoot: f64,
}

/// Backward induction over `horizon` decision steps. The terminal condition
/// values a position held past the horizon at its integrated predictability,
/// which makes the last threshold the naive one, `gamma * eps`, exactly.
pub fn finite_horizon_solve(
    params: &OuParams,
    cost: &CostModel,
    horizon: usize,
    grid: &GridSpec,
    n_pos: usize,
) -> Result<BellmanSolution> {
    if horizon == 0 {
        return Err(Error::Domain {
            what: "horizon must be >= 1",
            value: 0.0,
        });
    }
    if n_pos < 3 {
        return Err(Error::Domain {
            what: "need at least 3 position nodes",
            value: n_pos as f64,
        });
    }
    let sigma = sde::stationary_std(params);
    if grid.p_max() < 8.0 * sigma {
        return Err(Error::Domain {
            what: "grid p_max must cover 8 stationary deviations",
            value: grid.p_max(),
        });
    }
    let gamma = cost.gamma();
    let m_pos = cost.max_pos();
    let eps = params.epsilon();
    let n = grid.n_points();
    let nodes = symmetric_nodes(grid.p_max(), n);
    let pos_nodes: Vec<f64> = (0..n_pos)
        .map(|l| -m_pos + 2.0 * m_pos * l as f64 / (n_pos - 1) as f64)
        .collect();
    let tie_tol = 1e-12 * gamma * m_pos;

    let rows: Vec<KernelRow> = nodes
        .iter()
        .map(|&p| kernel_row(&nodes, (1.0 - eps) * p, params.beta(), grid.quadrature(), true))
        .collect();

    // Terminal data: holding pi past the horizon is worth pi * p/eps.
    let mut slope: Vec<f64> = nodes.iter().map(|&p| p / eps).collect();
    let mut intercept = vec![0.0; n];

    let mut thresholds = Vec::with_capacity(horizon);
    let mut value_grids = Vec::with_capacity(horizon);
    let mut g_grids = Vec::with_capacity(horizon);
    let mut violations = 0usize;
    let mut max_overshoot = f64::NEG_INFINITY;

    for _ in 0..horizon {
        let mut geff = vec![0.0; n];
        let mut a_next = vec![0.0; n];
        let mut s_next = vec![0.0; n];
        for i in 0..n {
            let s_exp = rows[i].dot(&slope);
            let a_exp = rows[i].dot(&intercept);
            let g = nodes[i] + s_exp;
            geff[i] = g;
            if g > gamma {
                s_next[i] = gamma;
                a_next[i] = a_exp + (g - gamma) * m_pos;
            } else if g < -gamma {
                s_next[i] = -gamma;
                a_next[i] = a_exp - (g + gamma) * m_pos;
            } else {
                s_next[i] = g;
                a_next[i] = a_exp;
            }

            // Audit: over the full position grid, an interior node must never
            // strictly beat the three bang-bang candidates {-M, prev, +M}.
            for k in 0..pos_nodes.len() {
                let score =
                    |l: usize| g * pos_nodes[l] - gamma * (pos_nodes[l] - pos_nodes[k]).abs();
                let allowed = score(0).max(score(k)).max(score(pos_nodes.len() - 1));
                for (l, _) in pos_nodes.iter().enumerate() {
                    if l == 0 || l == pos_nodes.len() - 1 || l == k {
                        continue;
                    }
                    let over = score(l) - allowed;
                    if over > max_overshoot {
                        max_overshoot = over;
                    }
                    if over > tie_tol {
                        violations += 1;
                    }
                }
            }
        }

        let idx = geff.partition_point(|&g| g < gamma);
        if idx == 0 || idx == n {
            return Err(Error::Resolution {
                what: "threshold crossing g = gamma not bracketed by the grid",
            });
        }
        let (g0, g1) = (geff[idx - 1], geff[idx]);
        let q_t = if g1 == g0 {
            nodes[idx]
        } else {
            nodes[idx - 1] + (gamma - g0) / (g1 - g0) * (nodes[idx] - nodes[idx - 1])
        };
        thresholds.push(q_t);
        g_grids.push(GridFunction::new(nodes.clone(), geff)?);
        value_grids.push(ValueGrid {
            pos_nodes: pos_nodes.clone(),
            p_nodes: nodes.clone(),
            intercept: a_next.clone(),
            slope: s_next.clone(),
        });
        intercept = a_next;
        slope = s_next;
    }

    thresholds.reverse();
    value_grids.reverse();
    g_grids.reverse();
    Ok(BellmanSolution {
        thresholds,
        value_grids,
        g_grids,
        bang_bang_violations: violations,
        max_interior_overshoot: max_overshoot,
    })
}

/// Stationary per-lot gain `g` on `[-q*, q*]` and the self-consistent
/// threshold.
#[derive(Debug, Clone)]
pub struct SelfConsistentSolution {
    pub g: GridFunction,
    pub q_star: f64,
    /// Outer candidate evaluations (each one dense linear solve).
    pub iterations: usize,
    /// `|g(q*) - gamma|` at the returned root.
    pub residual: f64,
}

/// Solve `(I - K) g = b` on the positive half-grid of `[-q, q]` (odd
/// symmetry folded into the matrix) and return the node values of `g` on
/// `p_1 .. p_m = q`.
fn solve_g_at(
    q: f64,
    params: &OuParams,
    cost: &CostModel,
    m: usize,
    quadrature: Quadrature,
) -> Result<Vec<f64>> {
    let n = 2 * m + 1;
    let nodes = symmetric_nodes(q, n);
    let gamma = cost.gamma();
    let rows: Vec<KernelRow> = (1..=m)
        .map(|i| {
            kernel_row(
                &nodes,
                (1.0 - params.epsilon()) * nodes[m + i],
                params.beta(),
                quadrature,
                false,
            )
        })
        .collect();
    let a_mat = DMatrix::from_fn(m, m, |r, c| {
        let kd = if r == c { 1.0 } else { 0.0 };
        kd - (rows[r].get(m + c + 1) - rows[r].get(m - c - 1))
    });
    let b = DVector::from_fn(m, |r, _| {
        let tr = sde::transition(nodes[m + r + 1], params);
        nodes[m + r + 1] + gamma * (tr.prob_above(q) - tr.prob_below(-q))
    });
    let lu = a_mat.clone().lu();
    let g = lu.solve(&b).ok_or(Error::Divergence { residual: f64::INFINITY })?;
    let resid = (&a_mat * &g - &b).amax();
    let scale = b.amax().max(1.0);
    if !resid.is_finite() || resid > 1e-8 * scale {
        return Err(Error::Divergence { residual: resid });
    }
    Ok(g.iter().copied().collect())
}

/// Outer bracketed root-find of `g_q(q) = gamma` over `q` in
/// `[gamma eps / 2, gamma]`, with the inner stationary equation solved
/// directly at each candidate.
pub fn stationary_g_solve(
    params: &OuParams,
    cost: &CostModel,
    grid: &GridSpec,
    tol: &Tolerances,
) -> Result<SelfConsistentSolution> {
    let gamma = cost.gamma();
    let m = (grid.n_points() - 1) / 2;
    let quadrature = grid.quadrature();
    let evals = std::cell::Cell::new(0usize);
    let inner_err: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
    let w_of = |q: f64| -> f64 {
        evals.set(evals.get() + 1);
        match solve_g_at(q, params, cost, m, quadrature) {
            Ok(g) => g[m - 1] - gamma,
            Err(e) => {
                *inner_err.borrow_mut() = Some(e);
                f64::NAN
            }
        }
    };
    let lo = 0.5 * gamma * params.epsilon();
    let hi = gamma;
    // The bound g(p) >= p forces W(gamma) >= 0 up to discretization noise;
    // treat a nonpositive W(gamma) as the root sitting at the cap.
    let w_hi = w_of(hi);
    if let Some(e) = inner_err.borrow_mut().take() {
        return Err(e);
    }
    let q_star = if w_hi <= 0.0 {
        hi
    } else {
        let f_tol = (tol.abs_tol).max(tol.rel_tol * gamma);
        let root = brent(w_of, lo, hi, f_tol, 0.0, tol.max_iter);
        if let Some(e) = inner_err.borrow_mut().take() {
            return Err(e);
        }
        root?
    };

    let g_half = solve_g_at(q_star, params, cost, m, quadrature)?;
    evals.set(evals.get() + 1);
    let nodes = symmetric_nodes(q_star, 2 * m + 1);
    let mut values = Vec::with_capacity(2 * m + 1);
    for i in (0..m).rev() {
        values.push(-g_half[i]);
    }
    values.push(0.0);
    values.extend_from_slice(&g_half);
    let residual = (g_half[m - 1] - gamma).abs();
    for i in 0..m {
        if g_half[i] < nodes[m + i + 1] - 1e-9 * (gamma + q_star) {
            return Err(Error::Resolution {
                what: "stationary g dips below p; refine the grid",
            });
        }
    }
    let g = GridFunction::new(nodes, values)?;
    if g.values().windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Resolution {
            what: "stationary g not strictly increasing; refine the grid",
        });
    }
    Ok(SelfConsistentSolution {
        g,
        q_star,
        iterations: evals.get(),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{threshold_continuum, threshold_limits};

    fn params(eps: f64, beta: f64) -> OuParams {
        OuParams::new(eps, beta).unwrap()
    }

    fn cost(gamma: f64) -> CostModel {
        CostModel::new(gamma, 1.0).unwrap()
    }

    #[test]
    fn grid_spec_validates() {
        assert!(GridSpec::new(1.0, 33, Quadrature::PwlExact).is_ok());
        assert!(GridSpec::new(1.0, 32, Quadrature::PwlExact).is_err());
        assert!(GridSpec::new(1.0, 31, Quadrature::PwlExact).is_err());
        assert!(GridSpec::new(0.0, 33, Quadrature::PwlExact).is_err());
    }

    #[test]
    fn grid_function_interpolates_and_validates() {
        assert!(GridFunction::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(GridFunction::new(vec![0.0], vec![1.0]).is_err());
        let g = GridFunction::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 6.0]).unwrap();
        assert_eq!(g.eval(0.5), 1.0);
        assert_eq!(g.eval(1.5), 4.0);
        assert_eq!(g.eval(-3.0), 0.0);
        assert_eq!(g.eval(9.0), 6.0);
    }

    #[test]
    fn extract_threshold_identity_and_shift() {
        let nodes: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let ident = GridFunction::new(nodes.clone(), nodes.clone()).unwrap();
        let q = extract_threshold(&ident, 0.3).unwrap();
        assert!((q - 0.3).abs() < 1e-15);
        let shifted =
            GridFunction::new(nodes.clone(), nodes.iter().map(|v| v + 0.1).collect()).unwrap();
        assert!(extract_threshold(&shifted, 0.3).unwrap() < q);
        assert!(extract_threshold(&ident, 2.0).is_err());
    }

    #[test]
    fn policy_cases() {
        assert_eq!(policy(0.11, -1.0, 0.1, 1.0).unwrap(), 1.0);
        assert_eq!(policy(0.05, 0.7, 0.1, 1.0).unwrap(), 0.7);
        assert_eq!(policy(-0.1, 1.0, 0.1, 1.0).unwrap(), -1.0);
        assert_eq!(policy(0.1, -1.0, 0.1, 1.0).unwrap(), 1.0); // tie -> +M
        assert!(policy(0.0, 1.5, 0.1, 1.0).is_err());
        assert!(policy(0.0, 0.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn kernel_rows_sum_to_one_when_lumped() {
        let nodes = symmetric_nodes(1.0, 201);
        for quad in [Quadrature::PwlExact, Quadrature::Trapezoid, Quadrature::GaussLegendre] {
            for mean in [0.0, 0.3, -0.95] {
                let row = kernel_row(&nodes, mean, 0.05, quad, true);
                let total: f64 = row.w.iter().sum();
                // The conventional rules lose a half-cell of mass when the
                // kernel overlaps a grid edge; only PwlExact is exact there.
                let tol = match quad {
                    Quadrature::PwlExact => 1e-12,
                    _ if mean.abs() > 0.9 => 5e-3,
                    _ => 2e-4,
                };
                assert!(
                    (total - 1.0).abs() < tol,
                    "{quad:?} mean {mean}: total {total}"
                );
            }
        }
    }

    #[test]
    fn pwl_kernel_reproduces_gaussian_moments() {
        // Weights against node values of identity / square must reproduce the
        // Gaussian mean exactly and the second moment to interpolation error.
        let nodes = symmetric_nodes(1.0, 801);
        let row = kernel_row(&nodes, 0.2, 0.04, Quadrature::PwlExact, true);
        let mean: f64 = (0..row.w.len())
            .map(|k| row.w[k] * nodes[row.start + k])
            .sum();
        assert!((mean - 0.2).abs() < 1e-14, "mean {mean}");
        let m2: f64 = (0..row.w.len())
            .map(|k| row.w[k] * nodes[row.start + k].powi(2))
            .sum();
        let want = 0.04f64.powi(2) + 0.2f64.powi(2);
        // Piecewise-linear overshoot of p^2 is h^2/6 per cell.
        let h = nodes[1] - nodes[0];
        assert!((m2 - want - h * h / 6.0).abs() < 1e-9, "m2 {m2} want {want}");
    }

    #[test]
    fn horizon_one_threshold_is_naive() {
        let pr = params(0.1, 0.5);
        let c = cost(0.3);
        let grid = GridSpec::for_params(&pr, &c).unwrap();
        let sol = finite_horizon_solve(&pr, &c, 1, &grid, 11).unwrap();
        assert_eq!(sol.thresholds.len(), 1);
        let naive = 0.3 * 0.1;
        assert!(
            (sol.thresholds[0] - naive).abs() < 1e-12 * naive.max(1.0),
            "q_T = {}",
            sol.thresholds[0]
        );
    }

    #[test]
    fn white_noise_thresholds_are_gamma() {
        let pr = params(1.0, 1.0);
        let c = cost(0.2);
        let grid = GridSpec::for_params(&pr, &c).unwrap();
        let sol = finite_horizon_solve(&pr, &c, 6, &grid, 11).unwrap();
        for (t, q) in sol.thresholds.iter().enumerate() {
            assert!((q - 0.2).abs() < 1e-12, "q_{t} = {q}");
        }
        // g(t, p) = p exactly for white noise.
        let g0 = &sol.g_grids[0];
        for (i, &p) in g0.nodes().iter().enumerate() {
            assert!((g0.values()[i] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn bang_bang_structure_emerges() {
        for (eps, beta, gamma) in [(1.0, 1.0, 0.2), (0.1, 0.2, 1.0), (0.05, 0.01, 1.0)] {
            let pr = params(eps, beta);
            let c = cost(gamma);
            let grid = GridSpec::new(
                (8.0 * sde::stationary_std(&pr)).max(2.5 * gamma),
                201,
                Quadrature::PwlExact,
            )
            .unwrap();
            let sol = finite_horizon_solve(&pr, &c, 40, &grid, 11).unwrap();
            assert_eq!(
                sol.bang_bang_violations, 0,
                "eps={eps} beta={beta}: overshoot {}",
                sol.max_interior_overshoot
            );
        }
    }

    #[test]
    fn value_symmetry_under_joint_negation() {
        let pr = params(0.1, 0.2);
        let c = cost(0.5);
        let grid = GridSpec::for_params(&pr, &c).unwrap();
        let sol = finite_horizon_solve(&pr, &c, 30, &grid, 11).unwrap();
        let vg = &sol.value_grids[0];
        let (np, npos) = (vg.p_nodes().len(), vg.pos_nodes().len());
        let scale = vg.value(npos - 1, np - 1).abs().max(1.0);
        for l in 0..npos {
            for i in (0..np).step_by(7) {
                let v = vg.value(l, i);
                let v_neg = vg.value(npos - 1 - l, np - 1 - i);
                assert!(
                    (v - v_neg).abs() < 1e-10 * scale,
                    "V({l},{i}) = {v} vs {v_neg}"
                );
            }
        }
    }

    #[test]
    fn g_bounds_hold_on_all_slices() {
        let pr = params(0.1, 0.2);
        let c = cost(0.5);
        let grid = GridSpec::for_params(&pr, &c).unwrap();
        let horizon = 30;
        let sol = finite_horizon_solve(&pr, &c, horizon, &grid, 11).unwrap();
        for (t, g) in sol.g_grids.iter().enumerate() {
            for (i, &p) in g.nodes().iter().enumerate() {
                if p < 0.0 {
                    continue;
                }
                let v = g.values()[i];
                assert!(v >= p - 1e-12, "t={t}: g({p}) = {v} < p");
                // The terminal slice is the naive valuation p/eps, which is
                // allowed to exceed the stationary bound gamma + p.
                if t + 1 < horizon {
                    assert!(v <= 0.5 + p + 1e-12, "t={t}: g({p}) = {v} > gamma + p");
                }
            }
            // Strictly increasing with a zero at the center node.
            assert!(g.values().windows(2).all(|w| w[0] < w[1]));
            let mid = g.nodes().len() / 2;
            assert!(g.values()[mid].abs() < 1e-14);
        }
        for q in &sol.thresholds {
            assert!(*q >= 0.0 && *q <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn threshold_sequence_converges_with_horizon() {
        let pr = params(0.1, 0.2);
        let c = cost(0.5);
        let grid = GridSpec::for_params(&pr, &c).unwrap();
        let sol = finite_horizon_solve(&pr, &c, 500, &grid, 5).unwrap();
        let spacing = 2.0 * grid.p_max() / (grid.n_points() - 1) as f64;
        assert!(
            (sol.thresholds[0] - sol.thresholds[1]).abs() < spacing,
            "q0 = {}, q1 = {}",
            sol.thresholds[0],
            sol.thresholds[1]
        );
    }

    #[test]
    fn stationary_white_noise_is_exact() {
        let pr = params(1.0, 1.0);
        let c = cost(0.2);
        let grid = GridSpec::stationary_auto(&pr, &c).unwrap();
        let sol = stationary_g_solve(&pr, &c, &grid, &Tolerances::default()).unwrap();
        assert!((sol.q_star - 0.2).abs() < 1e-9, "q* = {}", sol.q_star);
        // g(p) = p on all nodes.
        for (i, &p) in sol.g.nodes().iter().enumerate() {
            assert!((sol.g.values()[i] - p).abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_matches_continuum_formula_deep() {
        let pr = params(0.001, 1e-4);
        let c = cost(1.0);
        let grid = GridSpec::stationary_auto(&pr, &c).unwrap();
        let sol = stationary_g_solve(&pr, &c, &grid, &Tolerances::default()).unwrap();
        let formula = threshold_continuum(&pr, &c).unwrap().q_star;
        assert!(
            (sol.q_star / formula - 1.0).abs() < 0.05,
            "fixed point {} vs formula {formula}",
            sol.q_star
        );
        assert!(sol.residual < 1e-6);
    }

    #[test]
    fn stationary_matches_discrete_correction() {
        let pr = params(0.001, 50.0);
        let c = cost(1.0);
        let grid = GridSpec::stationary_auto(&pr, &c).unwrap();
        let sol = stationary_g_solve(&pr, &c, &grid, &Tolerances::default()).unwrap();
        let corrected = threshold_limits(&pr, &c).discrete_corrected;
        assert!(
            (sol.q_star / corrected - 1.0).abs() < 0.10,
            "fixed point {} vs corrected {corrected}",
            sol.q_star
        );
    }

    #[test]
    fn stationary_agrees_with_long_horizon_bellman() {
        let pr = params(0.1, 0.2);
        let c = cost(1.0);
        let sgrid = GridSpec::stationary_auto(&pr, &c).unwrap();
        let stat = stationary_g_solve(&pr, &c, &sgrid, &Tolerances::default()).unwrap();
        let bgrid = GridSpec::for_params(&pr, &c).unwrap();
        let bell = finite_horizon_solve(&pr, &c, 500, &bgrid, 5).unwrap();
        let spacing = 2.0 * bgrid.p_max() / (bgrid.n_points() - 1) as f64;
        assert!(
            (stat.q_star - bell.thresholds[0]).abs() < 2.0 * spacing,
            "stationary {} vs bellman {}",
            stat.q_star,
            bell.thresholds[0]
        );
    }

    #[test]
    fn quadrature_variants_agree_when_resolved() {
        let pr = params(0.3, 0.3);
        let c = cost(1.0);
        let mut qs = Vec::new();
        for quad in [Quadrature::PwlExact, Quadrature::Trapezoid, Quadrature::GaussLegendre] {
            let grid = GridSpec::new(1.0, 801, quad).unwrap();
            qs.push(
                stationary_g_solve(&pr, &c, &grid, &Tolerances::default())
                    .unwrap()
                    .q_star,
            );
        }
        assert!((qs[1] / qs[0] - 1.0).abs() < 1e-3, "{qs:?}");
        assert!((qs[2] / qs[0] - 1.0).abs() < 1e-3, "{qs:?}");
    }

    #[test]
    fn refinement_settles() {
        let pr = params(0.01, 0.002);
        let c = cost(1.0);
        let mut qs = Vec::new();
        for m in [150usize, 300, 600] {
            let grid = GridSpec::new(1.0, 2 * m + 1, Quadrature::PwlExact).unwrap();
            qs.push(
                stationary_g_solve(&pr, &c, &grid, &Tolerances::default())
                    .unwrap()
                    .q_star,
            );
        }
        let d1 = (qs[1] - qs[0]).abs();
        let d2 = (qs[2] - qs[1]).abs();
        assert!(
            d2 < 4.0 * d1.max(1e-12 * qs[0]),
            "refinement not settling: {qs:?}"
        );
    }
}
