//! Special functions and small numerics the solvers are built on: the Dawson
//! function and its relatives, the standard normal CDF/quantile, a bracketed
//! root finder, and quadrature helpers.
//!
//! The central object is `F(x) = x - dawson(x)`, strictly increasing on
//! `x >= 0`, with `F(x) ~ 2x^3/3` for small `x` and `F(x) ~ x` for large `x`.
//! The continuum threshold is `(beta / sqrt(epsilon)) * big_f_inv(eta)`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Convergence controls shared by the iterative routines.
///
/// `abs_tol` is an absolute residual floor, `rel_tol` scales with the target
/// value, and `max_iter` bounds every loop so no solver can hang.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tolerances {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl Tolerances {
    /// Residual tolerance appropriate for a target of magnitude `scale`.
    pub fn for_scale(&self, scale: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * scale.abs())
    }
}

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT_PI: f64 = 0.5641895835477562869480794515607726;
const SQRT_2PI: f64 = 2.5066282746310005024157652848110453;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// Standard normal CDF. Uses the complementary error function so both tails
/// keep full relative accuracy.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal upper tail `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Error function, accurate to a few ulp over the whole line.
///
/// Below 2 a confluent series with all-positive terms (no cancellation);
/// above 2 the scaled complement from the continued fraction.
pub fn erf(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax <= 2.0 {
        erf_series(ax)
    } else {
        1.0 - erfc_large(ax)
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// Complementary error function with full relative accuracy in the upper
/// tail (no `1 - erf` cancellation for large x).
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x <= 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_large(x)
    }
}

/// `erf` via `(2/sqrt(pi)) e^{-x^2} sum_n (2x^2)^n x / (2n+1)!!` — every term
/// positive, so no cancellation anywhere on [0, 2].
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let tx2 = 2.0 * x * x;
    for n in 1..200 {
        term *= tx2 / (2 * n + 1) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    2.0 * FRAC_1_SQRT_PI * (-x * x).exp() * sum
}

/// `erfc(x) = e^{-x^2} / (sqrt(pi) * (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))))`
/// — the Laplace continued fraction, evaluated with modified Lentz. Used for
/// x > 2 where it converges fast.
fn erfc_large(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for j in 1..200 {
        let a = 0.5 * j as f64;
        d = x + a * d;
        if d == 0.0 {
            d = TINY;
        }
        c = x + a / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    FRAC_1_SQRT_PI * (-x * x).exp() / f
}

/// Standard normal quantile (inverse CDF) for `u` in (0, 1).
///
/// Wichura's PPND16 rational approximation: relative error below 1e-15 over
/// the full open interval, and cheap enough to sit in the noise hot loop.
pub fn normal_quantile(u: f64) -> f64 {
    debug_assert!(u > 0.0 && u < 1.0, "quantile argument must be in (0,1)");
    let q = u - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        const A: [f64; 8] = [
            3.3871328727963666080e0,
            1.3314166789178437745e2,
            1.9715909503065514427e3,
            1.3731693765509461125e4,
            4.5921953931549871457e4,
            6.7265770927008700853e4,
            3.3430575583588128105e4,
            2.5090809287301226727e3,
        ];
        const B: [f64; 8] = [
            1.0,
            4.2313330701600911252e1,
            6.8718700749205790830e2,
            5.3941960214247511077e3,
            2.1213794301586595867e4,
            3.9307895800092710610e4,
            2.8729085735721942674e4,
            5.2264952788528545610e3,
        ];
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { u } else { 1.0 - u };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        const C: [f64; 8] = [
            1.42343711074968357734e0,
            4.63033784615654529590e0,
            5.76949722146069140550e0,
            3.64784832476320460504e0,
            1.27045825245236838258e0,
            2.41780725177450611770e-1,
            2.27238449892691845833e-2,
            7.74545014278341407640e-4,
        ];
        const D: [f64; 8] = [
            1.0,
            2.05319162663775882187e0,
            1.67638483018380384940e0,
            6.89767334985100004550e-1,
            1.48103976427480074590e-1,
            1.51986665636164571966e-2,
            5.47593808499534494600e-4,
            1.05075007164441684324e-9,
        ];
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        const E: [f64; 8] = [
            6.65790464350110377720e0,
            5.46378491116411436990e0,
            1.78482653991729133580e0,
            2.96560571828504891230e-1,
            2.65321895265761230930e-2,
            1.24266094738807843860e-3,
            2.71155556874348757815e-5,
            2.01033439929228813265e-7,
        ];
        const F: [f64; 8] = [
            1.0,
            5.99832206555887937690e-1,
            1.36929880922735805310e-1,
            1.48753612908506148525e-2,
            7.86869131145613259100e-4,
            1.84631831751005468180e-5,
            1.42151175831644588870e-7,
            2.04426310338993978564e-15,
        ];
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn poly(c: &[f64; 8], x: f64) -> f64 {
    // Horner, highest coefficient last in the tables above.
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Dawson's integral `D(x) = exp(-x^2) * integral_0^x exp(v^2) dv`.
///
/// Three regimes, each accurate to well under 1e-12 absolute on |x| <= 50:
/// a Maclaurin series for |x| <= 1, a sampling-theorem sum (step 0.2) for the
/// intermediate range, and a Stieltjes continued fraction for |x| >= 6.
/// The function is odd by construction: the sign is split off up front.
pub fn dawson(x: f64) -> f64 {
    let ax = x.abs();
    let d = if ax <= 1.0 {
        dawson_series(ax)
    } else if ax < 6.0 {
        dawson_sampling(ax)
    } else {
        dawson_contfrac(ax)
    };
    if x < 0.0 {
        -d
    } else {
        d
    }
}

/// Maclaurin series: `D(x) = sum_n (-2)^n x^(2n+1) / (2n+1)!!`.
pub(crate) fn dawson_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let m2x2 = -2.0 * x * x;
    for n in 1..100 {
        term *= m2x2 / (2 * n + 1) as f64;
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Rybicki's sampling-theorem evaluation with step `h = 0.2`:
/// `D(x) ~ (1/sqrt(pi)) * sum_{n odd} exp(-(x - n h)^2) / n`.
/// The sampling error is `exp(-(pi/2h)^2) ~ 2e-27`; the window below truncates
/// the tail at `exp(-42)`.
pub(crate) fn dawson_sampling(x: f64) -> f64 {
    const H: f64 = 0.2;
    let center = (x / H).round() as i64;
    let reach = 33; // |x - n h| <= ~6.5 => exp(-42) truncation
    let mut sum = 0.0;
    let mut n = center - reach;
    if n % 2 == 0 {
        n -= 1;
    }
    while n <= center + reach {
        if n != 0 {
            let d = x - n as f64 * H;
            sum += (-d * d).exp() / n as f64;
        }
        n += 2;
    }
    FRAC_1_SQRT_PI * sum
}

/// Stieltjes continued fraction
/// `D(x) = (1/2) / (x - (1/2)/(x - 1/(x - (3/2)/(x - ...))))`,
/// evaluated with the modified Lentz algorithm. Converges quickly for x >= 6.
pub(crate) fn dawson_contfrac(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = TINY;
    let mut c = f;
    let mut d = 0.0;
    for j in 1..200 {
        let a = if j == 1 { 0.5 } else { -0.5 * (j - 1) as f64 };
        d = x + a * d;
        if d == 0.0 {
            d = TINY;
        }
        c = x + a / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    f
}

/// `F(x) = x - dawson(x)`, strictly increasing on x >= 0.
///
/// For |x| <= 1 the leading `x` of the Dawson series is cancelled
/// analytically, so small arguments keep full relative accuracy instead of
/// losing it to subtraction.
pub fn big_f(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain {
            what: "big_f argument must be >= 0",
            value: x,
        });
    }
    if x <= 1.0 {
        // F(x) = -sum_{n>=1} (-2)^n x^(2n+1)/(2n+1)!! = 2x^3/3 - 4x^5/15 + ...
        let mut term = x;
        let mut sum = 0.0;
        let m2x2 = -2.0 * x * x;
        for n in 1..100 {
            term *= m2x2 / (2 * n + 1) as f64;
            sum -= term;
            if term.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        Ok(sum)
    } else {
        Ok(x - dawson(x))
    }
}

/// Inverse of [`big_f`] on x >= 0.
///
/// The bracket comes from the two asymptotic inverses — `(3y/2)^(1/3)` from
/// the cubic branch and `y + 1/(2y)` from the linear branch — expanded
/// geometrically if the function values do not yet straddle `y`, then handed
/// to the bracketed solver. Never a bare Newton iteration: `F'` vanishes at 0
/// and the bracket guarantees convergence.
pub fn big_f_inv(y: f64, tol: &Tolerances) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::Domain {
            what: "big_f_inv argument must be >= 0",
            value: y,
        });
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let cube = (1.5 * y).cbrt();
    let linear = y + 0.5 / y;
    // F(x) <= min(x, 2x^3/3) makes max(y, cube) a lower bound; pad both ends
    // and expand until the bracket is genuine.
    let mut lo = 0.95 * y.max(cube);
    let mut hi = 1.05 * cube.min(linear);
    let mut f_lo = big_f(lo)? - y;
    let mut f_hi = big_f(hi)? - y;
    let mut guard = 0;
    while f_lo > 0.0 && guard < 120 {
        lo *= 0.7;
        f_lo = big_f(lo)? - y;
        guard += 1;
    }
    while f_hi < 0.0 && guard < 240 {
        hi *= 1.5;
        f_hi = big_f(hi)? - y;
        guard += 1;
    }
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::Bracket {
            low: lo,
            high: hi,
            f_low: f_lo,
            f_high: f_hi,
        });
    }
    let f_tol = tol.for_scale(y);
    brent(|x| big_f(x).expect("x >= 0 inside bracket"), lo, hi, f_tol, y, tol.max_iter)
}

/// `H(x) = x * big_f_inv(1/x)` for x > 0.
///
/// `H -> 1` as x -> 0 and `H(x) ~ (3/2)^(1/3) x^(2/3)` as x -> infinity; it is
/// the threshold measured in units of `beta / sqrt(epsilon)` as a function of
/// `1/eta`.
pub fn h_func(x: f64, tol: &Tolerances) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain {
            what: "h_func argument must be > 0",
            value: x,
        });
    }
    Ok(x * big_f_inv(1.0 / x, tol)?)
}

/// Bracketed root finder: Brent's bisection/secant/inverse-quadratic hybrid.
///
/// Finds `x` in `[lo, hi]` with `f(x) = target`, given that
/// `f(lo) - target` and `f(hi) - target` have opposite signs. Stops when the
/// residual drops below `f_tol` or the bracket collapses to rounding width.
pub fn brent<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    f_tol: f64,
    target: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut a = lo;
    let mut b = hi;
    let mut fa = f(a) - target;
    let mut fb = f(b) - target;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracket {
            low: a,
            high: b,
            f_low: fa,
            f_high: fb,
        });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 1e-300;
        let xm = 0.5 * (c - b);
        if fb.abs() <= f_tol || xm.abs() <= tol1 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Secant / inverse quadratic step.
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 {
            d
        } else if xm > 0.0 {
            tol1
        } else {
            -tol1
        };
        fb = f(b) - target;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        low: b.min(c),
        high: b.max(c),
    })
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre polynomial (no tables to mistype).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrate `f` over `[a, b]` with composite Gauss-Legendre quadrature,
/// `panels` panels of `order` points each.
pub fn integrate_gl<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    order: usize,
    panels: usize,
) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let left = a + k as f64 * h;
        let mid = left + 0.5 * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(&weights) {
            acc += w * f(mid + half * x);
        }
        total += acc * half;
    }
    total
}

/// Adaptive Simpson quadrature with an absolute tolerance. The recursion is
/// depth-capped so an unattainable tolerance degrades accuracy instead of
/// hanging.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fb, fm, whole, tol.max(1e-300), 26)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (b - a).abs() < 1e-14 * (a.abs() + b.abs() + 1e-3) {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, fm, flm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, m, b, fm, fb, frm, right, 0.5 * tol, depth - 1)
    }
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against the standard
/// normal CDF. Sorts a copy; returns `D_n` (multiply by sqrt(n) to compare
/// with the asymptotic critical values, e.g. 1.628 at the 1% level).
pub fn ks_statistic_normal(samples: &[f64]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in KS samples"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let cdf = normal_cdf(*x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!(
            (a - b).abs() <= tol,
            "{what}: {a} vs {b} (diff {})",
            (a - b).abs()
        );
    }

    #[test]
    fn dawson_reference_values() {
        // Frozen from the quadrature oracle in tests/special_oracle.rs.
        assert_close(dawson(0.5), 0.4244363835020223, 1e-13, "D(0.5)");
        assert_close(dawson(1.0), 0.5380795069127684, 1e-13, "D(1)");
        assert_close(dawson(2.0), 0.3013403889237920, 1e-13, "D(2)");
        assert_close(dawson(5.0), 0.1021340744242768, 1e-13, "D(5)");
        assert_close(dawson(10.0), 0.05025384718759854, 1e-13, "D(10)");
    }

    #[test]
    fn dawson_is_exactly_odd() {
        for &x in &[0.3, 1.7, 4.2, 6.0, 25.0, 49.5] {
            assert_eq!(dawson(-x), -dawson(x), "oddness at {x}");
        }
        assert_eq!(dawson(0.0), 0.0);
    }

    #[test]
    fn dawson_methods_agree_at_seams() {
        // Method switch points: both evaluators must agree to < 1e-12.
        let seam1 = (dawson_series(1.0) - dawson_sampling(1.0)).abs();
        assert!(seam1 < 1e-12, "series vs sampling at 1: {seam1}");
        let seam6 = (dawson_sampling(6.0) - dawson_contfrac(6.0)).abs();
        assert!(seam6 < 1e-12, "sampling vs contfrac at 6: {seam6}");
        // And just off the seams the public function stays continuous.
        for &(a, b) in &[(1.0 - 1e-9, 1.0 + 1e-9), (6.0 - 1e-9, 6.0 + 1e-9)] {
            let gap = (dawson(a) - dawson(b)).abs();
            assert!(gap < 1e-9, "continuity near seam: {gap}");
        }
    }

    #[test]
    fn dawson_asymptotic_tail() {
        // D(x) ~ 1/(2x) + 1/(4x^3) + 3/(8x^5) + 15/(16x^7); the next term
        // is 105/(32 x^9), which sets the comparison tolerance.
        for &x in &[10.0f64, 20.0, 50.0] {
            let asym = 0.5 / x + 0.25 / (x * x * x) + 0.375 / x.powi(5) + 0.9375 / x.powi(7);
            assert_close(dawson(x), asym, 7.0 / x.powi(9), "tail");
        }
    }

    #[test]
    fn big_f_small_and_large_limits() {
        // F(x)/(2x^3/3) -> 1 for small x; F(x)/x -> 1 for large x.
        for &x in &[0.001, 0.01, 0.05, 0.1] {
            let ratio = big_f(x).unwrap() / (2.0 * x * x * x / 3.0);
            assert!((ratio - 1.0).abs() < 0.02, "cubic limit at {x}: {ratio}");
        }
        for &x in &[10.0, 20.0, 50.0] {
            let ratio = big_f(x).unwrap() / x;
            assert!((ratio - 1.0).abs() < 0.01, "linear limit at {x}: {ratio}");
        }
    }

    #[test]
    fn big_f_reference_values() {
        assert_close(big_f(1.0).unwrap(), 0.4619204930872316, 1e-13, "F(1)");
        assert_close(big_f(0.1).unwrap(), 6.640076021471391e-4, 1e-15, "F(0.1)");
    }

    #[test]
    fn big_f_rejects_negative() {
        assert!(matches!(big_f(-0.5), Err(Error::Domain { .. })));
        assert!(matches!(
            big_f_inv(-1.0, &Tolerances::default()),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn big_f_monotone_on_grid() {
        // Strictly increasing on 10^4 points over [0, 20].
        let mut prev = -1.0;
        for i in 0..10_000 {
            let x = 20.0 * i as f64 / 9_999.0;
            let v = big_f(x).unwrap();
            assert!(v > prev || (i == 0 && v == 0.0), "monotone at {x}");
            prev = v;
        }
    }

    #[test]
    fn big_f_inv_round_trip_log_sweep() {
        let tol = Tolerances::default();
        // Log sweep over y in [1e-6, 1e3]: |F(F^-1(y)) - y| <= 10 * tol.
        for i in 0..=90 {
            let y = 10f64.powf(-6.0 + 9.0 * i as f64 / 90.0);
            let x = big_f_inv(y, &tol).unwrap();
            let back = big_f(x).unwrap();
            let allowed = 10.0 * tol.for_scale(y);
            assert!(
                (back - y).abs() <= allowed,
                "round trip y={y}: back={back}, err={}",
                (back - y).abs()
            );
        }
    }

    #[test]
    fn big_f_inv_zero_is_zero() {
        assert_eq!(big_f_inv(0.0, &Tolerances::default()).unwrap(), 0.0);
    }

    #[test]
    fn h_func_limits_and_value() {
        let tol = Tolerances::default();
        // H(1/F(1)) = 1/F(1) * 1.0
        let x = 1.0 / 0.4619204930872316;
        assert_close(h_func(x, &tol).unwrap(), x, 1e-9, "H at 1/F(1)");
        // Small x: H -> 1.
        assert_close(h_func(1e-4, &tol).unwrap(), 1.0, 1e-6, "H small-x limit");
        // Large x: H / ((3/2)^(1/3) x^(2/3)) -> 1.
        let big = 1e6;
        let ratio = h_func(big, &tol).unwrap() / (1.5f64.cbrt() * big.powf(2.0 / 3.0));
        assert!((ratio - 1.0).abs() < 1e-3, "H large-x limit: {ratio}");
        assert!(matches!(h_func(0.0, &tol), Err(Error::Domain { .. })));
    }

    #[test]
    fn normal_quantile_matches_erfc_inverse() {
        // Cross-check two independent evaluations: the rational-approximation
        // quantile against the series/continued-fraction CDF: Phi(Phi^-1(u)) = u.
        for i in 1..200 {
            let u = i as f64 / 200.0;
            let z = normal_quantile(u);
            assert_close(normal_cdf(z), u, 2e-15, "round trip interior");
        }
        for &u in &[1e-12, 1e-9, 1e-6, 1e-3, 1.0 - 1e-3, 1.0 - 1e-9] {
            let z = normal_quantile(u);
            let back = if u < 0.5 { normal_cdf(z) } else { normal_sf(z) };
            let want = if u < 0.5 { u } else { 1.0 - u };
            assert!(
                (back - want).abs() <= 1e-13 * want.max(1e-300) + 1e-300,
                "tail round trip at {u}: {back}"
            );
        }
        assert_close(normal_quantile(0.975), 1.959963984540054, 1e-12, "z_0.975");
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn normal_cdf_identities() {
        for &z in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert_close(normal_cdf(z) + normal_sf(z), 1.0, 1e-14, "cdf + sf");
        }
        assert_close(normal_cdf(0.0), 0.5, 1e-16, "Phi(0)");
    }

    #[test]
    fn brent_finds_simple_roots() {
        let r = brent(|x| x * x, 0.5, 3.0, 1e-14, 2.0, 100).unwrap();
        assert_close(r, SQRT_2, 1e-7, "sqrt 2");
        let err = brent(|x| x, 1.0, 2.0, 1e-14, 0.0, 100).unwrap_err();
        assert!(matches!(err, Error::Bracket { .. }));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        // GL-n is exact for degree 2n-1.
        let (nodes, weights) = gauss_legendre(8);
        let int: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| w * x.powi(14))
            .sum();
        assert_close(int, 2.0 / 15.0, 1e-14, "x^14 over [-1,1]");
        let quarter = integrate_gl(|x| (1.0 - x * x).sqrt(), 0.0, 1.0, 16, 64);
        assert_close(quarter, std::f64::consts::PI / 4.0, 1e-6, "quarter circle");
    }

    #[test]
    fn adaptive_simpson_hits_tolerance() {
        let v = adaptive_simpson(&mut |x: f64| x.exp(), 0.0, 1.0, 1e-12);
        assert_close(v, std::f64::consts::E - 1.0, 1e-11, "int exp");
    }
}
