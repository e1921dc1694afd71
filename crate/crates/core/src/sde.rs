//! The predictor process: a discrete Ornstein-Uhlenbeck chain
//! `p_{k+1} = p_k - epsilon * p_k + beta * xi_k` with unit-variance Gaussian
//! innovations, plus the deterministic noise source that drives every
//! simulation in the crate.
//!
//! Noise is counter-based: draw `k` of stream `s` under master seed `seed` is
//! a pure function of `(seed, s, k)` (a ChaCha8 block cipher position plus an
//! inverse-CDF transform), so paths are bit-reproducible no matter how work
//! is chunked or parallelised.

use crate::error::{Error, Result};
use crate::special::{normal_cdf, normal_pdf, normal_quantile, normal_sf};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Parameters of the predictor chain. `epsilon` is the mean-reversion rate in
/// (0, 1] (1 = white noise); `beta` is the innovation scale, > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    epsilon: f64,
    beta: f64,
}

impl OuParams {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Domain {
                what: "epsilon must be in (0, 1]",
                value: epsilon,
            });
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain {
                what: "beta must be positive and finite",
                value: beta,
            });
        }
        Ok(Self { epsilon, beta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// One transition of the chain.
pub fn step(p: f64, xi: f64, params: &OuParams) -> f64 {
    p - params.epsilon * p + params.beta * xi
}

/// Standard deviation of the stationary law: `beta / sqrt(2 eps - eps^2)`.
pub fn stationary_std(params: &OuParams) -> f64 {
    params.beta / (params.epsilon * (2.0 - params.epsilon)).sqrt()
}

/// Expected sum of all future predictor values given the current one:
/// `sum_k (1 - eps)^k p = p / eps`, exactly.
pub fn integrated_predictability(p: f64, params: &OuParams) -> f64 {
    p / params.epsilon
}

/// Number of burn-in steps after which a path started at 0 is statistically
/// indistinguishable from a stationary start (10 relaxation times).
pub fn burn_in_steps(params: &OuParams) -> usize {
    (10.0 / params.epsilon).ceil() as usize
}

/// One-step conditional law of the chain: Gaussian with mean `(1 - eps) p`
/// and standard deviation `beta`.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub mean: f64,
    pub std: f64,
}

impl Transition {
    /// `P(p' > q)` under this transition.
    pub fn prob_above(&self, q: f64) -> f64 {
        normal_sf((q - self.mean) / self.std)
    }

    /// `P(p' < q)` under this transition.
    pub fn prob_below(&self, q: f64) -> f64 {
        normal_cdf((q - self.mean) / self.std)
    }

    /// Transition density at `p_next`.
    pub fn density(&self, p_next: f64) -> f64 {
        normal_pdf((p_next - self.mean) / self.std) / self.std
    }
}

pub fn transition(p: f64, params: &OuParams) -> Transition {
    Transition {
        mean: (1.0 - params.epsilon) * p,
        std: params.beta,
    }
}

/// Deterministic Gaussian noise: stream `s` of master seed `seed`, with draw
/// `k` addressable in O(1). Sequential use (`next`) is the fast path; `at`
/// repositions the cipher counter for random access.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// The next standard normal draw in sequence.
    pub fn next_normal(&mut self) -> f64 {
        normal_quantile(uniform_open(self.rng.next_u64()))
    }

    /// Draw number `k` (0-based), independent of what was drawn before.
    pub fn normal_at(&mut self, k: u64) -> f64 {
        // Each draw consumes exactly one u64 = two cipher words.
        self.rng.set_word_pos(2 * k as u128);
        self.next_normal()
    }

    /// Position the source so the next sequential draw is draw number `k`.
    pub fn seek(&mut self, k: u64) {
        self.rng.set_word_pos(2 * k as u128);
    }
}

/// Map a u64 to the open interval (0, 1) on a 2^-53 lattice, symmetric about
/// 1/2 so the quantile transform never sees 0 or 1.
fn uniform_open(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// How a simulated path starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StartState {
    /// Start exactly at this value.
    At(f64),
    /// Draw the start from the stationary law (the default for ensembles).
    Stationary,
}

/// A simulated predictor path together with everything needed to regenerate
/// it.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub values: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub params: OuParams,
}

/// Simulate `n` path values (the start plus `n - 1` transitions) on noise
/// stream 0. Draw index 0 is reserved for the stationary start; the
/// transition into `values[j]` always uses draw `j`, so any suffix of a path
/// can be regenerated from `(seed, position, value)` alone.
pub fn simulate_path(params: &OuParams, n: usize, seed: u64, start: StartState) -> Result<PathSample> {
    simulate_path_stream(params, n, seed, 0, start)
}

/// As [`simulate_path`], on an explicit noise stream. Ensemble code gives
/// path `i` stream `i`; all streams of one seed are independent.
pub fn simulate_path_stream(
    params: &OuParams,
    n: usize,
    seed: u64,
    stream: u64,
    start: StartState,
) -> Result<PathSample> {
    if n == 0 {
        return Err(Error::EmptyPath);
    }
    let iter = PathIter::new(params, seed, stream, start)?;
    Ok(PathSample {
        values: iter.take(n).collect(),
        seed,
        stream,
        params: *params,
    })
}

/// Unbounded streaming version of [`simulate_path_stream`]: yields exactly
/// the same values in order without materializing them, so arbitrarily long
/// paths cost constant memory. Take `n` items for a length-`n` path.
#[derive(Debug, Clone)]
pub struct PathIter {
    noise: NoiseSource,
    params: OuParams,
    next_value: f64,
}

impl PathIter {
    pub fn new(params: &OuParams, seed: u64, stream: u64, start: StartState) -> Result<Self> {
        let mut noise = NoiseSource::new(seed, stream);
        let p0 = match start {
            StartState::At(p) => {
                if !p.is_finite() {
                    return Err(Error::Domain {
                        what: "start value must be finite",
                        value: p,
                    });
                }
                p
            }
            StartState::Stationary => stationary_std(params) * noise.normal_at(0),
        };
        noise.seek(1);
        Ok(Self {
            noise,
            params: *params,
            next_value: p0,
        })
    }
}

impl Iterator for PathIter {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let out = self.next_value;
        self.next_value = step(out, self.noise.next_normal(), &self.params);
        Some(out)
    }
}
