//! Schalkwijk–Kailath iterative coding over a unit-variance AWGN channel
//! with noiseless feedback.
//!
//! The message point `θ` is one of `M` midpoints of `[-√3, √3]`, rescaled to
//! unit second moment. Round 1 sends `√P θ`; every later round sends the
//! receiver's current estimation error, scaled to power `P`, and the
//! receiver subtracts its MMSE estimate of that error.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Result};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkParams {
    pub power: f64,
    /// Bits per channel use, strictly below capacity.
    pub rate: f64,
    pub rounds: u32,
    /// `max(2, ⌊2^{N R}⌋)`.
    pub message_count: u64,
}

/// `C = ½ log2(1 + P)`.
pub fn awgn_capacity(power: f64) -> f64 {
    0.5 * (1.0 + power).log2()
}

fn check_rate(power: f64, rate: f64) -> Result<()> {
    if !(power > 0.0) || !power.is_finite() {
        return invalid(format!("power must be positive, got {power}"));
    }
    let c = awgn_capacity(power);
    if !(rate > 0.0 && rate < c) {
        return invalid(format!("rate {rate} must lie in (0, C = {c})"));
    }
    Ok(())
}

impl SkParams {
    pub fn new(power: f64, rate: f64, rounds: u32) -> Result<Self> {
        check_rate(power, rate)?;
        if rounds == 0 {
            return invalid("rounds must be at least 1");
        }
        let exponent = rounds as f64 * rate;
        if exponent >= 63.0 {
            return invalid("N·R too large for the message index");
        }
        let message_count = (exponent.exp2().floor() as u64).max(2);
        Ok(Self { power, rate, rounds, message_count })
    }

    pub fn from_rate_fraction(power: f64, rate_frac: f64, rounds: u32) -> Result<Self> {
        if !(rate_frac > 0.0 && rate_frac < 1.0) {
            return invalid(format!("rate fraction {rate_frac} must lie in (0, 1)"));
        }
        if !(power > 0.0) {
            return invalid(format!("power must be positive, got {power}"));
        }
        Self::new(power, rate_frac * awgn_capacity(power), rounds)
    }

    /// `E[θ²]` of the unscaled midpoints, `(M² − 1) / M²`.
    pub fn midpoint_second_moment(&self) -> f64 {
        let m = self.message_count as f64;
        (m * m - 1.0) / (m * m)
    }

    /// Half the decision interval in the unit-variance domain.
    pub fn half_width(&self) -> f64 {
        3f64.sqrt() / self.message_count as f64 / self.midpoint_second_moment().sqrt()
    }

    /// `Var[ε_i] = (1/P)(1/(P+1))^{i−1}`.
    pub fn error_variance(&self, round: u32) -> f64 {
        (1.0 / self.power) * (1.0 + self.power).powi(1 - round as i32)
    }
}

/// Standard Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `δ = √(3P / (P + 1))`.
pub fn sk_delta(power: f64) -> f64 {
    (3.0 * power / (power + 1.0)).sqrt()
}

/// `2 Q(δ · 2^{N (C − R)})`.
pub fn sk_error_bound(power: f64, rate: f64, rounds: u32) -> Result<f64> {
    check_rate(power, rate)?;
    let c = awgn_capacity(power);
    Ok(2.0 * q_function(sk_delta(power) * (rounds as f64 * (c - rate)).exp2()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkResult {
    pub params: SkParams,
    pub trials: u64,
    pub seed: u64,
    pub errors: u64,
    pub error_rate: f64,
    /// Sample variance of `ε_i` for `i = 1..=N`.
    pub var_eps: Vec<f64>,
    pub predicted_var: Vec<f64>,
    pub bound: f64,
}

impl SkResult {
    pub fn var_eps_final(&self) -> f64 {
        *self.var_eps.last().expect("at least one round")
    }
}

#[derive(Clone)]
struct Acc {
    errors: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Acc {
    fn new(rounds: usize) -> Self {
        Self { errors: 0, sum: vec![0.0; rounds], sum_sq: vec![0.0; rounds] }
    }

    fn merge(mut self, other: Acc) -> Self {
        self.errors += other.errors;
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.sum_sq.iter_mut().zip(&other.sum_sq).for_each(|(a, b)| *a += b);
        self
    }
}

const CHUNK: u64 = 1024;

pub fn sk_simulate(params: &SkParams, trials: u64, seed: u64) -> Result<SkResult> {
    check_rate(params.power, params.rate)?;
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    let rounds = params.rounds as usize;
    let p = params.power;
    let m = params.message_count;
    let scale = params.midpoint_second_moment().sqrt();
    let half = params.half_width();
    // chunks are merged in order so sums do not depend on the thread count
    let chunks: Vec<Acc> = (0..trials.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, stream::CHANNEL, c);
            let mut acc = Acc::new(rounds);
            for _ in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let k = rng.random_range(0..m);
                let theta = (-3f64.sqrt() + (2 * k + 1) as f64 * 3f64.sqrt() / m as f64) / scale;
                let z: f64 = rng.sample(StandardNormal);
                let y = p.sqrt() * theta + z;
                let mut eps = y / p.sqrt() - theta;
                let mut var = 1.0 / p;
                acc.sum[0] += eps;
                acc.sum_sq[0] += eps * eps;
                for i in 1..rounds {
                    let x = (p / var).sqrt() * eps;
                    let y = x + rng.sample::<f64, _>(StandardNormal);
                    eps -= (p * var).sqrt() / (p + 1.0) * y;
                    var /= p + 1.0;
                    acc.sum[i] += eps;
                    acc.sum_sq[i] += eps * eps;
                }
                acc.errors += (eps.abs() > half) as u64;
            }
            acc
        })
        .collect();
    let acc = chunks.into_iter().fold(Acc::new(rounds), Acc::merge);
    let n = trials as f64;
    let var_eps = acc
        .sum
        .iter()
        .zip(&acc.sum_sq)
        .map(|(&s, &ss)| if trials > 1 { (ss - s * s / n) / (n - 1.0) } else { 0.0 })
        .collect();
    Ok(SkResult {
        params: *params,
        trials,
        seed,
        errors: acc.errors,
        error_rate: acc.errors as f64 / n,
        var_eps,
        predicted_var: (1..=params.rounds).map(|i| params.error_variance(i)).collect(),
        bound: sk_error_bound(p, params.rate, params.rounds)?,
    })
}
