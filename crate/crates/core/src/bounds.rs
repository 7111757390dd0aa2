//! Lower bound on the expected weighted-sum AoI of any admissible policy, and
//! the optimality ratio of the optimal randomized policy.

use crate::error::{Error, Result};
use crate::genproc::GenMoments;
use crate::network::NetworkConfig;

/// Tolerance on `sum_i q_i / p_i - K`.
pub const CAPACITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundSolution {
    /// Delivery rate `q_i` per source.
    pub rates: Vec<f64>,
    /// Final water level `gamma`; zero when the capacity constraint is slack.
    pub multiplier: f64,
    pub bound: f64,
}

fn rates_at(gamma: f64, v: &[f64], gamma_i: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(gamma_i)
        .map(|(&v, &g)| v * (g / gamma).sqrt().min(1.0))
        .collect()
}

fn load(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(q, p)| q / p).sum()
}

pub fn lower_bound(config: &NetworkConfig, moments: &[GenMoments]) -> Result<LowerBoundSolution> {
    lower_bound_with_tolerance(config, moments, CAPACITY_TOLERANCE)
}

/// Water-filling over the per-source delivery rates: the level `gamma` is
/// found by bisection on a log scale, since the load is non-increasing in it.
pub fn lower_bound_with_tolerance(
    config: &NetworkConfig,
    moments: &[GenMoments],
    tolerance: f64,
) -> Result<LowerBoundSolution> {
    let n = config.n_sources();
    if moments.len() != n {
        return Err(Error::Config(format!(
            "{} moments for {n} sources",
            moments.len()
        )));
    }
    let nf = n as f64;
    let k = config.max_scheduled() as f64;
    let alpha = config.weights();
    let p: Vec<f64> = config.sources().iter().map(|s| s.reliability()).collect();
    let v: Vec<f64> = moments
        .iter()
        .zip(&p)
        .map(|(m, p)| m.rate.min(*p))
        .collect();
    let gamma_i: Vec<f64> = (0..n)
        .map(|i| alpha[i] * p[i] / (2.0 * nf * v[i] * v[i]))
        .collect();

    let (rates, multiplier) = if load(&v, &p) <= k + tolerance {
        (v.clone(), 0.0)
    } else {
        let root_sum: f64 = (0..n).map(|i| (alpha[i] / p[i]).sqrt()).sum();
        let gamma_tilde = root_sum * root_sum / (2.0 * nf * k * k);
        let mut hi = gamma_i.iter().copied().fold(gamma_tilde, f64::max);
        let mut lo = gamma_i.iter().copied().fold(f64::INFINITY, f64::min);
        let mut gamma = hi;
        for _ in 0..500 {
            gamma = (lo * hi).sqrt();
            let s = load(&rates_at(gamma, &v, &gamma_i), &p);
            if (s - k).abs() <= tolerance {
                break;
            }
            if s > k {
                lo = gamma;
            } else {
                hi = gamma;
            }
            if hi / lo - 1.0 < 1e-15 {
                break;
            }
        }
        (rates_at(gamma, &v, &gamma_i), gamma)
    };

    let bound = (0..n)
        .map(|i| alpha[i] * (1.0 / rates[i] + 2.0 * config.source(i).fwd_delay as f64 + 1.0))
        .sum::<f64>()
        / (2.0 * nf);
    Ok(LowerBoundSolution {
        rates,
        multiplier,
        bound,
    })
}

/// `rho = sum_i alpha_i E[X_i^2] lambda_i^2 / sum_i alpha_i + 2`.
pub fn optimality_ratio(config: &NetworkConfig, moments: &[GenMoments]) -> f64 {
    let alpha = config.weights();
    let total: f64 = alpha.iter().sum();
    let num: f64 = alpha
        .iter()
        .zip(moments)
        .map(|(a, m)| a * m.second_moment * m.rate * m.rate)
        .sum();
    num / total + 2.0
}
