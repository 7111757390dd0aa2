//! The optimal stationary randomized policy: scheduling probabilities, its
//! closed-form EWSAoI, and an exact-K sampler.

use rand::Rng;

use crate::error::{Error, Result};
use crate::genproc::GenMoments;
use crate::network::NetworkConfig;

pub const MARGINAL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct RandomizedSolution {
    /// Per-slot scheduling probability of each source.
    pub marginals: Vec<f64>,
    /// Final level `vartheta`; zero when every source is always scheduled.
    pub multiplier: f64,
    /// Closed-form EWSAoI at these marginals.
    pub ewsaoi: f64,
}

fn marginals_at(level: f64, theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| (t / level).sqrt().min(1.0)).collect()
}

/// Minimizes the closed-form EWSAoI subject to `sum_i mu_i = K`. The result
/// only depends on weights and reliabilities.
pub fn optimal_probabilities(config: &NetworkConfig) -> RandomizedSolution {
    let n = config.n_sources();
    let k = config.max_scheduled() as f64;
    let theta: Vec<f64> = config
        .sources()
        .iter()
        .map(|s| s.weight / s.reliability())
        .collect();

    let (marginals, multiplier) = if config.max_scheduled() >= n {
        (vec![1.0; n], 0.0)
    } else {
        let root_sum: f64 = theta.iter().map(|t| t.sqrt()).sum();
        let mut hi = theta
            .iter()
            .copied()
            .fold(root_sum * root_sum / (k * k), f64::max);
        let mut lo = theta.iter().copied().fold(f64::INFINITY, f64::min);
        let mut level = hi;
        for _ in 0..500 {
            level = (lo * hi).sqrt();
            let s: f64 = marginals_at(level, &theta).iter().sum();
            if (s - k).abs() <= MARGINAL_TOLERANCE {
                break;
            }
            if s > k {
                lo = level;
            } else {
                hi = level;
            }
            if hi / lo - 1.0 < 1e-15 {
                break;
            }
        }
        (marginals_at(level, &theta), level)
    };
    let ewsaoi =
        closed_form_ewsaoi(config, &config.moments(), &marginals).expect("positive marginals");
    RandomizedSolution {
        marginals,
        multiplier,
        ewsaoi,
    }
}

/// `(1/N) sum_i alpha_i (E[X_i^2] lambda_i / 2 + 1/(p_i mu_i) + theta_i - 1)`.
pub fn closed_form_ewsaoi(
    config: &NetworkConfig,
    moments: &[GenMoments],
    marginals: &[f64],
) -> Result<f64> {
    let n = config.n_sources();
    if moments.len() != n || marginals.len() != n {
        return Err(Error::Config("dimension mismatch".into()));
    }
    let mut total = 0.0;
    for (i, s) in config.sources().iter().enumerate() {
        let mu = marginals[i];
        if !(mu > 0.0 && mu <= 1.0 + MARGINAL_TOLERANCE) {
            return Err(Error::InfeasibleMarginals(format!("source {i}: mu = {mu}")));
        }
        let m = moments[i];
        total += s.weight
            * (m.second_moment * m.rate / 2.0 + 1.0 / (s.reliability() * mu) + s.fwd_delay as f64
                - 1.0);
    }
    Ok(total / n as f64)
}

/// Long-run EWSAoI of the randomized policy in this crate's slot model:
/// `(1/N) sum_i alpha_i (E[X_i^2] lambda_i / 2 + 1/(p_i mu_i) + theta_i - 1/2)`.
///
/// The mean age of the queued packet sampled at an independent slot is
/// `E[X^2] lambda / 2 - 1/2` for integer inter-generation times, which puts
/// this half a slot per unit weight above [`closed_form_ewsaoi`].
pub fn slot_model_ewsaoi(
    config: &NetworkConfig,
    moments: &[GenMoments],
    marginals: &[f64],
) -> Result<f64> {
    let base = closed_form_ewsaoi(config, moments, marginals)?;
    let mean_weight = config.weights().iter().sum::<f64>() / config.n_sources() as f64;
    Ok(base + mean_weight / 2.0)
}

/// Systematic sampling: lays the marginals end to end on `[0, K)` and picks
/// the sources covering `u, u + 1, ..., u + K - 1` for a uniform `u`. Each
/// source is included with probability exactly `mu_i`.
pub fn sample_exact_k<R: Rng + ?Sized>(
    marginals: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(k);
    sample_exact_k_into(marginals, k, rng, &mut out)?;
    Ok(out)
}

pub fn sample_exact_k_into<R: Rng + ?Sized>(
    marginals: &[f64],
    k: usize,
    rng: &mut R,
    out: &mut Vec<usize>,
) -> Result<()> {
    out.clear();
    let total: f64 = marginals.iter().sum();
    if k > marginals.len() || (total - k as f64).abs() > 1e-6 {
        return Err(Error::InfeasibleMarginals(format!(
            "marginals sum to {total}, need {k} of {}",
            marginals.len()
        )));
    }
    if let Some(bad) = marginals
        .iter()
        .find(|m| !(**m >= -1e-12 && **m <= 1.0 + 1e-9))
    {
        return Err(Error::InfeasibleMarginals(format!(
            "marginal {bad} outside [0, 1]"
        )));
    }
    if k == 0 {
        return Ok(());
    }
    let scale = k as f64 / total;
    let u: f64 = rng.gen();
    let mut next = u;
    let mut cum = 0.0;
    for (i, m) in marginals.iter().enumerate() {
        cum += (m * scale).clamp(0.0, 1.0);
        if i + 1 == marginals.len() {
            cum = k as f64;
        }
        if next < cum {
            out.push(i);
            next += 1.0;
            if out.len() == k {
                break;
            }
        }
    }
    debug_assert_eq!(out.len(), k);
    Ok(())
}
