//! Scheduling policies behind a single decision interface.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::MmseView;
use crate::network::NetworkConfig;
use crate::randomized::{optimal_probabilities, sample_exact_k_into};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "randomized")]
    Randomized,
    /// Max-Weight on MMSE estimates, using acknowledgements.
    #[serde(rename = "mw-e")]
    MwE,
    /// Max-Weight on MMSE estimates, ignoring acknowledgements.
    #[serde(rename = "mw-enf")]
    MwEnF,
    /// Max-Weight on the true AoI and system time.
    #[serde(rename = "mw-f")]
    MwF,
    /// Max-Weight on delayed AoI reports and the mean system time.
    #[serde(rename = "mw-s")]
    MwS,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Randomized,
        PolicyKind::MwE,
        PolicyKind::MwEnF,
        PolicyKind::MwF,
        PolicyKind::MwS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Randomized => "randomized",
            PolicyKind::MwE => "mw-e",
            PolicyKind::MwEnF => "mw-enf",
            PolicyKind::MwF => "mw-f",
            PolicyKind::MwS => "mw-s",
        }
    }

    fn accepts(self, inputs: &PolicyInputs) -> bool {
        matches!(
            (self, inputs),
            (PolicyKind::Randomized, PolicyInputs::Nothing)
                | (
                    PolicyKind::MwE | PolicyKind::MwEnF,
                    PolicyInputs::Estimates(_)
                )
                | (PolicyKind::MwF, PolicyInputs::GroundTruth { .. })
                | (PolicyKind::MwS, PolicyInputs::DelayedAoi(_))
        )
    }

    fn expected_input(self) -> &'static str {
        match self {
            PolicyKind::Randomized => "nothing",
            PolicyKind::MwE | PolicyKind::MwEnF => "estimates",
            PolicyKind::MwF => "ground truth",
            PolicyKind::MwS => "delayed aoi",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown policy '{s}'")))
    }
}

/// What a policy is shown in one slot.
#[derive(Clone, Copy, Debug)]
pub enum PolicyInputs<'a> {
    Nothing,
    Estimates(&'a [MmseView]),
    GroundTruth {
        aoi: &'a [u64],
        system_time: &'a [u64],
    },
    DelayedAoi(&'a [u64]),
}

impl PolicyInputs<'_> {
    fn name(&self) -> &'static str {
        match self {
            PolicyInputs::Nothing => "nothing",
            PolicyInputs::Estimates(_) => "estimates",
            PolicyInputs::GroundTruth { .. } => "ground truth",
            PolicyInputs::DelayedAoi(_) => "delayed aoi",
        }
    }
}

/// `beta_i = alpha_i / (p_i^S p_i^D mu_i^R)`.
pub fn beta_from_optimal_randomized(config: &NetworkConfig) -> Vec<f64> {
    let mu = optimal_probabilities(config).marginals;
    config
        .sources()
        .iter()
        .zip(&mu)
        .map(|(s, m)| s.weight / (s.reliability() * m))
        .collect()
}

/// `w_i = beta_i p_i (h_i - z_i - theta_i)`.
pub fn mw_weights(
    beta: &[f64],
    reliability: &[f64],
    aoi_ahead: &[f64],
    system_time: &[f64],
    fwd_delay: &[u64],
) -> Vec<f64> {
    (0..beta.len())
        .map(|i| beta[i] * reliability[i] * (aoi_ahead[i] - system_time[i] - fwd_delay[i] as f64))
        .collect()
}

/// Indices of the `k` largest weights, ties to the lowest index, ascending.
pub fn select_top_k(weights: &[f64], k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    select_top_k_into(weights, k, &mut out);
    out
}

fn select_top_k_into(weights: &[f64], k: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend(0..weights.len());
    out.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    out.truncate(k);
    out.sort_unstable();
}

/// Policy parameters fixed for an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    kind: PolicyKind,
    k: usize,
    beta: Vec<f64>,
    reliability: Vec<f64>,
    fwd_delay: Vec<u64>,
    marginals: Vec<f64>,
    mean_system_time: Vec<f64>,
    weights: Vec<f64>,
}

impl Policy {
    pub fn new(kind: PolicyKind, config: &NetworkConfig) -> Result<Self> {
        if matches!(kind, PolicyKind::MwE | PolicyKind::MwS)
            && config
                .sources()
                .iter()
                .any(|s| s.fb_delay.finite().is_none())
        {
            return Err(Error::MissingInput {
                policy: kind.name(),
                input: "finite feedback delay",
            });
        }
        let marginals = optimal_probabilities(config).marginals;
        Ok(Policy {
            kind,
            k: config.max_scheduled(),
            beta: beta_from_optimal_randomized(config),
            reliability: config.sources().iter().map(|s| s.reliability()).collect(),
            fwd_delay: config.sources().iter().map(|s| s.fwd_delay).collect(),
            marginals,
            mean_system_time: config.moments().iter().map(|m| m.mean - 1.0).collect(),
            weights: vec![0.0; config.n_sources()],
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Scales every `beta_i`; decisions are unaffected.
    pub fn scale_beta(&mut self, factor: f64) {
        self.beta.iter_mut().for_each(|b| *b *= factor);
    }

    /// Weights used in the most recent Max-Weight decision.
    pub fn last_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Fills `out` with the scheduled sources (ascending). `rng` is only
    /// consumed by the randomized policy.
    pub fn decide<R: Rng + ?Sized>(
        &mut self,
        inputs: PolicyInputs,
        rng: &mut R,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        if !self.kind.accepts(&inputs) {
            return Err(if matches!(inputs, PolicyInputs::Nothing) {
                Error::MissingInput {
                    policy: self.kind.name(),
                    input: self.kind.expected_input(),
                }
            } else {
                Error::InformationHygiene {
                    policy: self.kind.name(),
                    input: inputs.name(),
                }
            });
        }
        let n = self.beta.len();
        let check = |len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "policy inputs for {len} sources, N = {n}"
                )))
            }
        };
        let w = &mut self.weights;
        match inputs {
            PolicyInputs::Nothing => return sample_exact_k_into(&self.marginals, self.k, rng, out),
            PolicyInputs::Estimates(views) => {
                check(views.len())?;
                for i in 0..n {
                    w[i] = self.beta[i]
                        * self.reliability[i]
                        * (views[i].aoi_ahead - views[i].system_time - self.fwd_delay[i] as f64);
                }
            }
            PolicyInputs::GroundTruth { aoi, system_time } => {
                check(aoi.len())?;
                check(system_time.len())?;
                for i in 0..n {
                    w[i] = self.beta[i]
                        * self.reliability[i]
                        * (aoi[i] as f64 - system_time[i] as f64 - self.fwd_delay[i] as f64);
                }
            }
            PolicyInputs::DelayedAoi(aoi) => {
                check(aoi.len())?;
                for i in 0..n {
                    w[i] = self.beta[i]
                        * self.reliability[i]
                        * (aoi[i] as f64 - self.mean_system_time[i] - self.fwd_delay[i] as f64);
                }
            }
        }
        select_top_k_into(w, self.k, out);
        Ok(())
    }
}
