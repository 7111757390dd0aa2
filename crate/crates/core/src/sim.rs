//! Episode and experiment drivers.
//!
//! Every episode draws its randomness from independent ChaCha streams keyed by
//! the seed: one per source for generations, one each for the uplink and the
//! forwarding channels, and one for policy randomness. All channel outcomes
//! are drawn for every source in every slot, scheduled or not, so different
//! policies run at the same seed see identical generations and channels.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{lower_bound, optimality_ratio};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorOptions, MmseView, NetworkEstimator, TraceRow};
use crate::genproc::{Pmf, RenewalSampler};
use crate::network::{
    FeedbackDelay, NetworkConfig, NetworkState, ObservationLog, Slot, SlotRandomness,
};
use crate::policies::{Policy, PolicyInputs, PolicyKind};
use crate::randomized::{closed_form_ewsaoi, optimal_probabilities};

const GENERATION_STREAM: u64 = 0;
const SOURCE_CHANNEL_STREAM: u64 = 1 << 32;
const DEST_CHANNEL_STREAM: u64 = 2 << 32;
const POLICY_STREAM: u64 = 3 << 32;

/// Number of batches used for batch-means standard errors.
pub const ERROR_BATCHES: usize = 20;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws `SlotRandomness` for consecutive slots of one episode.
#[derive(Clone, Debug)]
pub struct RandomnessSource {
    generation: Vec<ChaCha8Rng>,
    samplers: Vec<RenewalSampler>,
    next_generation: Vec<Slot>,
    source_channel: ChaCha8Rng,
    dest_channel: ChaCha8Rng,
    src_reliability: Vec<f64>,
    dst_reliability: Vec<f64>,
}

impl RandomnessSource {
    pub fn new(config: &NetworkConfig, seed: u64) -> Self {
        let samplers: Vec<RenewalSampler> = config.pmfs().iter().map(Pmf::sampler).collect();
        let mut generation: Vec<ChaCha8Rng> = (0..config.n_sources())
            .map(|i| stream(seed, GENERATION_STREAM + i as u64))
            .collect();
        let next_generation = samplers
            .iter()
            .zip(generation.iter_mut())
            .map(|(s, rng)| 1 + s.sample(rng))
            .collect();
        RandomnessSource {
            generation,
            samplers,
            next_generation,
            source_channel: stream(seed, SOURCE_CHANNEL_STREAM),
            dest_channel: stream(seed, DEST_CHANNEL_STREAM),
            src_reliability: config.sources().iter().map(|s| s.src_reliability).collect(),
            dst_reliability: config.sources().iter().map(|s| s.dst_reliability).collect(),
        }
    }

    /// Fills `out` with the draws for slot `t`.
    pub fn draw(&mut self, t: Slot, out: &mut SlotRandomness) {
        let n = self.samplers.len();
        out.source_channel.resize(n, false);
        out.dest_channel.resize(n, false);
        out.next_generation.resize(n, false);
        for i in 0..n {
            out.source_channel[i] = self.source_channel.gen::<f64>() < self.src_reliability[i];
            out.dest_channel[i] = self.dest_channel.gen::<f64>() < self.dst_reliability[i];
            let gen = self.next_generation[i] == t + 1;
            if gen {
                self.next_generation[i] += self.samplers[i].sample(&mut self.generation[i]);
            }
            out.next_generation[i] = gen;
        }
    }
}

/// Mean of a per-slot series with a batch-means standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
}

#[derive(Clone, Debug)]
struct BatchMeans {
    sums: Vec<f64>,
    counts: Vec<u64>,
    horizon: u64,
}

impl BatchMeans {
    fn new(horizon: u64) -> Self {
        BatchMeans {
            sums: vec![0.0; ERROR_BATCHES],
            counts: vec![0; ERROR_BATCHES],
            horizon: horizon.max(1),
        }
    }

    fn add(&mut self, slot: Slot, x: f64) {
        let b = (((slot - 1) * ERROR_BATCHES as u64) / self.horizon).min(ERROR_BATCHES as u64 - 1)
            as usize;
        self.sums[b] += x;
        self.counts[b] += 1;
    }

    fn finish(&self) -> MeanEstimate {
        let samples: u64 = self.counts.iter().sum();
        if samples == 0 {
            return MeanEstimate::default();
        }
        let mean = self.sums.iter().sum::<f64>() / samples as f64;
        let batches: Vec<f64> = self
            .sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, c)| **c > 0)
            .map(|(s, c)| s / *c as f64)
            .collect();
        let b = batches.len() as f64;
        let std_error = if batches.len() > 1 {
            let m = batches.iter().sum::<f64>() / b;
            (batches.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1.0) / b).sqrt()
        } else {
            0.0
        };
        MeanEstimate {
            mean,
            std_error,
            samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub policy: PolicyKind,
    pub seed: u64,
    pub horizon: u64,
    /// Time average of `(1/N) sum_i alpha_i h_i(t)` over slots `1..=T`.
    pub ewsaoi: f64,
    pub mean_aoi: Vec<f64>,
    /// `h_hat_i(t + theta_i) - h_i(t + theta_i)`, for estimator-driven policies.
    pub aoi_error: Vec<MeanEstimate>,
    /// `z_hat_i(t) - z_i(t)`, for estimator-driven policies.
    pub system_time_error: Vec<MeanEstimate>,
    /// Number of sources scheduled per slot, checked every slot.
    pub scheduled_per_slot: usize,
}

#[derive(Clone, Debug, Default)]
pub struct EpisodeOptions {
    pub estimator: EstimatorOptions,
    /// Record estimator rows for slots `1..=trace_slots`.
    pub trace_slots: u64,
    /// Record every decision.
    pub record_decisions: bool,
}

#[derive(Clone, Debug, Default)]
pub struct EpisodeOutput {
    pub result: Option<EpisodeResult>,
    pub trace: Vec<TraceRow>,
    pub decisions: Vec<Vec<usize>>,
}

pub fn run_episode(
    config: &NetworkConfig,
    policy: PolicyKind,
    horizon: u64,
    seed: u64,
) -> Result<EpisodeResult> {
    let out = run_episode_with(config, policy, horizon, seed, &EpisodeOptions::default())?;
    Ok(out.result.expect("episode result"))
}

pub fn run_episode_with(
    config: &NetworkConfig,
    kind: PolicyKind,
    horizon: u64,
    seed: u64,
    options: &EpisodeOptions,
) -> Result<EpisodeOutput> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let n = config.n_sources();
    let k = config.max_scheduled();
    let weights = config.weights();
    let fwd_delay: Vec<u64> = config.sources().iter().map(|s| s.fwd_delay).collect();

    let mut policy = Policy::new(kind, config)?;
    let mut estimator = match kind {
        PolicyKind::MwE => Some(NetworkEstimator::new(config, options.estimator)?),
        PolicyKind::MwEnF => Some(NetworkEstimator::new(
            config,
            EstimatorOptions {
                use_feedback: false,
                ..options.estimator
            },
        )?),
        _ => None,
    };
    let mut state = NetworkState::new(config);
    let mut log = ObservationLog::new(config);
    let mut randomness = RandomnessSource::new(config, seed);
    let mut policy_rng = stream(seed, POLICY_STREAM);

    let mut slot_rand = SlotRandomness {
        source_channel: Vec::new(),
        dest_channel: Vec::new(),
        next_generation: Vec::new(),
    };
    let mut decision = Vec::with_capacity(k);
    let mut views: Vec<MmseView> = Vec::with_capacity(n);
    let mut aoi = vec![0u64; n];
    let mut system_time = vec![0u64; n];
    let mut aoi_sum = vec![0.0; n];
    let mut ewsaoi_sum = 0.0;
    let mut aoi_error: Vec<BatchMeans> = (0..n).map(|_| BatchMeans::new(horizon)).collect();
    let mut z_error: Vec<BatchMeans> = (0..n).map(|_| BatchMeans::new(horizon)).collect();
    // estimates of h(t + theta) waiting for the truth
    let mut ahead: Vec<VecDeque<(Slot, f64)>> = vec![VecDeque::new(); n];
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut trace_pending: Vec<VecDeque<usize>> = vec![VecDeque::new(); n];
    let mut decisions = Vec::new();

    for t in 1..=horizon + 1 {
        for i in 0..n {
            while let Some(&(s, est)) = ahead[i].front() {
                if s + fwd_delay[i] != t {
                    break;
                }
                ahead[i].pop_front();
                aoi_error[i].add(s, est - state.aoi(i) as f64);
            }
            while let Some(&row) = trace_pending[i].front() {
                if trace[row].slot + fwd_delay[i] != t {
                    break;
                }
                trace_pending[i].pop_front();
                trace[row].true_dest_timestamp = state.dest_timestamp(i);
            }
        }
        if t > horizon {
            break;
        }

        for i in 0..n {
            aoi[i] = state.aoi(i);
            system_time[i] = state.system_time(i);
            aoi_sum[i] += aoi[i] as f64;
        }
        ewsaoi_sum += state.weighted_aoi(&weights);

        let inputs = match kind {
            PolicyKind::Randomized => PolicyInputs::Nothing,
            PolicyKind::MwF => PolicyInputs::GroundTruth {
                aoi: &aoi,
                system_time: &system_time,
            },
            PolicyKind::MwS => {
                for (i, h) in aoi.iter_mut().enumerate() {
                    *h = log
                        .delayed_aoi(i, t)
                        .expect("finite feedback checked by policy");
                }
                PolicyInputs::DelayedAoi(&aoi)
            }
            PolicyKind::MwE | PolicyKind::MwEnF => {
                let est = estimator.as_mut().expect("estimator policy");
                est.sync(&log, t)?;
                views.clear();
                for i in 0..n {
                    let s = est.source(i);
                    let v = s.view();
                    views.push(v);
                    ahead[i].push_back((t, v.aoi_ahead));
                    z_error[i].add(t, v.system_time - system_time[i] as f64);
                    if t <= options.trace_slots {
                        trace_pending[i].push_back(trace.len());
                        trace.push(TraceRow {
                            slot: t,
                            source: i,
                            source_estimate: s.source_timestamp(),
                            dest_estimate: s.dest_timestamp(),
                            aoi_ahead_estimate: v.aoi_ahead,
                            system_time_estimate: v.system_time,
                            true_source_timestamp: state.source_timestamp(i),
                            true_dest_timestamp: 0,
                        });
                    }
                }
                PolicyInputs::Estimates(&views)
            }
        };
        policy.decide(inputs, &mut policy_rng, &mut decision)?;
        if decision.len() != k {
            return Err(Error::Config(format!(
                "policy scheduled {} sources, K = {k}",
                decision.len()
            )));
        }
        if options.record_decisions {
            decisions.push(decision.clone());
        }
        randomness.draw(t, &mut slot_rand);
        state.advance_slot(&mut log, &decision, &slot_rand)?;
    }
    let pending: usize = trace_pending.iter().map(VecDeque::len).sum();
    if pending > 0 {
        let unresolved: std::collections::HashSet<usize> =
            trace_pending.iter().flatten().copied().collect();
        trace = trace
            .into_iter()
            .enumerate()
            .filter(|(j, _)| !unresolved.contains(j))
            .map(|(_, r)| r)
            .collect();
    }

    let tf = horizon as f64;
    let estimated = estimator.is_some();
    Ok(EpisodeOutput {
        result: Some(EpisodeResult {
            policy: kind,
            seed,
            horizon,
            ewsaoi: ewsaoi_sum / tf,
            mean_aoi: aoi_sum.iter().map(|s| s / tf).collect(),
            aoi_error: if estimated {
                aoi_error.iter().map(BatchMeans::finish).collect()
            } else {
                Vec::new()
            },
            system_time_error: if estimated {
                z_error.iter().map(BatchMeans::finish).collect()
            } else {
                Vec::new()
            },
            scheduled_per_slot: k,
        }),
        trace,
        decisions,
    })
}

/// Parameter varied across a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Multiplies every inter-generation time by the (integer) sweep value.
    GenScale,
    /// Sets every `p^S_i` to the sweep value.
    SrcReliability,
    /// Sets every `p^D_i` to the sweep value.
    DstReliability,
    /// Sets every `theta_i` to the sweep value.
    FwdDelay,
}

impl SweepAxis {
    /// Network at one sweep point. With `feedback_follows_delay`, every finite
    /// `omega_i` is set equal to the new `theta_i`.
    pub fn apply(
        self,
        base: &NetworkConfig,
        value: f64,
        feedback_follows_delay: bool,
    ) -> Result<NetworkConfig> {
        let as_count = |v: f64| -> Result<u64> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(Error::Config(format!(
                    "sweep value {v} must be a non-negative integer"
                )))
            }
        };
        let mut sources = base.sources().to_vec();
        for s in &mut sources {
            match self {
                SweepAxis::GenScale => {
                    let f = as_count(value)?;
                    if f == 0 {
                        return Err(Error::Config("generation scale must be positive".into()));
                    }
                    s.gen = s.gen.scaled(f as u32)?;
                }
                SweepAxis::SrcReliability => s.src_reliability = value,
                SweepAxis::DstReliability => s.dst_reliability = value,
                SweepAxis::FwdDelay => s.fwd_delay = as_count(value)?,
            }
            if feedback_follows_delay {
                if let FeedbackDelay::Finite(_) = s.fb_delay {
                    s.fb_delay = FeedbackDelay::Finite(s.fwd_delay);
                }
            }
        }
        NetworkConfig::new(base.max_scheduled(), sources)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub sweep_value: f64,
    pub policy: PolicyKind,
    pub mean_ewsaoi: f64,
    pub stddev: f64,
    pub runs: usize,
    pub lower_bound: f64,
    pub rho_times_lb: f64,
    pub closed_form: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub points: Vec<PointResult>,
    /// Episodes in `(sweep point, policy, run)` order.
    pub episodes: Vec<EpisodeResult>,
}

impl ExperimentResult {
    pub fn point(&self, sweep_value: f64, policy: PolicyKind) -> Option<&PointResult> {
        self.points
            .iter()
            .find(|p| p.sweep_value == sweep_value && p.policy == policy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Analytic companions for one network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Analytics {
    pub lower_bound: f64,
    pub rho: f64,
    pub closed_form: f64,
}

pub fn analytics(config: &NetworkConfig) -> Result<Analytics> {
    let moments = config.moments();
    let lb = lower_bound(config, &moments)?.bound;
    let rho = optimality_ratio(config, &moments);
    let mu = optimal_probabilities(config).marginals;
    Ok(Analytics {
        lower_bound: lb,
        rho,
        closed_form: closed_form_ewsaoi(config, &moments, &mu)?,
    })
}

/// Runs every `(point, policy, run)` combination; run `r` uses seed
/// `base_seed + r`. Results do not depend on thread scheduling.
pub fn run_experiment(
    points: &[(f64, NetworkConfig)],
    policies: &[PolicyKind],
    runs: usize,
    horizon: u64,
    base_seed: u64,
) -> Result<ExperimentResult> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    if points.is_empty() || policies.is_empty() {
        return Err(Error::Config("empty sweep or policy roster".into()));
    }
    let tasks: Vec<(usize, PolicyKind, u64)> = (0..points.len())
        .flat_map(|p| {
            policies
                .iter()
                .flat_map(move |&k| (0..runs as u64).map(move |r| (p, k, r)))
        })
        .collect();
    let episodes: Vec<EpisodeResult> = tasks
        .par_iter()
        .map(|&(p, kind, r)| run_episode(&points[p].1, kind, horizon, base_seed + r))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(points.len() * policies.len());
    for (p, (value, config)) in points.iter().enumerate() {
        let a = analytics(config)?;
        for (j, &kind) in policies.iter().enumerate() {
            let start = (p * policies.len() + j) * runs;
            let values: Vec<f64> = episodes[start..start + runs]
                .iter()
                .map(|e| e.ewsaoi)
                .collect();
            let mean = values.iter().sum::<f64>() / runs as f64;
            let stddev = if runs > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0))
                    .sqrt()
            } else {
                0.0
            };
            out.push(PointResult {
                sweep_value: *value,
                policy: kind,
                mean_ewsaoi: mean,
                stddev,
                runs,
                lower_bound: a.lower_bound,
                rho_times_lb: a.rho * a.lower_bound,
                closed_form: a.closed_form,
            });
        }
    }
    Ok(ExperimentResult {
        points: out,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genproc::GenSpec;
    use crate::network::SourceConfig;

    fn single(gen: GenSpec, p: f64, theta: u64) -> NetworkConfig {
        NetworkConfig::new(
            1,
            vec![SourceConfig {
                weight: 1.0,
                src_reliability: p,
                dst_reliability: 1.0,
                fwd_delay: theta,
                fb_delay: FeedbackDelay::Finite(theta),
                gen,
            }],
        )
        .unwrap()
    }

    #[test]
    fn fresh_delivery_every_slot() {
        let cfg = single(GenSpec::Periodic { period: 1 }, 1.0, 0);
        for kind in PolicyKind::ALL {
            let r = run_episode(&cfg, kind, 1000, 3).unwrap();
            assert!((r.ewsaoi - 1.0).abs() < 1e-12, "{kind}: {}", r.ewsaoi);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = single(GenSpec::Uniform { lo: 2, hi: 4 }, 0.5, 2);
        for kind in PolicyKind::ALL {
            let a = run_episode(&cfg, kind, 5000, 17).unwrap();
            let b = run_episode(&cfg, kind, 5000, 17).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ewsaoi_at_least_mean_weight() {
        let cfg = single(GenSpec::bernoulli(0.2), 0.3, 1);
        let r = run_episode(&cfg, PolicyKind::MwE, 5000, 1).unwrap();
        assert!(r.ewsaoi >= 1.0);
    }

    #[test]
    fn sweep_axes() {
        let base = single(GenSpec::Uniform { lo: 2, hi: 4 }, 0.5, 5);
        let scaled = SweepAxis::GenScale.apply(&base, 3.0, false).unwrap();
        assert_eq!(scaled.source(0).gen, GenSpec::Uniform { lo: 6, hi: 12 });
        let th = SweepAxis::FwdDelay.apply(&base, 7.0, true).unwrap();
        assert_eq!(th.source(0).fwd_delay, 7);
        assert_eq!(th.source(0).fb_delay, FeedbackDelay::Finite(7));
        assert!(SweepAxis::FwdDelay.apply(&base, 1.5, true).is_err());
        assert!(SweepAxis::SrcReliability.apply(&base, 0.0, false).is_err());
    }
}
