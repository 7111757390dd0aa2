//! Exhaustive reference computations for tiny horizons: every generation
//! pattern and every delivery outcome is enumerated explicitly. Used to check
//! the estimator, never in simulations.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::genproc::Pmf;
use crate::network::{
    NetworkConfig, NetworkState, ObservationLog, Slot, SlotRandomness, SourceLog,
};

pub const MAX_HORIZON: u64 = 14;
pub const MAX_FORWARDS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForcePosterior {
    pub slot: Slot,
    /// `table[phi - 1][phi' - 1] = g(phi', phi)` for `phi <= slot`.
    pub table: Vec<Vec<f64>>,
    pub source_timestamp: f64,
    /// `E[generation slot of packet d]` at index `d - 1`.
    pub packet_generation: Vec<f64>,
    pub dest_timestamp: f64,
    pub known_dest: Slot,
    /// Packet index of every forward whose outcome is still unknown.
    pub unknown_forwards: Vec<usize>,
}

fn latest_at_or_before(gens: &[Slot], slot: Slot) -> Slot {
    *gens
        .iter()
        .rev()
        .find(|&&g| g <= slot)
        .expect("generation at slot 1")
}

/// Posterior over generation patterns on `1..=t` given the observations a
/// base station has at the beginning of slot `t`.
///
/// `feedback_lag` is `theta + omega`, or `None` when acknowledgements are not
/// used.
pub fn brute_force_posterior(
    pmf: &Pmf,
    log: &SourceLog,
    t: Slot,
    dst_reliability: f64,
    feedback_lag: Option<u64>,
) -> Result<BruteForcePosterior> {
    if t == 0 || t > MAX_HORIZON {
        return Err(Error::HorizonTooLarge(t, MAX_HORIZON));
    }
    let receptions: Vec<_> = log.receptions().iter().filter(|r| r.slot < t).collect();
    let acks: Vec<_> = match feedback_lag {
        Some(_) => log.acks().iter().filter(|a| a.arrival_slot < t).collect(),
        None => Vec::new(),
    };
    let survival = |x: u64| -> f64 {
        (x as usize + 1..=pmf.max_period())
            .map(|y| pmf.prob(y))
            .sum()
    };

    let n = t as usize;
    let mut table = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    let packets = receptions.iter().filter(|r| !r.repeat).count();
    let mut packet_sum = vec![0.0; packets];
    let mut source_sum = 0.0;

    let free = n - 1;
    for mask in 0u64..(1u64 << free) {
        let mut gens = vec![1];
        for b in 0..free {
            if mask >> b & 1 == 1 {
                gens.push(b as u64 + 2);
            }
        }
        let mut w = 1.0;
        for pair in gens.windows(2) {
            w *= pmf.prob((pair[1] - pair[0]) as usize);
        }
        w *= survival(t - gens.last().unwrap());
        if w == 0.0 {
            continue;
        }
        let mut prev: Option<Slot> = None;
        let mut consistent = true;
        let mut packet_gens = Vec::with_capacity(packets);
        for r in &receptions {
            let g = latest_at_or_before(&gens, r.slot);
            let repeat = prev.is_some_and(|p| latest_at_or_before(&gens, p) == g);
            if repeat != r.repeat {
                consistent = false;
                break;
            }
            if !repeat {
                packet_gens.push(g);
            }
            prev = Some(r.slot);
        }
        if !consistent {
            continue;
        }
        if acks
            .iter()
            .any(|a| latest_at_or_before(&gens, a.forward_slot) != a.dest_timestamp)
        {
            continue;
        }
        total += w;
        for phi in 1..=t {
            let g = latest_at_or_before(&gens, phi);
            table[phi as usize - 1][g as usize - 1] += w;
        }
        source_sum += w * latest_at_or_before(&gens, t) as f64;
        for (d, g) in packet_gens.iter().enumerate() {
            packet_sum[d] += w * *g as f64;
        }
    }
    if total <= 0.0 {
        return Err(Error::Observation(
            "observations have zero probability".into(),
        ));
    }
    for row in &mut table {
        row.iter_mut().for_each(|x| *x /= total);
    }
    let packet_generation: Vec<f64> = packet_sum.iter().map(|s| s / total).collect();

    let cutoff = feedback_lag
        .map(|lag| t.saturating_sub(1 + lag))
        .unwrap_or(0);
    let known_dest = acks.iter().map(|a| a.dest_timestamp).max().unwrap_or(0);
    let unknown_forwards: Vec<usize> = receptions
        .iter()
        .filter(|r| r.slot > cutoff)
        .map(|r| r.packet)
        .collect();
    let dist = brute_force_delivery_distribution(&unknown_forwards, dst_reliability)?;
    let mut dest_timestamp = dist[0] * known_dest as f64;
    for (d, p) in dist.iter().enumerate().skip(1) {
        if *p > 0.0 {
            dest_timestamp += p * packet_generation[d - 1];
        }
    }

    Ok(BruteForcePosterior {
        slot: t,
        table,
        source_timestamp: source_sum / total,
        packet_generation,
        dest_timestamp,
        known_dest,
        unknown_forwards,
    })
}

/// Distribution of the freshest delivered packet over a chronological list
/// of forwards (packet indices). Entry 0 is "none delivered", entry `d` is
/// packet `d`.
pub fn brute_force_delivery_distribution(
    forwards: &[usize],
    dst_reliability: f64,
) -> Result<Vec<f64>> {
    if forwards.len() > MAX_FORWARDS {
        return Err(Error::HorizonTooLarge(
            forwards.len() as u64,
            MAX_FORWARDS as u64,
        ));
    }
    let top = forwards.iter().copied().max().unwrap_or(0);
    let mut dist = vec![0.0; top + 1];
    let p = dst_reliability;
    for outcome in 0u32..(1u32 << forwards.len()) {
        let mut w = 1.0;
        let mut best = 0;
        for (j, &d) in forwards.iter().enumerate() {
            if outcome >> j & 1 == 1 {
                w *= p;
                best = best.max(d);
            } else {
                w *= 1.0 - p;
            }
        }
        dist[best] += w;
    }
    Ok(dist)
}

/// A short random episode with ground truth, for exercising estimators.
#[derive(Clone, Debug)]
pub struct TinyTrace {
    pub config: NetworkConfig,
    pub log: ObservationLog,
    /// `source_timestamps[t - 1][i] = tau_S_i(t)` for `t = 1..=horizon + 1`.
    pub source_timestamps: Vec<Vec<Slot>>,
    /// `dest_timestamps[t - 1][i] = tau_D_i(t)` for `t = 1..=horizon + 1`.
    pub dest_timestamps: Vec<Vec<Slot>>,
    pub horizon: u64,
}

/// Runs `horizon` slots with a uniformly random set of `K` sources scheduled
/// in each slot.
pub fn random_trace(config: &NetworkConfig, horizon: u64, seed: u64) -> Result<TinyTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_sources();
    let k = config.max_scheduled();
    let samplers: Vec<_> = config.pmfs().iter().map(Pmf::sampler).collect();
    let mut next_gen: Vec<Slot> = samplers.iter().map(|s| 1 + s.sample(&mut rng)).collect();
    let mut state = NetworkState::new(config);
    let mut log = ObservationLog::new(config);
    let mut source_timestamps = vec![(0..n)
        .map(|i| state.source_timestamp(i))
        .collect::<Vec<_>>()];
    let mut dest_timestamps = vec![vec![0; n]];
    for t in 1..=horizon {
        let decision: Vec<usize> = sample(&mut rng, n, k).into_iter().collect();
        let rand = SlotRandomness {
            source_channel: config
                .sources()
                .iter()
                .map(|s| rng.gen_bool(s.src_reliability))
                .collect(),
            dest_channel: config
                .sources()
                .iter()
                .map(|s| rng.gen_bool(s.dst_reliability))
                .collect(),
            next_generation: (0..n)
                .map(|i| {
                    if next_gen[i] == t + 1 {
                        next_gen[i] += samplers[i].sample(&mut rng);
                        true
                    } else {
                        false
                    }
                })
                .collect(),
        };
        let mut sorted = decision;
        sorted.sort_unstable();
        state.advance_slot(&mut log, &sorted, &rand)?;
        source_timestamps.push((0..n).map(|i| state.source_timestamp(i)).collect());
        dest_timestamps.push((0..n).map(|i| state.dest_timestamp(i)).collect());
    }
    Ok(TinyTrace {
        config: config.clone(),
        log,
        source_timestamps,
        dest_timestamps,
        horizon,
    })
}
