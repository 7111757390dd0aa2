#![allow(dead_code)]

use aoi_core::estimator::{EstimatorOptions, Retention, SourceEstimator};
use aoi_core::oracle::{brute_force_delivery_distribution, brute_force_posterior, random_trace};
use aoi_core::{FeedbackDelay, GenSpec, NetworkConfig, SourceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn families() -> Vec<(&'static str, GenSpec)> {
    vec![
        ("periodic", GenSpec::Periodic { period: 3 }),
        ("uniform", GenSpec::Uniform { lo: 2, hi: 4 }),
        ("geometric", GenSpec::bernoulli(0.3)),
        (
            "explicit",
            GenSpec::Explicit {
                pmf: vec![0.2, 0.0, 0.5, 0.3],
            },
        ),
    ]
}

pub fn random_config(rng: &mut ChaCha8Rng, gen: &GenSpec) -> NetworkConfig {
    let n = rng.gen_range(1..=2);
    let sources = (0..n)
        .map(|_| SourceConfig {
            weight: 1.0,
            src_reliability: rng.gen_range(0.3..=1.0),
            dst_reliability: if rng.gen_bool(0.2) {
                1.0
            } else {
                rng.gen_range(0.2..0.95)
            },
            fwd_delay: rng.gen_range(0..=2),
            fb_delay: if rng.gen_bool(0.3) {
                FeedbackDelay::Infinite
            } else {
                FeedbackDelay::Finite(rng.gen_range(0..=2))
            },
            gen: gen.clone(),
        })
        .collect();
    NetworkConfig::new(1, sources).unwrap()
}

/// Largest absolute deviations from the oracle over a batch of traces.
#[derive(Clone, Debug, Default)]
pub struct Deviations {
    pub traces: usize,
    pub comparisons: usize,
    pub table: f64,
    pub source_timestamp: f64,
    pub packet_estimates: f64,
    pub beliefs: f64,
    pub dest_timestamp: f64,
    /// Largest relative gap between the batch and recursive destination estimates.
    pub batch_vs_recursive: f64,
    pub repeats: usize,
    pub acks: usize,
    pub ordering_violations: usize,
}

impl Deviations {
    pub fn worst(&self) -> f64 {
        [
            self.table,
            self.source_timestamp,
            self.packet_estimates,
            self.beliefs,
            self.dest_timestamp,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

fn options(retention: Retention, force_generic: bool) -> EstimatorOptions {
    EstimatorOptions {
        retention,
        force_generic,
        use_feedback: true,
    }
}

/// Runs `traces` random tiny traces of `horizon` slots and compares every
/// estimator variant with the brute-force oracle at every slot.
pub fn compare_with_oracle(gen: &GenSpec, traces: usize, horizon: u64, seed: u64) -> Deviations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev = Deviations::default();
    for _ in 0..traces {
        let cfg = random_config(&mut rng, gen);
        let trace = random_trace(&cfg, horizon, rng.gen()).unwrap();
        dev.traces += 1;
        for i in 0..cfg.n_sources() {
            let src = cfg.source(i);
            let pmf = src.gen.pmf().unwrap();
            let lag = src.fb_delay.finite().map(|w| w + src.fwd_delay);
            let log = trace.log.source(i);
            dev.repeats += log.receptions().iter().filter(|r| r.repeat).count();
            dev.acks += log.acks().len();
            let mut full = SourceEstimator::new(src, options(Retention::Full, true)).unwrap();
            let mut windowed =
                SourceEstimator::new(src, options(Retention::Packets(0), true)).unwrap();
            let mut default = SourceEstimator::new(src, EstimatorOptions::default()).unwrap();
            for t in 1..=horizon + 1 {
                let oracle = brute_force_posterior(&pmf, log, t, src.dst_reliability, lag).unwrap();
                let dist = brute_force_delivery_distribution(
                    &oracle.unknown_forwards,
                    src.dst_reliability,
                )
                .unwrap();
                dev.comparisons += 1;
                for est in [&mut full, &mut windowed, &mut default] {
                    est.sync(log, t).unwrap();
                    dev.source_timestamp = dev
                        .source_timestamp
                        .max(rel(est.source_timestamp(), oracle.source_timestamp));
                    dev.dest_timestamp = dev
                        .dest_timestamp
                        .max(rel(est.dest_timestamp(), oracle.dest_timestamp));
                    if est.dest_timestamp() > est.source_timestamp() + 1e-9
                        || est.source_timestamp() > t as f64 + 1e-9
                    {
                        dev.ordering_violations += 1;
                    }

                    let forwards: Vec<usize> =
                        est.pending_forwards().iter().map(|(_, d)| *d).collect();
                    if forwards != oracle.unknown_forwards {
                        dev.beliefs = f64::INFINITY;
                    }
                    let beliefs = est.delivery_beliefs();
                    let mut got = vec![0.0; dist.len()];
                    got[0] = beliefs.none;
                    for (d, b) in &beliefs.packets {
                        got[*d] = *b;
                    }
                    for (a, b) in got.iter().zip(&dist) {
                        dev.beliefs = dev.beliefs.max((a - b).abs());
                    }
                }
                let post = full.posterior().unwrap();
                for phi in 1..=t {
                    for gen_slot in 1..=phi {
                        let want = oracle.table[phi as usize - 1][gen_slot as usize - 1];
                        dev.table = dev.table.max((post.g(gen_slot, phi) - want).abs());
                    }
                }
                let mut smoothed = vec![&mut full];
                if default.is_closed_form() {
                    smoothed.push(&mut default);
                }
                for est in smoothed {
                    let packets = est.packet_estimates();
                    if packets.len() != oracle.packet_generation.len() {
                        dev.packet_estimates = f64::INFINITY;
                    }
                    for (a, b) in packets.iter().zip(&oracle.packet_generation) {
                        dev.packet_estimates = dev.packet_estimates.max(rel(*a, *b));
                    }
                    let batch = est.batch_dest_timestamp();
                    dev.batch_vs_recursive =
                        dev.batch_vs_recursive.max(rel(batch, est.dest_timestamp()));
                }
            }
        }
    }
    dev
}

/// Batch against recursive destination estimates on longer traces, for the
/// full-retention renewal filter and the closed forms.
pub fn batch_vs_recursive_long(
    gen: &GenSpec,
    traces: usize,
    horizon: u64,
    seed: u64,
) -> Deviations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev = Deviations::default();
    for _ in 0..traces {
        let cfg = random_config(&mut rng, gen);
        let trace = random_trace(&cfg, horizon, rng.gen()).unwrap();
        dev.traces += 1;
        for i in 0..cfg.n_sources() {
            let src = cfg.source(i);
            let log = trace.log.source(i);
            dev.repeats += log.receptions().iter().filter(|r| r.repeat).count();
            dev.acks += log.acks().len();
            let mut variants =
                vec![SourceEstimator::new(src, options(Retention::Full, true)).unwrap()];
            let closed = SourceEstimator::new(src, EstimatorOptions::default()).unwrap();
            if closed.is_closed_form() {
                variants.push(closed);
            }
            for t in 1..=horizon + 1 {
                for est in variants.iter_mut() {
                    est.sync(log, t).unwrap();
                    let batch = est.batch_dest_timestamp();
                    dev.batch_vs_recursive =
                        dev.batch_vs_recursive.max(rel(batch, est.dest_timestamp()));
                    dev.comparisons += 1;
                }
                if variants.len() == 2 {
                    let (a, b) = (variants[0].dest_timestamp(), variants[1].dest_timestamp());
                    dev.dest_timestamp = dev.dest_timestamp.max(rel(a, b));
                    let (a, b) = (
                        variants[0].source_timestamp(),
                        variants[1].source_timestamp(),
                    );
                    dev.source_timestamp = dev.source_timestamp.max(rel(a, b));
                }
            }
        }
    }
    dev
}
