//! Renewal packet-generation processes.
//!
//! Every source generates a packet in slot 1 and then waits an i.i.d.
//! inter-generation period `X >= 1` before the next one. All variants are
//! canonicalized to an explicit PMF over `{1..x_max}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tail mass dropped when truncating a geometric PMF.
pub const DEFAULT_GEOMETRIC_TAIL: f64 = 1e-15;

const NORMALIZATION_TOL: f64 = 1e-12;

fn default_tail() -> f64 {
    DEFAULT_GEOMETRIC_TAIL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenSpec {
    /// A packet every `period` slots.
    Periodic { period: u32 },
    /// Discrete uniform on the integers `lo..=hi`.
    Uniform { lo: u32, hi: u32 },
    /// Bernoulli generation with probability `rate` per slot, i.e. geometric
    /// periods truncated once the remaining mass drops below `tail`.
    Geometric {
        rate: f64,
        #[serde(default = "default_tail")]
        tail: f64,
    },
    /// `pmf[k]` is the probability of a period of `k + 1` slots.
    Explicit { pmf: Vec<f64> },
}

impl GenSpec {
    pub fn bernoulli(rate: f64) -> Self {
        GenSpec::Geometric {
            rate,
            tail: DEFAULT_GEOMETRIC_TAIL,
        }
    }

    /// Stretches the process so that its mean period is multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("scale factor must be positive".into()));
        }
        Ok(match self {
            GenSpec::Periodic { period } => GenSpec::Periodic {
                period: period * factor,
            },
            GenSpec::Uniform { lo, hi } => GenSpec::Uniform {
                lo: lo * factor,
                hi: hi * factor,
            },
            GenSpec::Geometric { rate, tail } => GenSpec::Geometric {
                rate: rate / f64::from(factor),
                tail: *tail,
            },
            GenSpec::Explicit { pmf } => {
                let f = factor as usize;
                let mut out = vec![0.0; pmf.len() * f];
                for (k, p) in pmf.iter().enumerate() {
                    out[(k + 1) * f - 1] = *p;
                }
                GenSpec::Explicit { pmf: out }
            }
        })
    }

    pub fn pmf(&self) -> Result<Pmf> {
        pmf(self)
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, GenSpec::Periodic { .. })
    }
}

/// Inter-generation PMF over `{1..=max_period()}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    probs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenMoments {
    pub mean: f64,
    pub second_moment: f64,
    /// Average generation rate `1 / E[X]`.
    pub rate: f64,
}

/// Canonicalizes a generation spec to a normalized PMF.
pub fn pmf(spec: &GenSpec) -> Result<Pmf> {
    match spec {
        GenSpec::Periodic { period } => {
            if *period == 0 {
                return Err(Error::EmptySupport);
            }
            let mut probs = vec![0.0; *period as usize];
            probs[*period as usize - 1] = 1.0;
            Pmf::from_probs(probs)
        }
        GenSpec::Uniform { lo, hi } => {
            if *lo == 0 || lo > hi {
                return Err(Error::EmptySupport);
            }
            let width = f64::from(hi - lo + 1);
            let mut probs = vec![0.0; *hi as usize];
            for p in &mut probs[*lo as usize - 1..] {
                *p = 1.0 / width;
            }
            Pmf::from_probs(probs)
        }
        GenSpec::Geometric { rate, tail } => {
            if !(*rate > 0.0 && *rate <= 1.0) {
                return Err(Error::Config(format!(
                    "geometric rate {rate} outside (0,1]"
                )));
            }
            if !(*tail > 0.0 && *tail < 1.0) {
                return Err(Error::Config(format!(
                    "geometric tail {tail} outside (0,1)"
                )));
            }
            let q = 1.0 - rate;
            let len = if q == 0.0 {
                1
            } else {
                (tail.ln() / q.ln()).ceil().max(1.0) as usize
            };
            let probs = (0..len).map(|k| rate * q.powi(k as i32)).collect();
            Pmf::from_probs(probs)
        }
        GenSpec::Explicit { pmf } => Pmf::from_probs(pmf.clone()),
    }
}

impl Pmf {
    /// Builds a PMF from raw masses, renormalizing if the total is within
    /// rounding of one or the caller handed in unnormalized weights.
    pub fn from_probs(mut probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::NotNormalizable(f64::NAN));
        }
        while probs.last() == Some(&0.0) {
            probs.pop();
        }
        let total: f64 = probs.iter().sum();
        if probs.is_empty() {
            return Err(Error::EmptySupport);
        }
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::NotNormalizable(total));
        }
        for p in &mut probs {
            *p /= total;
        }
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < NORMALIZATION_TOL);
        Ok(Pmf { probs })
    }

    /// Largest period with positive mass.
    pub fn max_period(&self) -> usize {
        self.probs.len()
    }

    /// `P(X = x)`; zero outside the support.
    pub fn prob(&self, x: usize) -> f64 {
        if x == 0 {
            0.0
        } else {
            self.probs.get(x - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn moments(&self) -> GenMoments {
        moments(self)
    }

    /// Renewal hazard `H(x) = P(X = x | X >= x)` for `x = 1..=max_period()`,
    /// stored at index `x - 1`. `H(max_period()) = 1`.
    pub fn hazard(&self) -> Vec<f64> {
        let mut survival = 1.0;
        let mut out = Vec::with_capacity(self.probs.len());
        for (k, p) in self.probs.iter().enumerate() {
            let h = if k + 1 == self.probs.len() || survival <= 0.0 {
                1.0
            } else {
                (p / survival).min(1.0)
            };
            out.push(h);
            survival -= p;
        }
        out
    }

    /// `true` when every period is the same.
    pub fn is_degenerate(&self) -> bool {
        self.probs.iter().filter(|p| **p > 0.0).count() == 1
    }

    pub fn sampler(&self) -> RenewalSampler {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = self
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        RenewalSampler { cdf }
    }
}

/// Exact moments by summation over the support.
pub fn moments(pmf: &Pmf) -> GenMoments {
    let (mut mean, mut second) = (0.0, 0.0);
    for (k, p) in pmf.probs.iter().enumerate() {
        let x = (k + 1) as f64;
        mean += x * p;
        second += x * x * p;
    }
    GenMoments {
        mean,
        second_moment: second,
        rate: 1.0 / mean,
    }
}

/// Inverse-CDF sampler of inter-generation periods.
#[derive(Clone, Debug)]
pub struct RenewalSampler {
    cdf: Vec<f64>,
}

impl RenewalSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.cdf.len() == 1 {
            return 1;
        }
        let u: f64 = rng.gen();
        let idx = self.cdf.partition_point(|&c| c <= u);
        (idx.min(self.cdf.len() - 1) + 1) as u64
    }
}

/// Draws an inter-generation period from `pmf`.
pub fn sample_intergeneration<R: Rng + ?Sized>(pmf: &Pmf, rng: &mut R) -> u64 {
    pmf.sampler().sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn periodic_is_degenerate() {
        let p = pmf(&GenSpec::Periodic { period: 3 }).unwrap();
        assert_eq!(p.probs(), &[0.0, 0.0, 1.0]);
        let m = p.moments();
        assert_eq!((m.mean, m.second_moment), (3.0, 9.0));
        assert!((m.rate - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_two_to_four() {
        let p = pmf(&GenSpec::Uniform { lo: 2, hi: 4 }).unwrap();
        for x in 2..=4 {
            assert!((p.prob(x) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(p.prob(1), 0.0);
        let m = p.moments();
        assert!((m.mean - 3.0).abs() < 1e-12);
        assert!((m.second_moment - 29.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_matches_closed_form() {
        let spec = GenSpec::Geometric {
            rate: 0.5,
            tail: 1e-9,
        };
        let p = pmf(&spec).unwrap();
        let kept: f64 = (1..=p.max_period()).map(|x| 0.5f64.powi(x as i32)).sum();
        assert!(1.0 - kept < 1e-9);
        for x in 1..=p.max_period() {
            assert!((p.prob(x) - 0.5f64.powi(x as i32) / kept).abs() < 1e-15);
        }
        // untruncated E[X^2] = (2 - rate) / rate^2
        let q = pmf(&GenSpec::bernoulli(0.2)).unwrap().moments();
        assert!((q.second_moment - 1.8 / 0.04).abs() < 1e-9);
    }

    #[test]
    fn geometric_rate_one_is_every_slot() {
        let p = pmf(&GenSpec::bernoulli(1.0)).unwrap();
        assert_eq!(p.max_period(), 1);
        assert_eq!(p.hazard(), vec![1.0]);
    }

    #[test]
    fn rejects_bad_specs() {
        assert_eq!(
            pmf(&GenSpec::Uniform { lo: 0, hi: 3 }),
            Err(Error::EmptySupport)
        );
        assert_eq!(
            pmf(&GenSpec::Uniform { lo: 5, hi: 3 }),
            Err(Error::EmptySupport)
        );
        assert_eq!(
            pmf(&GenSpec::Explicit { pmf: vec![] }),
            Err(Error::EmptySupport)
        );
        assert!(matches!(
            pmf(&GenSpec::Explicit {
                pmf: vec![0.0, 0.0]
            }),
            Err(Error::EmptySupport)
        ));
        assert!(pmf(&GenSpec::Explicit {
            pmf: vec![-0.5, 1.5]
        })
        .is_err());
        assert!(pmf(&GenSpec::bernoulli(0.0)).is_err());
    }

    #[test]
    fn hazard_of_uniform() {
        let h = pmf(&GenSpec::Uniform { lo: 2, hi: 4 }).unwrap().hazard();
        let expect = [0.0, 1.0 / 3.0, 0.5, 1.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn scaling_multiplies_the_mean() {
        let base = GenSpec::Uniform { lo: 2, hi: 4 };
        assert_eq!(base.scaled(3).unwrap(), GenSpec::Uniform { lo: 6, hi: 12 });
        let g = GenSpec::bernoulli(1.0 / 3.0).scaled(2).unwrap();
        assert!((pmf(&g).unwrap().moments().mean - 6.0).abs() < 1e-9);
        let e = GenSpec::Explicit {
            pmf: vec![0.5, 0.5],
        }
        .scaled(2)
        .unwrap();
        assert_eq!(pmf(&e).unwrap().probs(), &[0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn sampling_constant_periods() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let per = pmf(&GenSpec::Periodic { period: 3 }).unwrap();
        let one = pmf(&GenSpec::Explicit { pmf: vec![1.0] }).unwrap();
        for _ in 0..1000 {
            assert_eq!(sample_intergeneration(&per, &mut rng), 3);
            assert_eq!(sample_intergeneration(&one, &mut rng), 1);
        }
    }

    #[test]
    fn uniform_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = pmf(&GenSpec::Uniform { lo: 2, hi: 4 }).unwrap().sampler();
        let n = 1_000_000;
        let total: u64 = (0..n).map(|_| s.sample(&mut rng)).sum();
        assert!((total as f64 / n as f64 - 3.0).abs() < 0.01);
    }

    fn check_empirical(spec: GenSpec, seed: u64) {
        let p = pmf(&spec).unwrap();
        let s = p.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1_000_000usize;
        let mut counts = vec![0usize; p.max_period()];
        for _ in 0..n {
            counts[s.sample(&mut rng) as usize - 1] += 1;
        }
        // bins with fewer than 25 expected draws are pooled into one
        let mut bins: Vec<(String, f64, usize)> = Vec::new();
        let mut pooled = (0.0, 0usize);
        for (k, c) in counts.iter().enumerate() {
            let f = p.prob(k + 1);
            if f * n as f64 >= 25.0 {
                bins.push((format!("{}", k + 1), f, *c));
            } else {
                pooled.0 += f;
                pooled.1 += c;
            }
        }
        bins.push(("pooled".into(), pooled.0, pooled.1));
        for (label, f, c) in bins {
            let se = (f * (1.0 - f) / n as f64).sqrt();
            let emp = c as f64 / n as f64;
            assert!(
                (emp - f).abs() <= 3.0 * se + 1e-12,
                "{spec:?} bin {label} emp {emp} pmf {f}"
            );
        }
    }

    #[test]
    fn empirical_pmf_within_three_standard_errors() {
        check_empirical(GenSpec::Uniform { lo: 2, hi: 4 }, 11);
        check_empirical(GenSpec::Periodic { period: 5 }, 12);
        check_empirical(GenSpec::bernoulli(0.3), 13);
        check_empirical(
            GenSpec::Explicit {
                pmf: vec![0.1, 0.0, 0.6, 0.3],
            },
            14,
        );
    }

    proptest! {
        #[test]
        fn moments_equal_brute_force(weights in prop::collection::vec(0.0f64..1.0, 1..20)) {
            prop_assume!(weights.iter().any(|w| *w > 1e-3));
            let p = Pmf::from_probs(weights).unwrap();
            let m = p.moments();
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for x in 1..=p.max_period() {
                m1 += x as f64 * p.prob(x);
                m2 += (x * x) as f64 * p.prob(x);
            }
            prop_assert_eq!(m.mean, m1);
            prop_assert_eq!(m.second_moment, m2);
            prop_assert!(m.second_moment >= m.mean * m.mean - 1e-9);
            prop_assert!(m.rate > 0.0 && m.rate <= 1.0 + 1e-12);
        }
    }
}
