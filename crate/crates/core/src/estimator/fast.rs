//! Closed-form estimators for periodic and Bernoulli generation.
//!
//! For both processes the generation slots inside disjoint windows are
//! independent, so the estimate of each packet's generation slot depends only
//! on its own window and never changes after first reception (except when an
//! acknowledgement reveals it outright).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::network::{Slot, SourceLog};

use super::DestUpdate;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum ClosedForm {
    Periodic(u64),
    Memoryless(f64),
}

/// Sums over a window of `len` slots ending at `end`, with a generation in
/// each slot independently with probability `rate`. Returns
/// `(P(at least one), E[last generation slot ; at least one])`.
fn geometric_window(rate: f64, end: Slot, len: u64) -> (f64, f64) {
    if len == 0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - rate;
    let (s0, s1) = if len <= 64 || rate >= 1.0 {
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut w = rate;
        for k in 0..len.min(64_000) {
            s0 += w;
            s1 += k as f64 * w;
            w *= q;
            if w == 0.0 {
                break;
            }
        }
        (s0, s1)
    } else {
        let l = len as f64;
        let ql = q.powf(l);
        let s0 = 1.0 - ql;
        let s1 = (q / rate) * (1.0 - l * q.powf(l - 1.0) + (l - 1.0) * ql);
        (s0, s1)
    };
    (s0, end as f64 * s0 - s1)
}

impl ClosedForm {
    /// `E[last generation in [start, end]]` where a generation at `start`
    /// is certain (or `start` carries a known estimate `base`) and generations
    /// in `(start, end]` follow the process.
    fn last_generation(&self, base: f64, start: Slot, end: Slot) -> f64 {
        match *self {
            ClosedForm::Periodic(period) => (1 + period * ((end - 1) / period)) as f64,
            ClosedForm::Memoryless(rate) => {
                let len = end - start;
                let (s0, m) = geometric_window(rate, end, len);
                m + (1.0 - s0) * base
            }
        }
    }

    /// `E[last generation in (prev, end] | at least one]`.
    fn conditioned_window(&self, prev: Slot, end: Slot) -> f64 {
        match *self {
            ClosedForm::Periodic(period) => (1 + period * ((end - 1) / period)) as f64,
            ClosedForm::Memoryless(rate) => {
                let (s0, m) = geometric_window(rate, end, end - prev);
                m / s0
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ClosedFormFilter {
    model: ClosedForm,
    dst_reliability: f64,
    feedback_lag: Option<u64>,
    last: Slot,
    reception_cursor: usize,
    ack_cursor: usize,
    packet_first: Vec<Slot>,
    packet_last: Vec<Slot>,
    packet_est: Vec<f64>,
    pending: VecDeque<(Slot, usize)>,
    known_dest: f64,
    /// Running estimate when feedback is ignored.
    running: f64,
    last_update: Option<DestUpdate>,
}

impl ClosedFormFilter {
    pub(crate) fn new(model: ClosedForm, dst_reliability: f64, feedback_lag: Option<u64>) -> Self {
        ClosedFormFilter {
            model,
            dst_reliability,
            feedback_lag,
            last: 0,
            reception_cursor: 0,
            ack_cursor: 0,
            packet_first: Vec::new(),
            packet_last: Vec::new(),
            packet_est: Vec::new(),
            pending: VecDeque::new(),
            known_dest: 0.0,
            running: 0.0,
            last_update: None,
        }
    }

    pub(crate) fn slot(&self) -> Slot {
        self.last + 1
    }

    pub(crate) fn sync(&mut self, log: &SourceLog, t: Slot) -> Result<()> {
        if t <= self.last {
            return Ok(());
        }
        let receptions = log.receptions();
        while let Some(r) = receptions.get(self.reception_cursor).filter(|r| r.slot < t) {
            self.reception_cursor += 1;
            if r.slot <= self.last {
                return Err(Error::Observation("reception log out of order".into()));
            }
            let d = self.packet_first.len();
            let est = if r.repeat {
                if d == 0 {
                    return Err(Error::Observation(
                        "repeat reception before any packet".into(),
                    ));
                }
                self.packet_last[d - 1] = r.slot;
                self.packet_est[d - 1]
            } else {
                let est = if d == 0 {
                    self.model.last_generation(1.0, 1, r.slot)
                } else {
                    self.model
                        .conditioned_window(self.packet_last[d - 1], r.slot)
                };
                self.packet_first.push(r.slot);
                self.packet_last.push(r.slot);
                self.packet_est.push(est);
                est
            };
            let p = self.dst_reliability;
            let previous = self.dest_estimate();
            let value = (1.0 - p) * previous + p * est;
            self.pending.push_back((r.slot, self.packet_first.len()));
            if self.feedback_lag.is_none() {
                self.running = value;
            }
            self.last_update = Some(DestUpdate {
                slot: r.slot,
                previous,
                packet_estimate: est,
                value,
            });
        }
        self.last = t - 1;

        if let Some(lag) = self.feedback_lag {
            let acks = log.acks();
            let cutoff = t.checked_sub(1 + lag).unwrap_or(0);
            while let Some(&(slot, d)) = self.pending.front() {
                if slot > cutoff {
                    break;
                }
                self.pending.pop_front();
                if let Some(a) = acks
                    .get(self.ack_cursor)
                    .filter(|a| a.forward_slot == slot && a.arrival_slot < t)
                {
                    self.ack_cursor += 1;
                    self.known_dest = a.dest_timestamp as f64;
                    self.packet_est[d - 1] = a.dest_timestamp as f64;
                }
            }
            if acks
                .get(self.ack_cursor)
                .is_some_and(|a| a.arrival_slot < t)
            {
                return Err(Error::Observation(
                    "acknowledgement does not match a pending forward".into(),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn source_estimate(&self) -> f64 {
        let t = self.slot();
        let d = self.packet_first.len();
        if d == 0 {
            self.model.last_generation(1.0, 1, t)
        } else {
            self.model
                .last_generation(self.packet_est[d - 1], self.packet_last[d - 1], t)
        }
    }

    pub(crate) fn dest_estimate(&self) -> f64 {
        if self.feedback_lag.is_none() {
            return self.running;
        }
        let p = self.dst_reliability;
        self.pending.iter().fold(self.known_dest, |v, &(_, d)| {
            (1.0 - p) * v + p * self.packet_est[d - 1]
        })
    }

    pub(crate) fn known_dest(&self) -> f64 {
        self.known_dest
    }

    pub(crate) fn pending(&self) -> impl Iterator<Item = (Slot, usize)> + '_ {
        self.pending.iter().copied()
    }

    pub(crate) fn packet_estimates(&self) -> &[f64] {
        &self.packet_est
    }

    pub(crate) fn last_update(&self) -> Option<DestUpdate> {
        self.last_update
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(rate: f64, end: Slot, len: u64) -> (f64, f64) {
        let q = 1.0 - rate;
        let mut s0 = 0.0;
        let mut m = 0.0;
        for k in 0..len {
            let w = rate * q.powi(k as i32);
            s0 += w;
            m += (end - k) as f64 * w;
        }
        (s0, m)
    }

    #[test]
    fn window_sums_match_direct_summation() {
        for &rate in &[0.9, 0.3, 1.0 / 30.0, 0.01] {
            for &len in &[1u64, 2, 5, 63, 64, 65, 200, 1000] {
                let (a0, a1) = geometric_window(rate, 5000, len);
                let (b0, b1) = brute(rate, 5000, len);
                assert!((a0 - b0).abs() < 1e-12, "{rate} {len}");
                assert!((a1 - b1).abs() < 1e-12 * 5000.0, "{rate} {len} {a1} {b1}");
            }
        }
    }

    #[test]
    fn periodic_window_is_exact() {
        let m = ClosedForm::Periodic(3);
        assert_eq!(m.last_generation(1.0, 1, 1), 1.0);
        assert_eq!(m.last_generation(1.0, 1, 3), 1.0);
        assert_eq!(m.last_generation(1.0, 1, 4), 4.0);
        assert_eq!(m.conditioned_window(4, 9), 7.0);
    }
}
