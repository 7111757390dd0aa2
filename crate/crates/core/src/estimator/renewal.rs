//! Exact filter for a general renewal source.
//!
//! The hidden state at slot `phi` is the age `a = phi - tau_S(phi)` of the
//! queued packet, a Markov chain that jumps to 0 with the renewal hazard
//! `H(a + 1)` and otherwise grows by one. Everything the base station learns
//! about a source is a constraint on that age at a single slot:
//!
//! * a new packet received in slot `s` after a previous reception in `s'`:
//!   `a(s) < s - s'`;
//! * a repeated packet: `a(s) >= s - s'`;
//! * an acknowledgement of the packet forwarded in slot `s` carrying
//!   destination timestamp `g`: `a(s) = s - g`.
//!
//! Each retained slot keeps the filtered age distribution `alpha` and the
//! moment vector `moment(a) = E[tau_del ; age = a]`, where `tau_del` is the
//! generation slot of the freshest packet delivered among the forwards seen
//! so far. `sum(moment)` is the MMSE estimate of the destination timestamp.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::network::{Slot, SourceLog};

use super::{AgeConstraint, GenerationPosterior, Retention};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Forward {
    None,
    Unknown,
    Failed,
    Delivered,
}

#[derive(Clone, Debug)]
struct Record {
    slot: Slot,
    constraint: AgeConstraint,
    forward: Forward,
    alpha: Vec<f64>,
    moment: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct RenewalFilter {
    /// `hazard[a] = H(a + 1)`.
    hazard: Arc<[f64]>,
    dst_reliability: f64,
    /// `theta + omega`, or `None` when feedback is ignored.
    feedback_lag: Option<u64>,
    retention: Retention,
    records: VecDeque<Record>,
    /// Last slot with a record (0 before slot 1 is processed).
    last: Slot,
    reception_cursor: usize,
    ack_cursor: usize,
    prev_reception: Option<Slot>,
    /// Forwards still waiting for an outcome as `(slot, packet)`, oldest first.
    pending: VecDeque<(Slot, usize)>,
    /// Destination timestamp known from feedback.
    known_dest: Slot,
    /// Generation estimate of each packet, refreshed on first reception and
    /// whenever a smoothing pass runs.
    packet_est: Vec<f64>,
    /// First-reception slot of each packet.
    packet_first: Vec<Slot>,
    /// Last reconditioned update, for inspection.
    last_update: Option<DestUpdate>,
    /// Pruned records kept for their buffers.
    spare: Vec<Record>,
    /// `E[tau_S(t)]` for the slot after the last record.
    source_est: f64,
    scratch: Vec<f64>,
}

/// One application of the destination-timestamp recursion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DestUpdate {
    pub slot: Slot,
    /// Previous estimate reconditioned on the newest reception.
    pub previous: f64,
    pub packet_estimate: f64,
    pub value: f64,
}

fn predict(hazard: &[f64], src: &[f64], dst: &mut [f64]) {
    let n = hazard.len();
    let mut regen = 0.0;
    for a in 0..n {
        regen += src[a] * hazard[a];
    }
    for a in (0..n - 1).rev() {
        dst[a + 1] = src[a] * (1.0 - hazard[a]);
    }
    dst[0] = regen;
}

impl RenewalFilter {
    pub(crate) fn new(
        hazard: Arc<[f64]>,
        dst_reliability: f64,
        feedback_lag: Option<u64>,
        retention: Retention,
    ) -> Self {
        RenewalFilter {
            hazard,
            dst_reliability,
            feedback_lag,
            retention,
            records: VecDeque::new(),
            last: 0,
            reception_cursor: 0,
            ack_cursor: 0,
            prev_reception: None,
            pending: VecDeque::new(),
            known_dest: 0,
            packet_est: Vec::new(),
            packet_first: Vec::new(),
            last_update: None,
            spare: Vec::new(),
            source_est: 1.0,
            scratch: Vec::new(),
        }
    }

    fn support(&self) -> usize {
        self.hazard.len()
    }

    /// Recomputes `alpha` and `moment` of `rec` from the previous record.
    fn fill(&self, prev: Option<&Record>, rec: &mut Record) -> Result<Option<DestUpdate>> {
        let n = self.support();
        rec.alpha.resize(n, 0.0);
        rec.moment.resize(n, 0.0);
        match prev {
            Some(p) => {
                predict(&self.hazard, &p.alpha, &mut rec.alpha);
                predict(&self.hazard, &p.moment, &mut rec.moment);
            }
            None => {
                rec.alpha.iter_mut().for_each(|x| *x = 0.0);
                rec.moment.iter_mut().for_each(|x| *x = 0.0);
                rec.alpha[0] = 1.0;
            }
        }
        let mut z = 0.0;
        for a in 0..n {
            if rec.constraint.allows(a as u64) {
                z += rec.alpha[a];
            } else {
                rec.alpha[a] = 0.0;
                rec.moment[a] = 0.0;
            }
        }
        if z <= 0.0 {
            return Err(Error::Observation(format!(
                "constraint {:?} at slot {} has zero probability",
                rec.constraint, rec.slot
            )));
        }
        for a in 0..n {
            rec.alpha[a] /= z;
            rec.moment[a] /= z;
        }
        let pi = match rec.forward {
            Forward::None | Forward::Failed => return Ok(None),
            Forward::Unknown => self.dst_reliability,
            Forward::Delivered => 1.0,
        };
        let previous: f64 = rec.moment.iter().sum();
        let mut packet_estimate = 0.0;
        for a in 0..n {
            let gen = rec.slot as f64 - a as f64;
            packet_estimate += gen * rec.alpha[a];
            rec.moment[a] = (1.0 - pi) * rec.moment[a] + pi * gen * rec.alpha[a];
        }
        Ok(Some(DestUpdate {
            slot: rec.slot,
            previous,
            packet_estimate,
            value: rec.moment.iter().sum(),
        }))
    }

    fn cutoff(&self, t: Slot) -> Option<Slot> {
        self.feedback_lag.and_then(|lag| t.checked_sub(1 + lag))
    }

    /// Brings the filter to the observation available at the beginning of
    /// slot `t`.
    pub(crate) fn sync(&mut self, log: &SourceLog, t: Slot) -> Result<()> {
        let receptions = log.receptions();
        while self.last + 1 < t {
            let slot = self.last + 1;
            let mut rec = self.spare.pop().unwrap_or(Record {
                slot,
                constraint: AgeConstraint::Free,
                forward: Forward::None,
                alpha: Vec::new(),
                moment: Vec::new(),
            });
            rec.slot = slot;
            rec.constraint = AgeConstraint::Free;
            rec.forward = Forward::None;
            if let Some(r) = receptions
                .get(self.reception_cursor)
                .filter(|r| r.slot == slot)
            {
                self.reception_cursor += 1;
                if let Some(prev) = self.prev_reception {
                    let gap = slot - prev;
                    rec.constraint = if r.repeat {
                        AgeConstraint::AtLeast(gap)
                    } else {
                        AgeConstraint::Below(gap)
                    };
                }
                rec.forward = Forward::Unknown;
                self.prev_reception = Some(slot);
                self.pending.push_back((slot, r.packet));
                if !r.repeat {
                    self.packet_first.push(slot);
                    self.packet_est.push(f64::NAN);
                }
            }
            let update = self.fill(self.records.back(), &mut rec)?;
            if let Some(u) = update {
                let d = self.packet_first.len();
                if self.packet_first[d - 1] == slot {
                    self.packet_est[d - 1] = u.packet_estimate;
                }
                self.last_update = Some(u);
            }
            self.records.push_back(rec);
            self.last = slot;
        }
        if self.reception_cursor < receptions.len() && receptions[self.reception_cursor].slot < t {
            return Err(Error::Observation("reception log out of order".into()));
        }
        self.resolve_feedback(log, t)?;
        self.prune(t);
        self.refresh_source_estimate();
        Ok(())
    }

    fn index_of(&self, slot: Slot) -> Option<usize> {
        let first = self.records.front()?.slot;
        if slot < first {
            return None;
        }
        let idx = (slot - first) as usize;
        (idx < self.records.len()).then_some(idx)
    }

    fn resolve_feedback(&mut self, log: &SourceLog, t: Slot) -> Result<()> {
        let Some(cutoff) = self.cutoff(t) else {
            return Ok(());
        };
        let acks = log.acks();
        let mut earliest: Option<usize> = None;
        while let Some(&(slot, _)) = self.pending.front() {
            if slot > cutoff {
                break;
            }
            self.pending.pop_front();
            let idx = self.index_of(slot).ok_or_else(|| {
                Error::Observation(format!("forward slot {slot} no longer retained"))
            })?;
            let ack = acks
                .get(self.ack_cursor)
                .filter(|a| a.forward_slot == slot && a.arrival_slot < t);
            match ack {
                Some(a) => {
                    self.ack_cursor += 1;
                    if a.dest_timestamp > slot || a.dest_timestamp < self.known_dest {
                        return Err(Error::Observation(format!(
                            "acknowledged timestamp {} inconsistent with forward slot {slot}",
                            a.dest_timestamp
                        )));
                    }
                    self.known_dest = a.dest_timestamp;
                    let age = slot - a.dest_timestamp;
                    let rec = &mut self.records[idx];
                    if !rec.constraint.allows(age) {
                        return Err(Error::Observation(format!(
                            "acknowledgement of slot {slot} contradicts reception history"
                        )));
                    }
                    rec.constraint = AgeConstraint::Exactly(age);
                    rec.forward = Forward::Delivered;
                }
                None => self.records[idx].forward = Forward::Failed,
            }
            earliest = Some(earliest.map_or(idx, |e: usize| e.min(idx)));
        }
        if let Some(a) = acks.get(self.ack_cursor) {
            if a.arrival_slot < t {
                return Err(Error::Observation(format!(
                    "acknowledgement for slot {} does not match a pending forward",
                    a.forward_slot
                )));
            }
        }
        if let Some(start) = earliest {
            self.recompute_from(start)?;
        }
        Ok(())
    }

    fn recompute_from(&mut self, start: usize) -> Result<()> {
        if start == 0 && self.records.front().is_some_and(|r| r.slot > 1) {
            return Err(Error::Observation(
                "cannot recompute before retained window".into(),
            ));
        }
        for idx in start..self.records.len() {
            let mut rec = Record {
                slot: self.records[idx].slot,
                constraint: self.records[idx].constraint,
                forward: self.records[idx].forward,
                alpha: std::mem::take(&mut self.records[idx].alpha),
                moment: std::mem::take(&mut self.records[idx].moment),
            };
            let prev = idx.checked_sub(1).map(|p| &self.records[p]);
            let update = self.fill(prev, &mut rec)?;
            if let Some(u) = update {
                if let Ok(d) = self.packet_first.binary_search(&rec.slot) {
                    self.packet_est[d] = u.packet_estimate;
                }
                self.last_update = Some(u);
            }
            self.records[idx] = rec;
        }
        Ok(())
    }

    fn prune(&mut self, t: Slot) {
        let mut keep_from = match self.retention {
            Retention::Full => return,
            Retention::Packets(w) => {
                let d = self.packet_first.len();
                if w == 0 || d == 0 {
                    self.last
                } else {
                    self.packet_first[d - w.min(d)]
                }
            }
        };
        if self.feedback_lag.is_some() {
            match self.cutoff(t) {
                Some(c) => keep_from = keep_from.min(c.max(1)),
                None => return,
            }
        }
        while self.records.len() > 1 && self.records.front().is_some_and(|r| r.slot < keep_from) {
            let rec = self.records.pop_front().expect("non-empty");
            if self.spare.len() < 4 {
                self.spare.push(rec);
            }
        }
    }

    fn refresh_source_estimate(&mut self) {
        let t = self.last + 1;
        let Some(rec) = self.records.back() else {
            self.source_est = 1.0;
            return;
        };
        self.scratch.resize(self.hazard.len(), 0.0);
        predict(&self.hazard, &rec.alpha, &mut self.scratch);
        let mean_age: f64 = self
            .scratch
            .iter()
            .enumerate()
            .map(|(a, p)| a as f64 * p)
            .sum();
        self.source_est = t as f64 - mean_age;
    }

    /// `E[tau_S(t) | O(t)]` for the slot after the last record.
    pub(crate) fn source_estimate(&self) -> f64 {
        self.source_est
    }

    /// `E[tau_D(t + theta) | O(t)]`.
    pub(crate) fn dest_estimate(&self) -> f64 {
        match self.records.back() {
            None => 0.0,
            Some(rec) => rec.moment.iter().sum(),
        }
    }

    pub(crate) fn last_update(&self) -> Option<DestUpdate> {
        self.last_update
    }

    pub(crate) fn known_dest(&self) -> Slot {
        self.known_dest
    }

    /// Forwards whose delivery outcome is still unknown, as `(slot, packet)`.
    pub(crate) fn pending(&self) -> impl Iterator<Item = (Slot, usize)> + '_ {
        self.pending.iter().copied()
    }

    pub(crate) fn slot(&self) -> Slot {
        self.last + 1
    }

    /// Smoothed age distributions for every retained slot plus the
    /// prediction for the current slot.
    pub(crate) fn posterior(&mut self) -> GenerationPosterior {
        let n = self.support();
        let t = self.last + 1;
        let Some(first) = self.records.front().map(|r| r.slot) else {
            let mut row = vec![0.0; n];
            row[0] = 1.0;
            return GenerationPosterior::new(1, vec![row]);
        };
        let len = self.records.len();
        let mut rows = vec![Vec::new(); len + 1];
        let mut current = vec![0.0; n];
        predict(&self.hazard, &self.records[len - 1].alpha, &mut current);
        rows[len] = current;

        let mut beta = vec![1.0; n];
        let mut next_beta = vec![0.0; n];
        for idx in (0..len).rev() {
            let rec = &self.records[idx];
            let mut row: Vec<f64> = rec.alpha.iter().zip(&beta).map(|(a, b)| a * b).collect();
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= z);
            rows[idx] = row;
            if idx == 0 {
                break;
            }
            // fold this record's likelihood into the backward message of the
            // previous slot
            let c = rec.constraint;
            let lb = |a: usize| if c.allows(a as u64) { beta[a] } else { 0.0 };
            let mut s = 0.0;
            for a in 0..n {
                let h = self.hazard[a];
                let grow = if a + 1 < n {
                    (1.0 - h) * lb(a + 1)
                } else {
                    0.0
                };
                next_beta[a] = h * lb(0) + grow;
                s += next_beta[a];
            }
            for a in 0..n {
                beta[a] = next_beta[a] / s;
            }
        }
        for (d, &slot) in self.packet_first.iter().enumerate() {
            if slot >= first {
                let row = &rows[(slot - first) as usize];
                self.packet_est[d] = row
                    .iter()
                    .enumerate()
                    .map(|(a, p)| (slot as f64 - a as f64) * p)
                    .sum();
            }
        }
        debug_assert_eq!(first + len as u64, t);
        GenerationPosterior::new(first, rows)
    }

    pub(crate) fn packet_estimates(&self) -> &[f64] {
        &self.packet_est
    }
}
