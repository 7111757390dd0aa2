//! MMSE estimates of the source and destination timestamps from what the base
//! station observes: which slots delivered a new or a repeated packet, and the
//! (possibly delayed) delivery acknowledgements.

mod fast;
mod renewal;

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::genproc::GenSpec;
use crate::network::{NetworkConfig, ObservationLog, Slot, SourceConfig, SourceLog};

use fast::{ClosedForm, ClosedFormFilter};
use renewal::RenewalFilter;

pub use renewal::DestUpdate;

/// Constraint on the age `phi - tau_S(phi)` of the queued packet in one slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgeConstraint {
    Free,
    Below(u64),
    AtLeast(u64),
    Exactly(u64),
}

impl AgeConstraint {
    pub fn allows(&self, age: u64) -> bool {
        match *self {
            AgeConstraint::Free => true,
            AgeConstraint::Below(b) => age < b,
            AgeConstraint::AtLeast(b) => age >= b,
            AgeConstraint::Exactly(b) => age == b,
        }
    }
}

/// How much per-slot history the general renewal filter keeps.
///
/// Estimates are exact for every retained slot. A packet whose first reception
/// has left the window keeps the last estimate computed for it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Retention {
    Full,
    /// Keep slots back to the first reception of the `n`-th most recent
    /// packet (and always back to the feedback horizon).
    Packets(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorOptions {
    pub retention: Retention,
    /// Use the general renewal filter even where a closed form exists.
    pub force_generic: bool,
    /// Read acknowledgements when the network provides them.
    pub use_feedback: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            retention: Retention::Packets(0),
            force_generic: false,
            use_feedback: true,
        }
    }
}

/// Smoothed posterior of the generation slots.
///
/// `g(phi', phi)` is the probability that the packet queued in slot `phi` was
/// generated in slot `phi'`, given everything observed so far.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationPosterior {
    start: Slot,
    /// `rows[k][a]`: probability of age `a` in slot `start + k`.
    rows: Vec<Vec<f64>>,
}

impl GenerationPosterior {
    pub(crate) fn new(start: Slot, rows: Vec<Vec<f64>>) -> Self {
        GenerationPosterior { start, rows }
    }

    /// First slot covered.
    pub fn start(&self) -> Slot {
        self.start
    }

    /// Last slot covered (the current slot).
    pub fn end(&self) -> Slot {
        self.start + self.rows.len() as u64 - 1
    }

    pub fn g(&self, gen_slot: Slot, slot: Slot) -> f64 {
        if slot < self.start || slot > self.end() || gen_slot > slot {
            return 0.0;
        }
        let row = &self.rows[(slot - self.start) as usize];
        row.get((slot - gen_slot) as usize).copied().unwrap_or(0.0)
    }

    /// Posterior probability that a packet was generated in `slot`.
    pub fn generation_prob(&self, slot: Slot) -> f64 {
        self.g(slot, slot)
    }

    /// `E[tau_S(slot)]`.
    pub fn expected_timestamp(&self, slot: Slot) -> Option<f64> {
        if slot < self.start || slot > self.end() {
            return None;
        }
        let row = &self.rows[(slot - self.start) as usize];
        Some(
            row.iter()
                .enumerate()
                .map(|(a, p)| (slot as f64 - a as f64) * p)
                .sum(),
        )
    }

    /// Slots `phi' <= slot` with non-zero posterior mass.
    pub fn feasible(&self, slot: Slot) -> Vec<Slot> {
        if slot < self.start || slot > self.end() {
            return Vec::new();
        }
        let row = &self.rows[(slot - self.start) as usize];
        let mut out: Vec<Slot> = row
            .iter()
            .enumerate()
            .filter(|(a, p)| **p > 0.0 && (*a as u64) < slot)
            .map(|(a, _)| slot - a as u64)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Probability that each packet is the freshest one delivered, over the
/// forwards whose outcome is unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct DeliveryBeliefs {
    /// Probability that none of the unknown forwards succeeds.
    pub none: f64,
    /// `(packet, probability)`, ascending in packet index.
    pub packets: Vec<(usize, f64)>,
}

/// Beliefs for a chronological list of forwarded packet indices.
pub fn delivery_beliefs(forwards: &[usize], dst_reliability: f64) -> DeliveryBeliefs {
    let q = 1.0 - dst_reliability;
    let mut survive = 1.0;
    let mut packets = Vec::new();
    let mut k = forwards.len();
    while k > 0 {
        let d = forwards[k - 1];
        let mut n = 0;
        while k > 0 && forwards[k - 1] == d {
            n += 1;
            k -= 1;
        }
        let miss = q.powi(n);
        packets.push((d, survive * (1.0 - miss)));
        survive *= miss;
    }
    packets.reverse();
    DeliveryBeliefs {
        none: survive,
        packets,
    }
}

/// One step of the running destination-timestamp estimate: a reception folds
/// in the packet estimate, an idle slot leaves the estimate unchanged.
pub fn update_dest_timestamp(
    previous: f64,
    received: bool,
    packet_estimate: f64,
    dst_reliability: f64,
) -> f64 {
    if received {
        (1.0 - dst_reliability) * previous + dst_reliability * packet_estimate
    } else {
        previous
    }
}

/// Estimated AoI at delivery and estimated system time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmseView {
    /// `h_hat(t + theta)`.
    pub aoi_ahead: f64,
    /// `z_hat(t)`.
    pub system_time: f64,
}

pub fn mmse_views(source_estimate: f64, dest_estimate: f64, t: Slot, fwd_delay: u64) -> MmseView {
    MmseView {
        aoi_ahead: (t + fwd_delay) as f64 - dest_estimate,
        system_time: t as f64 - source_estimate,
    }
}

#[derive(Clone, Debug)]
enum Filter {
    Renewal(RenewalFilter),
    ClosedForm(ClosedFormFilter),
}

/// Estimator for one source, driven by that source's observation log.
#[derive(Clone, Debug)]
pub struct SourceEstimator {
    filter: Filter,
    fwd_delay: u64,
    dst_reliability: f64,
}

impl SourceEstimator {
    pub fn new(source: &SourceConfig, options: EstimatorOptions) -> Result<Self> {
        let lag = if options.use_feedback {
            source.fb_delay.finite().map(|w| w + source.fwd_delay)
        } else {
            None
        };
        let p = source.dst_reliability;
        let closed = match source.gen {
            GenSpec::Periodic { period } => Some(ClosedForm::Periodic(period as u64)),
            GenSpec::Geometric { rate, .. } => Some(ClosedForm::Memoryless(rate)),
            _ => None,
        };
        let filter = match closed {
            Some(model) if !options.force_generic => {
                Filter::ClosedForm(ClosedFormFilter::new(model, p, lag))
            }
            _ => {
                let hazard: Arc<[f64]> = source.gen.pmf()?.hazard().into();
                Filter::Renewal(RenewalFilter::new(hazard, p, lag, options.retention))
            }
        };
        Ok(SourceEstimator {
            filter,
            fwd_delay: source.fwd_delay,
            dst_reliability: p,
        })
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.filter, Filter::ClosedForm(_))
    }

    /// Incorporates everything observable at the beginning of slot `t`.
    pub fn sync(&mut self, log: &SourceLog, t: Slot) -> Result<()> {
        if t < self.slot() {
            return Err(Error::Observation(format!(
                "estimator already at slot {}, asked for {t}",
                self.slot()
            )));
        }
        match &mut self.filter {
            Filter::Renewal(f) => f.sync(log, t),
            Filter::ClosedForm(f) => f.sync(log, t),
        }
    }

    /// Current slot `t`.
    pub fn slot(&self) -> Slot {
        match &self.filter {
            Filter::Renewal(f) => f.slot(),
            Filter::ClosedForm(f) => f.slot(),
        }
    }

    /// `tau_S_hat(t)`.
    pub fn source_timestamp(&self) -> f64 {
        match &self.filter {
            Filter::Renewal(f) => f.source_estimate(),
            Filter::ClosedForm(f) => f.source_estimate(),
        }
    }

    /// `tau_D_hat(t + theta)`, maintained recursively.
    pub fn dest_timestamp(&self) -> f64 {
        match &self.filter {
            Filter::Renewal(f) => f.dest_estimate(),
            Filter::ClosedForm(f) => f.dest_estimate(),
        }
    }

    pub fn view(&self) -> MmseView {
        mmse_views(
            self.source_timestamp(),
            self.dest_timestamp(),
            self.slot(),
            self.fwd_delay,
        )
    }

    pub fn last_update(&self) -> Option<DestUpdate> {
        match &self.filter {
            Filter::Renewal(f) => f.last_update(),
            Filter::ClosedForm(f) => f.last_update(),
        }
    }

    /// Smoothed posterior; only the general renewal filter keeps one.
    pub fn posterior(&mut self) -> Option<GenerationPosterior> {
        match &mut self.filter {
            Filter::Renewal(f) => Some(f.posterior()),
            Filter::ClosedForm(_) => None,
        }
    }

    /// Generation estimate of every received packet (index `d - 1`), using
    /// all observations so far for packets inside the retained window.
    pub fn packet_estimates(&mut self) -> Vec<f64> {
        match &mut self.filter {
            Filter::Renewal(f) => {
                f.posterior();
                f.packet_estimates().to_vec()
            }
            Filter::ClosedForm(f) => f.packet_estimates().to_vec(),
        }
    }

    /// Destination timestamp known from acknowledgements (0 if none).
    pub fn known_dest(&self) -> f64 {
        match &self.filter {
            Filter::Renewal(f) => f.known_dest() as f64,
            Filter::ClosedForm(f) => f.known_dest(),
        }
    }

    /// Forwards whose outcome is still unknown, as `(slot, packet)`.
    pub fn pending_forwards(&self) -> Vec<(Slot, usize)> {
        match &self.filter {
            Filter::Renewal(f) => f.pending().collect(),
            Filter::ClosedForm(f) => f.pending().collect(),
        }
    }

    pub fn delivery_beliefs(&self) -> DeliveryBeliefs {
        let forwards: Vec<usize> = self
            .pending_forwards()
            .into_iter()
            .map(|(_, d)| d)
            .collect();
        delivery_beliefs(&forwards, self.dst_reliability)
    }

    /// `tau_D_hat(t + theta)` recomputed from smoothed packet estimates and
    /// delivery beliefs.
    pub fn batch_dest_timestamp(&mut self) -> f64 {
        let est = self.packet_estimates();
        let beliefs = self.delivery_beliefs();
        beliefs.none * self.known_dest()
            + beliefs
                .packets
                .iter()
                .map(|&(d, b)| b * est[d - 1])
                .sum::<f64>()
    }
}

/// One estimator per source.
#[derive(Clone, Debug)]
pub struct NetworkEstimator {
    sources: Vec<SourceEstimator>,
}

impl NetworkEstimator {
    pub fn new(config: &NetworkConfig, options: EstimatorOptions) -> Result<Self> {
        let sources = config
            .sources()
            .iter()
            .map(|s| SourceEstimator::new(s, options))
            .collect::<Result<_>>()?;
        Ok(NetworkEstimator { sources })
    }

    pub fn sync(&mut self, log: &ObservationLog, t: Slot) -> Result<()> {
        for (i, est) in self.sources.iter_mut().enumerate() {
            est.sync(log.source(i), t)?;
        }
        Ok(())
    }

    pub fn source(&self, i: usize) -> &SourceEstimator {
        &self.sources[i]
    }

    pub fn source_mut(&mut self, i: usize) -> &mut SourceEstimator {
        &mut self.sources[i]
    }

    pub fn views(&self) -> Vec<MmseView> {
        self.sources.iter().map(|s| s.view()).collect()
    }
}

/// One row of an estimator trace.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct TraceRow {
    pub slot: Slot,
    pub source: usize,
    pub source_estimate: f64,
    pub dest_estimate: f64,
    pub aoi_ahead_estimate: f64,
    pub system_time_estimate: f64,
    pub true_source_timestamp: Slot,
    pub true_dest_timestamp: Slot,
}

/// Writes trace rows as CSV.
pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
