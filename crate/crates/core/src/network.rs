//! Ground-truth slotted network: single-packet source queues, a shared
//! unreliable uplink to the base station, and delayed unreliable forwarding
//! to the destinations with delayed acknowledgements.
//!
//! Slot convention: a packet generated in slot `t` sits in the queue at the
//! beginning of slot `t` (so `z(t) = 0`) and may be transmitted in that same
//! slot. A packet forwarded in slot `s` reaches its destination in slot
//! `s + theta`, which lowers the AoI from slot `s + theta + 1` on.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genproc::{GenMoments, GenSpec, Pmf};

pub type Slot = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackDelay {
    Finite(u64),
    /// No acknowledgements ever reach the base station.
    Infinite,
}

impl FeedbackDelay {
    pub fn finite(self) -> Option<u64> {
        match self {
            FeedbackDelay::Finite(w) => Some(w),
            FeedbackDelay::Infinite => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceConfig {
    pub weight: f64,
    pub src_reliability: f64,
    pub dst_reliability: f64,
    pub fwd_delay: u64,
    pub fb_delay: FeedbackDelay,
    pub gen: GenSpec,
}

impl SourceConfig {
    /// Product of both hop reliabilities.
    pub fn reliability(&self) -> f64 {
        self.src_reliability * self.dst_reliability
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    max_scheduled: usize,
    sources: Vec<SourceConfig>,
}

impl NetworkConfig {
    pub fn new(max_scheduled: usize, sources: Vec<SourceConfig>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("network needs at least one source".into()));
        }
        if max_scheduled == 0 || max_scheduled > sources.len() {
            return Err(Error::Config(format!(
                "K = {max_scheduled} must satisfy 1 <= K <= N = {}",
                sources.len()
            )));
        }
        for (i, s) in sources.iter().enumerate() {
            if !(s.weight > 0.0 && s.weight.is_finite()) {
                return Err(Error::Config(format!(
                    "source {i}: weight must be positive"
                )));
            }
            for (name, p) in [
                ("src_reliability", s.src_reliability),
                ("dst_reliability", s.dst_reliability),
            ] {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Config(format!(
                        "source {i}: {name} = {p} outside (0,1]"
                    )));
                }
            }
            s.gen
                .pmf()
                .map_err(|e| Error::Config(format!("source {i}: {e}")))?;
        }
        Ok(NetworkConfig {
            max_scheduled,
            sources,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn max_scheduled(&self) -> usize {
        self.max_scheduled
    }

    pub fn sources(&self) -> &[SourceConfig] {
        &self.sources
    }

    pub fn source(&self, i: usize) -> &SourceConfig {
        &self.sources[i]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.weight).collect()
    }

    pub fn pmfs(&self) -> Vec<Pmf> {
        self.sources
            .iter()
            .map(|s| s.gen.pmf().expect("validated at construction"))
            .collect()
    }

    pub fn moments(&self) -> Vec<GenMoments> {
        self.pmfs().iter().map(Pmf::moments).collect()
    }

    /// Copy with every feedback delay replaced.
    pub fn with_feedback(&self, fb: impl Fn(&SourceConfig) -> FeedbackDelay) -> Self {
        let mut out = self.clone();
        for s in &mut out.sources {
            s.fb_delay = fb(s);
        }
        out
    }

    pub fn map_sources(&self, f: impl Fn(&mut SourceConfig)) -> Result<Self> {
        let mut sources = self.sources.clone();
        sources.iter_mut().for_each(f);
        NetworkConfig::new(self.max_scheduled, sources)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub source: usize,
    /// Per-source sequence tag; the base station only compares it for equality.
    pub seq: u64,
    /// Generation slot, readable by the destination only.
    pub gen_slot: Slot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct InFlight {
    packet: Packet,
    forward_slot: Slot,
    delivery_slot: Slot,
    success: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PendingAck {
    ack: Ack,
}

/// Channel and generation draws consumed by one call to
/// [`NetworkState::advance_slot`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotRandomness {
    /// `c^S(t)` per source.
    pub source_channel: Vec<bool>,
    /// `c^D(t)` per source.
    pub dest_channel: Vec<bool>,
    /// Generation indicator for the next slot, `a(t + 1)`.
    pub next_generation: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reception {
    pub source: usize,
    pub slot: Slot,
    /// 1-based index of the received packet.
    pub packet: usize,
    pub repeat: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub source: usize,
    pub forward_slot: Slot,
    pub gen_slot: Slot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ack {
    pub source: usize,
    /// Slot in which the acknowledged packet was forwarded by the base station.
    pub forward_slot: Slot,
    pub arrival_slot: Slot,
    /// Destination timestamp right after the delivery.
    pub dest_timestamp: Slot,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeliveryEvents {
    pub receptions: Vec<Reception>,
    pub deliveries: Vec<Delivery>,
    pub acks: Vec<Ack>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    slot: Slot,
    max_scheduled: usize,
    fwd_delay: Vec<u64>,
    fb_delay: Vec<FeedbackDelay>,
    queues: Vec<Packet>,
    dest_timestamp: Vec<Slot>,
    forward: Vec<VecDeque<InFlight>>,
    feedback: Vec<VecDeque<PendingAck>>,
}

impl NetworkState {
    /// State at the beginning of slot 1: every source has just generated a
    /// packet and every destination has AoI 1.
    pub fn new(config: &NetworkConfig) -> Self {
        let n = config.n_sources();
        NetworkState {
            slot: 1,
            max_scheduled: config.max_scheduled(),
            fwd_delay: config.sources().iter().map(|s| s.fwd_delay).collect(),
            fb_delay: config.sources().iter().map(|s| s.fb_delay).collect(),
            queues: (0..n)
                .map(|source| Packet {
                    source,
                    seq: 0,
                    gen_slot: 1,
                })
                .collect(),
            dest_timestamp: vec![0; n],
            forward: vec![VecDeque::new(); n],
            feedback: vec![VecDeque::new(); n],
        }
    }

    pub fn slot(&self) -> Slot {
        self.slot
    }

    pub fn n_sources(&self) -> usize {
        self.queues.len()
    }

    /// `h_i(t)`.
    pub fn aoi(&self, i: usize) -> u64 {
        self.slot - self.dest_timestamp[i]
    }

    /// `z_i(t)`.
    pub fn system_time(&self, i: usize) -> u64 {
        self.slot - self.queues[i].gen_slot
    }

    pub fn source_timestamp(&self, i: usize) -> Slot {
        self.queues[i].gen_slot
    }

    pub fn dest_timestamp(&self, i: usize) -> Slot {
        self.dest_timestamp[i]
    }

    pub fn queued(&self, i: usize) -> Packet {
        self.queues[i]
    }

    /// `(1/N) sum_i alpha_i h_i(t)`.
    pub fn weighted_aoi(&self, weights: &[f64]) -> f64 {
        let n = self.queues.len() as f64;
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.aoi(i) as f64)
            .sum::<f64>()
            / n
    }

    /// Runs slot `t`: transmissions, forwarding, deliveries and feedback, then
    /// applies next-slot generations and moves to `t + 1`.
    pub fn advance_slot(
        &mut self,
        obs: &mut ObservationLog,
        decision: &[usize],
        rand: &SlotRandomness,
    ) -> Result<DeliveryEvents> {
        let n = self.queues.len();
        if decision.len() > self.max_scheduled {
            return Err(Error::Config(format!(
                "decision schedules {} sources, K = {}",
                decision.len(),
                self.max_scheduled
            )));
        }
        for (k, &i) in decision.iter().enumerate() {
            if i >= n {
                return Err(Error::Config(format!(
                    "decision references source {i}, N = {n}"
                )));
            }
            if decision[..k].contains(&i) {
                return Err(Error::Config(format!("source {i} scheduled twice")));
            }
        }
        if rand.source_channel.len() != n
            || rand.dest_channel.len() != n
            || rand.next_generation.len() != n
        {
            return Err(Error::Config("slot randomness has wrong dimension".into()));
        }

        let t = self.slot;
        let mut events = DeliveryEvents::default();

        for &i in decision {
            if !rand.source_channel[i] {
                continue;
            }
            let packet = self.queues[i];
            events
                .receptions
                .push(obs.record_reception(i, t, packet.seq));
            self.forward[i].push_back(InFlight {
                packet,
                forward_slot: t,
                delivery_slot: t + self.fwd_delay[i],
                success: rand.dest_channel[i],
            });
        }

        for i in 0..n {
            while self.forward[i]
                .front()
                .is_some_and(|f| f.delivery_slot == t)
            {
                let f = self.forward[i].pop_front().expect("checked");
                if !f.success {
                    continue;
                }
                self.dest_timestamp[i] = self.dest_timestamp[i].max(f.packet.gen_slot);
                events.deliveries.push(Delivery {
                    source: i,
                    forward_slot: f.forward_slot,
                    gen_slot: f.packet.gen_slot,
                });
                if let FeedbackDelay::Finite(w) = self.fb_delay[i] {
                    self.feedback[i].push_back(PendingAck {
                        ack: Ack {
                            source: i,
                            forward_slot: f.forward_slot,
                            arrival_slot: t + w,
                            dest_timestamp: self.dest_timestamp[i],
                        },
                    });
                }
            }
            while self.feedback[i]
                .front()
                .is_some_and(|a| a.ack.arrival_slot == t)
            {
                let a = self.feedback[i].pop_front().expect("checked").ack;
                obs.record_ack(a);
                events.acks.push(a);
            }
        }

        self.slot = t + 1;
        for i in 0..n {
            if rand.next_generation[i] {
                let q = &mut self.queues[i];
                q.seq += 1;
                q.gen_slot = t + 1;
            }
            obs.record_aoi(i, self.aoi(i));
        }
        Ok(events)
    }
}

/// One packet as seen by the base station.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceivedPacket {
    seq: u64,
    slots: Vec<Slot>,
}

impl ReceivedPacket {
    /// Slots of successful receptions, ascending.
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn first(&self) -> Slot {
        self.slots[0]
    }

    pub fn last(&self) -> Slot {
        *self.slots.last().expect("non-empty")
    }

    pub fn count(&self) -> usize {
        self.slots.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceLog {
    fb_delay: FeedbackDelay,
    packets: Vec<ReceivedPacket>,
    receptions: Vec<Reception>,
    acks: Vec<Ack>,
    /// Ground-truth `h(1), h(2), ...`, only kept when feedback exists.
    aoi_history: Vec<u64>,
}

impl SourceLog {
    /// `D_i(t)`.
    pub fn packet_count(&self) -> usize {
        self.packets.len()
    }

    /// Packet `d` (1-based).
    pub fn packet(&self, d: usize) -> &ReceivedPacket {
        &self.packets[d - 1]
    }

    pub fn packets(&self) -> &[ReceivedPacket] {
        &self.packets
    }

    /// All successful receptions, chronological.
    pub fn receptions(&self) -> &[Reception] {
        &self.receptions
    }

    pub fn acks(&self) -> &[Ack] {
        &self.acks
    }

    /// `delta_bar[d]` with `delta_bar[0] = 0`.
    pub fn last_slot(&self, d: usize) -> Slot {
        if d == 0 {
            0
        } else {
            self.packets[d - 1].last()
        }
    }

    /// Checks `max T[d] < min T[d+1]` for every packet.
    pub fn check_ordering(&self) -> Result<()> {
        for (d, w) in self.packets.windows(2).enumerate() {
            if w[0].last() >= w[1].first() {
                return Err(Error::Observation(format!(
                    "packet {} last slot {} not before packet {} first slot {}",
                    d + 1,
                    w[0].last(),
                    d + 2,
                    w[1].first()
                )));
            }
        }
        for p in &self.packets {
            if p.slots.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Observation("reception slots not increasing".into()));
            }
        }
        Ok(())
    }
}

/// Everything the base station knows at the beginning of a slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationLog {
    sources: Vec<SourceLog>,
}

impl ObservationLog {
    pub fn new(config: &NetworkConfig) -> Self {
        ObservationLog {
            sources: config
                .sources()
                .iter()
                .map(|s| SourceLog {
                    fb_delay: s.fb_delay,
                    packets: Vec::new(),
                    receptions: Vec::new(),
                    acks: Vec::new(),
                    aoi_history: match s.fb_delay {
                        FeedbackDelay::Finite(_) => vec![1],
                        FeedbackDelay::Infinite => Vec::new(),
                    },
                })
                .collect(),
        }
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn source(&self, i: usize) -> &SourceLog {
        &self.sources[i]
    }

    /// Records a successful uplink reception of `seq` and returns it with its
    /// packet index and repeat flag.
    pub fn record_reception(&mut self, source: usize, slot: Slot, seq: u64) -> Reception {
        let log = &mut self.sources[source];
        let repeat = log.packets.last().is_some_and(|p| p.seq == seq);
        if repeat {
            log.packets.last_mut().expect("checked").slots.push(slot);
        } else {
            log.packets.push(ReceivedPacket {
                seq,
                slots: vec![slot],
            });
        }
        let r = Reception {
            source,
            slot,
            packet: log.packets.len(),
            repeat,
        };
        log.receptions.push(r);
        r
    }

    pub fn record_ack(&mut self, ack: Ack) {
        self.sources[ack.source].acks.push(ack);
    }

    fn record_aoi(&mut self, source: usize, h: u64) {
        let log = &mut self.sources[source];
        if log.fb_delay.finite().is_some() {
            log.aoi_history.push(h);
        }
    }

    /// `h_i(t - omega_i)` as known at the beginning of slot `now`; `h(1) = 1`
    /// stands in while `now - omega_i < 1`. `None` without feedback.
    pub fn delayed_aoi(&self, source: usize, now: Slot) -> Option<u64> {
        let log = &self.sources[source];
        let w = log.fb_delay.finite()?;
        let slot = now.saturating_sub(w).max(1);
        log.aoi_history.get(slot as usize - 1).copied()
    }
}

/// Running sum behind the EWSAoI metric.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EwsaoiAccumulator {
    sum: f64,
    slots: u64,
}

impl EwsaoiAccumulator {
    pub fn add(&mut self, state: &NetworkState, weights: &[f64]) {
        self.sum = weighted_aoi_accumulate(state, weights, self.sum);
        self.slots += 1;
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }

    pub fn value(&self) -> f64 {
        self.sum / self.slots as f64
    }
}

pub fn weighted_aoi_accumulate(state: &NetworkState, weights: &[f64], running_sum: f64) -> f64 {
    running_sum + state.weighted_aoi(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_source(theta: u64, fb: FeedbackDelay) -> NetworkConfig {
        NetworkConfig::new(
            1,
            vec![SourceConfig {
                weight: 1.0,
                src_reliability: 1.0,
                dst_reliability: 1.0,
                fwd_delay: theta,
                fb_delay: fb,
                gen: GenSpec::Periodic { period: 3 },
            }],
        )
        .unwrap()
    }

    fn rnd(src: bool, dst: bool, gen: bool) -> SlotRandomness {
        SlotRandomness {
            source_channel: vec![src],
            dest_channel: vec![dst],
            next_generation: vec![gen],
        }
    }

    #[test]
    fn immediate_delivery_resets_aoi() {
        let cfg = one_source(0, FeedbackDelay::Infinite);
        let mut s = NetworkState::new(&cfg);
        let mut obs = ObservationLog::new(&cfg);
        assert_eq!((s.aoi(0), s.system_time(0)), (1, 0));
        s.advance_slot(&mut obs, &[0], &rnd(true, true, false))
            .unwrap();
        assert_eq!(s.aoi(0), 1);
    }

    #[test]
    fn no_delivery_grows_aoi() {
        let cfg = one_source(0, FeedbackDelay::Infinite);
        let mut s = NetworkState::new(&cfg);
        let mut obs = ObservationLog::new(&cfg);
        for h in 2..6 {
            s.advance_slot(&mut obs, &[], &rnd(true, true, false))
                .unwrap();
            assert_eq!(s.aoi(0), h);
        }
        // destination drops the packet
        s.advance_slot(&mut obs, &[0], &rnd(true, false, false))
            .unwrap();
        assert_eq!(s.aoi(0), 6);
    }

    #[test]
    fn failed_uplink_changes_nothing() {
        let cfg = one_source(2, FeedbackDelay::Finite(1));
        let mut s = NetworkState::new(&cfg);
        let mut obs = ObservationLog::new(&cfg);
        let before = (
            obs.source(0).packet_count(),
            obs.source(0).receptions().len(),
        );
        let ev = s
            .advance_slot(&mut obs, &[0], &rnd(false, true, false))
            .unwrap();
        assert!(ev.receptions.is_empty() && ev.deliveries.is_empty());
        assert_eq!(
            before,
            (
                obs.source(0).packet_count(),
                obs.source(0).receptions().len()
            )
        );
        assert!(s.forward[0].is_empty());
    }

    #[test]
    fn repeated_packet_extends_slot_set() {
        let cfg = one_source(0, FeedbackDelay::Infinite);
        let mut s = NetworkState::new(&cfg);
        let mut obs = ObservationLog::new(&cfg);
        s.advance_slot(&mut obs, &[0], &rnd(true, true, false))
            .unwrap();
        let ev = s
            .advance_slot(&mut obs, &[0], &rnd(true, true, false))
            .unwrap();
        assert!(ev.receptions[0].repeat);
        let log = obs.source(0);
        assert_eq!(log.packet_count(), 1);
        assert_eq!(log.packet(1).slots(), &[1, 2]);
        s.advance_slot(&mut obs, &[], &rnd(true, true, true))
            .unwrap();
        s.advance_slot(&mut obs, &[0], &rnd(true, true, false))
            .unwrap();
        assert_eq!(obs.source(0).packet_count(), 2);
        assert_eq!(obs.source(0).packet(2).slots(), &[4]);
        obs.source(0).check_ordering().unwrap();
    }

    #[test]
    fn delayed_delivery_and_feedback() {
        let cfg = one_source(2, FeedbackDelay::Finite(1));
        let mut s = NetworkState::new(&cfg);
        let mut obs = ObservationLog::new(&cfg);
        // forward in slot 1, delivered in slot 3, AoI lowered in slot 4, ack in slot 4
        s.advance_slot(&mut obs, &[0], &rnd(true, true, false))
            .unwrap();
        s.advance_slot(&mut obs, &[], &rnd(true, true, false))
            .unwrap();
        assert_eq!(s.aoi(0), 3);
        let ev = s
            .advance_slot(&mut obs, &[], &rnd(true, true, false))
            .unwrap();
        assert_eq!(ev.deliveries.len(), 1);
        assert_eq!(s.aoi(0), 3); // z(1) + theta + 1
        assert!(obs.source(0).acks().is_empty());
        let ev = s
            .advance_slot(&mut obs, &[], &rnd(true, true, false))
            .unwrap();
        assert_eq!(
            ev.acks,
            vec![Ack {
                source: 0,
                forward_slot: 1,
                arrival_slot: 4,
                dest_timestamp: 1
            }]
        );
        // h history known with one slot of delay
        assert_eq!(obs.delayed_aoi(0, 5), Some(3));
        assert_eq!(obs.delayed_aoi(0, 1), Some(1));
    }

    #[test]
    fn rejects_bad_decisions() {
        let cfg = one_source(0, FeedbackDelay::Infinite);
        let mut s = NetworkState::new(&cfg);
        let mut obs = ObservationLog::new(&cfg);
        assert!(s
            .advance_slot(&mut obs, &[1], &rnd(true, true, false))
            .is_err());
        assert!(s
            .advance_slot(&mut obs, &[0, 0], &rnd(true, true, false))
            .is_err());
    }

    #[test]
    fn config_validation() {
        let base = SourceConfig {
            weight: 1.0,
            src_reliability: 0.5,
            dst_reliability: 0.5,
            fwd_delay: 0,
            fb_delay: FeedbackDelay::Infinite,
            gen: GenSpec::Periodic { period: 1 },
        };
        assert!(NetworkConfig::new(2, vec![base.clone()]).is_err());
        assert!(NetworkConfig::new(0, vec![base.clone()]).is_err());
        let mut bad = base.clone();
        bad.dst_reliability = 0.0;
        assert!(NetworkConfig::new(1, vec![bad]).is_err());
        let mut bad = base.clone();
        bad.weight = -1.0;
        assert!(NetworkConfig::new(1, vec![bad]).is_err());
        assert!(NetworkConfig::new(1, vec![base]).is_ok());
    }

    #[test]
    fn weighted_aoi_arithmetic() {
        let mk = |w| SourceConfig {
            weight: w,
            src_reliability: 1.0,
            dst_reliability: 1.0,
            fwd_delay: 0,
            fb_delay: FeedbackDelay::Infinite,
            gen: GenSpec::Periodic { period: 1 },
        };
        let cfg = NetworkConfig::new(1, vec![mk(2.0), mk(1.0)]).unwrap();
        let mut s = NetworkState::new(&cfg);
        s.slot = 6;
        s.dest_timestamp = vec![3, 0];
        assert_eq!(weighted_aoi_accumulate(&s, &[2.0, 1.0], 0.0), 6.0);
    }
}
