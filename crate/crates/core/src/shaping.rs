//! Constant-rate flowlets.
//!
//! A sender emits exactly one packet per slot of width `1/B` for the
//! flowlet lifetime `T`, choosing per slot between splittable chaff, data
//! and plain chaff. Nodes mirror the rate per flowlet: forward data when
//! present, else emit cached chaff, else count a failure. More than `H`
//! failures terminate the flowlet at that node.
//!
//! Both sides are generic over the packet type so simulations can run with
//! real onion packets or lightweight tokens.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::ConfigError;

pub const NS_PER_SEC: u64 = 1_000_000_000;

/// How the node failure counter evolves when a slot is filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FailureCounting {
    /// Any emission resets `h` to zero, so `H` bounds consecutive empty slots.
    #[default]
    Consecutive,
    /// `h` only grows over the flowlet's life.
    Cumulative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowletConfig {
    /// Packets per second.
    pub rate_b: f64,
    /// Lifetime in seconds.
    pub lifetime_t: f64,
    pub fail_threshold_h: u32,
    pub chaff_cap: usize,
    /// Split probability per path node, index 0 being the first hop.
    pub split_prob: Vec<f64>,
    /// Upper bound on trailing pad slots at shutdown.
    pub pad_max: u32,
    pub counting: FailureCounting,
}

impl Default for FlowletConfig {
    fn default() -> Self {
        FlowletConfig {
            rate_b: 1.0,
            lifetime_t: 60.0,
            fail_threshold_h: 2,
            chaff_cap: 3,
            split_prob: Vec::new(),
            pad_max: 16,
            counting: FailureCounting::Consecutive,
        }
    }
}

impl FlowletConfig {
    /// Uniform split probability over a path of `hops` nodes.
    pub fn with_uniform_split(mut self, hops: usize, p: f64) -> Self {
        self.split_prob = vec![p; hops];
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rate_b > 0.0 && self.rate_b.is_finite()) {
            return Err(ConfigError::Invalid(format!("rate {} must be positive", self.rate_b)));
        }
        if !(self.lifetime_t >= 0.0 && self.lifetime_t.is_finite()) {
            return Err(ConfigError::Invalid(format!("lifetime {} must be non-negative", self.lifetime_t)));
        }
        if self.fail_threshold_h < 1 {
            return Err(ConfigError::Invalid("failure threshold must be at least 1".into()));
        }
        if let Some(p) = self.split_prob.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ConfigError::Invalid(format!("split probability {p} outside [0, 1]")));
        }
        if self.period_ns() == 0 {
            return Err(ConfigError::Invalid(format!("rate {} too high for a nanosecond clock", self.rate_b)));
        }
        Ok(())
    }

    /// Slot width on the integer nanosecond clock.
    pub fn period_ns(&self) -> u64 {
        (NS_PER_SEC as f64 / self.rate_b).round() as u64
    }

    /// Slots in the active phase, excluding shutdown padding.
    pub fn active_slots(&self) -> u64 {
        (self.lifetime_t * self.rate_b + 1e-9).floor() as u64
    }
}

/// What the sender puts in one slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SlotKind<P> {
    /// Splittable chaff to be split at the given path node.
    SplitChaff { hop: usize },
    Data(P),
    Chaff,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot<P> {
    pub index: u64,
    pub time_ns: u64,
    pub kind: SlotKind<P>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SenderPhase {
    Active,
    Padding { remaining: u32 },
    Stopped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("flowlet terminated")]
pub struct Terminated;

/// Per-hop Bernoulli draws; the smallest successful hop wins.
pub fn draw_split_hop<R: Rng + ?Sized>(split_prob: &[f64], rng: &mut R) -> Option<usize> {
    let mut winner = None;
    // draw every hop so the RNG stream does not depend on the outcome
    for (i, &p) in split_prob.iter().enumerate() {
        if rng.random_bool(p) && winner.is_none() {
            winner = Some(i);
        }
    }
    winner
}

#[derive(Clone, Debug)]
pub struct SenderFlowlet<P> {
    cfg: FlowletConfig,
    start_ns: u64,
    period_ns: u64,
    active_slots: u64,
    next_index: u64,
    data: VecDeque<P>,
    phase: SenderPhase,
}

impl<P> SenderFlowlet<P> {
    pub fn new(cfg: FlowletConfig, start_ns: u64) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let period_ns = cfg.period_ns();
        let active_slots = cfg.active_slots();
        Ok(SenderFlowlet {
            cfg,
            start_ns,
            period_ns,
            active_slots,
            next_index: 0,
            data: VecDeque::new(),
            phase: SenderPhase::Active,
        })
    }

    pub fn config(&self) -> &FlowletConfig {
        &self.cfg
    }

    pub fn phase(&self) -> SenderPhase {
        self.phase
    }

    pub fn push_data(&mut self, p: P) {
        self.data.push_back(p);
    }

    pub fn queued_data(&self) -> usize {
        self.data.len()
    }

    /// Hand back data that did not fit into this flowlet.
    pub fn drain_data(&mut self) -> Vec<P> {
        self.data.drain(..).collect()
    }

    pub fn slot_time(&self, index: u64) -> u64 {
        self.start_ns + index * self.period_ns
    }

    /// Time of the next slot, `None` once stopped.
    pub fn next_slot_time(&self) -> Option<u64> {
        match self.phase {
            SenderPhase::Stopped => None,
            _ => Some(self.slot_time(self.next_index)),
        }
    }

    /// Leave the active phase: draw a pad count uniform in `[0, pad_max]`
    /// and fill that many further slots with chaff before stopping.
    pub fn shutdown<R: Rng + ?Sized>(&mut self, rng: &mut R) -> u32 {
        match self.phase {
            SenderPhase::Active => {
                let pad = rng.random_range(0..=self.cfg.pad_max);
                self.phase = if pad == 0 {
                    SenderPhase::Stopped
                } else {
                    SenderPhase::Padding { remaining: pad }
                };
                pad
            }
            SenderPhase::Padding { remaining } => remaining,
            SenderPhase::Stopped => 0,
        }
    }

    /// Fill the next slot. Shutdown starts on its own once the lifetime's
    /// slots are used up.
    pub fn emit<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Slot<P>, Terminated> {
        if self.phase == SenderPhase::Active && self.next_index >= self.active_slots {
            self.shutdown(rng);
        }
        let kind = match self.phase {
            SenderPhase::Stopped => return Err(Terminated),
            SenderPhase::Padding { remaining } => {
                self.phase = if remaining <= 1 {
                    SenderPhase::Stopped
                } else {
                    SenderPhase::Padding { remaining: remaining - 1 }
                };
                SlotKind::Chaff
            }
            SenderPhase::Active => match draw_split_hop(&self.cfg.split_prob, rng) {
                Some(hop) => SlotKind::SplitChaff { hop },
                None => match self.data.pop_front() {
                    Some(p) => SlotKind::Data(p),
                    None => SlotKind::Chaff,
                },
            },
        };
        let index = self.next_index;
        self.next_index += 1;
        Ok(Slot {
            index,
            time_ns: self.slot_time(index),
            kind,
        })
    }
}

/// A cached child packet and the last time it may still be emitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChaffEntry<P> {
    pub packet: P,
    pub deadline_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TickOutcome<P> {
    Emit(P),
    EmitFromChaff(P),
    CountFailure,
    Terminate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NodeFlowletStats {
    pub forwarded: u64,
    pub chaff_emitted: u64,
    pub failures: u64,
    pub chaff_dropped_full: u64,
    pub chaff_expired: u64,
}

/// Per-flowlet state held by a node.
#[derive(Clone, Debug)]
pub struct NodeFlowletState<P> {
    fail_threshold: u32,
    chaff_cap: usize,
    counting: FailureCounting,
    data: VecDeque<P>,
    chaff: VecDeque<ChaffEntry<P>>,
    h: u32,
    terminated: bool,
    last_slot_ns: Option<u64>,
    stats: NodeFlowletStats,
}

impl<P> NodeFlowletState<P> {
    pub fn new(fail_threshold: u32, chaff_cap: usize, counting: FailureCounting) -> Self {
        NodeFlowletState {
            fail_threshold,
            chaff_cap,
            counting,
            data: VecDeque::new(),
            chaff: VecDeque::new(),
            h: 0,
            terminated: false,
            last_slot_ns: None,
            stats: NodeFlowletStats::default(),
        }
    }

    pub fn from_config(cfg: &FlowletConfig) -> Self {
        Self::new(cfg.fail_threshold_h, cfg.chaff_cap, cfg.counting)
    }

    pub fn fail_count(&self) -> u32 {
        self.h
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn chaff_len(&self) -> usize {
        self.chaff.len()
    }

    pub fn data_len(&self) -> usize {
        self.data.len()
    }

    pub fn last_slot_ns(&self) -> Option<u64> {
        self.last_slot_ns
    }

    pub fn stats(&self) -> NodeFlowletStats {
        self.stats
    }

    /// Queue a data packet for the next slot.
    pub fn enqueue_data(&mut self, p: P) {
        if !self.terminated {
            self.data.push_back(p);
        }
    }

    /// Cache both children of a split. Entries beyond the cap are dropped,
    /// newest first. Returns how many were kept.
    pub fn accept_split(&mut self, children: [ChaffEntry<P>; 2]) -> usize {
        if self.terminated {
            return 0;
        }
        let mut kept = 0;
        for child in children {
            if self.chaff.len() < self.chaff_cap {
                self.chaff.push_back(child);
                kept += 1;
            } else {
                self.stats.chaff_dropped_full += 1;
            }
        }
        kept
    }

    /// One slot for this flowlet. Data first, then cached chaff whose
    /// deadline has not passed, else a failure. On termination the state
    /// is erased.
    pub fn tick(&mut self, data_arrival: Option<P>, now_ns: u64) -> TickOutcome<P> {
        if self.terminated {
            return TickOutcome::Terminate;
        }
        if let Some(p) = data_arrival {
            self.data.push_back(p);
        }
        self.last_slot_ns = Some(now_ns);
        if let Some(p) = self.data.pop_front() {
            self.filled();
            self.stats.forwarded += 1;
            return TickOutcome::Emit(p);
        }
        while let Some(entry) = self.chaff.pop_front() {
            if entry.deadline_ns < now_ns {
                self.stats.chaff_expired += 1;
                continue;
            }
            self.filled();
            self.stats.chaff_emitted += 1;
            return TickOutcome::EmitFromChaff(entry.packet);
        }
        self.h += 1;
        self.stats.failures += 1;
        if self.h > self.fail_threshold {
            self.terminated = true;
            self.data.clear();
            self.chaff.clear();
            return TickOutcome::Terminate;
        }
        TickOutcome::CountFailure
    }

    fn filled(&mut self) {
        if self.counting == FailureCounting::Consecutive {
            self.h = 0;
        }
    }

    /// Memory held for this flowlet, counting packets at `packet_len`
    /// octets plus fixed counters.
    pub fn state_bytes(&self, packet_len: usize) -> usize {
        (self.chaff.len() + self.data.len()) * packet_len + NODE_COUNTER_BYTES
    }

    /// Upper bound of [`state_bytes`](Self::state_bytes) over the
    /// flowlet's life when data never queues past one slot.
    pub fn state_bound(chaff_cap: usize, packet_len: usize) -> usize {
        (chaff_cap + 1) * packet_len + NODE_COUNTER_BYTES
    }
}

/// Counter, flag and timestamp kept per flowlet.
pub const NODE_COUNTER_BYTES: usize = 4 + 1 + 8;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn cfg() -> FlowletConfig {
        FlowletConfig {
            rate_b: 10.0,
            lifetime_t: 2.0,
            pad_max: 0,
            ..FlowletConfig::default()
        }
    }

    #[test]
    fn data_then_chaff_without_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = SenderFlowlet::new(cfg().with_uniform_split(4, 0.0), 0).unwrap();
        s.push_data(7u32);
        assert_eq!(s.emit(&mut rng).unwrap().kind, SlotKind::Data(7));
        assert_eq!(s.emit(&mut rng).unwrap().kind, SlotKind::Chaff);
    }

    #[test]
    fn one_slot_per_period_then_terminated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s: SenderFlowlet<()> = SenderFlowlet::new(cfg(), 1_000).unwrap();
        let mut times = Vec::new();
        while let Ok(slot) = s.emit(&mut rng) {
            times.push(slot.time_ns);
        }
        assert_eq!(times.len(), 20);
        assert!(times.windows(2).all(|w| w[1] - w[0] == 100_000_000));
        assert_eq!(times[0], 1_000);
        assert_eq!(s.emit(&mut rng), Err(Terminated));
        assert_eq!(s.next_slot_time(), None);
    }

    #[test]
    fn split_frequency_at_one_hop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = FlowletConfig {
            lifetime_t: 1e4,
            rate_b: 1.0,
            split_prob: vec![0.0, 0.0, 0.05, 0.0],
            ..cfg()
        };
        let mut s: SenderFlowlet<()> = SenderFlowlet::new(c, 0).unwrap();
        let mut hits = 0;
        for _ in 0..10_000 {
            match s.emit(&mut rng).unwrap().kind {
                SlotKind::SplitChaff { hop } => {
                    assert_eq!(hop, 2);
                    hits += 1
                }
                SlotKind::Chaff => {}
                SlotKind::Data(_) => unreachable!(),
            }
        }
        let frac = hits as f64 / 1e4;
        assert!((frac - 0.05).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn smallest_hop_wins_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            assert_eq!(draw_split_hop(&[0.0, 1.0, 1.0], &mut rng), Some(1));
        }
        assert_eq!(draw_split_hop(&[], &mut rng), None);
    }

    #[test]
    fn split_chaff_takes_priority_over_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = SenderFlowlet::new(cfg().with_uniform_split(3, 1.0), 0).unwrap();
        s.push_data(1u8);
        assert_eq!(s.emit(&mut rng).unwrap().kind, SlotKind::SplitChaff { hop: 0 });
        assert_eq!(s.queued_data(), 1);
    }

    #[test]
    fn pad_counts_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = FlowletConfig {
            pad_max: 16,
            ..cfg()
        };
        let mut counts = [0u32; 17];
        for _ in 0..10_000 {
            let mut s: SenderFlowlet<()> = SenderFlowlet::new(c.clone(), 0).unwrap();
            counts[s.shutdown(&mut rng) as usize] += 1;
        }
        let expected = 10_000.0 / 17.0;
        let stat: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(16.0).unwrap().cdf(stat);
        assert!(p >= 0.05, "chi2 {stat} p {p}");
    }

    #[test]
    fn two_flowlets_rarely_stop_together() {
        // equal pad counts happen with probability 1/17
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = FlowletConfig {
            pad_max: 16,
            ..cfg()
        };
        let trials = 20_000;
        let mut same = 0;
        for _ in 0..trials {
            let mut a: SenderFlowlet<()> = SenderFlowlet::new(c.clone(), 0).unwrap();
            let mut b: SenderFlowlet<()> = SenderFlowlet::new(c.clone(), 0).unwrap();
            if a.shutdown(&mut rng) == b.shutdown(&mut rng) {
                same += 1;
            }
        }
        let frac = same as f64 / trials as f64;
        assert!((frac - 1.0 / 17.0).abs() < 0.006, "{frac}");
    }

    #[test]
    fn padding_slots_are_chaff_and_then_stop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = FlowletConfig {
            lifetime_t: 0.0,
            pad_max: 5,
            ..cfg()
        };
        let mut s = SenderFlowlet::new(c, 0).unwrap();
        s.push_data(1u8);
        let pad = s.shutdown(&mut rng);
        for _ in 0..pad {
            assert_eq!(s.emit(&mut rng).unwrap().kind, SlotKind::Chaff);
        }
        assert_eq!(s.emit(&mut rng), Err(Terminated));
    }

    fn entry(p: u32) -> ChaffEntry<u32> {
        ChaffEntry {
            packet: p,
            deadline_ns: u64::MAX,
        }
    }

    #[test]
    fn node_forwards_data_and_keeps_counter() {
        for counting in [FailureCounting::Consecutive, FailureCounting::Cumulative] {
            let mut n = NodeFlowletState::new(2, 3, counting);
            assert_eq!(n.tick(Some(1u32), 0), TickOutcome::Emit(1));
            assert_eq!(n.fail_count(), 0);
        }
    }

    #[test]
    fn node_uses_chaff_then_terminates() {
        let mut n = NodeFlowletState::new(2, 3, FailureCounting::Consecutive);
        n.accept_split([entry(1), entry(2)]);
        assert_eq!(n.tick(None, 0), TickOutcome::EmitFromChaff(1));
        assert_eq!(n.chaff_len(), 1);
        assert_eq!(n.tick(None, 1), TickOutcome::EmitFromChaff(2));
        assert_eq!(n.tick(None, 2), TickOutcome::CountFailure);
        assert_eq!(n.tick(None, 3), TickOutcome::CountFailure);
        assert_eq!(n.fail_count(), 2);
        assert_eq!(n.tick(None, 4), TickOutcome::Terminate);
        assert!(n.is_terminated());
        assert_eq!(n.state_bytes(1395), NODE_COUNTER_BYTES);
        assert_eq!(n.tick(Some(9), 5), TickOutcome::Terminate);
    }

    #[test]
    fn counting_modes_differ_after_refill() {
        let mut cons = NodeFlowletState::new(2, 3, FailureCounting::Consecutive);
        let mut cumu = NodeFlowletState::new(2, 3, FailureCounting::Cumulative);
        for n in [&mut cons, &mut cumu] {
            n.tick(None, 0);
            n.tick(None, 1);
            n.tick(Some(5), 2);
        }
        assert_eq!(cons.fail_count(), 0);
        assert_eq!(cumu.fail_count(), 2);
        assert_eq!(cumu.tick(None, 3), TickOutcome::Terminate);
        assert_eq!(cons.tick(None, 3), TickOutcome::CountFailure);
    }

    #[test]
    fn split_capacity() {
        let mut n = NodeFlowletState::new(2, 3, FailureCounting::Consecutive);
        n.accept_split([entry(0), entry(9)]);
        n.tick(None, 0);
        assert_eq!(n.chaff_len(), 1);
        assert_eq!(n.accept_split([entry(1), entry(2)]), 2);
        assert_eq!(n.chaff_len(), 3);
        assert_eq!(n.accept_split([entry(3), entry(4)]), 0);
        assert_eq!(n.chaff_len(), 3);
        assert_eq!(n.stats().chaff_dropped_full, 2);
        // the older entries survive
        assert_eq!(n.tick(None, 1), TickOutcome::EmitFromChaff(9));

        let mut z = NodeFlowletState::new(2, 0, FailureCounting::Consecutive);
        assert_eq!(z.accept_split([entry(1), entry(2)]), 0);
        assert_eq!(z.tick(None, 0), TickOutcome::CountFailure);
    }

    #[test]
    fn expired_chaff_is_skipped() {
        let mut n = NodeFlowletState::new(1, 3, FailureCounting::Consecutive);
        n.accept_split([
            ChaffEntry {
                packet: 1u32,
                deadline_ns: 10,
            },
            ChaffEntry {
                packet: 2,
                deadline_ns: 100,
            },
        ]);
        assert_eq!(n.tick(None, 50), TickOutcome::EmitFromChaff(2));
        assert_eq!(n.stats().chaff_expired, 1);
    }

    #[test]
    fn config_validation() {
        assert!(FlowletConfig { rate_b: 0.0, ..cfg() }.validate().is_err());
        assert!(FlowletConfig { fail_threshold_h: 0, ..cfg() }.validate().is_err());
        assert!(cfg().with_uniform_split(2, 1.5).validate().is_err());
        assert!(FlowletConfig { rate_b: 1e10, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }
}
