//! Neighbor link encryption and padding.
//!
//! Each direction of a link sends one fixed-length frame per slot:
//!
//! ```text
//! nonce (16, clear) | E(type (1) | body (packet_len))
//! ```
//!
//! `type` is `0x00` for a protocol packet and `0x01` for link chaff. The
//! nonce carries a per-direction frame counter in its upper 64 bits, so the
//! counter-mode keystreams of consecutive frames never overlap. Link chaff
//! has a random body and is discarded by the receiver.

use std::collections::VecDeque;

use rand::{Rng, RngCore};

use crate::crypto::{kdf, stream_apply, KdfLabel, SymKey, IV_LEN};
use crate::error::ConfigError;
use crate::shaping::NS_PER_SEC;

pub const FRAME_OVERHEAD: usize = IV_LEN + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    Protocol = 0x00,
    LinkChaff = 0x01,
}

/// Rate override for `[start_ns, end_ns)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleEntry {
    pub start_ns: u64,
    pub end_ns: u64,
    pub rate: f64,
}

impl ScheduleEntry {
    /// Rate `B_hist + k_f * sigma` from historic aggregates.
    pub fn from_history(start_ns: u64, end_ns: u64, b_hist: f64, sigma: f64, k_f: f64) -> Self {
        ScheduleEntry {
            start_ns,
            end_ns,
            rate: b_hist + k_f * sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkConfig {
    pub link_key: SymKey,
    pub schedule: Vec<ScheduleEntry>,
    /// Frames per second outside scheduled intervals.
    pub base_rate: f64,
    /// Octets of the carried packet.
    pub packet_len: usize,
    /// Packets waiting for a slot beyond this are dropped.
    pub backlog_cap: usize,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.base_rate > 0.0) {
            return Err(ConfigError::Invalid(format!("base rate {} must be positive", self.base_rate)));
        }
        let mut sorted = self.schedule.clone();
        sorted.sort_by_key(|e| e.start_ns);
        for e in &sorted {
            if !(e.rate > 0.0) || e.start_ns >= e.end_ns {
                return Err(ConfigError::Invalid(format!("bad schedule entry {e:?}")));
            }
        }
        if sorted.windows(2).any(|w| w[0].end_ns > w[1].start_ns) {
            return Err(ConfigError::Invalid("schedule intervals overlap".into()));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        FRAME_OVERHEAD + self.packet_len
    }

    /// Rate in effect at `now_ns`.
    pub fn rate_at(&self, now_ns: u64) -> f64 {
        self.schedule
            .iter()
            .find(|e| e.start_ns <= now_ns && now_ns < e.end_ns)
            .map_or(self.base_rate, |e| e.rate)
    }

    pub fn slot_period_ns(&self, now_ns: u64) -> u64 {
        (NS_PER_SEC as f64 / self.rate_at(now_ns)).round().max(1.0) as u64
    }
}

/// `B_hist + k_f * sigma` inside a scheduled interval, else the base rate.
/// Only aggregates enter, never a single flowlet's rate.
pub fn scheduled_rate(cfg: &LinkConfig, now_ns: u64, b_hist: f64, sigma: f64, k_f: f64) -> f64 {
    if cfg.schedule.iter().any(|e| e.start_ns <= now_ns && now_ns < e.end_ns) {
        b_hist + k_f * sigma
    } else {
        cfg.base_rate
    }
}

fn frame_nonce(counter: u64) -> [u8; IV_LEN] {
    let mut n = [0u8; IV_LEN];
    n[..8].copy_from_slice(&counter.to_be_bytes());
    n
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkSendStats {
    pub protocol: u64,
    pub chaff: u64,
    pub overflow: u64,
}

/// Sending half of one link direction.
#[derive(Clone, Debug)]
pub struct LinkSender {
    cfg: LinkConfig,
    enc_key: SymKey,
    counter: u64,
    backlog: VecDeque<Vec<u8>>,
    stats: LinkSendStats,
}

impl LinkSender {
    pub fn new(cfg: LinkConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(LinkSender {
            enc_key: kdf(cfg.link_key.as_bytes(), KdfLabel::Enc),
            cfg,
            counter: 0,
            backlog: VecDeque::new(),
            stats: LinkSendStats::default(),
        })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn stats(&self) -> LinkSendStats {
        self.stats
    }

    pub fn backlog(&self) -> usize {
        self.backlog.len()
    }

    /// Queue a packet for the next free slot. Returns false when it was
    /// dropped because the backlog is full or its length is wrong.
    pub fn offer(&mut self, packet: Vec<u8>) -> bool {
        if packet.len() != self.cfg.packet_len || self.backlog.len() >= self.cfg.backlog_cap {
            self.stats.overflow += 1;
            return false;
        }
        self.backlog.push_back(packet);
        true
    }

    /// Produce the frame for one slot: the oldest queued packet, or link
    /// chaff with a random body.
    pub fn send_slot<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Vec<u8> {
        let mut frame = vec![0u8; self.cfg.frame_len()];
        match self.backlog.pop_front() {
            Some(p) => {
                frame[IV_LEN] = FrameType::Protocol as u8;
                frame[FRAME_OVERHEAD..].copy_from_slice(&p);
                self.stats.protocol += 1;
            }
            None => {
                frame[IV_LEN] = FrameType::LinkChaff as u8;
                rng.fill_bytes(&mut frame[FRAME_OVERHEAD..]);
                self.stats.chaff += 1;
            }
        }
        let nonce = frame_nonce(self.counter);
        self.counter += 1;
        frame[..IV_LEN].copy_from_slice(&nonce);
        stream_apply(&self.enc_key, &nonce, &mut frame[IV_LEN..]);
        frame
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkRecvStats {
    pub protocol: u64,
    pub chaff: u64,
    pub malformed: u64,
}

/// Receiving half of one link direction.
#[derive(Clone, Debug)]
pub struct LinkReceiver {
    enc_key: SymKey,
    frame_len: usize,
    stats: LinkRecvStats,
}

impl LinkReceiver {
    pub fn new(link_key: &SymKey, packet_len: usize) -> Self {
        LinkReceiver {
            enc_key: kdf(link_key.as_bytes(), KdfLabel::Enc),
            frame_len: FRAME_OVERHEAD + packet_len,
            stats: LinkRecvStats::default(),
        }
    }

    pub fn stats(&self) -> LinkRecvStats {
        self.stats
    }

    /// Decrypt a frame. Protocol frames yield their packet; link chaff and
    /// malformed frames yield nothing.
    pub fn receive(&mut self, frame: &[u8]) -> Option<Vec<u8>> {
        if frame.len() != self.frame_len {
            self.stats.malformed += 1;
            return None;
        }
        let nonce: [u8; IV_LEN] = frame[..IV_LEN].try_into().expect("length checked");
        let mut body = frame[IV_LEN..].to_vec();
        stream_apply(&self.enc_key, &nonce, &mut body);
        match body[0] {
            t if t == FrameType::Protocol as u8 => {
                self.stats.protocol += 1;
                body.remove(0);
                Some(body)
            }
            t if t == FrameType::LinkChaff as u8 => {
                self.stats.chaff += 1;
                None
            }
            _ => {
                self.stats.malformed += 1;
                None
            }
        }
    }
}

/// Draw a fresh link key; stands in for the neighbors' key agreement.
pub fn provision_link_key<R: Rng + ?Sized>(rng: &mut R) -> SymKey {
    SymKey::random(rng)
}
