//! Setup-message batching: hold messages until `m_batch` have arrived, then
//! release them in a uniformly random order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::ConfigError;
use crate::shaping::NS_PER_SEC;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MixerConfig {
    pub batch_size: usize,
    pub seed: u64,
    /// Release a partial batch once its oldest message waited this long.
    /// Off by default.
    pub max_wait_ns: Option<u64>,
}

impl Default for MixerConfig {
    fn default() -> Self {
        MixerConfig {
            batch_size: 16,
            seed: 0,
            max_wait_ns: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Queued<M> {
    pub msg: M,
    pub arrived_ns: u64,
}

#[derive(Clone, Debug)]
pub struct Mixer<M> {
    cfg: MixerConfig,
    pending: Vec<Queued<M>>,
    rng: ChaCha12Rng,
    batches: u64,
}

impl<M> Mixer<M> {
    pub fn new(cfg: MixerConfig) -> Result<Self, ConfigError> {
        if cfg.batch_size == 0 {
            return Err(ConfigError::Invalid("batch size must be at least 1".into()));
        }
        Ok(Mixer {
            rng: ChaCha12Rng::seed_from_u64(cfg.seed),
            pending: Vec::with_capacity(cfg.batch_size),
            cfg,
            batches: 0,
        })
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn batches_emitted(&self) -> u64 {
        self.batches
    }

    /// Add a message. Returns the shuffled batch when this message
    /// completes one.
    pub fn offer(&mut self, msg: M, now_ns: u64) -> Option<Vec<Queued<M>>> {
        self.pending.push(Queued {
            msg,
            arrived_ns: now_ns,
        });
        if self.pending.len() >= self.cfg.batch_size {
            Some(self.release())
        } else {
            None
        }
    }

    /// Flush a partial batch whose oldest message exceeded `max_wait_ns`.
    pub fn poll(&mut self, now_ns: u64) -> Option<Vec<Queued<M>>> {
        let wait = self.cfg.max_wait_ns?;
        let oldest = self.pending.first()?.arrived_ns;
        (now_ns.saturating_sub(oldest) >= wait).then(|| self.release())
    }

    /// Drop the trailing partial batch, returning it unshuffled.
    pub fn take_pending(&mut self) -> Vec<Queued<M>> {
        std::mem::take(&mut self.pending)
    }

    fn release(&mut self) -> Vec<Queued<M>> {
        let mut batch = std::mem::replace(&mut self.pending, Vec::with_capacity(self.cfg.batch_size));
        batch.shuffle(&mut self.rng);
        self.batches += 1;
        batch
    }
}

/// Time to accumulate a batch of `batch_size` at `setup_rate` messages per
/// second.
pub fn expected_batch_latency(batch_size: usize, setup_rate: f64) -> f64 {
    batch_size as f64 / setup_rate
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencySample {
    /// Mean over messages of their wait in the mixer, seconds.
    pub mean_wait: f64,
    /// Mean over batches of first arrival to release, seconds.
    pub mean_batch_delay: f64,
    pub std_wait: f64,
    pub std_batch_delay: f64,
    pub messages: u64,
}

/// Feed Poisson arrivals at `rate` per second through a mixer and measure
/// the delays it adds.
pub fn measure_poisson_latency<R: rand::Rng + ?Sized>(
    batch_size: usize,
    rate: f64,
    batches: u64,
    rng: &mut R,
) -> Result<LatencySample, ConfigError> {
    if !(rate > 0.0) {
        return Err(ConfigError::Invalid(format!("arrival rate {rate} must be positive")));
    }
    let exp = rand_distr::Exp::new(rate).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut mixer = Mixer::new(MixerConfig {
        batch_size,
        seed: rng.random(),
        max_wait_ns: None,
    })?;
    let mut t = 0.0f64;
    let mut wait_sum = 0.0;
    let mut wait_sq = 0.0;
    let mut batch_sum = 0.0;
    let mut batch_sq = 0.0;
    let mut messages = 0u64;
    while mixer.batches_emitted() < batches {
        t += rng.sample(exp);
        let now = (t * NS_PER_SEC as f64) as u64;
        if let Some(out) = mixer.offer((), now) {
            let first = out.iter().map(|q| q.arrived_ns).min().expect("non-empty batch");
            let d = (now - first) as f64 / NS_PER_SEC as f64;
            batch_sum += d;
            batch_sq += d * d;
            for q in &out {
                let w = (now - q.arrived_ns) as f64 / NS_PER_SEC as f64;
                wait_sum += w;
                wait_sq += w * w;
            }
            messages += out.len() as u64;
        }
    }
    let std = |sum: f64, sq: f64, n: f64| ((sq - sum * sum / n) / (n - 1.0).max(1.0)).max(0.0).sqrt();
    Ok(LatencySample {
        mean_wait: wait_sum / messages as f64,
        mean_batch_delay: batch_sum / batches as f64,
        std_wait: std(wait_sum, wait_sq, messages as f64),
        std_batch_delay: std(batch_sum, batch_sq, batches as f64),
        messages,
    })
}
