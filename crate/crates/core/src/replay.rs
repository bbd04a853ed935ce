//! Replay detection with three time-phased blocked Bloom filters.
//!
//! Time is split into epochs of `ttl/2`. Epoch `i` inserts only into
//! subfilter `i mod 3`, and that subfilter is cleared when epoch `i` begins.
//! A key inserted during epoch `i` therefore survives until epoch `i + 3`
//! starts: strictly more than `ttl` and at most `1.5 * ttl` after insertion.
//! Lookups consult all three subfilters.
//!
//! Rotation is lazy: each call first advances the epoch and clears the
//! subfilters that became due, then queries and inserts.

use crate::crypto::{kdf, mac, KdfLabel, SymKey, IV_LEN};
use crate::error::ConfigError;

const LN2: f64 = std::f64::consts::LN_2;
const SUBFILTERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayConfig {
    /// Maximum packet lifetime, nanoseconds.
    pub ttl_ns: u64,
    /// Target false-positive rate of the whole detector.
    pub target_fp: f64,
    /// Expected insertions per `ttl/2` window.
    pub capacity: u64,
    /// Octets per block (one cache line by default).
    pub block_size: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            ttl_ns: 6_000_000_000,
            target_fp: 1e-6,
            capacity: 100_000,
            block_size: 64,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ttl_ns < 2 {
            return Err(ConfigError::Invalid("replay ttl must be positive".into()));
        }
        if !(self.target_fp > 0.0 && self.target_fp < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "target false-positive rate {} outside (0, 1)",
                self.target_fp
            )));
        }
        if self.block_size < 8 || self.block_size > MAX_BLOCK_WORDS * 8 || !self.block_size.is_power_of_two() {
            return Err(ConfigError::Invalid(format!(
                "block size {} must be a power of two in 8..=512",
                self.block_size
            )));
        }
        Ok(())
    }

    pub fn block_bits(&self) -> usize {
        self.block_size * 8
    }
}

/// Digest identifying one packet at one hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ReplayKey(pub [u8; 16]);

impl ReplayKey {
    /// Keyed digest of `(s, iv)`, so filter positions are unpredictable
    /// without the session key.
    pub fn derive(s: &SymKey, iv: &[u8; IV_LEN]) -> Self {
        ReplayKey(mac(&kdf(s.as_bytes(), KdfLabel::Mac), iv))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Fresh,
    Replay,
}

/// Bits for a standard Bloom filter holding `n` keys at false-positive
/// rate `p`: `-n ln p / (ln 2)^2`.
pub fn bloom_bits_closed_form(n: f64, p: f64) -> f64 {
    -n * p.ln() / (LN2 * LN2)
}

/// Expected false-positive rate of a blocked Bloom filter with `k` distinct
/// bits per key in blocks of `block_bits`, `n` keys spread over `blocks`.
/// Block loads are Poisson distributed.
pub fn blocked_fp(n: f64, blocks: usize, block_bits: usize, k: u32) -> f64 {
    let lambda = n / blocks as f64;
    let b = block_bits as f64;
    if lambda <= 0.0 {
        return 0.0;
    }
    let upper = (lambda + 12.0 * lambda.sqrt() + 30.0).ceil() as u64;
    let ln_lambda = lambda.ln();
    let keep = (1.0 - k as f64 / b).max(0.0);
    let mut ln_pmf = -lambda;
    let mut fp = 0.0;
    for i in 0..=upper {
        if i > 0 {
            ln_pmf += ln_lambda - (i as f64).ln();
        }
        let set_frac = 1.0 - keep.powf(i as f64);
        fp += ln_pmf.exp() * set_frac.powi(k as i32);
    }
    fp
}

/// Chosen geometry for one subfilter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterDims {
    pub blocks: usize,
    pub hashes: u32,
}

/// Smallest blocked geometry whose expected false-positive rate at `n`
/// keys is at most `p`. Starts from the closed-form size and grows it to
/// absorb the load variance between blocks.
pub fn dimension_blocked(n: u64, p: f64, block_bits: usize) -> FilterDims {
    let n = n.max(1) as f64;
    let mut blocks = ((bloom_bits_closed_form(n, p) / block_bits as f64).ceil() as usize).max(1);
    let max_k = (MAX_HASHES as u32).min(block_bits as u32);
    loop {
        let bits_per_key = blocks as f64 * block_bits as f64 / n;
        let guess = (bits_per_key * LN2).round().clamp(1.0, max_k as f64) as u32;
        let lo = guess.saturating_sub(3).max(1);
        let hi = (guess + 3).min(max_k);
        let (hashes, fp) = (lo..=hi)
            .map(|k| (k, blocked_fp(n, blocks, block_bits, k)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty range");
        if fp <= p {
            return FilterDims { blocks, hashes };
        }
        blocks += (blocks / 50).max(1);
    }
}

/// Per-subfilter target: a lookup probes all three subfilters.
pub fn subfilter_target(cfg: &ReplayConfig) -> f64 {
    cfg.target_fp / SUBFILTERS as f64
}

/// Total detector memory in octets for `cfg`.
pub fn size_filter(cfg: &ReplayConfig) -> usize {
    let dims = dimension_blocked(cfg.capacity, subfilter_target(cfg), cfg.block_bits());
    SUBFILTERS * dims.blocks * cfg.block_size
}

const MAX_HASHES: usize = 32;
const MAX_BLOCK_WORDS: usize = 64;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bloom filter whose `k` bits per key all fall inside one block.
#[derive(Clone, Debug)]
pub struct BlockedBloom {
    words: Vec<u64>,
    words_per_block: usize,
    blocks: usize,
    hashes: u32,
}

impl BlockedBloom {
    pub fn new(dims: FilterDims, block_size: usize) -> Self {
        let words_per_block = block_size / 8;
        BlockedBloom {
            words: vec![0; dims.blocks * words_per_block],
            words_per_block,
            blocks: dims.blocks,
            hashes: dims.hashes,
        }
    }

    /// Block index and `hashes` distinct bit offsets inside it, drawn from
    /// a splitmix64 stream seeded by the key's second half.
    fn positions(&self, key: &ReplayKey) -> (usize, [u16; MAX_HASHES]) {
        let a = u64::from_le_bytes(key.0[..8].try_into().expect("8 octets"));
        let mut state = u64::from_le_bytes(key.0[8..].try_into().expect("8 octets"));
        let block = ((a as u128 * self.blocks as u128) >> 64) as usize;
        let block_bits = self.words_per_block * 64;
        let width = block_bits.trailing_zeros();
        let mut seen = [0u64; MAX_BLOCK_WORDS];
        let mut out = [0u16; MAX_HASHES];
        let mut filled = 0;
        while filled < self.hashes as usize {
            let mut x = splitmix64(&mut state);
            for _ in 0..64 / width {
                let bit = (x as usize) & (block_bits - 1);
                x >>= width;
                if seen[bit / 64] & (1 << (bit % 64)) == 0 {
                    seen[bit / 64] |= 1 << (bit % 64);
                    out[filled] = bit as u16;
                    filled += 1;
                    if filled == self.hashes as usize {
                        break;
                    }
                }
            }
        }
        (block, out)
    }

    pub fn contains(&self, key: &ReplayKey) -> bool {
        let (block, bits) = self.positions(key);
        let words = &self.words[block * self.words_per_block..];
        bits[..self.hashes as usize].iter().all(|&b| words[b as usize / 64] & (1 << (b % 64)) != 0)
    }

    pub fn insert(&mut self, key: &ReplayKey) {
        let (block, bits) = self.positions(key);
        let words = &mut self.words[block * self.words_per_block..];
        for &b in &bits[..self.hashes as usize] {
            words[b as usize / 64] |= 1 << (b % 64);
        }
    }

    pub fn clear(&mut self) {
        self.words.fill(0);
    }

    pub fn size_bytes(&self) -> usize {
        self.words.len() * 8
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplayStats {
    pub fresh: u64,
    pub replays: u64,
}

/// Three rotating subfilters giving every key a lifetime in `(ttl, 1.5 ttl]`.
#[derive(Clone, Debug)]
pub struct RotatingBloom {
    cfg: ReplayConfig,
    dims: FilterDims,
    filters: [BlockedBloom; SUBFILTERS],
    current_epoch: Option<u64>,
    stats: ReplayStats,
}

impl RotatingBloom {
    pub fn new(cfg: ReplayConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let dims = dimension_blocked(cfg.capacity, subfilter_target(&cfg), cfg.block_bits());
        let f = BlockedBloom::new(dims, cfg.block_size);
        Ok(RotatingBloom {
            cfg,
            dims,
            filters: [f.clone(), f.clone(), f],
            current_epoch: None,
            stats: ReplayStats::default(),
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn dims(&self) -> FilterDims {
        self.dims
    }

    pub fn stats(&self) -> ReplayStats {
        self.stats
    }

    fn half_ttl(&self) -> u64 {
        self.cfg.ttl_ns / 2
    }

    pub fn epoch_of(&self, now_ns: u64) -> u64 {
        now_ns / self.half_ttl()
    }

    fn advance(&mut self, now_ns: u64) {
        let e = self.epoch_of(now_ns);
        match self.current_epoch {
            None => self.current_epoch = Some(e),
            Some(c) if e > c => {
                for ep in (c + 1)..=e.min(c + SUBFILTERS as u64) {
                    self.filters[(ep % SUBFILTERS as u64) as usize].clear();
                }
                self.current_epoch = Some(e);
            }
            // clock went backwards: stay in the current epoch
            Some(_) => {}
        }
    }

    /// Query all subfilters; on a miss insert into the current epoch's
    /// subfilter. Due subfilters are cleared before anything else.
    pub fn check_and_insert(&mut self, key: &ReplayKey, now_ns: u64) -> Verdict {
        self.advance(now_ns);
        if self.filters.iter().any(|f| f.contains(key)) {
            self.stats.replays += 1;
            return Verdict::Replay;
        }
        let slot = (self.current_epoch.expect("advanced") % SUBFILTERS as u64) as usize;
        self.filters[slot].insert(key);
        self.stats.fresh += 1;
        Verdict::Fresh
    }

    /// Lookup without inserting. Still applies due rotation.
    pub fn contains(&mut self, key: &ReplayKey, now_ns: u64) -> bool {
        self.advance(now_ns);
        self.filters.iter().any(|f| f.contains(key))
    }

    pub fn size_bytes(&self) -> usize {
        self.filters.iter().map(BlockedBloom::size_bytes).sum()
    }
}
