//! Stochastic block discovery: Poisson arrival times and PoW outputs.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chaindag::Level;
use crate::entropy::{intrinsic_weight, meets_threshold, ChainWeight, EntropyError, FieldSpec, HashValue, IntrinsicWeight, ThresholdSpec};
use crate::time::SimTime;

/// Name of the generator recorded in every output file.
pub const RNG_NAME: &str = "chacha20";
pub const MINING_STREAM: u64 = 0;
pub const NETWORK_STREAM: u64 = 1;

/// Largest threshold accepted in grind mode.
pub const MAX_GRIND_BITS: u32 = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MineError {
    #[error("hash does not meet the {0}-bit subordinate threshold")]
    BelowThreshold(u32),
    #[error("no valid nonce in {attempts} attempts from {start}")]
    NonceExhausted { start: u64, attempts: u64 },
    #[error("grind mode needs a 256-bit field and at most {MAX_GRIND_BITS} threshold bits, got l={field_bits}, bits={bits}")]
    GrindUnsupported { field_bits: u32, bits: u32 },
    #[error("no subordinate-only outputs exist when m_d = 0")]
    EmptySubordinateRegion,
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

/// Seeded counter-based generator for one simulation stream.
pub fn sim_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HashAlgorithm {
    Sha256,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MiningMode {
    /// Hashes drawn uniformly from the valid region.
    Sampled,
    /// Every block weighs exactly its threshold bits; the draw only supplies level and id.
    ClampedIntrinsic,
    /// Real nonce search over a hash function.
    Grind {
        #[serde(default = "default_algorithm")]
        algorithm: HashAlgorithm,
    },
}

fn default_algorithm() -> HashAlgorithm {
    HashAlgorithm::Sha256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Honest,
    /// Withhold each dominant block until this many honest blocks follow.
    WithholdDominant {
        reveal_after: u32,
    },
    /// Mine a private branch and publish it once it leads by `reveal_margin` bits.
    PrivateChain {
        reveal_margin: ChainWeight,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinerSpec {
    pub id: String,
    pub hashrate_fraction: f64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
}

fn default_strategy() -> Strategy {
    Strategy::Honest
}

impl MinerSpec {
    pub fn is_honest(&self) -> bool {
        self.strategy == Strategy::Honest
    }
}

/// A discovered PoW output with its level and credited weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinedOutput {
    pub hash: HashValue,
    pub level: Level,
    pub n: IntrinsicWeight,
    /// Winning nonce in grind mode.
    pub nonce: Option<u64>,
}

/// Uniform draw from `[0, 2^(l - threshold_bits))`.
pub fn sample_block_hash<R: RngCore + ?Sized>(rng: &mut R, field: FieldSpec, threshold_bits: u32) -> HashValue {
    HashValue::random_below_pow2(rng, field.bits().saturating_sub(threshold_bits))
}

pub fn classify_level(h: &HashValue, t: ThresholdSpec, field: FieldSpec) -> Result<Level, MineError> {
    if !meets_threshold(h, t.m_t(), field) {
        return Err(MineError::BelowThreshold(t.m_t()));
    }
    Ok(if meets_threshold(h, t.dominant_bits(), field) { Level::Dominant } else { Level::Subordinate })
}

fn credited_weight(h: &HashValue, level: Level, t: ThresholdSpec, field: FieldSpec, mode: MiningMode) -> Result<IntrinsicWeight, MineError> {
    Ok(match mode {
        MiningMode::ClampedIntrinsic => IntrinsicWeight::from_bits(match level {
            Level::Subordinate => t.m_t(),
            Level::Dominant => t.dominant_bits(),
        }),
        _ => intrinsic_weight(h, field)?,
    })
}

/// One merge-mined discovery: a subordinate-valid output, dominant when it also
/// meets the dominant threshold.
pub fn sample_output<R: RngCore + ?Sized>(rng: &mut R, field: FieldSpec, t: ThresholdSpec, mode: MiningMode) -> Result<MinedOutput, MineError> {
    let hash = sample_block_hash(rng, field, t.m_t());
    let level = classify_level(&hash, t, field)?;
    Ok(MinedOutput { hash, level, n: credited_weight(&hash, level, t, field, mode)?, nonce: None })
}

/// A discovery conditioned on its level, for scripted scenarios.
pub fn sample_output_at_level<R: RngCore + ?Sized>(
    rng: &mut R,
    field: FieldSpec,
    t: ThresholdSpec,
    mode: MiningMode,
    level: Level,
) -> Result<MinedOutput, MineError> {
    let hash = match level {
        Level::Dominant => sample_block_hash(rng, field, t.dominant_bits()),
        Level::Subordinate => {
            if t.m_d() == 0 {
                return Err(MineError::EmptySubordinateRegion);
            }
            loop {
                let h = sample_block_hash(rng, field, t.m_t());
                if !meets_threshold(&h, t.dominant_bits(), field) {
                    break h;
                }
            }
        }
    };
    Ok(MinedOutput { hash, level, n: credited_weight(&hash, level, t, field, mode)?, nonce: None })
}

/// Exponential inter-arrival time of one miner's valid outputs.
///
/// `network_rate` is the network's hash rate in hashes per millisecond; a miner
/// finds outputs at `hashrate_fraction * network_rate * 2^-threshold_bits`.
pub fn next_block_time<R: Rng + ?Sized>(rng: &mut R, hashrate_fraction: f64, network_rate: f64, threshold_bits: u32) -> SimTime {
    let rate = hashrate_fraction * network_rate * (-(threshold_bits as f64)).exp2();
    debug_assert!(rate > 0.0, "rates are validated positive");
    let u: f64 = rng.gen();
    SimTime::from_ms(-(1.0 - u).ln() / rate)
}

/// First nonce from `start` whose SHA-256 of `preimage || nonce_le` meets the threshold.
pub fn grind_block_hash(preimage: &[u8], start: u64, max_attempts: u64, threshold_bits: u32) -> Result<(u64, HashValue), MineError> {
    let field = FieldSpec::new(256)?;
    let mut base = Sha256::new();
    base.update(preimage);
    for i in 0..max_attempts {
        let Some(nonce) = start.checked_add(i) else { break };
        let mut h = base.clone();
        h.update(nonce.to_le_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let value = HashValue::from_be_bytes(digest);
        if meets_threshold(&value, threshold_bits, field) {
            return Ok((nonce, value));
        }
    }
    Err(MineError::NonceExhausted { start, attempts: max_attempts })
}

/// A grinding discovery for `preimage`; requires a 256-bit field.
pub fn grind_output(preimage: &[u8], field: FieldSpec, t: ThresholdSpec) -> Result<MinedOutput, MineError> {
    if field.bits() != 256 || t.m_t() > MAX_GRIND_BITS {
        return Err(MineError::GrindUnsupported { field_bits: field.bits(), bits: t.m_t() });
    }
    let (nonce, hash) = grind_block_hash(preimage, 0, u64::MAX, t.m_t())?;
    let level = classify_level(&hash, t, field)?;
    Ok(MinedOutput { hash, level, n: intrinsic_weight(&hash, field)?, nonce: Some(nonce) })
}
