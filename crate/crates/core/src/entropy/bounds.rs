//! Closed-form overtake bounds and tie probabilities.

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::One;
use serde::Serialize;

use super::{EntropyError, FieldSpec, ThresholdSpec};

/// Difficulty-weighted overtake bound: subordinates need `k > 2^m_d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifficultyBound {
    pub bound: BigUint,
    pub min_blocks: BigUint,
}

/// Entropy-weighted overtake bound: `k > (m_t + m_d + extra) / m_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntropyBound {
    pub bound: Ratio<u64>,
    pub min_blocks: u64,
}

impl EntropyBound {
    pub fn bound_f64(&self) -> f64 {
        *self.bound.numer() as f64 / *self.bound.denom() as f64
    }
}

pub fn overtake_bound_difficulty(t: ThresholdSpec) -> DifficultyBound {
    let bound = BigUint::one() << t.m_d();
    let min_blocks = &bound + 1u32;
    DifficultyBound { bound, min_blocks }
}

/// Difficulty bound with `extra_bits` surplus bits on the dominant block.
pub fn overtake_bound_difficulty_extra(t: ThresholdSpec, extra_bits: u32) -> DifficultyBound {
    let bound = BigUint::one() << (t.m_d() + extra_bits);
    let min_blocks = &bound + 1u32;
    DifficultyBound { bound, min_blocks }
}

pub fn overtake_bound_entropy(t: ThresholdSpec, extra_bits: u32) -> EntropyBound {
    let num = t.m_t() as u64 + t.m_d() as u64 + extra_bits as u64;
    let den = t.m_t() as u64;
    // Least integer strictly above num/den.
    EntropyBound { bound: Ratio::new(num, den), min_blocks: num / den + 1 }
}

/// Like [`overtake_bound_entropy`] but rejects surplus bits that would reach the field width.
pub fn overtake_bound_entropy_checked(t: ThresholdSpec, extra_bits: u32, field: FieldSpec) -> Result<EntropyBound, EntropyError> {
    if t.m_t() + t.m_d() + extra_bits >= field.bits() {
        return Err(EntropyError::Thresholds(format!(
            "m_t + m_d + extra ({}) must be below the field width {}",
            t.m_t() + t.m_d() + extra_bits,
            field.bits()
        )));
    }
    Ok(overtake_bound_entropy(t, extra_bits))
}

/// Probability that two independent valid blocks carry the same hash, with
/// hashes uniform over the valid region `[0, 2^(l - bits))`.
pub fn tie_probability(field: FieldSpec, threshold_bits: u32) -> Result<f64, EntropyError> {
    if threshold_bits >= field.bits() {
        return Err(EntropyError::ThresholdTooLarge { bits: threshold_bits, field_bits: field.bits() });
    }
    Ok(pow2_neg(field.bits() - threshold_bits))
}

/// The competing-block figure `1 / 2^l`, hashes uniform over the whole field.
pub fn field_tie_probability(field: FieldSpec) -> f64 {
    pow2_neg(field.bits())
}

/// Exact `2^-k` for `k <= 1022`.
fn pow2_neg(k: u32) -> f64 {
    f64::from_bits(((1023 - k) as u64) << 52)
}

/// One row of the bound table printed by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsRow {
    pub field_bits: u32,
    pub m_t: u32,
    pub m_d: u32,
    pub extra_bits: u32,
    pub difficulty_bound: String,
    pub difficulty_min_blocks: String,
    pub entropy_bound: String,
    pub entropy_min_blocks: u64,
    pub difficulty_bound_extra: String,
    pub difficulty_min_blocks_extra: String,
    pub entropy_bound_extra: String,
    pub entropy_min_blocks_extra: u64,
}

pub fn bounds_row(t: ThresholdSpec, extra_bits: u32, field: FieldSpec) -> Result<BoundsRow, EntropyError> {
    let diff = overtake_bound_difficulty(t);
    let ent = overtake_bound_entropy(t, 0);
    let diff_x = overtake_bound_difficulty_extra(t, extra_bits);
    let ent_x = overtake_bound_entropy_checked(t, extra_bits, field)?;
    Ok(BoundsRow {
        field_bits: field.bits(),
        m_t: t.m_t(),
        m_d: t.m_d(),
        extra_bits,
        difficulty_bound: diff.bound.to_string(),
        difficulty_min_blocks: diff.min_blocks.to_string(),
        entropy_bound: ratio_decimal(ent.bound),
        entropy_min_blocks: ent.min_blocks,
        difficulty_bound_extra: diff_x.bound.to_string(),
        difficulty_min_blocks_extra: diff_x.min_blocks.to_string(),
        entropy_bound_extra: ratio_decimal(ent_x.bound),
        entropy_min_blocks_extra: ent_x.min_blocks,
    })
}

/// Six-decimal rendering of a rational, truncated.
pub fn ratio_decimal(r: Ratio<u64>) -> String {
    let (n, d) = (*r.numer() as u128, *r.denom() as u128);
    let scaled = n * 1_000_000 / d;
    format!("{}.{:06}", scaled / 1_000_000, scaled % 1_000_000)
}
