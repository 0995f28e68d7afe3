//! Intrinsic difficulty, difference entropy and the fork-choice comparators.
//!
//! A block whose PoW output is `h` in an `l`-bit field removes
//! `n = l - log2(h)` bits of entropy; a chain's weight is the sum of `n` over
//! its ancestry, i.e. `-log2` of its difference entropy. Everything here is
//! integer or fixed-point arithmetic so that comparisons are bit-exact on
//! every platform.

mod bounds;
mod hash;
mod log2;
mod weight;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bounds::{
    bounds_row, field_tie_probability, overtake_bound_difficulty, overtake_bound_difficulty_extra, overtake_bound_entropy,
    overtake_bound_entropy_checked, ratio_decimal, tie_probability, BoundsRow, DifficultyBound, EntropyBound,
};
pub use hash::HashValue;
pub use log2::{log2_q64, LOG_FRAC_BITS};
pub use weight::{ChainWeight, HcrWeight, IntrinsicWeight};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntropyError {
    #[error("field width {0} is outside [1, 256]")]
    FieldWidth(u32),
    #[error("hash of {bits} bits does not fit a {field_bits}-bit field")]
    HashOutOfField { bits: u32, field_bits: u32 },
    #[error("threshold of {bits} bits must be below the field width {field_bits}")]
    ThresholdTooLarge { bits: u32, field_bits: u32 },
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("chain weight overflow")]
    Overflow,
    #[error("weight outside representable range")]
    WeightOutOfRange,
    #[error("malformed hex hash {0:?}")]
    BadHex(String),
}

/// Width `l` of the PoW output field in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct FieldSpec(u16);

impl FieldSpec {
    pub fn new(bits: u32) -> Result<Self, EntropyError> {
        if (1..=256).contains(&bits) {
            Ok(FieldSpec(bits as u16))
        } else {
            Err(EntropyError::FieldWidth(bits))
        }
    }

    pub const fn bits(&self) -> u32 {
        self.0 as u32
    }
}

impl TryFrom<u32> for FieldSpec {
    type Error = EntropyError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        FieldSpec::new(v)
    }
}

impl From<FieldSpec> for u32 {
    fn from(f: FieldSpec) -> u32 {
        f.bits()
    }
}

/// Subordinate threshold `m_t` and the extra dominant bits `m_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ThresholdSpec {
    m_t: u32,
    m_d: u32,
}

impl ThresholdSpec {
    pub fn new(m_t: u32, m_d: u32, field: FieldSpec) -> Result<Self, EntropyError> {
        if m_t < 1 {
            return Err(EntropyError::Thresholds("m_t must be at least 1".into()));
        }
        if m_t + m_d >= field.bits() {
            return Err(EntropyError::Thresholds(format!("m_t + m_d ({}) must be below the field width {}", m_t + m_d, field.bits())));
        }
        Ok(ThresholdSpec { m_t, m_d })
    }

    pub const fn m_t(&self) -> u32 {
        self.m_t
    }

    pub const fn m_d(&self) -> u32 {
        self.m_d
    }

    /// Leading-zero bits a dominant block must meet.
    pub const fn dominant_bits(&self) -> u32 {
        self.m_t + self.m_d
    }
}

/// `n = l - log2(h)`, with `n = l` for `h ∈ {0, 1}`.
///
/// The logarithm is truncated to 64 fractional bits, so `n` is never below the
/// exact value and exceeds it by less than `2^-63`.
pub fn intrinsic_weight(h: &HashValue, field: FieldSpec) -> Result<IntrinsicWeight, EntropyError> {
    let h = h.in_field(field)?;
    let full = (field.bits() as u128) << LOG_FRAC_BITS;
    let n = match log2_q64(&h) {
        Some(log) => full - log,
        None => full,
    };
    IntrinsicWeight::from_raw(n)
}

/// `-log2 ΔS_k`: the sum of the intrinsic weights of a sequence of blocks.
pub fn delta_entropy_exponent<I>(weights: I) -> Result<ChainWeight, EntropyError>
where
    I: IntoIterator<Item = IntrinsicWeight>,
{
    weights.into_iter().try_fold(ChainWeight::ZERO, |acc, n| acc.checked_add(n))
}

pub fn accumulate(parent: ChainWeight, n: IntrinsicWeight) -> Result<ChainWeight, EntropyError> {
    parent.checked_add(n)
}

/// Sort key under which the entropy-minimum rule prefers the greatest element.
///
/// Larger accumulated weight wins; exact weight ties go to the smaller tip hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoemKey {
    pub weight: ChainWeight,
    pub tip: HashValue,
}

impl Ord for PoemKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight.cmp(&other.weight).then_with(|| other.tip.cmp(&self.tip))
    }
}

impl PartialOrd for PoemKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `Greater` when `a` is preferred, `Less` when `b` is, `Equal` only for identical pairs.
pub fn compare_poem(a: (ChainWeight, HashValue), b: (ChainWeight, HashValue)) -> Ordering {
    PoemKey { weight: a.0, tip: a.1 }.cmp(&PoemKey { weight: b.0, tip: b.1 })
}

/// Heaviest-chain comparison on summed threshold weights; ties are `Equal`.
pub fn compare_hcr(a: &HcrWeight, b: &HcrWeight) -> Ordering {
    a.cmp(b)
}

/// `h < 2^(l - bits)`.
pub fn meets_threshold(h: &HashValue, bits: u32, field: FieldSpec) -> bool {
    h.below_pow2(field.bits().saturating_sub(bits))
}

/// Baseline weight of a block credited with its realized leading zeros: `2^floor(n)`.
pub fn intrinsic_difficulty_weight(n: IntrinsicWeight) -> HcrWeight {
    HcrWeight::block(n.whole())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(bits: u32) -> FieldSpec {
        FieldSpec::new(bits).unwrap()
    }

    fn h(v: u64) -> HashValue {
        HashValue::from_u64(v)
    }

    fn cw(s: &str) -> ChainWeight {
        serde_json::from_value(serde_json::Value::String(s.into())).unwrap()
    }

    #[test]
    fn field_width_range() {
        assert!(FieldSpec::new(0).is_err());
        assert!(FieldSpec::new(257).is_err());
        assert_eq!(FieldSpec::new(256).unwrap().bits(), 256);
    }

    #[test]
    fn threshold_validation() {
        assert!(ThresholdSpec::new(0, 5, f(256)).is_err());
        assert!(ThresholdSpec::new(4, 4, f(8)).is_err());
        assert!(ThresholdSpec::new(4, 3, f(8)).is_ok());
    }

    #[test]
    fn intrinsic_weight_exact_cases() {
        assert_eq!(intrinsic_weight(&h(16), f(8)).unwrap(), IntrinsicWeight::from_bits(4));
        assert_eq!(intrinsic_weight(&HashValue::ONE, f(256)).unwrap(), IntrinsicWeight::from_bits(256));
        assert_eq!(intrinsic_weight(&HashValue::ZERO, f(8)).unwrap(), IntrinsicWeight::from_bits(8));
        assert_eq!(intrinsic_weight(&HashValue::ONE, f(8)).unwrap(), IntrinsicWeight::from_bits(8));
    }

    #[test]
    fn intrinsic_weight_of_three() {
        // 8 - log2(3) = 6.41503749927884381854626105605 (mpmath, 300-bit precision)
        let n = intrinsic_weight(&h(3), f(8)).unwrap();
        let expect = 6.415_037_499_278_844_f64;
        assert!((n.to_f64() - expect).abs() < 1e-15);
        assert_eq!(n.whole(), 6);
    }

    #[test]
    fn hash_outside_field_rejected() {
        assert!(intrinsic_weight(&h(256), f(8)).is_err());
    }

    #[test]
    fn entropy_exponent_examples() {
        assert_eq!(delta_entropy_exponent([]).unwrap(), ChainWeight::ZERO);
        let four = IntrinsicWeight::from_bits(4);
        assert_eq!(delta_entropy_exponent([four; 3]).unwrap(), cw("12"));
        let s = delta_entropy_exponent([intrinsic_weight(&h(3), f(8)).unwrap(), intrinsic_weight(&h(5), f(8)).unwrap()]).unwrap();
        // 16 - log2(15) = 12.0931094043914814706759416266
        assert!((s.to_f64() - 12.093_109_404_391_48).abs() < 1e-14);
    }

    #[test]
    fn accumulate_examples() {
        assert_eq!(accumulate(ChainWeight::ZERO, IntrinsicWeight::from_bits(4)).unwrap(), cw("4"));
        let n: IntrinsicWeight = serde_json::from_str("\"20.25\"").unwrap();
        assert_eq!(accumulate(cw("12.5"), n).unwrap(), cw("32.75"));
    }

    #[test]
    fn poem_comparison_examples() {
        assert_eq!(compare_poem((cw("40.5"), h(9)), (cw("40.25"), h(5))), Ordering::Greater);
        assert_eq!(compare_poem((cw("40.5"), h(5)), (cw("40.5"), h(9))), Ordering::Greater);
        assert_eq!(compare_poem((cw("40.5"), h(9)), (cw("40.5"), h(5))), Ordering::Less);
        assert_eq!(compare_poem((cw("40.5"), h(9)), (cw("40.5"), h(9))), Ordering::Equal);
    }

    #[test]
    fn sibling_preference_is_order_free() {
        // Every distinct pair of children of one parent at l = 8.
        let field = f(8);
        let parent = cw("17.5");
        for a in 0..256u64 {
            for b in 0..256u64 {
                if a == b {
                    continue;
                }
                let ka = (accumulate(parent, intrinsic_weight(&h(a), field).unwrap()).unwrap(), h(a));
                let kb = (accumulate(parent, intrinsic_weight(&h(b), field).unwrap()).unwrap(), h(b));
                let expect = if a < b { Ordering::Greater } else { Ordering::Less };
                assert_eq!(compare_poem(ka, kb), expect);
                assert_eq!(compare_poem(kb, ka), expect.reverse());
            }
        }
    }

    #[test]
    fn hcr_comparison_examples() {
        let dominant = HcrWeight::block(25);
        let subs = |k: u32| (0..k).fold(HcrWeight::zero(), |acc, _| &acc + &HcrWeight::block(20));
        assert_eq!(compare_hcr(&dominant, &subs(32)), Ordering::Equal);
        assert_eq!(compare_hcr(&subs(33), &dominant), Ordering::Greater);
        assert_eq!(compare_hcr(&HcrWeight::block(20), &HcrWeight::block(20)), Ordering::Equal);
    }

    #[test]
    fn threshold_examples() {
        assert!(meets_threshold(&h(31), 3, f(8)));
        assert!(!meets_threshold(&h(32), 3, f(8)));
        assert!(meets_threshold(&h(255), 0, f(8)));
    }

    #[test]
    fn antitone_exhaustive_small_fields() {
        for bits in [1u32, 4, 8, 12, 16] {
            let field = f(bits);
            let mut prev = intrinsic_weight(&HashValue::ZERO, field).unwrap();
            for v in 1..(1u64 << bits) {
                let n = intrinsic_weight(&h(v), field).unwrap();
                assert!(n <= prev, "l={bits} h={v}");
                assert!(n > IntrinsicWeight::ZERO && n.whole() <= bits);
                prev = n;
            }
        }
    }

    #[test]
    fn powers_of_two_exact_in_every_field() {
        for bits in [1u32, 8, 64, 200, 256] {
            for j in 0..bits {
                let n = intrinsic_weight(&HashValue::pow2(j), f(bits)).unwrap();
                assert_eq!(n, IntrinsicWeight::from_bits(bits - j));
            }
        }
    }
}
