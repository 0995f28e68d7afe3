//! Fixed-point entropy weights and the integer weights of the baseline rules.

use std::fmt;
use std::ops::Add;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::EntropyError;

const FRAC_BITS: u32 = 64;
const FRAC_MASK: u128 = (1u128 << FRAC_BITS) - 1;
/// Chain totals keep 96 integer bits.
const WHOLE_LIMIT: u128 = 1u128 << 96;

/// Entropy reduction of one block in bits, Q9.64 fixed point.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct IntrinsicWeight {
    raw: u128,
}

impl IntrinsicWeight {
    pub const ZERO: IntrinsicWeight = IntrinsicWeight { raw: 0 };

    pub const fn from_bits(bits: u32) -> Self {
        IntrinsicWeight { raw: (bits as u128) << FRAC_BITS }
    }

    /// Builds a weight from its raw Q9.64 representation.
    pub fn from_raw(raw: u128) -> Result<Self, EntropyError> {
        if raw >> FRAC_BITS > 256 {
            return Err(EntropyError::WeightOutOfRange);
        }
        Ok(IntrinsicWeight { raw })
    }

    pub const fn raw(&self) -> u128 {
        self.raw
    }

    /// Whole bits (the leading-zero count for a hash-derived weight).
    pub const fn whole(&self) -> u32 {
        (self.raw >> FRAC_BITS) as u32
    }

    pub const fn fraction(&self) -> u64 {
        (self.raw & FRAC_MASK) as u64
    }

    pub fn to_f64(&self) -> f64 {
        self.whole() as f64 + self.fraction() as f64 / 2f64.powi(64)
    }
}

impl fmt::Debug for IntrinsicWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IntrinsicWeight({self})")
    }
}

impl fmt::Display for IntrinsicWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_fixed(f, self.whole() as u128, self.fraction())
    }
}

/// Accumulated entropy reduction of an ancestry, Q96.64 fixed point.
///
/// Equal to `-log2` of the difference entropy of the chain. Field order makes
/// the derived ordering numeric.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ChainWeight {
    whole: u128,
    frac: u64,
}

impl ChainWeight {
    pub const ZERO: ChainWeight = ChainWeight { whole: 0, frac: 0 };

    pub fn from_parts(whole: u128, frac: u64) -> Result<Self, EntropyError> {
        if whole >= WHOLE_LIMIT {
            return Err(EntropyError::Overflow);
        }
        Ok(ChainWeight { whole, frac })
    }

    pub const fn whole(&self) -> u128 {
        self.whole
    }

    pub const fn fraction(&self) -> u64 {
        self.frac
    }

    pub fn checked_add(&self, n: IntrinsicWeight) -> Result<Self, EntropyError> {
        let frac_sum = self.frac as u128 + (n.raw & FRAC_MASK);
        let whole = self.whole + (n.raw >> FRAC_BITS) + (frac_sum >> FRAC_BITS);
        Self::from_parts(whole, frac_sum as u64)
    }

    pub fn checked_add_chain(&self, other: &ChainWeight) -> Result<Self, EntropyError> {
        let frac_sum = self.frac as u128 + other.frac as u128;
        let whole = self.whole.checked_add(other.whole).and_then(|w| w.checked_add(frac_sum >> FRAC_BITS)).ok_or(EntropyError::Overflow)?;
        Self::from_parts(whole, frac_sum as u64)
    }

    /// Saturating difference `self - other`, zero if `other >= self`.
    pub fn saturating_sub(&self, other: &ChainWeight) -> ChainWeight {
        if other >= self {
            return ChainWeight::ZERO;
        }
        let (frac, borrow) = self.frac.overflowing_sub(other.frac);
        ChainWeight { whole: self.whole - other.whole - borrow as u128, frac }
    }

    /// Nearest representable value to a non-negative real, for configuration input.
    pub fn from_f64(bits: f64) -> Result<Self, EntropyError> {
        if !bits.is_finite() || bits < 0.0 || bits >= 2f64.powi(96) {
            return Err(EntropyError::WeightOutOfRange);
        }
        let whole = bits.trunc();
        let frac = ((bits - whole) * 2f64.powi(64)).min(u64::MAX as f64) as u64;
        Self::from_parts(whole as u128, frac)
    }

    pub fn to_f64(&self) -> f64 {
        self.whole as f64 + self.frac as f64 / 2f64.powi(64)
    }
}

impl From<IntrinsicWeight> for ChainWeight {
    fn from(n: IntrinsicWeight) -> Self {
        ChainWeight { whole: n.raw >> FRAC_BITS, frac: n.raw as u64 }
    }
}

impl fmt::Debug for ChainWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainWeight({self})")
    }
}

impl fmt::Display for ChainWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_fixed(f, self.whole, self.frac)
    }
}

impl Serialize for ChainWeight {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl Serialize for IntrinsicWeight {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChainWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (whole, frac) = parse_fixed(&s).ok_or_else(|| serde::de::Error::custom(format!("bad weight {s:?}")))?;
        ChainWeight::from_parts(whole, frac).map_err(serde::de::Error::custom)
    }
}

impl<'de> Deserialize<'de> for IntrinsicWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (whole, frac) = parse_fixed(&s).ok_or_else(|| serde::de::Error::custom(format!("bad weight {s:?}")))?;
        if whole > 256 {
            return Err(serde::de::Error::custom(EntropyError::WeightOutOfRange));
        }
        IntrinsicWeight::from_raw((whole << FRAC_BITS) | frac as u128).map_err(serde::de::Error::custom)
    }
}

/// Exact decimal rendering: every dyadic fraction has a finite expansion.
fn write_fixed(f: &mut fmt::Formatter<'_>, whole: u128, frac: u64) -> fmt::Result {
    write!(f, "{whole}")?;
    if frac == 0 {
        return Ok(());
    }
    f.write_str(".")?;
    let mut rem = frac as u128;
    while rem != 0 {
        rem *= 10;
        write!(f, "{}", rem >> FRAC_BITS)?;
        rem &= FRAC_MASK;
    }
    Ok(())
}

/// Inverse of [`write_fixed`] for exact expansions; longer inputs truncate.
fn parse_fixed(s: &str) -> Option<(u128, u64)> {
    let (w, d) = s.split_once('.').unwrap_or((s, ""));
    let whole: u128 = w.parse().ok()?;
    if !d.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // frac = floor(0.d * 2^64), evaluated digit by digit from the right.
    let mut acc = BigUint::zero();
    let mut scale = BigUint::one();
    for b in d.bytes() {
        acc = acc * 10u32 + (b - b'0') as u32;
        scale *= 10u32;
    }
    let frac: BigUint = (acc << 64u32) / scale;
    let frac = u64::try_from(frac).ok()?;
    Some((whole, frac))
}

/// Baseline rule weight: an arbitrary-width sum of `2^bits` terms.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HcrWeight(BigUint);

impl HcrWeight {
    pub fn zero() -> Self {
        HcrWeight(BigUint::zero())
    }

    /// The weight `2^bits` of one block meeting `bits` leading zeros.
    pub fn block(bits: u32) -> Self {
        HcrWeight(BigUint::one() << bits)
    }

    pub fn as_biguint(&self) -> &BigUint {
        &self.0
    }
}

impl Add<&HcrWeight> for &HcrWeight {
    type Output = HcrWeight;
    fn add(self, rhs: &HcrWeight) -> HcrWeight {
        HcrWeight(&self.0 + &rhs.0)
    }
}

impl From<BigUint> for HcrWeight {
    fn from(v: BigUint) -> Self {
        HcrWeight(v)
    }
}

impl fmt::Debug for HcrWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HcrWeight({})", self.0)
    }
}

impl fmt::Display for HcrWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for HcrWeight {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cw(whole: u128, frac: u64) -> ChainWeight {
        ChainWeight::from_parts(whole, frac).unwrap()
    }

    #[test]
    fn dyadic_addition_is_exact() {
        let a = cw(12, 1 << 63);
        let n = IntrinsicWeight::from_raw((20u128 << 64) | (1u128 << 62)).unwrap();
        assert_eq!(a.checked_add(n).unwrap(), cw(32, 3 << 62));
        assert_eq!(a.checked_add(n).unwrap().to_string(), "32.75");
    }

    #[test]
    fn fraction_carry() {
        let a = cw(1, u64::MAX);
        let n = IntrinsicWeight::from_raw(1).unwrap();
        assert_eq!(a.checked_add(n).unwrap(), cw(2, 0));
    }

    #[test]
    fn overflow_detected() {
        let top = cw(WHOLE_LIMIT - 1, 0);
        assert!(top.checked_add(IntrinsicWeight::from_bits(1)).is_err());
        assert!(ChainWeight::from_parts(WHOLE_LIMIT, 0).is_err());
    }

    #[test]
    fn decimal_round_trip() {
        let w = cw(6, 0x6a3f_e5c6_0429_f4a7);
        let s = w.to_string();
        let (whole, frac) = parse_fixed(&s).unwrap();
        assert_eq!(cw(whole, frac), w);
        assert_eq!(serde_json::from_str::<ChainWeight>(&serde_json::to_string(&w).unwrap()).unwrap(), w);
    }

    #[test]
    fn saturating_sub() {
        assert_eq!(cw(5, 0).saturating_sub(&cw(2, 1 << 63)), cw(2, 1 << 63));
        assert_eq!(cw(1, 0).saturating_sub(&cw(2, 0)), ChainWeight::ZERO);
    }

    #[test]
    fn hcr_block_weights() {
        let w = &HcrWeight::block(20) + &HcrWeight::block(20);
        assert_eq!(w, HcrWeight::block(21));
        assert!(HcrWeight::block(25) > w);
    }
}
