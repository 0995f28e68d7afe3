//! Fixed-width PoW output values.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{EntropyError, FieldSpec};

/// A PoW output interpreted as an unsigned integer of at most 256 bits.
///
/// Limbs are little-endian: `limbs[0]` holds the least significant 64 bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct HashValue {
    limbs: [u64; 4],
}

impl HashValue {
    pub const ZERO: HashValue = HashValue { limbs: [0; 4] };
    pub const ONE: HashValue = HashValue { limbs: [1, 0, 0, 0] };
    pub const MAX: HashValue = HashValue { limbs: [u64::MAX; 4] };

    pub const fn from_u64(v: u64) -> Self {
        HashValue { limbs: [v, 0, 0, 0] }
    }

    pub const fn from_u128(v: u128) -> Self {
        HashValue { limbs: [v as u64, (v >> 64) as u64, 0, 0] }
    }

    pub fn from_be_bytes(bytes: [u8; 32]) -> Self {
        let mut limbs = [0u64; 4];
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            limbs[3 - i] = u64::from_be_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        HashValue { limbs }
    }

    pub fn to_be_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for i in 0..4 {
            out[i * 8..(i + 1) * 8].copy_from_slice(&self.limbs[3 - i].to_be_bytes());
        }
        out
    }

    /// `2^k` for `k < 256`.
    pub fn pow2(k: u32) -> Self {
        assert!(k < 256, "2^{k} does not fit in 256 bits");
        let mut limbs = [0u64; 4];
        limbs[(k / 64) as usize] = 1u64 << (k % 64);
        HashValue { limbs }
    }

    pub fn is_zero(&self) -> bool {
        self.limbs == [0; 4]
    }

    /// Number of significant bits; zero for the value zero.
    pub fn bits(&self) -> u32 {
        for i in (0..4).rev() {
            if self.limbs[i] != 0 {
                return 64 * i as u32 + (64 - self.limbs[i].leading_zeros());
            }
        }
        0
    }

    /// `self < 2^k`, for any `k` (values of `k >= 256` always hold).
    pub fn below_pow2(&self, k: u32) -> bool {
        self.bits() <= k
    }

    pub fn low_u64(&self) -> u64 {
        self.limbs[0]
    }

    pub fn shl(&self, shift: u32) -> Self {
        if shift >= 256 {
            return Self::ZERO;
        }
        let (words, bits) = ((shift / 64) as usize, shift % 64);
        let mut out = [0u64; 4];
        for i in (words..4).rev() {
            let src = i - words;
            out[i] = self.limbs[src] << bits;
            if bits != 0 && src > 0 {
                out[i] |= self.limbs[src - 1] >> (64 - bits);
            }
        }
        HashValue { limbs: out }
    }

    pub fn shr(&self, shift: u32) -> Self {
        if shift >= 256 {
            return Self::ZERO;
        }
        let (words, bits) = ((shift / 64) as usize, shift % 64);
        let mut out = [0u64; 4];
        for (i, o) in out.iter_mut().enumerate().take(4 - words) {
            let src = i + words;
            *o = self.limbs[src] >> bits;
            if bits != 0 && src < 3 {
                *o |= self.limbs[src + 1] << (64 - bits);
            }
        }
        HashValue { limbs: out }
    }

    /// Keeps the low `k` bits.
    pub fn mask_low(&self, k: u32) -> Self {
        if k >= 256 {
            return *self;
        }
        let mut out = self.limbs;
        for (i, limb) in out.iter_mut().enumerate() {
            let lo = 64 * i as u32;
            if k <= lo {
                *limb = 0;
            } else if k < lo + 64 {
                *limb &= (1u64 << (k - lo)) - 1;
            }
        }
        HashValue { limbs: out }
    }

    pub fn checked_add(&self, other: &Self) -> Option<Self> {
        let mut out = [0u64; 4];
        let mut carry = false;
        for (i, slot) in out.iter_mut().enumerate() {
            let (s1, c1) = self.limbs[i].overflowing_add(other.limbs[i]);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            *slot = s2;
            carry = c1 || c2;
        }
        (!carry).then_some(HashValue { limbs: out })
    }

    /// The top 128 bits of the value, left-aligned so bit 127 holds the most
    /// significant set bit. Zero maps to zero.
    pub(crate) fn normalized_top128(&self) -> u128 {
        let bits = self.bits();
        if bits == 0 {
            return 0;
        }
        let aligned = self.shl(256 - bits);
        ((aligned.limbs[3] as u128) << 64) | aligned.limbs[2] as u128
    }

    /// Uniform draw from `[0, 2^k)`.
    pub fn random_below_pow2<R: RngCore + ?Sized>(rng: &mut R, k: u32) -> Self {
        let mut limbs = [0u64; 4];
        for limb in limbs.iter_mut() {
            *limb = rng.next_u64();
        }
        HashValue { limbs }.mask_low(k)
    }

    /// Checks the value fits the field width.
    pub fn in_field(self, field: FieldSpec) -> Result<Self, EntropyError> {
        if self.below_pow2(field.bits()) {
            Ok(self)
        } else {
            Err(EntropyError::HashOutOfField { bits: self.bits(), field_bits: field.bits() })
        }
    }

    /// Lower-case hex, 64 digits, no prefix.
    pub fn to_hex(&self) -> String {
        hex::encode(self.to_be_bytes())
    }
}

impl Ord for HashValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.limbs.iter().rev().cmp(other.limbs.iter().rev())
    }
}

impl PartialOrd for HashValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl From<u64> for HashValue {
    fn from(v: u64) -> Self {
        Self::from_u64(v)
    }
}

impl fmt::Debug for HashValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashValue(0x{})", self.to_hex().trim_start_matches('0'))
    }
}

impl fmt::Display for HashValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for HashValue {
    type Err = EntropyError;

    /// Accepts up to 64 hex digits with an optional `0x` prefix.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("0x").unwrap_or(s);
        if digits.is_empty() || digits.len() > 64 {
            return Err(EntropyError::BadHex(s.to_owned()));
        }
        let padded = format!("{digits:0>64}");
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(&padded, &mut bytes).map_err(|_| EntropyError::BadHex(s.to_owned()))?;
        Ok(Self::from_be_bytes(bytes))
    }
}

impl Serialize for HashValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for HashValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_length() {
        assert_eq!(HashValue::ZERO.bits(), 0);
        assert_eq!(HashValue::ONE.bits(), 1);
        assert_eq!(HashValue::from_u64(31).bits(), 5);
        assert_eq!(HashValue::pow2(200).bits(), 201);
        assert_eq!(HashValue::MAX.bits(), 256);
    }

    #[test]
    fn shifts_cross_limbs() {
        let v = HashValue::from_u64(0xdead_beef);
        assert_eq!(v.shl(100).shr(100), v);
        assert_eq!(v.shl(60).bits(), v.bits() + 60);
        assert_eq!(HashValue::pow2(255).shr(255), HashValue::ONE);
        assert_eq!(HashValue::MAX.shl(256), HashValue::ZERO);
    }

    #[test]
    fn ordering_is_numeric() {
        assert!(HashValue::pow2(64) > HashValue::from_u64(u64::MAX));
        assert!(HashValue::from_u64(3) < HashValue::from_u64(5));
    }

    #[test]
    fn mask_and_top_bits() {
        assert_eq!(HashValue::MAX.mask_low(8), HashValue::from_u64(255));
        assert_eq!(HashValue::MAX.mask_low(0), HashValue::ZERO);
        assert_eq!(HashValue::from_u64(3).normalized_top128(), 3u128 << 126);
        assert_eq!(HashValue::pow2(255).normalized_top128(), 1u128 << 127);
    }

    #[test]
    fn hex_round_trip() {
        let v = HashValue::from_u128(0x1234_5678_9abc_def0_1122_3344_5566_7788);
        assert_eq!(v.to_hex().parse::<HashValue>().unwrap(), v);
        assert_eq!("0x1f".parse::<HashValue>().unwrap(), HashValue::from_u64(31));
        assert!("xyz".parse::<HashValue>().is_err());
    }

    #[test]
    fn field_membership() {
        let f = FieldSpec::new(8).unwrap();
        assert!(HashValue::from_u64(255).in_field(f).is_ok());
        assert!(HashValue::from_u64(256).in_field(f).is_err());
    }
}
