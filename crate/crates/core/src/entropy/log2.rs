//! Bit-exact binary logarithm of 256-bit integers.
//!
//! The integer part is the position of the top set bit. The fraction comes
//! from repeatedly squaring the normalized mantissa `x ∈ [1, 2)`: each squaring
//! doubles `log2(x)`, so the bit emitted when `x² ≥ 2` is the next binary digit
//! of the logarithm. The mantissa is held in Q1.127 so the 64 emitted digits
//! carry far less than one unit of rounding error.

use super::HashValue;

/// Fraction bits produced by [`log2_q64`].
pub const LOG_FRAC_BITS: u32 = 64;

/// `floor(log2(h) * 2^64)` (up to a rounding error far below 2^-64), for `h >= 1`.
///
/// Returns `None` for zero.
pub fn log2_q64(h: &HashValue) -> Option<u128> {
    let bits = h.bits();
    if bits == 0 {
        return None;
    }
    let int_part = (bits - 1) as u128;
    let mut mantissa = h.normalized_top128();
    let mut frac: u64 = 0;
    for _ in 0..LOG_FRAC_BITS {
        let (hi, lo) = square_u128(mantissa);
        frac <<= 1;
        // x² = m² / 2^254; x² >= 2 exactly when bit 255 of m² is set.
        if hi >> 127 == 1 {
            frac |= 1;
            mantissa = hi;
        } else {
            mantissa = (hi << 1) | (lo >> 127);
        }
    }
    Some((int_part << LOG_FRAC_BITS) | frac as u128)
}

/// Full 256-bit square of a 128-bit value as `(high, low)` halves.
fn square_u128(x: u128) -> (u128, u128) {
    let lo = x as u64 as u128;
    let hi = x >> 64;
    let ll = lo * lo;
    let lh = lo * hi;
    let hh = hi * hi;
    // x² = hh·2^128 + 2·lh·2^64 + ll
    let (cross_lo, cross_hi) = ((lh << 65), (lh >> 63));
    let (low, carry) = ll.overflowing_add(cross_lo);
    (hh + cross_hi + carry as u128, low)
}
