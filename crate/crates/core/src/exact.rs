//! Exact accumulation of binary64 terms with a single final rounding.
//!
//! The multiply-accumulate pipeline forms products exactly and must combine
//! them with *no intermediate rounding*, then round once into the output
//! precision. Summing in f64 and converting afterwards would double-round,
//! so sums are accumulated as integer significands on a common exponent
//! grid: an i128 when the exponent span allows it, a BigInt otherwise, and
//! the result is rounded directly from the integer into the target format.

use crate::error::Error;
use crate::formats::{round_dyadic, decode, FloatFormat, QuantizedValue, RoundingMode};
use num_bigint::BigInt;

/// Decompose a finite nonzero f64 into (negative, significand, exponent)
/// with value = ±significand * 2^exponent.
fn decompose(x: f64) -> (bool, u64, i64) {
    let bits = x.to_bits();
    let sign = bits >> 63 != 0;
    let raw_exp = ((bits >> 52) & 0x7FF) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if raw_exp == 0 {
        (sign, frac, -1074)
    } else {
        (sign, frac | (1u64 << 52), raw_exp - 1075)
    }
}

/// Non-finite propagation for a sum, independent of term order.
fn nonfinite_sum(terms: &[f64]) -> Option<f64> {
    let mut pos_inf = false;
    let mut neg_inf = false;
    let mut nan = false;
    for &t in terms {
        if t.is_nan() {
            nan = true;
        } else if t == f64::INFINITY {
            pos_inf = true;
        } else if t == f64::NEG_INFINITY {
            neg_inf = true;
        }
    }
    if nan || (pos_inf && neg_inf) {
        Some(f64::NAN)
    } else if pos_inf {
        Some(f64::INFINITY)
    } else if neg_inf {
        Some(f64::NEG_INFINITY)
    } else {
        None
    }
}

/// Sum `terms` exactly and round once into `fmt` under `mode`.
///
/// An exact zero sum returns +0.0 unless every term is a negative zero
/// (matching the sign rules of an IEEE addition chain over zeros).
/// Infinities and NaN propagate.
pub fn sum_exact_rounded(terms: &[f64], fmt: FloatFormat, mode: RoundingMode) -> f64 {
    if let Some(special) = nonfinite_sum(terms) {
        return special;
    }
    let all_neg_zero =
        !terms.is_empty() && terms.iter().all(|&t| t == 0.0 && t.is_sign_negative());

    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    let mut nonzero = 0usize;
    for &t in terms {
        if t != 0.0 {
            let (_, _, e) = decompose(t);
            lo = lo.min(e);
            hi = hi.max(e + 54);
            nonzero += 1;
        }
    }
    if nonzero == 0 {
        let z = if all_neg_zero { -0.0 } else { 0.0 };
        return decode(quantize_zero(z, fmt));
    }

    // log2(65) headroom over the 54-bit significand window keeps 2:4 tile
    // sums carry-safe inside an i128.
    let rounded = if hi - lo + 7 < 127 {
        let mut acc: i128 = 0;
        for &t in terms {
            if t == 0.0 {
                continue;
            }
            let (neg, mant, e) = decompose(t);
            let v = (mant as i128) << (e - lo) as u32;
            acc += if neg { -v } else { v };
        }
        round_i128(acc, lo, fmt, mode)
    } else {
        let mut acc = BigInt::from(0);
        for &t in terms {
            if t == 0.0 {
                continue;
            }
            let (neg, mant, e) = decompose(t);
            let v = BigInt::from(mant) << (e - lo) as u64;
            if neg {
                acc -= v;
            } else {
                acc += v;
            }
        }
        round_bigint(acc, lo, fmt, mode)
    };
    decode(rounded)
}

fn quantize_zero(z: f64, fmt: FloatFormat) -> QuantizedValue {
    crate::formats::quantize(z, fmt, RoundingMode::NearestEven)
}

/// Round the exact value acc * 2^exp into fmt.
fn round_i128(acc: i128, exp: i64, fmt: FloatFormat, mode: RoundingMode) -> QuantizedValue {
    if acc == 0 {
        return quantize_zero(0.0, fmt);
    }
    let sign = acc < 0;
    let mag = acc.unsigned_abs();
    let bits = 128 - mag.leading_zeros() as i64;
    let (window, w_exp, sticky) = if bits <= 63 {
        (mag as u64, exp, false)
    } else {
        let sh = (bits - 63) as u32;
        let window = (mag >> sh) as u64;
        let sticky = mag & ((1u128 << sh) - 1) != 0;
        (window, exp + sh as i64, sticky)
    };
    QuantizedValue { bits: round_dyadic(sign, window, w_exp, sticky, fmt, mode), format: fmt }
}

fn round_bigint(acc: BigInt, exp: i64, fmt: FloatFormat, mode: RoundingMode) -> QuantizedValue {
    use num_bigint::Sign;
    if acc.sign() == Sign::NoSign {
        return quantize_zero(0.0, fmt);
    }
    let sign = acc.sign() == Sign::Minus;
    let mag = acc.magnitude();
    let bits = mag.bits() as i64;
    let (window, w_exp, sticky) = if bits <= 63 {
        // a nonzero value of at most 63 bits is a single u64 digit
        (mag.to_u64_digits()[0], exp, false)
    } else {
        let sh = (bits - 63) as u64;
        let top = mag >> sh;
        let sticky = (&top << sh) != *mag;
        (top.to_u64_digits()[0], exp + sh as i64, sticky)
    };
    QuantizedValue { bits: round_dyadic(sign, window, w_exp, sticky, fmt, mode), format: fmt }
}

/// Exact product of two f64 values whose significands are narrow enough that
/// the product is representable (true for every pair of values coming out of
/// an 11-bit-significand operand format).
pub fn exact_product(a: f64, b: f64) -> f64 {
    let p = a * b;
    debug_assert!(
        !(a.is_finite() && b.is_finite()) || a.mul_add(b, -p) == 0.0,
        "inexact product {a} * {b}"
    );
    p
}

/// Correctly rounded `a + b` in `fmt` (one rounding of the exact sum).
pub fn add_rounded(a: f64, b: f64, fmt: FloatFormat, mode: RoundingMode) -> f64 {
    // IEEE sign-of-zero for an addition, which the term-wise rule below
    // would get wrong for (+0) + (-0).
    if a == 0.0 && b == 0.0 {
        let z = if a.is_sign_negative() && b.is_sign_negative() { -0.0 } else { 0.0 };
        return decode(quantize_zero(z, fmt));
    }
    sum_exact_rounded(&[a, b], fmt, mode)
}

/// Map a non-finite result to the module's overflow error.
pub fn check_finite(x: f64) -> Result<f64, Error> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::OverflowDetected)
    }
}
