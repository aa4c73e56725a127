//! Parameterized binary floating-point formats and bit-exact conversions.
//!
//! A [`FloatFormat`] is described by its exponent/mantissa widths and the
//! register width it occupies. All six formats handled by recent tensor
//! units are provided as constants: FP32, TF32, FP16, BF16, FP8-E4M3 and
//! FP8-E5M2. TF32 is the odd one out: the value lives in 19 bits
//! (1 sign + 8 exponent + 10 mantissa) but is stored in a 32-bit register,
//! so replacing FP32 with TF32 does not shrink the memory footprint.
//!
//! Every format here embeds losslessly in binary64, so `f64` is used as the
//! carrier type for exact values.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Rounding used by conversions and by the accumulate stage of the
/// multiply-accumulate pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundingMode {
    /// IEEE 754 default: round to nearest, ties to even.
    NearestEven,
    /// Truncation toward zero.
    TowardZero,
}

impl RoundingMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "nearest_even" | "ne" | "rn" => Ok(RoundingMode::NearestEven),
            "toward_zero" | "tz" | "rz" => Ok(RoundingMode::TowardZero),
            other => Err(Error::Parse(format!("unknown rounding mode {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RoundingMode::NearestEven => "nearest_even",
            RoundingMode::TowardZero => "toward_zero",
        }
    }
}

/// A binary floating-point format: 1 sign bit, `exponent_bits` exponent bits
/// and `mantissa_bits` explicitly stored fraction bits, held in a register of
/// `storage_bits`. Unused high-order storage bits are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FloatFormat {
    pub name: &'static str,
    pub exponent_bits: u32,
    pub mantissa_bits: u32,
    pub storage_bits: u32,
    pub supports_subnormals: bool,
    pub supports_inf_nan: bool,
}

pub const FP32: FloatFormat = FloatFormat::new("FP32", 8, 23, 32);
pub const TF32: FloatFormat = FloatFormat::new("TF32", 8, 10, 32);
pub const FP16: FloatFormat = FloatFormat::new("FP16", 5, 10, 16);
pub const BF16: FloatFormat = FloatFormat::new("BF16", 8, 7, 16);
pub const FP8_E4M3: FloatFormat = FloatFormat::new("FP8-E4M3", 4, 3, 8);
pub const FP8_E5M2: FloatFormat = FloatFormat::new("FP8-E5M2", 5, 2, 8);

/// The built-in formats, in register-width order.
pub const BUILTIN_FORMATS: [FloatFormat; 6] = [FP32, TF32, FP16, BF16, FP8_E4M3, FP8_E5M2];

impl FloatFormat {
    pub const fn new(name: &'static str, exponent_bits: u32, mantissa_bits: u32, storage_bits: u32) -> Self {
        assert!(1 + exponent_bits + mantissa_bits <= storage_bits);
        FloatFormat {
            name,
            exponent_bits,
            mantissa_bits,
            storage_bits,
            supports_subnormals: true,
            supports_inf_nan: true,
        }
    }

    /// Look a built-in format up by name. Accepts a few spelling variants
    /// ("bf16", "FP8E4M3", "fp8-e5m2", ...).
    pub fn by_name(name: &str) -> Result<FloatFormat> {
        let key = name.to_ascii_lowercase().replace(['-', '_'], "");
        match key.as_str() {
            "fp32" | "f32" | "float" => Ok(FP32),
            "tf32" => Ok(TF32),
            "fp16" | "f16" | "half" => Ok(FP16),
            "bf16" | "bfloat16" => Ok(BF16),
            "fp8e4m3" | "e4m3" => Ok(FP8_E4M3),
            "fp8e5m2" | "e5m2" => Ok(FP8_E5M2),
            _ => Err(Error::Parse(format!("unknown float format {name:?}"))),
        }
    }

    /// Exponent bias.
    pub const fn bias(&self) -> i64 {
        (1 << (self.exponent_bits - 1)) - 1
    }

    /// Largest unbiased exponent of a normal value.
    pub const fn emax(&self) -> i64 {
        self.bias()
    }

    /// Smallest unbiased exponent of a normal value.
    pub const fn emin(&self) -> i64 {
        1 - self.bias()
    }

    /// Number of value bits actually used inside the register.
    pub const fn value_bits(&self) -> u32 {
        1 + self.exponent_bits + self.mantissa_bits
    }

    fn exp_field_mask(&self) -> u32 {
        (1 << self.exponent_bits) - 1
    }

    fn mant_field_mask(&self) -> u32 {
        (1 << self.mantissa_bits) - 1
    }

    fn sign_shift(&self) -> u32 {
        self.exponent_bits + self.mantissa_bits
    }

    /// Largest finite value, as an exact binary64.
    pub fn max_finite(&self) -> f64 {
        let sig = ((1u64 << (self.mantissa_bits + 1)) - 1) as f64;
        sig * pow2(self.emax() - self.mantissa_bits as i64)
    }

    /// Smallest positive subnormal, as an exact binary64.
    pub fn min_subnormal(&self) -> f64 {
        pow2(self.emin() - self.mantissa_bits as i64)
    }

    fn max_finite_bits(&self) -> u32 {
        ((self.exp_field_mask() - 1) << self.mantissa_bits) | self.mant_field_mask()
    }

    fn inf_bits(&self) -> u32 {
        self.exp_field_mask() << self.mantissa_bits
    }

    /// The single canonical quiet-NaN pattern: positive sign, all-ones
    /// exponent, most significant mantissa bit set.
    pub fn canonical_nan_bits(&self) -> u32 {
        self.inf_bits() | (1 << (self.mantissa_bits - 1))
    }
}

/// A bit pattern of a specific format. `bits` occupies the low
/// `value_bits()` of the register; the rest are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantizedValue {
    pub bits: u32,
    pub format: FloatFormat,
}

impl QuantizedValue {
    pub fn to_f64(&self) -> f64 {
        decode(*self)
    }
}

/// Exact power of two as binary64. Exponents of all supported formats are
/// well inside the binary64 range.
fn pow2(e: i64) -> f64 {
    debug_assert!((-1074..=1023).contains(&e));
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        // subnormal binary64
        f64::from_bits(1u64 << (e + 1074))
    }
}

/// Round the exact value `(-1)^sign * mant * 2^exp` into `fmt`.
///
/// `sticky` means "nonzero bits exist strictly below the weight of mant's
/// least significant bit"; it participates in tie-breaking and inexactness
/// but never changes the truncated digits. This is the one rounding routine
/// everything else (f64 conversion, wide-accumulator rounding) funnels
/// through, so that directed rounding and double-rounding avoidance are
/// handled in a single place.
pub(crate) fn round_dyadic(
    sign: bool,
    mant: u64,
    exp: i64,
    sticky: bool,
    fmt: FloatFormat,
    mode: RoundingMode,
) -> u32 {
    let sign_bit = (sign as u32) << fmt.sign_shift();
    if mant == 0 {
        debug_assert!(!sticky, "sticky with zero mantissa window");
        return sign_bit;
    }
    let msb = 63 - mant.leading_zeros() as i64;
    let e_val = exp + msb; // unbiased exponent of the value
    let m = fmt.mantissa_bits as i64;

    // Weight of the destination LSB: the normal grid at this binade, or the
    // fixed subnormal grid below emin.
    let cut = if e_val >= fmt.emin() { e_val - m } else { fmt.emin() - m };
    let shift = cut - exp;

    let (mut q, round_up) = if shift <= 0 {
        // Destination grid is at least as fine as the input: exact. Narrow
        // mantissa windows only arise from exact values, so sticky cannot be
        // set here.
        debug_assert!(msb - shift <= 62);
        debug_assert!(!sticky, "sticky bits below an exact narrow window");
        (mant << (-shift) as u32, false)
    } else if shift >= 64 {
        // Everything is dropped; the value is a tail below the grid.
        let up = match mode {
            RoundingMode::TowardZero => false,
            // mant != 0 somewhere at or below bit 63 < shift, so the tail is
            // strictly below half of the grid step unless shift == 64 and
            // the top bit is the half position.
            RoundingMode::NearestEven => {
                if shift == 64 {
                    let half = 1u64 << 63;
                    mant > half || (mant == half && sticky)
                } else {
                    false
                }
            }
        };
        (0u64, up)
    } else {
        let q = mant >> shift;
        let dropped = mant & ((1u64 << shift) - 1);
        let half = 1u64 << (shift - 1);
        let up = match mode {
            RoundingMode::TowardZero => false,
            RoundingMode::NearestEven => {
                dropped > half || (dropped == half && (sticky || (q & 1) == 1))
            }
        };
        (q, up)
    };
    if round_up {
        q += 1;
    }

    if e_val >= fmt.emin() {
        let mut e = e_val;
        debug_assert!(q >= (1 << m));
        if q == (1 << (m + 1)) {
            q >>= 1;
            e += 1;
        }
        if e > fmt.emax() {
            return match mode {
                RoundingMode::NearestEven if fmt.supports_inf_nan => sign_bit | fmt.inf_bits(),
                // Toward zero never overflows to infinity; formats without
                // inf/NaN saturate in every mode.
                _ => sign_bit | fmt.max_finite_bits(),
            };
        }
        let exp_field = (e + fmt.bias()) as u32;
        sign_bit | (exp_field << fmt.mantissa_bits) | (q as u32 & fmt.mant_field_mask())
    } else {
        // Subnormal result; rounding can promote it to the smallest normal.
        if q == (1 << m) {
            return sign_bit | (1 << fmt.mantissa_bits);
        }
        if !fmt.supports_subnormals {
            return sign_bit; // flush to zero
        }
        sign_bit | q as u32
    }
}

/// Round a binary64 value to the nearest representable value of `fmt` under
/// `mode`. Total: NaN maps to the canonical quiet NaN, infinities map to the
/// format's infinities, overflow behaves as IEEE 754 prescribes for the mode.
pub fn quantize(x: f64, fmt: FloatFormat, mode: RoundingMode) -> QuantizedValue {
    let bits = x.to_bits();
    let sign = (bits >> 63) != 0;
    let sign_bit = (sign as u32) << fmt.sign_shift();

    let out = if x.is_nan() {
        fmt.canonical_nan_bits()
    } else if x.is_infinite() {
        if fmt.supports_inf_nan {
            sign_bit | fmt.inf_bits()
        } else {
            sign_bit | fmt.max_finite_bits()
        }
    } else if x == 0.0 {
        sign_bit
    } else {
        let raw_exp = ((bits >> 52) & 0x7FF) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        round_dyadic(sign, mant, exp, false, fmt, mode)
    };
    QuantizedValue { bits: out, format: fmt }
}

/// Decode a bit pattern to its exact binary64 value.
pub fn decode(v: QuantizedValue) -> f64 {
    let fmt = v.format;
    let sign = (v.bits >> fmt.sign_shift()) & 1 != 0;
    let exp_field = (v.bits >> fmt.mantissa_bits) & fmt.exp_field_mask();
    let mant = (v.bits & fmt.mant_field_mask()) as u64;

    let mag = if exp_field == fmt.exp_field_mask() && fmt.supports_inf_nan {
        if mant == 0 {
            f64::INFINITY
        } else {
            return f64::NAN;
        }
    } else if exp_field == 0 {
        mant as f64 * pow2(fmt.emin() - fmt.mantissa_bits as i64)
    } else {
        let e = exp_field as i64 - fmt.bias();
        ((1u64 << fmt.mantissa_bits) | mant) as f64 * pow2(e - fmt.mantissa_bits as i64)
    };
    if sign {
        -mag
    } else {
        mag
    }
}

/// Convenience: quantize then decode, i.e. the nearest representable value.
pub fn round_to_format(x: f64, fmt: FloatFormat, mode: RoundingMode) -> f64 {
    decode(quantize(x, fmt, mode))
}

/// Spacing of representable values of `fmt` at the binade of `x`.
/// Undefined for zero and non-finite arguments.
pub fn ulp(x: f64, fmt: FloatFormat) -> Result<f64> {
    if x == 0.0 || !x.is_finite() {
        return Err(Error::Unsupported(format!("ulp undefined for {x}")));
    }
    let e = ilogb(x).max(fmt.emin());
    Ok(pow2(e - fmt.mantissa_bits as i64))
}

/// Unbiased exponent of a finite nonzero binary64.
fn ilogb(x: f64) -> i64 {
    let bits = x.to_bits();
    let raw = ((bits >> 52) & 0x7FF) as i64;
    if raw != 0 {
        raw - 1023
    } else {
        let frac = bits & ((1u64 << 52) - 1);
        -1023 - (52 - (63 - frac.leading_zeros() as i64))
    }
}

/// The format registry as CSV: `name,exponent_bits,mantissa_bits,storage_bits`.
pub fn registry_csv() -> String {
    let mut out = String::from("name,exponent_bits,mantissa_bits,storage_bits\n");
    for f in BUILTIN_FORMATS {
        out.push_str(&format!(
            "{},{},{},{}\n",
            f.name, f.exponent_bits, f.mantissa_bits, f.storage_bits
        ));
    }
    out
}

/// Iterate every representable bit pattern of a format (2^value_bits of them).
pub fn all_bit_patterns(fmt: FloatFormat) -> impl Iterator<Item = QuantizedValue> {
    (0u64..(1u64 << fmt.value_bits())).map(move |b| QuantizedValue { bits: b as u32, format: fmt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builtin_table_matches_hardware_docs() {
        let expect: [(&str, u32, u32, u32); 6] = [
            ("FP32", 8, 23, 32),
            ("TF32", 8, 10, 32),
            ("FP16", 5, 10, 16),
            ("BF16", 8, 7, 16),
            ("FP8-E4M3", 4, 3, 8),
            ("FP8-E5M2", 5, 2, 8),
        ];
        for (f, (name, e, m, s)) in BUILTIN_FORMATS.iter().zip(expect) {
            assert_eq!((f.name, f.exponent_bits, f.mantissa_bits, f.storage_bits), (name, e, m, s));
            assert!(1 + f.exponent_bits + f.mantissa_bits <= f.storage_bits);
        }
        assert_eq!(TF32.value_bits(), 19);
    }

    #[test]
    fn registry_csv_round_trips_fields() {
        let csv = registry_csv();
        assert!(csv.starts_with("name,exponent_bits,mantissa_bits,storage_bits\n"));
        assert!(csv.contains("TF32,8,10,32"));
        assert!(csv.contains("FP8-E5M2,5,2,8"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn tie_to_even_at_half_ulp() {
        // ulp(1.0) in TF32 is 2^-10; 1 + 2^-11 sits exactly on the tie and
        // must round to the even mantissa, i.e. back to 1.0.
        let x = 1.0 + 2f64.powi(-11);
        assert_eq!(round_to_format(x, TF32, RoundingMode::NearestEven), 1.0);
        // Just above the tie it must go up.
        let up = 1.0 + 2f64.powi(-11) + 2f64.powi(-30);
        assert_eq!(round_to_format(up, TF32, RoundingMode::NearestEven), 1.0 + 2f64.powi(-10));
    }

    #[test]
    fn fp16_overflow_at_halfway_rounds_to_infinity() {
        // FP16 max finite is 65504; 65520 is exactly halfway to the next
        // (unrepresentable) step and rounds away, i.e. to infinity.
        assert_eq!(round_to_format(65520.0, FP16, RoundingMode::NearestEven), f64::INFINITY);
        // Below the halfway point it stays at the max.
        assert_eq!(round_to_format(65519.9, FP16, RoundingMode::NearestEven), 65504.0);
        // Toward zero clamps.
        assert_eq!(round_to_format(65520.0, FP16, RoundingMode::TowardZero), 65504.0);
        assert_eq!(round_to_format(1e30, FP16, RoundingMode::TowardZero), 65504.0);
    }

    /// Independent oracle: scan every encoding of the format for the value
    /// nearest to x (ties to even mantissa parity).
    fn nearest_by_scan(x: f64, fmt: FloatFormat) -> f64 {
        let mut best = f64::INFINITY;
        let mut best_val = 0.0f64;
        for v in all_bit_patterns(fmt) {
            let d = decode(v);
            if d.is_nan() {
                continue;
            }
            let dist = (d - x).abs();
            if dist < best || (dist == best && ((v.bits & 1) == 0)) {
                best = dist;
                best_val = d;
            }
        }
        best_val
    }

    #[test]
    fn quantize_0_7_bf16_matches_exhaustive_scan() {
        let got = round_to_format(0.7, BF16, RoundingMode::NearestEven);
        assert_eq!(got, 0.69921875);
        assert_eq!(got, nearest_by_scan(0.7, BF16));
        // and the value round-trips
        assert_eq!(round_to_format(0.69921875, BF16, RoundingMode::NearestEven), 0.69921875);
    }

    #[test]
    fn quantize_matches_scan_on_awkward_points() {
        for &x in &[0.1f64, 0.3, 2.5000001, -7.3, 1e-40, 3.0e4, -0.004883] {
            for fmt in [BF16, FP16, FP8_E4M3, FP8_E5M2] {
                if x.abs() > fmt.max_finite() {
                    continue;
                }
                assert_eq!(
                    round_to_format(x, fmt, RoundingMode::NearestEven),
                    nearest_by_scan(x, fmt),
                    "x={x} fmt={}",
                    fmt.name
                );
            }
        }
    }

    #[test]
    fn decode_examples() {
        let one = quantize(1.0, BF16, RoundingMode::NearestEven);
        assert_eq!(decode(one), 1.0);
        assert_eq!(one.bits, 0x3F80);
        // smallest FP16 subnormal is 2^(1-15-10) = 2^-24
        let tiny = QuantizedValue { bits: 1, format: FP16 };
        assert_eq!(decode(tiny), 2f64.powi(-24));
        assert_eq!(FP16.min_subnormal(), 2f64.powi(-24));
    }

    #[test]
    fn ulp_examples() {
        assert_eq!(ulp(1.0, TF32).unwrap(), 2f64.powi(-10));
        assert_eq!(ulp(1.0, BF16).unwrap(), 2f64.powi(-7));
        // binade [2,4)
        assert_eq!(ulp(3.0, FP16).unwrap(), 2f64.powi(-9));
        assert!(ulp(0.0, FP16).is_err());
        assert!(ulp(f64::INFINITY, FP16).is_err());
    }

    #[test]
    fn exhaustive_round_trip_small_formats() {
        for fmt in [FP16, BF16, FP8_E4M3, FP8_E5M2, TF32] {
            for v in all_bit_patterns(fmt) {
                let x = decode(v);
                for mode in [RoundingMode::NearestEven, RoundingMode::TowardZero] {
                    let back = quantize(x, fmt, mode);
                    if x.is_nan() {
                        assert_eq!(back.bits, fmt.canonical_nan_bits());
                    } else {
                        assert_eq!(back.bits, v.bits, "fmt={} bits={:#x}", fmt.name, v.bits);
                    }
                }
            }
        }
    }

    #[test]
    fn nan_canonicalization() {
        for fmt in BUILTIN_FORMATS {
            let q = quantize(f64::NAN, fmt, RoundingMode::NearestEven);
            assert_eq!(q.bits, fmt.canonical_nan_bits());
            assert!(decode(q).is_nan());
        }
    }

    #[test]
    fn signed_zero_and_infinity() {
        let nz = quantize(-0.0, BF16, RoundingMode::NearestEven);
        assert_eq!(nz.bits, 0x8000);
        assert!(decode(nz) == 0.0 && decode(nz).is_sign_negative());
        let inf = quantize(f64::NEG_INFINITY, FP16, RoundingMode::TowardZero);
        assert_eq!(decode(inf), f64::NEG_INFINITY);
    }

    #[test]
    fn flush_to_zero_flag() {
        let mut ftz = FP16;
        ftz.supports_subnormals = false;
        let x = 2f64.powi(-20); // subnormal in FP16
        assert_eq!(decode(quantize(x, ftz, RoundingMode::NearestEven)), 0.0);
        assert_eq!(round_to_format(x, FP16, RoundingMode::NearestEven), x);
    }

    fn finite_f64() -> impl Strategy<Value = f64> {
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
    }

    proptest! {
        #[test]
        fn monotonic(a in finite_f64(), b in finite_f64()) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for fmt in [FP16, BF16, TF32, FP8_E4M3] {
                for mode in [RoundingMode::NearestEven, RoundingMode::TowardZero] {
                    let ql = round_to_format(lo, fmt, mode);
                    let qh = round_to_format(hi, fmt, mode);
                    prop_assert!(ql <= qh, "fmt={} mode={:?} {lo} {hi}", fmt.name, mode);
                }
            }
        }

        #[test]
        fn toward_zero_never_grows_magnitude(x in finite_f64()) {
            for fmt in [FP16, BF16, TF32, FP8_E5M2] {
                let q = round_to_format(x, fmt, RoundingMode::TowardZero);
                prop_assert!(q.abs() <= x.abs());
            }
        }

        #[test]
        fn error_bounded_by_ulp(x in -1.0e4f64..1.0e4f64) {
            prop_assume!(x != 0.0);
            for fmt in [FP16, BF16, TF32] {
                if x.abs() > fmt.max_finite() { continue; }
                let u = ulp(x, fmt).unwrap();
                let ne = round_to_format(x, fmt, RoundingMode::NearestEven);
                prop_assert!((ne - x).abs() <= 0.5 * u);
                let tz = round_to_format(x, fmt, RoundingMode::TowardZero);
                prop_assert!((tz - x).abs() < u);
            }
        }
    }
}
