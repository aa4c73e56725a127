//! Bit-faithful emulation of the dense warp-level `mma` instruction family.
//!
//! The numeric pipeline mirrors what the profiling experiments reveal about
//! the hardware: operands are converted to the A/B format on entry, the k
//! products of an output element are formed exactly, the inner-product sum
//! is kept wide (no intermediate rounding by default), the C addend joins
//! that sum with a single rounding into the FP32-precision accumulator, and
//! an FP16 result matrix is produced by one final conversion. Every stage's
//! rounding is configurable so alternative hypotheses about the hardware
//! remain testable.

use crate::error::{Error, Result};
use crate::exact::{exact_product, sum_exact_rounded};
use crate::formats::{self, round_to_format, FloatFormat, RoundingMode};
use crate::matrix::DenseMatrix;
use serde::{Deserialize, Serialize};

/// An m x n x k multiply-accumulate tile shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MmaShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl MmaShape {
    pub const fn new(m: usize, n: usize, k: usize) -> Self {
        MmaShape { m, n, k }
    }

    /// Parse "m16n8k16"-style shape segments.
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let rest = lower
            .strip_prefix('m')
            .ok_or_else(|| Error::Parse(format!("bad shape {s:?}")))?;
        let (m, rest) = rest
            .split_once('n')
            .ok_or_else(|| Error::Parse(format!("bad shape {s:?}")))?;
        let (n, k) = rest
            .split_once('k')
            .ok_or_else(|| Error::Parse(format!("bad shape {s:?}")))?;
        let parse = |t: &str| -> Result<usize> {
            t.parse().map_err(|_| Error::Parse(format!("bad shape {s:?}")))
        };
        Ok(MmaShape { m: parse(m)?, n: parse(n)?, k: parse(k)? })
    }

    /// An m x n x k tile counts as m*n*k fused multiply-accumulates.
    pub fn fma_count(&self) -> u64 {
        (self.m * self.n * self.k) as u64
    }
}

impl std::fmt::Display for MmaShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "m{}n{}k{}", self.m, self.n, self.k)
    }
}

pub const M16N8K16: MmaShape = MmaShape::new(16, 8, 16);
pub const M16N8K8: MmaShape = MmaShape::new(16, 8, 8);
pub const M16N8K4: MmaShape = MmaShape::new(16, 8, 4);

/// Dense tile shapes each A/B format supports.
pub fn dense_shapes(ab_format: FloatFormat) -> &'static [MmaShape] {
    match ab_format.name {
        "FP16" | "BF16" => &[M16N8K16, M16N8K8],
        "TF32" => &[M16N8K8, M16N8K4],
        _ => &[],
    }
}

/// How the k exact products of one output element are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InnerSumPolicy {
    /// All k products and the C addend share one wide exact sum; a single
    /// rounding produces the FP32-precision accumulator value.
    ExactWide,
    /// Sequential ascending-k accumulation with a rounding into `format`
    /// after every step.
    RoundEachStep { format: FloatFormat, mode: RoundingMode },
}

/// Product formation policy. Products of two 11-bit-significand operands are
/// exact in the wide carrier, which is the only behavior the profiling data
/// supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProductPolicy {
    Exact,
}

/// Full description of the emulated numeric pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NumericPipelineConfig {
    pub ab_format: FloatFormat,
    pub cd_format: FloatFormat,
    pub product_policy: ProductPolicy,
    pub inner_sum_policy: InnerSumPolicy,
    /// Rounding of the single accumulate-stage rounding into FP32 precision.
    pub accumulate_rounding: RoundingMode,
    /// Rounding of the final FP32 -> FP16 conversion when C/D are FP16.
    pub output_conversion: RoundingMode,
    /// Rounding used when quantizing operands on entry.
    pub input_rounding: RoundingMode,
}

impl NumericPipelineConfig {
    /// The default pipeline for an (A/B, C/D) format pair: exact products,
    /// exact wide inner sum, nearest-even everywhere.
    pub fn new(ab_format: FloatFormat, cd_format: FloatFormat) -> Result<Self> {
        let cfg = NumericPipelineConfig {
            ab_format,
            cd_format,
            product_policy: ProductPolicy::Exact,
            inner_sum_policy: InnerSumPolicy::ExactWide,
            accumulate_rounding: RoundingMode::NearestEven,
            output_conversion: RoundingMode::NearestEven,
            input_rounding: RoundingMode::NearestEven,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.ab_format.name {
            "FP16" | "BF16" | "TF32" => {}
            other => {
                return Err(Error::Unsupported(format!("A/B format {other} has no mma pipeline")))
            }
        }
        match self.cd_format.name {
            "FP32" => Ok(()),
            "FP16" if self.ab_format.name == "FP16" => Ok(()),
            "FP16" => Err(Error::Unsupported(
                "FP16 C/D is only available with FP16 A/B".into(),
            )),
            other => Err(Error::Unsupported(format!("C/D format {other} is not supported"))),
        }
    }
}

fn check_operands(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    shape: MmaShape,
) -> Result<()> {
    if a.rows() != shape.m || a.cols() != shape.k {
        return Err(Error::ShapeMismatch(format!(
            "A is {}x{}, expected {}x{}",
            a.rows(),
            a.cols(),
            shape.m,
            shape.k
        )));
    }
    if b.rows() != shape.k || b.cols() != shape.n {
        return Err(Error::ShapeMismatch(format!(
            "B is {}x{}, expected {}x{}",
            b.rows(),
            b.cols(),
            shape.k,
            shape.n
        )));
    }
    if c.rows() != shape.m || c.cols() != shape.n {
        return Err(Error::ShapeMismatch(format!(
            "C is {}x{}, expected {}x{}",
            c.rows(),
            c.cols(),
            shape.m,
            shape.n
        )));
    }
    for m in [a, b, c] {
        if m.iter().any(|x| x.is_nan()) {
            return Err(Error::Unsupported("NaN operand entry".into()));
        }
    }
    Ok(())
}

/// Combine the exact products of one output element with its C addend,
/// producing the FP32-precision accumulator value.
///
/// Exact-zero products are skipped: the sparse unit computes only the kept
/// nonzeros, and skipping them in the dense path as well is what makes a
/// dense tile and its 2:4 compression bitwise identical.
pub(crate) fn combine_products(products: &[f64], c: f64, cfg: &NumericPipelineConfig) -> f64 {
    match cfg.inner_sum_policy {
        InnerSumPolicy::ExactWide => {
            let mut terms = Vec::with_capacity(products.len() + 1);
            terms.extend(products.iter().copied().filter(|&p| p != 0.0));
            terms.push(c);
            sum_exact_rounded(&terms, formats::FP32, cfg.accumulate_rounding)
        }
        InnerSumPolicy::RoundEachStep { format, mode } => {
            let mut acc = 0.0f64;
            for &p in products.iter().filter(|&&p| p != 0.0) {
                acc = crate::exact::add_rounded(acc, p, format, mode);
            }
            crate::exact::add_rounded(acc, c, formats::FP32, cfg.accumulate_rounding)
        }
    }
}

/// Emulate `D = A*B + C` for one dense mma tile.
///
/// A is m x k (row-major), B is k x n (col-major), C is m x n; entries must
/// be finite or infinite. The result matrix holds exact binary64 carriers of
/// the C/D-format values.
pub fn mma_emulate(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    shape: MmaShape,
    cfg: &NumericPipelineConfig,
) -> Result<DenseMatrix> {
    cfg.validate()?;
    if !dense_shapes(cfg.ab_format).contains(&shape) {
        return Err(Error::Unsupported(format!(
            "shape {shape} is not a dense {} tile",
            cfg.ab_format.name
        )));
    }
    check_operands(a, b, c, shape)?;

    let qa = a.quantized(cfg.ab_format, cfg.input_rounding);
    let qb = b.quantized(cfg.ab_format, cfg.input_rounding);
    let qc = c.quantized(cfg.cd_format, cfg.input_rounding);

    let mut d = DenseMatrix::zeros(shape.m, shape.n);
    let mut products = vec![0.0f64; shape.k];
    for i in 0..shape.m {
        for j in 0..shape.n {
            for (l, p) in products.iter_mut().enumerate() {
                *p = exact_product(qa.get(i, l), qb.get(l, j));
            }
            let wide = combine_products(&products, qc.get(i, j), cfg);
            let out = if cfg.cd_format.name == "FP16" {
                round_to_format(wide, formats::FP16, cfg.output_conversion)
            } else {
                wide
            };
            d.set(i, j, out);
        }
    }
    Ok(d)
}
