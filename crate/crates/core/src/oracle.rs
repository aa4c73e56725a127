//! Reference matrix multiply-accumulate and the relative-error metric.
//!
//! `matmul_ref` is the CPU-style baseline every numeric experiment compares
//! against: each multiply and each add is rounded in the selected working
//! precision, inner products are summed sequentially in ascending k, and C
//! is added last. The summation order is fixed so error tables reproduce
//! bit-for-bit.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Working precision of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpuPrecision {
    Binary32,
    Binary64,
}

/// D = A*B + C with per-operation rounding in `precision`. Multiplies and
/// adds round separately (no FMA); see [`matmul_ref_fused`] for the fused
/// variant.
pub fn matmul_ref(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    precision: CpuPrecision,
) -> Result<DenseMatrix> {
    matmul_ref_impl(a, b, c, precision, false)
}

/// Same contract as [`matmul_ref`] but with fused multiply-adds in the
/// inner product (one rounding per a*b+acc step).
pub fn matmul_ref_fused(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    precision: CpuPrecision,
) -> Result<DenseMatrix> {
    matmul_ref_impl(a, b, c, precision, true)
}

fn matmul_ref_impl(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    precision: CpuPrecision,
    fused: bool,
) -> Result<DenseMatrix> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    if b.rows() != k || c.rows() != m || c.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "A {}x{}, B {}x{}, C {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols(),
            c.rows(),
            c.cols()
        )));
    }
    let mut d = DenseMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let v = match precision {
                CpuPrecision::Binary32 => {
                    let mut acc = 0.0f32;
                    for l in 0..k {
                        let x = a.get(i, l) as f32;
                        let y = b.get(l, j) as f32;
                        if fused {
                            acc = x.mul_add(y, acc);
                        } else {
                            acc += x * y;
                        }
                    }
                    (acc + c.get(i, j) as f32) as f64
                }
                CpuPrecision::Binary64 => {
                    let mut acc = 0.0f64;
                    for l in 0..k {
                        if fused {
                            acc = a.get(i, l).mul_add(b.get(l, j), acc);
                        } else {
                            acc += a.get(i, l) * b.get(l, j);
                        }
                    }
                    acc + c.get(i, j)
                }
            };
            d.set(i, j, v);
        }
    }
    Ok(d)
}

/// l2 relative error between a low-precision result and the reference:
/// sqrt(sum |D_low - D_ref|^2) / sqrt(sum |D_low|^2). Note the denominator
/// uses the low-precision result.
///
/// Any non-finite entry reports overflow; a zero denominator is undefined.
pub fn relative_l2_error(d_low: &DenseMatrix, d_ref: &DenseMatrix) -> Result<f64> {
    if d_low.rows() != d_ref.rows() || d_low.cols() != d_ref.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            d_low.rows(),
            d_low.cols(),
            d_ref.rows(),
            d_ref.cols()
        )));
    }
    if !d_low.all_finite() || !d_ref.all_finite() {
        return Err(Error::OverflowDetected);
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (x, y) in d_low.iter().zip(d_ref.iter()) {
        num += (x - y) * (x - y);
        den += x * x;
    }
    if den == 0.0 {
        return Err(Error::UndefinedRelativeError);
    }
    Ok(num.sqrt() / den.sqrt())
}
