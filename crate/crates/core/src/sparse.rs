//! 2:4 fine-grained structured sparsity and the `mma.sp` selector.
//!
//! A matrix is 2:4 sparse when every four consecutive elements along k hold
//! at most two nonzeros. Compression keeps two positions per group: the
//! nonzero values land in an m x k/2 value matrix and each kept position's
//! offset within its group is recorded as a 2-bit index. The dense B operand
//! is untouched; the hardware selector picks the B rows that participate
//! using the metadata.

use crate::error::{Error, Result};
use crate::exact::exact_product;
use crate::formats::{self, round_to_format, FloatFormat};
use crate::matrix::DenseMatrix;
use crate::mma::{combine_products, MmaShape, NumericPipelineConfig, M16N8K16, M16N8K8};

pub const GROUP: usize = 4;
pub const KEPT_PER_GROUP: usize = 2;

/// Sparse tile shapes each A/B format supports (k is the logical dense k).
pub fn sparse_shapes(ab_format: FloatFormat) -> &'static [MmaShape] {
    const M16N8K32: MmaShape = MmaShape::new(16, 8, 32);
    match ab_format.name {
        "FP16" | "BF16" => &[M16N8K32, M16N8K16],
        "TF32" => &[M16N8K16, M16N8K8],
        _ => &[],
    }
}

/// A compressed 2:4 operand: nonzero values plus 2-bit-per-value metadata.
///
/// Row r's metadata packs k/2 two-bit indices little-endian: the lowest
/// order bit-pair describes the first kept element of the row. Within every
/// group the two kept indices are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Sparse24Matrix {
    m: usize,
    k: usize,
    values: DenseMatrix,
    metadata: Vec<u64>,
}

impl Sparse24Matrix {
    pub fn new(m: usize, k: usize, values: DenseMatrix, metadata: Vec<u64>) -> Result<Self> {
        if k % GROUP != 0 {
            return Err(Error::ShapeMismatch(format!("k = {k} is not divisible by 4")));
        }
        if values.rows() != m || values.cols() != k / 2 {
            return Err(Error::ShapeMismatch(format!(
                "values are {}x{}, expected {}x{}",
                values.rows(),
                values.cols(),
                m,
                k / 2
            )));
        }
        if metadata.len() != m {
            return Err(Error::Metadata(format!(
                "{} metadata rows for {m} matrix rows",
                metadata.len()
            )));
        }
        if k > 64 {
            return Err(Error::ShapeMismatch(format!("k = {k} exceeds the 64-wide metadata word")));
        }
        let s = Sparse24Matrix { m, k, values, metadata };
        s.check_metadata()?;
        Ok(s)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn metadata(&self) -> &[u64] {
        &self.metadata
    }

    /// 2-bit index of kept element `p` (0..k/2) of row `r`.
    pub fn index(&self, r: usize, p: usize) -> usize {
        ((self.metadata[r] >> (2 * p)) & 0b11) as usize
    }

    /// Dense column addressed by kept element `p` of row `r`.
    pub fn dense_col(&self, r: usize, p: usize) -> usize {
        GROUP * (p / KEPT_PER_GROUP) + self.index(r, p)
    }

    fn check_metadata(&self) -> Result<()> {
        for r in 0..self.m {
            // k/2 pairs occupy the low k bits
            let unused = if self.k == 64 { 0 } else { self.metadata[r] >> self.k };
            if unused != 0 {
                return Err(Error::Metadata(format!("row {r}: bits set beyond {} pairs", self.k / 2)));
            }
            for g in 0..self.k / GROUP {
                let first = self.index(r, 2 * g);
                let second = self.index(r, 2 * g + 1);
                if first >= second {
                    return Err(Error::Metadata(format!(
                        "row {r} group {g}: indices {first},{second} are not strictly increasing"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Expand back to the dense m x k matrix.
    pub fn decompress(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.m, self.k);
        for r in 0..self.m {
            for p in 0..self.k / 2 {
                a.set(r, self.dense_col(r, p), self.values.get(r, p));
            }
        }
        a
    }

    /// Serialize: values CSV followed by one `meta,<hex>` line per row, the
    /// hex being the packed bit-pairs (k/4 digits).
    pub fn to_file_string(&self) -> String {
        let mut out = self.values.to_csv();
        let width = self.k / 4;
        for r in 0..self.m {
            out.push_str(&format!("meta,{:0width$x}\n", self.metadata[r], width = width));
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut values_part = String::new();
        let mut metadata = Vec::new();
        for line in text.lines() {
            if let Some(hex) = line.trim().strip_prefix("meta,") {
                let word = u64::from_str_radix(hex.trim(), 16)
                    .map_err(|_| Error::Parse(format!("bad metadata hex {hex:?}")))?;
                metadata.push(word);
            } else {
                values_part.push_str(line);
                values_part.push('\n');
            }
        }
        let values = DenseMatrix::from_csv(&values_part)?;
        let (m, k) = (values.rows(), values.cols() * 2);
        Sparse24Matrix::new(m, k, values, metadata)
    }
}

/// Check the 2:4 pattern: every 4-wide group along k has at most two
/// nonzeros. Fewer than two is fine (explicit zeros get kept).
pub fn check_24(a: &DenseMatrix) -> Result<()> {
    if a.cols() % GROUP != 0 {
        return Err(Error::ShapeMismatch(format!("k = {} is not divisible by 4", a.cols())));
    }
    for r in 0..a.rows() {
        for g in 0..a.cols() / GROUP {
            let nonzeros = (0..GROUP).filter(|&i| a.get(r, GROUP * g + i) != 0.0).count();
            if nonzeros > KEPT_PER_GROUP {
                return Err(Error::NotSparse24 { row: r, group: g });
            }
        }
    }
    Ok(())
}

/// Compress a valid 2:4 matrix. Groups with fewer than two nonzeros keep
/// zero positions, lowest index first, so exactly two elements per group are
/// stored; `decompress(compress(a)) == a`.
pub fn compress_24(a: &DenseMatrix) -> Result<Sparse24Matrix> {
    check_24(a)?;
    let (m, k) = (a.rows(), a.cols());
    let mut values = DenseMatrix::zeros(m, k / 2);
    let mut metadata = vec![0u64; m];
    for r in 0..m {
        for g in 0..k / GROUP {
            let mut kept: Vec<usize> =
                (0..GROUP).filter(|&i| a.get(r, GROUP * g + i) != 0.0).collect();
            let pad: Vec<usize> = (0..GROUP).filter(|i| !kept.contains(i)).collect();
            let mut pad = pad.into_iter();
            while kept.len() < KEPT_PER_GROUP {
                kept.push(pad.next().expect("a 4-group always has a free position"));
            }
            kept.sort_unstable();
            for (j, &idx) in kept.iter().enumerate() {
                let p = 2 * g + j;
                values.set(r, p, a.get(r, GROUP * g + idx));
                metadata[r] |= (idx as u64) << (2 * p);
            }
        }
    }
    Sparse24Matrix::new(m, k, values, metadata)
}

/// Magnitude-prune to a valid 2:4 pattern: per group keep the two largest
/// magnitudes (ties break toward the lower index), zero the rest.
pub fn prune_24(a: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() % GROUP != 0 {
        return Err(Error::ShapeMismatch(format!("k = {} is not divisible by 4", a.cols())));
    }
    let mut out = DenseMatrix::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        for g in 0..a.cols() / GROUP {
            let mut order: Vec<usize> = (0..GROUP).collect();
            // stable sort by descending magnitude keeps lower indices first
            // among ties
            order.sort_by(|&x, &y| {
                a.get(r, GROUP * g + y)
                    .abs()
                    .partial_cmp(&a.get(r, GROUP * g + x).abs())
                    .unwrap()
            });
            for &i in order.iter().take(KEPT_PER_GROUP) {
                out.set(r, GROUP * g + i, a.get(r, GROUP * g + i));
            }
        }
    }
    Ok(out)
}

/// Emulate `D = sA*B + C` for one `mma.sp` tile. The inner product runs over
/// the kept values only, each multiplied against the B row the metadata
/// selects; the numeric pipeline is identical to the dense instruction.
pub fn mma_sp_emulate(
    sa: &Sparse24Matrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    shape: MmaShape,
    cfg: &NumericPipelineConfig,
) -> Result<DenseMatrix> {
    cfg.validate()?;
    if !sparse_shapes(cfg.ab_format).contains(&shape) {
        return Err(Error::Unsupported(format!(
            "shape {shape} is not a sparse {} tile",
            cfg.ab_format.name
        )));
    }
    sa.check_metadata()?;
    if sa.m() != shape.m || sa.k() != shape.k {
        return Err(Error::ShapeMismatch(format!(
            "sA is {}x{} (logical), expected {}x{}",
            sa.m(),
            sa.k(),
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
    for m in [sa.values(), b, c] {
        if m.iter().any(|x| x.is_nan()) {
            return Err(Error::Unsupported("NaN operand entry".into()));
        }
    }

    let qv = sa.values().quantized(cfg.ab_format, cfg.input_rounding);
    let qb = b.quantized(cfg.ab_format, cfg.input_rounding);
    let qc = c.quantized(cfg.cd_format, cfg.input_rounding);

    let half_k = shape.k / 2;
    let mut d = DenseMatrix::zeros(shape.m, shape.n);
    let mut products = vec![0.0f64; half_k];
    for i in 0..shape.m {
        for j in 0..shape.n {
            for (p, prod) in products.iter_mut().enumerate() {
                let col = sa.dense_col(i, p);
                *prod = exact_product(qv.get(i, p), qb.get(col, j));
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{RoundingMode, BF16, FP16, FP32};
    use crate::mma::mma_emulate;

    fn splitmix(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    fn uniform(state: &mut u64) -> f64 {
        (splitmix(state) >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Random matrix already pruned to a valid 2:4 pattern and quantized.
    fn random_sparse24(m: usize, k: usize, fmt: crate::formats::FloatFormat, state: &mut u64) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(m, k);
        for r in 0..m {
            for c in 0..k {
                a.set(r, c, round_to_format((uniform(state) - 0.5) * 4.0, fmt, RoundingMode::NearestEven));
            }
        }
        prune_24(&a).unwrap()
    }

    #[test]
    fn check_24_examples() {
        let valid = DenseMatrix::from_rows(1, 4, vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        assert!(check_24(&valid).is_ok());
        let invalid = DenseMatrix::from_rows(1, 4, vec![1.0, 2.0, 3.0, 0.0]).unwrap();
        assert!(matches!(check_24(&invalid), Err(Error::NotSparse24 { row: 0, group: 0 })));
        assert!(check_24(&DenseMatrix::zeros(4, 8)).is_ok());
        assert!(check_24(&DenseMatrix::zeros(2, 6)).is_err()); // k not /4
    }

    #[test]
    fn compress_group_encoding() {
        let a = DenseMatrix::from_rows(1, 4, vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let s = compress_24(&a).unwrap();
        assert_eq!(s.values().as_slice(), &[1.0, 2.0]);
        // indices (0, 2): bit-pairs 00 then 10, first pair lowest-order
        assert_eq!(s.metadata()[0], 0b1000);
        assert_eq!(s.index(0, 0), 0);
        assert_eq!(s.index(0, 1), 2);
    }

    #[test]
    fn all_zero_group_pads_lowest_indices() {
        let a = DenseMatrix::zeros(1, 4);
        let s = compress_24(&a).unwrap();
        assert_eq!(s.values().as_slice(), &[0.0, 0.0]);
        assert_eq!((s.index(0, 0), s.index(0, 1)), (0, 1));
    }

    #[test]
    fn compress_round_trips_random_matrices() {
        let mut state = 2024u64;
        for _ in 0..1000 {
            let a = random_sparse24(16, 16, BF16, &mut state);
            let s = compress_24(&a).unwrap();
            assert_eq!(s.decompress(), a);
        }
    }

    #[test]
    fn prune_examples() {
        let a = DenseMatrix::from_rows(1, 4, vec![4.0, -5.0, 1.0, 2.0]).unwrap();
        assert_eq!(prune_24(&a).unwrap().as_slice(), &[4.0, -5.0, 0.0, 0.0]);
        let ties = DenseMatrix::from_rows(1, 4, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(prune_24(&ties).unwrap().as_slice(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn prune_output_always_valid() {
        let mut state = 7u64;
        for _ in 0..200 {
            let mut a = DenseMatrix::zeros(8, 16);
            for r in 0..8 {
                for c in 0..16 {
                    a.set(r, c, uniform(&mut state) - 0.5);
                }
            }
            assert!(check_24(&prune_24(&a).unwrap()).is_ok());
        }
    }

    #[test]
    fn dense_sparse_bitwise_equivalence() {
        let mut state = 4242u64;
        let shape = MmaShape::new(16, 8, 16);
        let cfg = NumericPipelineConfig::new(FP16, FP32).unwrap();
        for _ in 0..200 {
            let a = random_sparse24(16, 16, FP16, &mut state);
            let mut b = DenseMatrix::zeros(16, 8);
            let mut c = DenseMatrix::zeros(16, 8);
            for r in 0..16 {
                for j in 0..8 {
                    b.set(r, j, round_to_format((uniform(&mut state) - 0.5) * 4.0, FP16, RoundingMode::NearestEven));
                    c.set(r, j, (uniform(&mut state) - 0.5) as f32 as f64);
                }
            }
            let dense = mma_emulate(&a, &b, &c, shape, &cfg).unwrap();
            let sparse = mma_sp_emulate(&compress_24(&a).unwrap(), &b, &c, shape, &cfg).unwrap();
            assert_eq!(dense, sparse);
        }
    }

    #[test]
    fn all_zero_sa_yields_c() {
        let s = compress_24(&DenseMatrix::zeros(16, 16)).unwrap();
        let b = DenseMatrix::zeros(16, 8);
        let mut c = DenseMatrix::zeros(16, 8);
        c.set(3, 4, 0.7f32 as f64);
        let cfg = NumericPipelineConfig::new(BF16, FP32).unwrap();
        let d = mma_sp_emulate(&s, &b, &c, MmaShape::new(16, 8, 16), &cfg).unwrap();
        assert_eq!(d, c);
    }

    #[test]
    fn single_nonzero_row_matches_scalar_fma() {
        // one kept value against a selected B row, plus the accumulator
        let mut a = DenseMatrix::zeros(16, 16);
        a.set(0, 6, 1.25); // group 1, index 2
        let mut b = DenseMatrix::zeros(16, 8);
        b.set(6, 0, -2.5);
        let mut c = DenseMatrix::zeros(16, 8);
        c.set(0, 0, 0.375);
        let cfg = NumericPipelineConfig::new(FP16, FP32).unwrap();
        let s = compress_24(&a).unwrap();
        let d = mma_sp_emulate(&s, &b, &c, MmaShape::new(16, 8, 16), &cfg).unwrap();
        assert_eq!(d.get(0, 0), 1.25 * -2.5 + 0.375);
    }

    #[test]
    fn malformed_metadata_rejected() {
        let values = DenseMatrix::zeros(1, 2);
        // descending indices 2,1
        assert!(Sparse24Matrix::new(1, 4, values.clone(), vec![0b0110]).is_err());
        // duplicate indices 1,1
        assert!(Sparse24Matrix::new(1, 4, values.clone(), vec![0b0101]).is_err());
        // stray bits beyond the packed pairs
        assert!(Sparse24Matrix::new(1, 4, values, vec![0b1_0100]).is_err());
    }

    #[test]
    fn file_format_round_trips() {
        let mut state = 99u64;
        let a = random_sparse24(4, 8, FP16, &mut state);
        let s = compress_24(&a).unwrap();
        let text = s.to_file_string();
        assert_eq!(text.lines().filter(|l| l.starts_with("meta,")).count(), 4);
        let back = Sparse24Matrix::from_file_string(&text).unwrap();
        assert_eq!(back, s);
    }
}
