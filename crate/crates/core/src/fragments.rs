//! Per-lane register fragment layouts for warp-level mma operands.
//!
//! A warp's 32 lanes jointly hold each operand tile. The tables here follow
//! the vendor ISA's arrangement: lanes are grouped four at a time
//! (`group = lane / 4`, `t = lane % 4`) and each group of four consecutive
//! lanes covers 16 consecutive bytes of a fragment row. The emulator's
//! numeric results never depend on these tables; they exist so cooperative
//! shared-memory loads can be validated against the operand arrangement the
//! compute instructions expect.

use crate::error::{Error, Result};
use crate::formats::{self, quantize, FloatFormat, QuantizedValue, RoundingMode};
use crate::matrix::DenseMatrix;
use crate::mma::{MmaShape, M16N8K16, M16N8K4, M16N8K8};

pub const LANES: usize = 32;

/// Which operand of `D = A*B + C` a fragment holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    A,
    B,
    CorD,
}

/// A total mapping from (lane, element slot) to tile coordinates.
#[derive(Debug, Clone, Copy)]
pub struct FragmentLayout {
    pub operand: Operand,
    pub shape: MmaShape,
    pub element_format: FloatFormat,
    elems_per_lane: usize,
    rows: usize,
    cols: usize,
}

impl FragmentLayout {
    pub fn new(operand: Operand, shape: MmaShape, element_format: FloatFormat) -> Result<Self> {
        let bytes = element_format.storage_bits as usize / 8;
        let two_byte = bytes == 2;
        let supported = match operand {
            Operand::A | Operand::B => match element_format.name {
                "FP16" | "BF16" => [M16N8K16, M16N8K8].contains(&shape),
                "TF32" => [M16N8K8, M16N8K4].contains(&shape),
                _ => false,
            },
            Operand::CorD => {
                matches!(element_format.name, "FP32" | "FP16")
                    && (shape.m, shape.n) == (16, 8)
                    && [M16N8K16, M16N8K8, M16N8K4].contains(&shape)
            }
        };
        if !supported {
            return Err(Error::Unsupported(format!(
                "no fragment layout for {operand:?} {shape} {}",
                element_format.name
            )));
        }
        let (rows, cols) = match operand {
            Operand::A => (shape.m, shape.k),
            Operand::B => (shape.k, shape.n),
            Operand::CorD => (shape.m, shape.n),
        };
        let elems = rows * cols;
        debug_assert!(elems % LANES == 0);
        let _ = two_byte;
        Ok(FragmentLayout { operand, shape, element_format, elems_per_lane: elems / LANES, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Element slots held by each lane.
    pub fn elems_per_lane(&self) -> usize {
        self.elems_per_lane
    }

    /// 4-byte register slots per lane: tile bytes / (32 lanes * 4 bytes).
    pub fn register_slots(&self) -> usize {
        let bytes = self.element_format.storage_bits as usize / 8;
        self.rows * self.cols * bytes / (LANES * 4)
    }

    fn elems_per_register(&self) -> usize {
        self.elems_per_lane / self.register_slots()
    }

    /// Tile coordinates of element slot `slot` of `lane`.
    pub fn coords(&self, lane: usize, slot: usize) -> (usize, usize) {
        debug_assert!(lane < LANES && slot < self.elems_per_lane);
        let g = lane / 4; // group of four consecutive lanes
        let t = lane % 4;
        let i = slot;
        let two_byte = self.element_format.storage_bits == 16;
        match (self.operand, two_byte) {
            (Operand::A, true) => {
                if self.shape.k == 16 {
                    (g + 8 * ((i >> 1) & 1), 2 * t + (i & 1) + 8 * (i >> 2))
                } else {
                    (g + 8 * (i >> 1), 2 * t + (i & 1))
                }
            }
            (Operand::A, false) => {
                // TF32: one element per register
                if self.shape.k == 8 {
                    (g + 8 * (i & 1), t + 4 * (i >> 1))
                } else {
                    (g + 8 * i, t)
                }
            }
            (Operand::B, true) => {
                if self.shape.k == 16 {
                    (2 * t + (i & 1) + 8 * (i >> 1), g)
                } else {
                    (2 * t + (i & 1), g)
                }
            }
            (Operand::B, false) => {
                if self.shape.k == 8 {
                    (t + 4 * i, g)
                } else {
                    (t, g)
                }
            }
            (Operand::CorD, _) => (g + 8 * (i >> 1), 2 * t + (i & 1)),
        }
    }

    /// Inverse of [`coords`](Self::coords).
    pub fn lane_slot(&self, row: usize, col: usize) -> (usize, usize) {
        for lane in 0..LANES {
            for slot in 0..self.elems_per_lane {
                if self.coords(lane, slot) == (row, col) {
                    return (lane, slot);
                }
            }
        }
        unreachable!("fragment mapping is total")
    }
}

/// The register image of one warp: 32 lanes of `register_slots` 4-byte
/// registers each.
pub type RegisterImage = Vec<Vec<u32>>;

fn encode_register_bits(x: f64, fmt: FloatFormat) -> u32 {
    let q: QuantizedValue = quantize(x, fmt, RoundingMode::NearestEven);
    match fmt.name {
        // TF32 registers look like FP32 values with a truncated mantissa:
        // sign and exponent move up to the FP32 positions, the 10 mantissa
        // bits occupy the top of the FP32 mantissa field.
        "TF32" => {
            let sign = (q.bits >> 18) & 1;
            let exp = (q.bits >> 10) & 0xFF;
            let man = q.bits & 0x3FF;
            (sign << 31) | (exp << 23) | (man << 13)
        }
        _ => q.bits,
    }
}

fn decode_register_bits(bits: u32, fmt: FloatFormat) -> f64 {
    let v = match fmt.name {
        "TF32" => {
            let sign = (bits >> 31) & 1;
            let exp = (bits >> 23) & 0xFF;
            let man = (bits >> 13) & 0x3FF;
            QuantizedValue { bits: (sign << 18) | (exp << 10) | man, format: fmt }
        }
        _ => QuantizedValue { bits, format: fmt },
    };
    formats::decode(v)
}

/// Distribute a tile into per-lane registers. Elements are quantized into
/// the layout's format; 2-byte elements pack in pairs with the even element
/// slot in the low half-word.
pub fn scatter_to_fragments(m: &DenseMatrix, layout: &FragmentLayout) -> Result<RegisterImage> {
    if m.rows() != layout.rows() || m.cols() != layout.cols() {
        return Err(Error::ShapeMismatch(format!(
            "tile is {}x{}, layout wants {}x{}",
            m.rows(),
            m.cols(),
            layout.rows(),
            layout.cols()
        )));
    }
    let per_reg = layout.elems_per_register();
    let mut regs = vec![vec![0u32; layout.register_slots()]; LANES];
    for (lane, lane_regs) in regs.iter_mut().enumerate() {
        for slot in 0..layout.elems_per_lane() {
            let (r, c) = layout.coords(lane, slot);
            let bits = encode_register_bits(m.get(r, c), layout.element_format);
            match per_reg {
                1 => lane_regs[slot] = bits,
                2 => lane_regs[slot / 2] |= (bits & 0xFFFF) << (16 * (slot % 2)),
                _ => unreachable!(),
            }
        }
    }
    Ok(regs)
}

/// Rebuild the tile from a register image; the inverse of
/// [`scatter_to_fragments`] on format-representable tiles.
pub fn gather_from_fragments(regs: &RegisterImage, layout: &FragmentLayout) -> Result<DenseMatrix> {
    if regs.len() != LANES || regs.iter().any(|r| r.len() != layout.register_slots()) {
        return Err(Error::ShapeMismatch(format!(
            "register image must be 32 lanes x {} registers",
            layout.register_slots()
        )));
    }
    let per_reg = layout.elems_per_register();
    let mut m = DenseMatrix::zeros(layout.rows(), layout.cols());
    for (lane, lane_regs) in regs.iter().enumerate() {
        for slot in 0..layout.elems_per_lane() {
            let bits = match per_reg {
                1 => lane_regs[slot],
                2 => (lane_regs[slot / 2] >> (16 * (slot % 2))) & 0xFFFF,
                _ => unreachable!(),
            };
            let (r, c) = layout.coords(lane, slot);
            m.set(r, c, decode_register_bits(bits, layout.element_format));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{round_to_format, BF16, FP16, FP32, TF32};
    use std::collections::HashSet;

    fn all_layouts() -> Vec<FragmentLayout> {
        let mut v = Vec::new();
        for fmt in [FP16, BF16] {
            for shape in [M16N8K16, M16N8K8] {
                v.push(FragmentLayout::new(Operand::A, shape, fmt).unwrap());
                v.push(FragmentLayout::new(Operand::B, shape, fmt).unwrap());
            }
        }
        for shape in [M16N8K8, M16N8K4] {
            v.push(FragmentLayout::new(Operand::A, shape, TF32).unwrap());
            v.push(FragmentLayout::new(Operand::B, shape, TF32).unwrap());
        }
        for fmt in [FP32, FP16] {
            v.push(FragmentLayout::new(Operand::CorD, M16N8K16, fmt).unwrap());
        }
        v
    }

    #[test]
    fn register_slot_counts() {
        let a16 = FragmentLayout::new(Operand::A, M16N8K16, FP16).unwrap();
        assert_eq!(a16.register_slots(), 4); // 16*16*2 / 128
        assert_eq!(a16.elems_per_lane(), 8);
        let a8 = FragmentLayout::new(Operand::A, M16N8K8, FP16).unwrap();
        assert_eq!(a8.register_slots(), 2);
        let atf = FragmentLayout::new(Operand::A, M16N8K8, TF32).unwrap();
        assert_eq!(atf.register_slots(), 4); // 16*8*4 / 128
        let cd = FragmentLayout::new(Operand::CorD, M16N8K16, FP32).unwrap();
        assert_eq!(cd.register_slots(), 4);
    }

    #[test]
    fn mappings_are_bijections() {
        for layout in all_layouts() {
            let mut seen = HashSet::new();
            for lane in 0..LANES {
                for slot in 0..layout.elems_per_lane() {
                    let (r, c) = layout.coords(lane, slot);
                    assert!(r < layout.rows() && c < layout.cols());
                    assert!(seen.insert((r, c)), "duplicate coords in {layout:?}");
                }
            }
            assert_eq!(seen.len(), layout.rows() * layout.cols());
        }
    }

    #[test]
    fn element_00_lands_in_lane0_slot0() {
        let a = FragmentLayout::new(Operand::A, M16N8K16, BF16).unwrap();
        assert_eq!(a.coords(0, 0), (0, 0));
        assert_eq!(a.lane_slot(0, 0), (0, 0));
    }

    /// Each group of four consecutive lanes covers 16 consecutive bytes of a
    /// fragment row (a row of A/C, a column of col-major B).
    #[test]
    fn four_lane_groups_cover_16_byte_chunks() {
        for layout in all_layouts() {
            let bytes = layout.element_format.storage_bits as usize / 8;
            let elems_per_chunk = 16 / bytes;
            // chunk key -> owning lane group
            let mut owner = std::collections::HashMap::new();
            for lane in 0..LANES {
                for slot in 0..layout.elems_per_lane() {
                    let (r, c) = layout.coords(lane, slot);
                    // the "fragment row" axis runs along the contiguous
                    // dimension: rows for A/C (row-major), cols for B
                    let (major, minor) = match layout.operand {
                        Operand::B => (c, r),
                        _ => (r, c),
                    };
                    let chunk = (major, minor / elems_per_chunk);
                    let group = lane / 4;
                    let prev = owner.insert(chunk, group);
                    if let Some(p) = prev {
                        assert_eq!(p, group, "{layout:?} chunk {chunk:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn scatter_gather_round_trip() {
        let mut state = 5u64;
        let mut next = move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            (z ^ (z >> 27)) as f64 / u64::MAX as f64 * 4.0 - 2.0
        };
        for layout in all_layouts() {
            let mut m = DenseMatrix::zeros(layout.rows(), layout.cols());
            for r in 0..layout.rows() {
                for c in 0..layout.cols() {
                    m.set(r, c, round_to_format(next(), layout.element_format, RoundingMode::NearestEven));
                }
            }
            let regs = scatter_to_fragments(&m, &layout).unwrap();
            let back = gather_from_fragments(&regs, &layout).unwrap();
            assert_eq!(back, m, "{layout:?}");
        }
    }

    #[test]
    fn all_zero_tile_gives_all_zero_registers() {
        let layout = FragmentLayout::new(Operand::A, M16N8K16, FP16).unwrap();
        let regs = scatter_to_fragments(&DenseMatrix::zeros(16, 16), &layout).unwrap();
        assert!(regs.iter().all(|lane| lane.iter().all(|&r| r == 0)));
    }

    #[test]
    fn unsupported_layouts_are_rejected() {
        assert!(FragmentLayout::new(Operand::A, M16N8K16, TF32).is_err());
        assert!(FragmentLayout::new(Operand::A, M16N8K4, FP16).is_err());
        assert!(FragmentLayout::new(Operand::CorD, M16N8K16, BF16).is_err());
    }
}
