//! Dense matrices over binary64 carriers, with CSV import/export.

use crate::error::{Error, Result};
use crate::formats::{round_to_format, FloatFormat, RoundingMode};
use serde::{Deserialize, Serialize};

/// Declared operand layout. The tag records how the matrix would be laid out
/// in memory and which register fragment arrangement applies to it; element
/// accessors always use logical (row, col) indexing. For multiply-accumulate
/// operands, row.col is the only supported scheme: A is row-major and B is
/// col-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    RowMajor,
    ColMajor,
}

impl Layout {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "row" | "rowmajor" | "row_major" | "row-major" => Ok(Layout::RowMajor),
            "col" | "colmajor" | "col_major" | "col-major" => Ok(Layout::ColMajor),
            other => Err(Error::Parse(format!("unknown layout {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Layout::RowMajor => "row",
            Layout::ColMajor => "col",
        }
    }
}

/// A rows x cols matrix of binary64 values. Storage is always row-major;
/// `layout` is the declared operand layout tag.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    layout: Layout,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, layout: Layout::RowMajor, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "expected {rows}x{cols}={} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, layout: Layout::RowMajor, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn with_layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }

    /// Elementwise quantize-and-decode into `fmt`.
    pub fn quantized(&self, fmt: FloatFormat, mode: RoundingMode) -> Self {
        let data = self.data.iter().map(|&x| round_to_format(x, fmt, mode)).collect();
        DenseMatrix { rows: self.rows, cols: self.cols, layout: self.layout, data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// CSV with a `rows,cols,layout` header line followed by one line per
    /// matrix row. Values print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},{}\n", self.rows, self.cols, self.layout.as_str());
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| format!("{}", self.get(r, c))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!(
                "matrix header must be rows,cols,layout; got {header:?}"
            )));
        }
        let rows: usize =
            fields[0].parse().map_err(|_| Error::Parse(format!("bad rows field {:?}", fields[0])))?;
        let cols: usize =
            fields[1].parse().map_err(|_| Error::Parse(format!("bad cols field {:?}", fields[1])))?;
        let layout = Layout::parse(fields[2])?;
        let mut data = Vec::with_capacity(rows * cols);
        for (i, line) in lines.enumerate() {
            if i >= rows {
                return Err(Error::Parse(format!("more than {rows} data rows")));
            }
            let vals: Vec<&str> = line.split(',').map(str::trim).collect();
            if vals.len() != cols {
                return Err(Error::Parse(format!(
                    "row {i} has {} values, expected {cols}",
                    vals.len()
                )));
            }
            for v in vals {
                data.push(
                    v.parse::<f64>().map_err(|_| Error::Parse(format!("bad value {v:?} in row {i}")))?,
                );
            }
        }
        if data.len() != rows * cols {
            return Err(Error::Parse(format!(
                "expected {rows} data rows, got {}",
                data.len() / cols.max(1)
            )));
        }
        Ok(DenseMatrix { rows, cols, layout, data })
    }
}
