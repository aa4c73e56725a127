//! Calibrated latency/throughput model of the tensor and data-movement
//! pipelines.
//!
//! The calibration dataset transcribes the measured completion latencies and
//! convergence points of every benchmarked instruction on three GPUs. On top
//! of it sits a small descriptive pipeline model: each SM has four sub-cores
//! with isolated tensor resources (data movement uses two SM-level units
//! instead); a warp belongs to one unit; a unit initiates one instruction
//! per issue interval `I = workload / per_unit_peak` once busy, and an
//! instruction retires `L` cycles after initiation. The model is fit per
//! record and makes no attempt to derive cycle counts from first principles.

use crate::error::{Error, Result};
use crate::mma::MmaShape;
use serde::Serialize;
use std::fmt;
use std::sync::OnceLock;

mod model;

pub use model::{fit_params, predict, sparse_speedup, PipelineParams, Prediction, SparseSpeedup};

/// GPUs covered by the calibration dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Arch {
    A100,
    Rtx3070Ti,
    Rtx2080Ti,
}

impl Arch {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a100" => Ok(Arch::A100),
            "rtx3070ti" | "3070ti" => Ok(Arch::Rtx3070Ti),
            "rtx2080ti" | "2080ti" => Ok(Arch::Rtx2080Ti),
            other => Err(Error::Uncalibrated(format!("architecture {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::A100 => "A100",
            Arch::Rtx3070Ti => "RTX3070Ti",
            Arch::Rtx2080Ti => "RTX2080Ti",
        }
    }
}

/// Instruction family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum InstrKind {
    Mma,
    MmaSp,
    Ldmatrix,
}

impl InstrKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', ".").replace('-', ".").as_str() {
            "mma" => Ok(InstrKind::Mma),
            "mma.sp" | "mmasp" | "sparse" => Ok(InstrKind::MmaSp),
            "ldmatrix" => Ok(InstrKind::Ldmatrix),
            other => Err(Error::Parse(format!("unknown instruction kind {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            InstrKind::Mma => "mma",
            InstrKind::MmaSp => "mma.sp",
            InstrKind::Ldmatrix => "ldmatrix",
        }
    }
}

/// Operand data types appearing in the performance tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DataType {
    Fp16,
    Fp32,
    Tf32,
    Int8,
    Int32,
}

impl DataType {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp16" | "half" => Ok(DataType::Fp16),
            "fp32" => Ok(DataType::Fp32),
            "tf32" => Ok(DataType::Tf32),
            "int8" => Ok(DataType::Int8),
            "int32" => Ok(DataType::Int32),
            other => Err(Error::Parse(format!("unknown data type {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DataType::Fp16 => "FP16",
            DataType::Fp32 => "FP32",
            DataType::Tf32 => "TF32",
            DataType::Int8 => "INT8",
            DataType::Int32 => "INT32",
        }
    }
}

/// Tile shape of a compute instruction or matrix count of an `ldmatrix`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum InstrShape {
    Tile(MmaShape),
    Ldmatrix(usize),
}

impl InstrShape {
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if let Some(n) = lower.strip_prefix('x') {
            let n: usize =
                n.parse().map_err(|_| Error::Parse(format!("bad ldmatrix shape {s:?}")))?;
            if ![1, 2, 4].contains(&n) {
                return Err(Error::Parse(format!("ldmatrix.x{n} does not exist")));
            }
            return Ok(InstrShape::Ldmatrix(n));
        }
        Ok(InstrShape::Tile(MmaShape::parse(s)?))
    }
}

impl fmt::Display for InstrShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstrShape::Tile(sh) => write!(f, "{sh}"),
            InstrShape::Ldmatrix(n) => write!(f, "x{n}"),
        }
    }
}

/// One measured (#warps, ILP) point at which throughput has converged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub warps: u32,
    pub ilp: u32,
    /// cycles
    pub latency: f64,
    /// FMA/clk/SM for compute, bytes/clk/SM for data movement
    pub throughput: f64,
}

/// One instruction's measured behavior, transcribed verbatim from the
/// calibration tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRecord {
    pub arch: Arch,
    pub kind: InstrKind,
    pub ab: Option<DataType>,
    pub cd: Option<DataType>,
    pub shape: InstrShape,
    /// cycles at one warp, ILP 1
    pub completion_latency: f64,
    pub points: Vec<ConvergencePoint>,
}

impl CalibrationRecord {
    /// Workload of one instruction: m*n*k FMAs for compute (sparse shapes
    /// are credited at the full logical k, which is how 2x gains appear at
    /// equal cycles), or N*128 bytes for `ldmatrix`.
    pub fn workload(&self) -> f64 {
        match self.shape {
            InstrShape::Tile(sh) => sh.fma_count() as f64,
            InstrShape::Ldmatrix(n) => (n * 128) as f64,
        }
    }

    /// Execution units the instruction can spread over: the four sub-cores,
    /// or the two SM-level data movement units for `ldmatrix`.
    pub fn units(&self) -> u32 {
        match self.kind {
            InstrKind::Ldmatrix => 2,
            _ => 4,
        }
    }

    /// Device peak throughput per SM where the vendor states one (A100),
    /// in this record's workload units.
    pub fn stated_device_peak(&self) -> Option<f64> {
        if self.arch != Arch::A100 {
            return None;
        }
        match (self.kind, self.ab) {
            (InstrKind::Ldmatrix, _) => Some(128.0),
            (InstrKind::Mma, Some(DataType::Fp16)) => Some(1024.0),
            (InstrKind::Mma, Some(DataType::Tf32)) => Some(512.0),
            (InstrKind::Mma, Some(DataType::Int8)) => Some(2048.0),
            (InstrKind::MmaSp, Some(DataType::Fp16)) => Some(2048.0),
            (InstrKind::MmaSp, Some(DataType::Tf32)) => Some(1024.0),
            (InstrKind::MmaSp, Some(DataType::Int8)) => Some(4096.0),
            _ => None,
        }
    }

    pub fn point_at_warps(&self, warps: u32) -> Option<&ConvergencePoint> {
        self.points.iter().find(|p| p.warps == warps)
    }

    /// Highest measured convergence throughput.
    pub fn best_throughput(&self) -> f64 {
        self.points.iter().map(|p| p.throughput).fold(0.0, f64::max)
    }

    /// The final (highest-warp) convergence point.
    pub fn final_point(&self) -> &ConvergencePoint {
        self.points.iter().max_by_key(|p| p.warps).expect("records have points")
    }

    fn key(&self) -> (Arch, InstrKind, Option<DataType>, Option<DataType>, InstrShape) {
        (self.arch, self.kind, self.ab, self.cd, self.shape)
    }
}

/// The full calibration dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    records: Vec<CalibrationRecord>,
}

/// The dataset shipped with the crate, one CSV row per convergence point.
pub const BUILTIN_CALIBRATION_CSV: &str = include_str!("calibration.csv");

static BUILTIN: OnceLock<CalibrationSet> = OnceLock::new();

impl CalibrationSet {
    /// The built-in dataset.
    pub fn builtin() -> &'static CalibrationSet {
        BUILTIN.get_or_init(|| {
            CalibrationSet::parse_csv(BUILTIN_CALIBRATION_CSV)
                .expect("embedded calibration dataset parses")
        })
    }

    pub fn records(&self) -> &[CalibrationRecord] {
        &self.records
    }

    /// Parse the `arch,kind,ab,cd,shape,completion,warps,ilp,latency,throughput`
    /// schema; consecutive rows of one instruction merge into one record.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty calibration file".into()))?;
        if header.trim() != "arch,kind,ab,cd,shape,completion,warps,ilp,latency,throughput" {
            return Err(Error::Parse(format!("unexpected calibration header {header:?}")));
        }
        let mut records: Vec<CalibrationRecord> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 10 {
                return Err(Error::Parse(format!(
                    "calibration line {}: expected 10 fields, got {}",
                    lineno + 2,
                    f.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse(format!("bad number {s:?} on line {}", lineno + 2)))
            };
            let int = |s: &str| -> Result<u32> {
                s.parse().map_err(|_| Error::Parse(format!("bad count {s:?} on line {}", lineno + 2)))
            };
            let dtype = |s: &str| -> Result<Option<DataType>> {
                if s == "-" { Ok(None) } else { DataType::parse(s).map(Some) }
            };
            let rec = CalibrationRecord {
                arch: Arch::parse(f[0])?,
                kind: InstrKind::parse(f[1])?,
                ab: dtype(f[2])?,
                cd: dtype(f[3])?,
                shape: InstrShape::parse(f[4])?,
                completion_latency: num(f[5])?,
                points: vec![ConvergencePoint {
                    warps: int(f[6])?,
                    ilp: int(f[7])?,
                    latency: num(f[8])?,
                    throughput: num(f[9])?,
                }],
            };
            match records.last_mut() {
                Some(last) if last.key() == rec.key() => {
                    if last.completion_latency != rec.completion_latency {
                        return Err(Error::Parse(format!(
                            "line {}: completion latency differs within one record",
                            lineno + 2
                        )));
                    }
                    last.points.extend(rec.points);
                }
                _ => records.push(rec),
            }
        }
        Ok(CalibrationSet { records })
    }

    /// Re-emit the dataset in the CSV schema. Numbers keep their shortest
    /// round-trip form, so parse -> emit is byte-stable on the shipped file.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arch,kind,ab,cd,shape,completion,warps,ilp,latency,throughput\n");
        for r in &self.records {
            for p in &r.points {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.arch.as_str(),
                    r.kind.as_str(),
                    r.ab.map_or("-", |d| d.as_str()),
                    r.cd.map_or("-", |d| d.as_str()),
                    r.shape,
                    r.completion_latency,
                    p.warps,
                    p.ilp,
                    p.latency,
                    p.throughput
                ));
            }
        }
        out
    }

    /// Find the record for one instruction configuration. Anything outside
    /// the dataset (a Hopper query, a BF16 row, an unmeasured shape) is an
    /// explicit uncalibrated error.
    pub fn lookup(
        &self,
        arch: Arch,
        kind: InstrKind,
        ab: Option<DataType>,
        cd: Option<DataType>,
        shape: InstrShape,
    ) -> Result<&CalibrationRecord> {
        self.records
            .iter()
            .find(|r| r.key() == (arch, kind, ab, cd, shape))
            .ok_or_else(|| {
                Error::Uncalibrated(format!(
                    "{} {} {}/{} {}",
                    arch.as_str(),
                    kind.as_str(),
                    ab.map_or("-", |d| d.as_str()),
                    cd.map_or("-", |d| d.as_str()),
                    shape
                ))
            })
    }
}
