//! Numeric experiments: element-wise probes of the three pipeline
//! operations and the chain matrix multiplication study.
//!
//! All randomness is pinned: values come from per-trial SplitMix64
//! substreams through Box-Muller (mean 0, sigma 1), so reruns are
//! bit-identical with parallel trials on or off. Drawn values are rounded
//! to FP32 first - they model data born as FP32 arrays - and the
//! "init low" mode additionally pre-quantizes them into the operand format,
//! eliminating conversion loss so the experiments see the pipeline's own
//! arithmetic.

pub mod rng;

pub use rng::{generate_normal, RandomStream};

use crate::error::{Error, Result};
use crate::formats::{round_to_format, FloatFormat, RoundingMode, FP16, FP32};
use crate::matrix::DenseMatrix;
use crate::mma::{dense_shapes, mma_emulate, MmaShape, NumericPipelineConfig, M16N8K8};
use crate::oracle::{matmul_ref, relative_l2_error, CpuPrecision};
use rayon::prelude::*;
use serde::Serialize;

/// The three intermediate operations of `D = A*B + C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProbeOperation {
    /// d0 = a0*b0
    Multiplication,
    /// d0 = a0*b0 + a1*b1
    InnerProductAdd,
    /// d0 = a0*b0 + c0
    AccumulationAdd,
}

impl ProbeOperation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "multiplication" | "mul" => Ok(ProbeOperation::Multiplication),
            "innerproduct" | "innerproductadd" | "inner" => Ok(ProbeOperation::InnerProductAdd),
            "accumulation" | "accumulationadd" | "accum" => Ok(ProbeOperation::AccumulationAdd),
            other => Err(Error::Parse(format!("unknown probe operation {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeOperation::Multiplication => "multiplication",
            ProbeOperation::InnerProductAdd => "inner-product",
            ProbeOperation::AccumulationAdd => "accumulation",
        }
    }
}

/// How probe/chain inputs are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InitMode {
    /// Values pre-quantized to the operand format: no conversion loss.
    InitLow,
    /// Raw FP32 values; the pipeline's entry conversion shows up as error.
    InitFp32,
}

impl InitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "low" | "initlow" => Ok(InitMode::InitLow),
            "fp32" | "initfp32" => Ok(InitMode::InitFp32),
            other => Err(Error::Parse(format!("unknown init mode {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            InitMode::InitLow => "low",
            InitMode::InitFp32 => "fp32",
        }
    }
}

/// One element-wise probe configuration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeCase {
    pub operation: ProbeOperation,
    pub init_mode: InitMode,
    pub format: FloatFormat,
    pub cd_format: FloatFormat,
    pub trials: usize,
    pub seed: u64,
}

/// Probe outcome: mean absolute error of d0 against the FP32 CPU baseline,
/// and additionally against that baseline converted to FP16 when C/D are
/// FP16.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub operation: ProbeOperation,
    pub init_mode: InitMode,
    pub format: String,
    pub cd_format: String,
    pub trials: usize,
    pub seed: u64,
    pub mean_abs_error: f64,
    pub mean_abs_error_vs_converted: Option<f64>,
    /// Trials where the primary comparison differs at all.
    pub nonzero_error_trials: usize,
}

/// Neumaier-compensated sum in index order; the reduction is independent of
/// how trials were scheduled.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn map_trials<T, F>(trials: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if parallel {
        (0..trials as u64).into_par_iter().map(f).collect()
    } else {
        (0..trials as u64).map(f).collect()
    }
}

/// The four shared draws of one probe trial. The inner-product and
/// accumulation probes share their leading values: a1 of the inner product
/// equals c0 of accumulation.
fn probe_draws(seed: u64, trial: u64) -> [f64; 4] {
    let mut s = RandomStream::substream(seed, trial);
    // ground values are FP32 data
    [0; 4].map(|_| s.next_normal() as f32 as f64)
}

/// Run an element-wise probe under the default pipeline.
pub fn run_probe(case: &ProbeCase, parallel: bool) -> Result<ProbeResult> {
    let pipeline = NumericPipelineConfig::new(case.format, case.cd_format)?;
    run_probe_with(case, &pipeline, parallel)
}

/// Run an element-wise probe under an explicit pipeline configuration.
pub fn run_probe_with(
    case: &ProbeCase,
    pipeline: &NumericPipelineConfig,
    parallel: bool,
) -> Result<ProbeResult> {
    pipeline.validate()?;
    if pipeline.ab_format != case.format || pipeline.cd_format != case.cd_format {
        return Err(Error::Unsupported("pipeline formats disagree with the probe case".into()));
    }
    let shape = M16N8K8;
    let fp16_cd = case.cd_format == FP16;

    let outcomes: Vec<Result<(f64, Option<f64>)>> = map_trials(case.trials, parallel, |trial| {
        let draws = probe_draws(case.seed, trial);
        let low = |x: f64| match case.init_mode {
            InitMode::InitLow => round_to_format(x, case.format, RoundingMode::NearestEven),
            InitMode::InitFp32 => x,
        };
        let low_cd = |x: f64| match case.init_mode {
            InitMode::InitLow => round_to_format(x, case.cd_format, RoundingMode::NearestEven),
            InitMode::InitFp32 => x,
        };
        let mut a = DenseMatrix::zeros(shape.m, shape.k);
        let mut b = DenseMatrix::zeros(shape.k, shape.n);
        let mut c = DenseMatrix::zeros(shape.m, shape.n);
        a.set(0, 0, low(draws[0]));
        b.set(0, 0, low(draws[1]));
        match case.operation {
            ProbeOperation::Multiplication => {}
            ProbeOperation::InnerProductAdd => {
                a.set(0, 1, low(draws[2]));
                b.set(1, 0, low(draws[3]));
            }
            ProbeOperation::AccumulationAdd => {
                c.set(0, 0, low_cd(draws[2]));
            }
        }
        let d0 = mma_emulate(&a, &b, &c, shape, pipeline)?.get(0, 0);
        let r0 = matmul_ref(&a, &b, &c, CpuPrecision::Binary32)?.get(0, 0);
        let err = (d0 - r0).abs();
        let err_cvt = fp16_cd
            .then(|| (d0 - round_to_format(r0, FP16, RoundingMode::NearestEven)).abs());
        Ok((err, err_cvt))
    });

    let mut errs = Vec::with_capacity(case.trials);
    let mut errs_cvt = Vec::with_capacity(if fp16_cd { case.trials } else { 0 });
    let mut nonzero = 0usize;
    for o in outcomes {
        let (e, ec) = o?;
        if e != 0.0 {
            nonzero += 1;
        }
        errs.push(e);
        if let Some(ec) = ec {
            errs_cvt.push(ec);
        }
    }
    Ok(ProbeResult {
        operation: case.operation,
        init_mode: case.init_mode,
        format: case.format.name.to_string(),
        cd_format: case.cd_format.name.to_string(),
        trials: case.trials,
        seed: case.seed,
        mean_abs_error: compensated_sum(&errs) / case.trials as f64,
        mean_abs_error_vs_converted: fp16_cd
            .then(|| compensated_sum(&errs_cvt) / case.trials as f64),
        nonzero_error_trials: nonzero,
    })
}

/// Chain matrix multiplication configuration: D of step t becomes A of step
/// t+1, B is re-randomized each step, and the whole D matrix is scored with
/// the l2 relative error against the FP32 CPU chain.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChainConfig {
    pub format: FloatFormat,
    pub cd_format: FloatFormat,
    pub init_mode: InitMode,
    /// chain length
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
    pub shape: MmaShape,
}

impl ChainConfig {
    pub fn new(format: FloatFormat, init_mode: InitMode, n_max: usize, trials: usize, seed: u64) -> Self {
        // m16n8k8 is the one tile shape all three low-precision formats
        // support, and n = k keeps the chain composable.
        ChainConfig { format, cd_format: FP32, init_mode, n_max, trials, seed, shape: M16N8K8 }
    }
}

/// Per-chain-length aggregate over trials.
#[derive(Debug, Clone, Serialize)]
pub struct ChainPoint {
    pub n: usize,
    /// Mean Eq-style relative error over trials still finite at this step.
    pub mean_rel_error: Option<f64>,
    pub finite_trials: usize,
    pub overflow_trials: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainResult {
    pub format: String,
    pub init_mode: InitMode,
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
    pub points: Vec<ChainPoint>,
    /// Earliest step at which any trial went non-finite.
    pub first_overflow_step: Option<usize>,
}

struct ChainTrial {
    rel_errors: Vec<f64>,
    overflow_step: Option<usize>,
}

pub fn run_chain(cfg: &ChainConfig, parallel: bool) -> Result<ChainResult> {
    if cfg.n_max < 1 {
        return Err(Error::Unsupported("chain length must be at least 1".into()));
    }
    if cfg.shape.n != cfg.shape.k {
        return Err(Error::Unsupported("chain tiles need n = k so D can feed A".into()));
    }
    if !dense_shapes(cfg.format).contains(&cfg.shape) {
        return Err(Error::Unsupported(format!(
            "shape {} is not a dense {} tile",
            cfg.shape, cfg.format.name
        )));
    }
    let pipeline = NumericPipelineConfig::new(cfg.format, cfg.cd_format)?;
    let shape = cfg.shape;

    let trials: Vec<Result<ChainTrial>> = map_trials(cfg.trials, parallel, |trial| {
        let mut stream = RandomStream::substream(cfg.seed, trial);
        let draw = |stream: &mut RandomStream, rows: usize, cols: usize| {
            let mut m = DenseMatrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    m.set(r, c, stream.next_normal() as f32 as f64);
                }
            }
            m
        };
        let quant = |m: &DenseMatrix| match cfg.init_mode {
            InitMode::InitLow => m.quantized(cfg.format, RoundingMode::NearestEven),
            InitMode::InitFp32 => m.clone(),
        };
        let zero_c = DenseMatrix::zeros(shape.m, shape.n);
        let a0 = draw(&mut stream, shape.m, shape.k);
        let mut a_emu = quant(&a0);
        let mut a_ref = a_emu.clone();
        let mut out = ChainTrial { rel_errors: Vec::with_capacity(cfg.n_max), overflow_step: None };
        for step in 1..=cfg.n_max {
            let b = quant(&draw(&mut stream, shape.k, shape.n));
            let d_ref = matmul_ref(&a_ref, &b, &zero_c, CpuPrecision::Binary32)?;
            let d_emu = match mma_emulate(&a_emu, &b, &zero_c, shape, &pipeline) {
                Ok(d) => d,
                // a NaN operand means the previous step already overflowed
                Err(Error::Unsupported(_)) => {
                    out.overflow_step = Some(step);
                    break;
                }
                Err(e) => return Err(e),
            };
            if !d_emu.all_finite() {
                out.overflow_step = Some(step);
                break;
            }
            out.rel_errors.push(relative_l2_error(&d_emu, &d_ref)?);
            a_emu = d_emu;
            a_ref = d_ref;
        }
        Ok(out)
    });

    let mut per_trial = Vec::with_capacity(cfg.trials);
    for t in trials {
        per_trial.push(t?);
    }
    let mut points = Vec::with_capacity(cfg.n_max);
    for n in 1..=cfg.n_max {
        let finite: Vec<f64> = per_trial
            .iter()
            .filter_map(|t| t.rel_errors.get(n - 1).copied())
            .collect();
        let overflowed = per_trial
            .iter()
            .filter(|t| t.overflow_step.is_some_and(|s| s <= n))
            .count();
        points.push(ChainPoint {
            n,
            mean_rel_error: if finite.is_empty() {
                None
            } else {
                Some(compensated_sum(&finite) / finite.len() as f64)
            },
            finite_trials: finite.len(),
            overflow_trials: overflowed,
        });
    }
    let first_overflow_step = per_trial.iter().filter_map(|t| t.overflow_step).min();
    Ok(ChainResult {
        format: cfg.format.name.to_string(),
        init_mode: cfg.init_mode,
        n_max: cfg.n_max,
        trials: cfg.trials,
        seed: cfg.seed,
        points,
        first_overflow_step,
    })
}
