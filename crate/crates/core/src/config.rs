//! Key-value config files for the pipeline and the experiments.
//!
//! Format: one `key = value` pair per line, `#` starts a comment. Pipeline
//! files use the pipeline's own field names:
//!
//! ```text
//! ab_format = bf16
//! cd_format = fp32
//! product_policy = exact
//! inner_sum_policy = exact_wide        # or round_each_step:fp32:toward_zero
//! accumulate_rounding = nearest_even
//! output_conversion = nearest_even
//! input_rounding = nearest_even        # optional
//! ```

use crate::error::{Error, Result};
use crate::experiments::{ChainConfig, InitMode, ProbeCase, ProbeOperation};
use crate::formats::{FloatFormat, RoundingMode};
use crate::mma::{InnerSumPolicy, NumericPipelineConfig, ProductPolicy};

/// Parse `key = value` lines; later keys win.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn inner_sum_policy_from(v: &str) -> Result<InnerSumPolicy> {
    let lower = v.to_ascii_lowercase();
    if lower == "exact_wide" || lower == "exactwide" {
        return Ok(InnerSumPolicy::ExactWide);
    }
    if let Some(rest) = lower.strip_prefix("round_each_step:") {
        let (fmt, mode) = rest
            .split_once(':')
            .ok_or_else(|| Error::Parse("round_each_step needs :format:mode".into()))?;
        return Ok(InnerSumPolicy::RoundEachStep {
            format: FloatFormat::by_name(fmt)?,
            mode: RoundingMode::parse(mode)?,
        });
    }
    Err(Error::Parse(format!("unknown inner_sum_policy {v:?}")))
}

fn inner_sum_policy_str(p: &InnerSumPolicy) -> String {
    match p {
        InnerSumPolicy::ExactWide => "exact_wide".into(),
        InnerSumPolicy::RoundEachStep { format, mode } => {
            format!("round_each_step:{}:{}", format.name.to_ascii_lowercase(), mode.as_str())
        }
    }
}

/// Build a pipeline configuration from a key-value file. `ab_format` and
/// `cd_format` are required; other fields default.
pub fn pipeline_from_kv(text: &str) -> Result<NumericPipelineConfig> {
    let mut ab = None;
    let mut cd = None;
    let mut cfg_fields: Vec<(String, String)> = Vec::new();
    for (k, v) in parse_kv(text)? {
        match k.as_str() {
            "ab_format" => ab = Some(FloatFormat::by_name(&v)?),
            "cd_format" => cd = Some(FloatFormat::by_name(&v)?),
            _ => cfg_fields.push((k, v)),
        }
    }
    let ab = ab.ok_or_else(|| Error::Parse("missing ab_format".into()))?;
    let cd = cd.ok_or_else(|| Error::Parse("missing cd_format".into()))?;
    let mut cfg = NumericPipelineConfig::new(ab, cd)?;
    for (k, v) in cfg_fields {
        match k.as_str() {
            "product_policy" => {
                if v.to_ascii_lowercase() != "exact" {
                    return Err(Error::Parse(format!("unknown product_policy {v:?}")));
                }
                cfg.product_policy = ProductPolicy::Exact;
            }
            "inner_sum_policy" => cfg.inner_sum_policy = inner_sum_policy_from(&v)?,
            "accumulate_rounding" => cfg.accumulate_rounding = RoundingMode::parse(&v)?,
            "output_conversion" => cfg.output_conversion = RoundingMode::parse(&v)?,
            "input_rounding" => cfg.input_rounding = RoundingMode::parse(&v)?,
            other => return Err(Error::Parse(format!("unknown pipeline field {other:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize a pipeline configuration back to the key-value format.
pub fn pipeline_to_kv(cfg: &NumericPipelineConfig) -> String {
    format!(
        "ab_format = {}\ncd_format = {}\nproduct_policy = exact\ninner_sum_policy = {}\naccumulate_rounding = {}\noutput_conversion = {}\ninput_rounding = {}\n",
        cfg.ab_format.name.to_ascii_lowercase(),
        cfg.cd_format.name.to_ascii_lowercase(),
        inner_sum_policy_str(&cfg.inner_sum_policy),
        cfg.accumulate_rounding.as_str(),
        cfg.output_conversion.as_str(),
        cfg.input_rounding.as_str(),
    )
}

/// An experiment description: either a probe or a chain run.
#[derive(Debug, Clone)]
pub enum ExperimentConfig {
    Probe(ProbeCase),
    Chain(ChainConfig),
}

/// Parse an experiment config file with fields `operation`, `format`,
/// `cd_format`, `init_mode`, `trials`, `seed`, `chain_length`. An
/// `operation = chain` selects the chain study.
pub fn experiment_from_kv(text: &str, default_seed: u64) -> Result<ExperimentConfig> {
    let mut operation = None;
    let mut format = None;
    let mut cd_format = None;
    let mut init_mode = InitMode::InitLow;
    let mut trials = 1000usize;
    let mut seed = default_seed;
    let mut chain_length = 20usize;
    for (k, v) in parse_kv(text)? {
        match k.as_str() {
            "operation" => operation = Some(v),
            "format" => format = Some(FloatFormat::by_name(&v)?),
            "cd_format" => cd_format = Some(FloatFormat::by_name(&v)?),
            "init_mode" => init_mode = InitMode::parse(&v)?,
            "trials" => {
                trials = v.parse().map_err(|_| Error::Parse(format!("bad trials {v:?}")))?
            }
            "seed" => seed = v.parse().map_err(|_| Error::Parse(format!("bad seed {v:?}")))?,
            "chain_length" => {
                chain_length =
                    v.parse().map_err(|_| Error::Parse(format!("bad chain_length {v:?}")))?
            }
            other => return Err(Error::Parse(format!("unknown experiment field {other:?}"))),
        }
    }
    let operation = operation.ok_or_else(|| Error::Parse("missing operation".into()))?;
    let format = format.ok_or_else(|| Error::Parse("missing format".into()))?;
    let cd_format = cd_format.unwrap_or(crate::formats::FP32);
    if operation.eq_ignore_ascii_case("chain") {
        let mut cfg = ChainConfig::new(format, init_mode, chain_length, trials, seed);
        cfg.cd_format = cd_format;
        Ok(ExperimentConfig::Chain(cfg))
    } else {
        Ok(ExperimentConfig::Probe(ProbeCase {
            operation: ProbeOperation::parse(&operation)?,
            init_mode,
            format,
            cd_format,
            trials,
            seed,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{BF16, FP32};

    #[test]
    fn pipeline_round_trip() {
        let mut cfg = NumericPipelineConfig::new(BF16, FP32).unwrap();
        cfg.accumulate_rounding = RoundingMode::TowardZero;
        let text = pipeline_to_kv(&cfg);
        let back = pipeline_from_kv(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn pipeline_parses_policies_and_comments() {
        let cfg = pipeline_from_kv(
            "# study config\nab_format = fp16\ncd_format = fp16\ninner_sum_policy = round_each_step:fp32:toward_zero\n",
        )
        .unwrap();
        assert!(matches!(cfg.inner_sum_policy, InnerSumPolicy::RoundEachStep { .. }));
        assert!(pipeline_from_kv("ab_format = fp16\n").is_err());
        assert!(pipeline_from_kv("ab_format = bf16\ncd_format = fp16\n").is_err());
        assert!(pipeline_from_kv("ab_format = bf16\ncd_format = fp32\nbogus = 1\n").is_err());
    }

    #[test]
    fn experiment_configs() {
        let e = experiment_from_kv("operation = multiplication\nformat = bf16\ntrials = 50\n", 42).unwrap();
        match e {
            ExperimentConfig::Probe(p) => {
                assert_eq!(p.trials, 50);
                assert_eq!(p.seed, 42);
            }
            _ => panic!("expected probe"),
        }
        let e = experiment_from_kv("operation = chain\nformat = fp16\nchain_length = 12\nseed = 7\n", 42).unwrap();
        match e {
            ExperimentConfig::Chain(c) => {
                assert_eq!(c.n_max, 12);
                assert_eq!(c.seed, 7);
            }
            _ => panic!("expected chain"),
        }
    }
}
