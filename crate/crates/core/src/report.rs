//! Tabular experiment reports, emitted as CSV and as a JSON mirror.

use crate::experiments::{ChainResult, ProbeResult};
use serde::Serialize;

/// One report line. Probe rows fill `mean_abs_error`; chain rows fill `n`
/// and `relative_l2_error` per step plus the overflow step when one exists.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub format: String,
    pub init_mode: String,
    pub n: Option<usize>,
    pub mean_abs_error: Option<f64>,
    pub relative_l2_error: Option<f64>,
    pub overflow_step: Option<usize>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn push_probe(&mut self, r: &ProbeResult) {
        self.rows.push(ReportRow {
            experiment: format!("probe-{}", r.operation.as_str()),
            format: r.format.clone(),
            init_mode: r.init_mode.as_str().to_string(),
            n: None,
            mean_abs_error: Some(r.mean_abs_error),
            relative_l2_error: None,
            overflow_step: None,
        });
        if let Some(cvt) = r.mean_abs_error_vs_converted {
            self.rows.push(ReportRow {
                experiment: format!("probe-{}-vs-cvt", r.operation.as_str()),
                format: r.format.clone(),
                init_mode: r.init_mode.as_str().to_string(),
                n: None,
                mean_abs_error: Some(cvt),
                relative_l2_error: None,
                overflow_step: None,
            });
        }
    }

    pub fn push_chain(&mut self, r: &ChainResult) {
        for p in &r.points {
            self.rows.push(ReportRow {
                experiment: "chain".to_string(),
                format: r.format.clone(),
                init_mode: r.init_mode.as_str().to_string(),
                n: Some(p.n),
                mean_abs_error: None,
                relative_l2_error: p.mean_rel_error,
                overflow_step: r.first_overflow_step.filter(|&s| s <= p.n),
            });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "experiment,format,init_mode,N,mean_abs_error,relative_l2_error,overflow_step\n",
        );
        let opt_num = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        let opt_int = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.experiment,
                r.format,
                r.init_mode,
                opt_int(r.n),
                opt_num(r.mean_abs_error),
                opt_num(r.relative_l2_error),
                opt_int(r.overflow_step),
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
