//! Report documents: structured JSON, Table-1 style CSV and FROC CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use lesionfuse_core::eval::{EvalReport, Stratum};
use lesionfuse_core::SizeBin;
use serde::{Deserialize, Serialize};

use crate::REPORT_FORMAT_VERSION;

pub const TABLE_HEADER: &str = "method,mAP,S@0.5,S@1,S@2,S@4,S@6,S@8,S@16";
pub const FROC_HEADER: &str = "threshold,fp_per_image,sensitivity";
pub const AP_VARIANT: &str = "all-point interpolated precision envelope at a single match IoU";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityAt {
    pub fp_per_image: f64,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map: f64,
    pub ap_per_label: BTreeMap<String, f64>,
    pub sensitivities: Vec<SensitivityAt>,
    pub n_images: usize,
    pub n_annotations: usize,
    pub n_detections: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ignored: usize,
}

impl From<&EvalReport> for Metrics {
    fn from(r: &EvalReport) -> Self {
        Self {
            map: r.map,
            ap_per_label: r.ap_per_label.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            sensitivities: r
                .fp_targets
                .iter()
                .zip(&r.sensitivities)
                .map(|(t, s)| SensitivityAt { fp_per_image: *t, sensitivity: *s })
                .collect(),
            n_images: r.n_images,
            n_annotations: r.n_annotations,
            n_detections: r.n_detections,
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
            ignored: r.ignored,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEntry {
    pub bin: SizeBin,
    pub label: String,
    /// `None` when no annotation falls in the bin.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub match_iou: f64,
    pub fp_targets: Vec<f64>,
    pub n_images: usize,
    pub stratify: bool,
    pub ap_variant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format_version: u32,
    pub toolkit_version: String,
    pub method: String,
    pub config: ConfigEcho,
    pub overall: Metrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strata: Vec<StratumEntry>,
}

impl ReportDocument {
    pub fn new(method: &str, match_iou: f64, stratify: bool, report: &EvalReport) -> Self {
        let strata = report
            .strata
            .iter()
            .flatten()
            .map(|(bin, s)| StratumEntry {
                bin: *bin,
                label: bin.label().to_string(),
                metrics: match s {
                    Stratum::Report(r) => Some(Metrics::from(r.as_ref())),
                    Stratum::Empty => None,
                },
            })
            .collect();
        Self {
            format_version: REPORT_FORMAT_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            method: method.to_string(),
            config: ConfigEcho {
                match_iou,
                fp_targets: report.fp_targets.clone(),
                n_images: report.n_images,
                stratify,
                ap_variant: AP_VARIANT.to_string(),
            },
            overall: Metrics::from(report),
            strata,
        }
    }

    /// Table rows: the overall row, then one per stratum.
    pub fn rows(&self) -> Vec<String> {
        let mut rows = vec![table_row(&self.method, Some(&self.overall))];
        for s in &self.strata {
            rows.push(table_row(&s.label, s.metrics.as_ref()));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TABLE_HEADER);
        s.push('\n');
        for r in self.rows() {
            s.push_str(&r);
            s.push('\n');
        }
        s
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// One CSV row in the fixed column order. Targets outside the standard
/// set are not shown; missing values print as `--`.
pub fn table_row(method: &str, m: Option<&Metrics>) -> String {
    let mut row = csv_field(method);
    let Some(m) = m else {
        row.push_str(&",--".repeat(8));
        return row;
    };
    let _ = write!(row, ",{}", pct(m.map));
    for target in lesionfuse_core::eval::DEFAULT_FP_TARGETS {
        match m.sensitivities.iter().find(|s| s.fp_per_image == target) {
            Some(s) => {
                let _ = write!(row, ",{}", pct(s.sensitivity));
            }
            None => row.push_str(",--"),
        }
    }
    row
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn froc_csv(report: &EvalReport) -> String {
    let mut s = String::from(FROC_HEADER);
    s.push('\n');
    for p in &report.curve.points {
        let _ = writeln!(s, "{},{},{}", p.score_threshold, p.fp_per_image, p.sensitivity);
    }
    s
}
