// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::experiment::{run_experiment_with, ExperimentData, ExperimentSpec};
use super::metrics::EvalReport;
use crate::error::{Error, Result};
use crate::method::MethodRegistry;

pub const SWEEP_HEADER: &str = "parameter,value,precision,recall,f1,tau";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    #[serde(rename = "K")]
    TopK,
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "adversarial_sample_count")]
    AdversarialSampleCount,
    #[serde(rename = "layer")]
    Layer,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::TopK => "K",
            SweepParam::Alpha => "alpha",
            SweepParam::AdversarialSampleCount => "adversarial_sample_count",
            SweepParam::Layer => "layer",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" | "top_k" => Ok(SweepParam::TopK),
            "alpha" => Ok(SweepParam::Alpha),
            "adversarial_sample_count" => Ok(SweepParam::AdversarialSampleCount),
            "layer" => Ok(SweepParam::Layer),
            other => Err(Error::InvalidInput(format!(
                "unknown sweep parameter `{other}` (expected K, alpha, adversarial_sample_count or layer)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub parameter: SweepParam,
    pub rows: Vec<SweepRow>,
}

fn parse<T: FromStr>(param: SweepParam, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidInput(format!("bad value `{v}` for {}", param.as_str())))
}

/// One experiment per value; everything else, seed included, stays fixed.
pub fn sweep(
    spec: &ExperimentSpec,
    data: &ExperimentData,
    param: SweepParam,
    values: &[String],
    registry: &MethodRegistry,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let v = v.trim();
        let mut s = spec.clone();
        let restricted;
        let d = match param {
            SweepParam::TopK => {
                s.top_k = parse(param, v)?;
                data
            }
            SweepParam::Alpha => {
                s.alpha = parse(param, v)?;
                data
            }
            SweepParam::AdversarialSampleCount => {
                s.adversarial_sample_count = Some(parse(param, v)?);
                data
            }
            SweepParam::Layer => {
                restricted = data.restrict_to(v)?;
                s.layers.retain(|l| l.layer_id == v);
                if s.layers.is_empty() {
                    // In-memory data may carry layers the experiment file does not list.
                    s.layers = spec.layers[..1].to_vec();
                }
                &restricted
            }
        };
        let outcome = run_experiment_with(&s, d, registry)?;
        rows.push(SweepRow {
            value: v.to_string(),
            report: outcome.report,
        });
    }
    Ok(SweepTable { parameter: param, rows })
}

fn field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepTable {
    /// Undefined metrics are written as empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.parameter.as_str(),
                r.value,
                field(r.report.precision),
                field(r.report.recall),
                field(r.report.f1),
                r.report.threshold
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
