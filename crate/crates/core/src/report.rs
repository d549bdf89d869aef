//! Evaluation runs and their JSON reports.
//!
//! A report echoes its configuration, carries a SHA-256 of the input
//! documents, and lists every table row twice: as percentages rounded to one
//! decimal and as full-precision ratios under `raw`. Keys are emitted in
//! sorted order, so identical inputs always give identical bytes.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::aj::{self, AjMetrics, AjRow};
use crate::annotation::{
    filter_by_confidence, merge_rounds, parse_manifest_with, Manifest, ParseOptions,
};
use crate::error::{Error, Result};
use crate::pad::{self, InstanceMode, InstanceRow, PadOptions, PadRow, Pooling};
use crate::predictions;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    /// AJ decision threshold on the fake score.
    pub threshold: f64,
    /// Minimum mean annotation confidence.
    pub tau: f64,
    /// Instance coverage threshold.
    pub t: f64,
    pub pooling: Pooling,
    pub binarize_threshold: f64,
    pub instance_mode: InstanceMode,
    pub gate_on_aj: bool,
    pub strict: bool,
    /// Worker threads. Not echoed: it never changes the output.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: aj::DEFAULT_THRESHOLD,
            tau: 0.0,
            t: 0.5,
            pooling: Pooling::Micro,
            binarize_threshold: pad::DEFAULT_BINARIZE_THRESHOLD,
            instance_mode: InstanceMode::CategoryAware,
            gate_on_aj: false,
            strict: false,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub config: EvalConfig,
    pub input_hash: String,
    pub tables: Value,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_value(&self) -> Value {
        json!({
            "tool_version": TOOL_VERSION,
            "task": self.task,
            "config": self.config,
            "input_hash": self.input_hash,
            "tables": self.tables,
            "warnings": self.warnings,
        })
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        to_json_bytes(&self.to_value())
    }
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn to_json_bytes(value: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("JSON value serializes");
    out.push(b'\n');
    out
}

/// Percentage rounded half away from zero to one decimal.
pub fn pct1(ratio: f64) -> f64 {
    (ratio * 1000.0).round() / 10.0
}

/// Hex SHA-256 over labelled input documents.
pub fn content_hash(parts: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    for (label, bytes) in parts {
        h.update(label.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}

/// Parses, merges rounds and applies the confidence filter.
pub fn load_manifest(bytes: &[u8], cfg: &EvalConfig) -> Result<Manifest> {
    if !(cfg.tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tau {} is not finite",
            cfg.tau
        )));
    }
    let m = parse_manifest_with(bytes, ParseOptions { strict: cfg.strict })?;
    Ok(filter_by_confidence(&merge_rounds(&m, cfg.strict), cfg.tau))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!(
            "{name} = {v} outside [0, 1]"
        )));
    }
    Ok(())
}

fn metric_row(key: &str, pairs: &[(&str, f64)], extra: Map<String, Value>) -> Value {
    let mut row = extra;
    let mut raw = Map::new();
    row.insert("key".into(), json!(key));
    for (name, v) in pairs {
        row.insert((*name).into(), json!(pct1(*v)));
        raw.insert((*name).into(), json!(v));
    }
    row.insert("raw".into(), Value::Object(raw));
    Value::Object(row)
}

fn aj_row_value(r: &AjRow) -> Value {
    let AjMetrics {
        acc,
        precision,
        recall,
        f1,
    } = r.metrics;
    let mut extra = Map::new();
    extra.insert("counts".into(), json!(r.counts));
    metric_row(
        &r.generator,
        &[
            ("acc", acc),
            ("precision", precision),
            ("recall", recall),
            ("f1", f1),
        ],
        extra,
    )
}

fn pad_row_value(r: &PadRow) -> Value {
    let m = &r.metrics;
    let mut extra = Map::new();
    extra.insert("counts".into(), json!(r.counts));
    extra.insert("images".into(), json!(r.images));
    extra.insert("level".into(), json!(r.level));
    extra.insert("undefined".into(), json!(m.undefined));
    metric_row(
        &r.key,
        &[
            ("iou", m.iou),
            ("pixp", m.pixp),
            ("pixr", m.pixr),
            ("pixf1", m.pixf1),
        ],
        extra,
    )
}

fn instance_row_value(r: &InstanceRow) -> Value {
    let m = &r.metrics;
    let mut extra = Map::new();
    extra.insert("tally".into(), json!(r.tally));
    extra.insert("undefined".into(), json!(m.undefined));
    metric_row(
        &r.key,
        &[
            ("precision", m.precision),
            ("recall", m.recall),
            ("f1", m.f1),
        ],
        extra,
    )
}

pub fn run_aj(manifest_bytes: &[u8], preds_bytes: &[u8], cfg: &EvalConfig) -> Result<EvalReport> {
    check_unit("threshold", cfg.threshold)?;
    let manifest = load_manifest(manifest_bytes, cfg)?;
    let preds = predictions::parse_aj_predictions(preds_bytes)?;
    let mut warnings = Vec::new();
    let rows = aj::aj_per_generator(&manifest, &preds, cfg.threshold, &mut warnings)?;
    Ok(EvalReport {
        task: "aj".into(),
        config: cfg.clone(),
        input_hash: content_hash(&[("manifest", manifest_bytes), ("predictions", preds_bytes)]),
        tables: json!({
            "real_negatives": "shared",
            "rows": rows.iter().map(aj_row_value).collect::<Vec<_>>(),
        }),
        warnings,
    })
}

fn pad_options(
    manifest: &Manifest,
    aj_bytes: Option<&[u8]>,
    cfg: &EvalConfig,
    warnings: &mut Vec<String>,
) -> Result<PadOptions> {
    let gate = match (cfg.gate_on_aj, aj_bytes) {
        (false, _) => None,
        (true, None) => {
            return Err(Error::InvalidArgument(
                "gating on AJ verdicts needs an AJ prediction file".into(),
            ))
        }
        (true, Some(bytes)) => {
            let preds = predictions::parse_aj_predictions(bytes)?;
            Some(aj::resolve_verdicts(
                manifest,
                &preds,
                cfg.threshold,
                warnings,
            )?)
        }
    };
    Ok(PadOptions {
        pooling: cfg.pooling,
        jobs: cfg.jobs,
        gate,
    })
}

fn hash_with_gate(
    manifest: &[u8],
    preds: &[u8],
    aj_bytes: Option<&[u8]>,
    cfg: &EvalConfig,
) -> String {
    match aj_bytes.filter(|_| cfg.gate_on_aj) {
        Some(a) => content_hash(&[("manifest", manifest), ("predictions", preds), ("aj", a)]),
        None => content_hash(&[("manifest", manifest), ("predictions", preds)]),
    }
}

pub fn run_pad(
    manifest_bytes: &[u8],
    preds_bytes: &[u8],
    aj_bytes: Option<&[u8]>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let manifest = load_manifest(manifest_bytes, cfg)?;
    let preds = predictions::parse_pad_predictions(preds_bytes, &manifest)?;
    let mut warnings = Vec::new();
    let opts = pad_options(&manifest, aj_bytes, cfg, &mut warnings)?;
    let rows = pad::eval_pad(&manifest, &preds, &opts)?;
    Ok(EvalReport {
        task: "pad".into(),
        config: cfg.clone(),
        input_hash: hash_with_gate(manifest_bytes, preds_bytes, aj_bytes, cfg),
        tables: json!({
            "pooling": cfg.pooling,
            "rows": rows.iter().map(pad_row_value).collect::<Vec<_>>(),
        }),
        warnings,
    })
}

pub fn run_ca_pad(
    manifest_bytes: &[u8],
    preds_bytes: &[u8],
    preds_dir: &Path,
    aj_bytes: Option<&[u8]>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let manifest = load_manifest(manifest_bytes, cfg)?;
    let preds = predictions::parse_ca_pad_predictions(preds_bytes, &manifest, preds_dir)?;
    evaluate_ca_pad(
        &manifest,
        &preds,
        manifest_bytes,
        preds_bytes,
        aj_bytes,
        cfg,
    )
}

/// CA-PAD on an already loaded manifest and prediction set.
pub fn evaluate_ca_pad(
    manifest: &Manifest,
    preds: &predictions::ByImage<predictions::CaPadPrediction>,
    manifest_bytes: &[u8],
    preds_bytes: &[u8],
    aj_bytes: Option<&[u8]>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    check_unit("binarize threshold", cfg.binarize_threshold)?;
    let mut warnings = Vec::new();
    let opts = pad_options(manifest, aj_bytes, cfg, &mut warnings)?;
    let row = pad::eval_ca_pad(manifest, preds, cfg.binarize_threshold, &opts)?;
    Ok(EvalReport {
        task: "ca-pad".into(),
        config: cfg.clone(),
        input_hash: hash_with_gate(manifest_bytes, preds_bytes, aj_bytes, cfg),
        tables: json!({
            "pooling": cfg.pooling,
            "rows": [pad_row_value(&row)],
        }),
        warnings,
    })
}

pub fn run_instances(
    manifest_bytes: &[u8],
    preds_bytes: &[u8],
    aj_bytes: Option<&[u8]>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let manifest = load_manifest(manifest_bytes, cfg)?;
    let preds = predictions::parse_instance_predictions(preds_bytes, &manifest)?;
    let mut warnings = Vec::new();
    let opts = pad_options(&manifest, aj_bytes, cfg, &mut warnings)?;
    let rows = pad::eval_instances(&manifest, &preds, cfg.t, cfg.instance_mode, &opts)?;
    Ok(EvalReport {
        task: "instances".into(),
        config: cfg.clone(),
        input_hash: hash_with_gate(manifest_bytes, preds_bytes, aj_bytes, cfg),
        tables: json!({
            "mode": cfg.instance_mode,
            "t": cfg.t,
            "rows": rows.iter().map(instance_row_value).collect::<Vec<_>>(),
        }),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(pct1(0.4285), 42.9);
        assert_eq!(pct1(0.27269), 27.3);
        assert_eq!(pct1(1.0), 100.0);
        assert_eq!(pct1(0.0), 0.0);
    }

    #[test]
    fn hash_separates_documents() {
        let a = content_hash(&[("manifest", b"ab"), ("predictions", b"c")]);
        let b = content_hash(&[("manifest", b"a"), ("predictions", b"bc")]);
        assert_ne!(a, b);
        assert!(a.starts_with("sha256:") && a.len() == 7 + 64);
    }

    #[test]
    fn config_echo_skips_jobs() {
        let v = serde_json::to_value(EvalConfig {
            jobs: 8,
            ..Default::default()
        })
        .unwrap();
        assert!(v.get("jobs").is_none());
        assert_eq!(v["pooling"], "micro");
        assert_eq!(v["instance_mode"], "category_aware");
    }
}
