use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::fmt_f64;
use crate::error::{Error, Result};
use crate::nn::{Mode, Model, Topology};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u32,
    topology: Topology,
    params: Vec<Vec<f64>>,
    running_stats: Vec<RunningStats>,
    epoch: usize,
    config_hash: String,
}

/// A model restored from disk with its training metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    pub config_hash: String,
}

fn write_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push(']');
}

/// JSON document with every f64 written to 17 significant digits.
pub fn checkpoint_json(model: &Model, epoch: usize, config_hash: &str) -> Result<String> {
    let params = model.param_values();
    if params.iter().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\"version\":{CHECKPOINT_VERSION},\"topology\":{},",
        serde_json::to_string(model.topology())?
    );
    out.push_str("\"params\":[");
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_array(&mut out, p);
    }
    out.push_str("],\"running_stats\":[");
    for (i, n) in model.norm_layers().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"mean\":");
        write_array(&mut out, &n.running_mean);
        out.push_str(",\"var\":");
        write_array(&mut out, &n.running_var);
        out.push('}');
    }
    let _ = write!(
        out,
        "],\"epoch\":{epoch},\"config_hash\":{}}}",
        serde_json::to_string(config_hash)?
    );
    Ok(out)
}

pub fn save_checkpoint(model: &Model, path: &Path, epoch: usize, config_hash: &str) -> Result<()> {
    fs::write(path, checkpoint_json(model, epoch, config_hash)?)?;
    Ok(())
}

/// Parses a checkpoint; when `expected` is given the stored topology must
/// equal it. The restored model is in eval mode.
pub fn parse_checkpoint(text: &str, expected: Option<&Topology>) -> Result<Checkpoint> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::CorruptCheckpoint(format!("invalid JSON: {e}")))?;
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptCheckpoint("missing version".into()))?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::VersionMismatch {
            found: found.min(u64::from(u32::MAX)) as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let doc: Document =
        serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if let Some(t) = expected {
        if *t != doc.topology {
            return Err(Error::TopologyMismatch(format!(
                "checkpoint holds {:?} normalization with hidden {:?}, expected {:?} with hidden {:?}",
                doc.topology.norm, doc.topology.hidden, t.norm, t.hidden
            )));
        }
    }
    let mut model = Model::new(doc.topology, 0)
        .map_err(|e| Error::CorruptCheckpoint(format!("topology: {e}")))?;
    model
        .set_param_values(&doc.params)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let mut norms = model.norm_layers_mut();
    if norms.len() != doc.running_stats.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} running-stat entries for {} normalization layers",
            doc.running_stats.len(),
            norms.len()
        )));
    }
    for (n, s) in norms.iter_mut().zip(doc.running_stats) {
        if s.mean.len() != n.channels() || s.var.len() != n.channels() {
            return Err(Error::CorruptCheckpoint(
                "running statistics have the wrong width".into(),
            ));
        }
        n.running_mean = s.mean;
        n.running_var = s.var;
    }
    model.set_mode(Mode::Eval);
    Ok(Checkpoint {
        model,
        epoch: doc.epoch,
        config_hash: doc.config_hash,
    })
}

pub fn load_checkpoint(path: &Path, expected: Option<&Topology>) -> Result<Checkpoint> {
    parse_checkpoint(&fs::read_to_string(path)?, expected)
}
