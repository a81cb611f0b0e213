use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::{fpr_key, MiReport};
use crate::error::{Error, Result};

/// One audited model, as written by the `audit`, `attack` and `shadow`
/// subcommands and merged by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub run_id: String,
    pub variant: String,
    pub defense: String,
    /// Test accuracy of the reference (clean) model.
    pub clean_acc: f64,
    /// Test accuracy of the audited model.
    pub poison_acc: f64,
    pub report: MiReport,
}

impl RunRecord {
    pub fn acc_drop(&self) -> f64 {
        self.clean_acc - self.poison_acc
    }
}

/// Rebases every run's `clean_acc` on the audited accuracy of `baseline`.
pub fn apply_baseline(runs: &mut [RunRecord], baseline: &str) -> Result<()> {
    let acc = runs
        .iter()
        .find(|r| r.run_id == baseline)
        .map(|r| r.poison_acc)
        .ok_or_else(|| Error::config(format!("baseline run {baseline:?} not among the runs")))?;
    runs.iter_mut().for_each(|r| r.clean_acc = acc);
    Ok(())
}

pub fn roc_csv(report: &MiReport) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in &report.roc {
        let _ = writeln!(out, "{f},{t}");
    }
    out
}

pub fn roc_file_name(run: &RunRecord) -> String {
    let safe: String = run
        .run_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("roc_{safe}_{}.csv", run.report.protocol.name())
}

/// Summary CSV (rows ordered by run id) and one `(file name, contents)`
/// ROC file per run.
pub fn emit_report(
    runs: &[RunRecord],
    fpr_levels: &[f64],
) -> Result<(String, Vec<(String, String)>)> {
    if runs.is_empty() {
        return Err(Error::empty("report needs at least one run"));
    }
    let mut order: Vec<&RunRecord> = runs.iter().collect();
    order.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let mut csv = String::from("run_id,variant,defense,clean_acc,poison_acc,acc_drop,protocol,auc");
    for f in fpr_levels {
        let _ = write!(csv, ",tpr@{}", fpr_key(*f));
    }
    csv.push('\n');
    let mut rocs = Vec::with_capacity(order.len());
    for r in order {
        let _ = write!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.run_id,
            r.variant,
            r.defense,
            r.clean_acc,
            r.poison_acc,
            r.acc_drop(),
            r.report.protocol.name(),
            r.report.auc
        );
        for f in fpr_levels {
            let _ = write!(csv, ",{}", r.report.tpr_at_fpr(*f));
        }
        csv.push('\n');
        rocs.push((roc_file_name(r), roc_csv(&r.report)));
    }
    Ok((csv, rocs))
}

pub fn write_report(
    runs: &[RunRecord],
    fpr_levels: &[f64],
    summary: &Path,
    roc_dir: Option<&Path>,
) -> Result<()> {
    let (csv, rocs) = emit_report(runs, fpr_levels)?;
    fs::write(summary, csv)?;
    if let Some(dir) = roc_dir {
        fs::create_dir_all(dir)?;
        for (name, body) in rocs {
            fs::write(dir.join(name), body)?;
        }
    }
    Ok(())
}
