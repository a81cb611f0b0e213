use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Sample;
use crate::error::{Error, Result};
use crate::norm::{matches_spec, EncodingSpec};
use crate::rng::{derive_seed, tags, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticBlobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub members: Vec<Sample>,
    pub nonmembers: Vec<Sample>,
    pub test: Vec<Sample>,
    pub num_classes: usize,
    pub dim: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobParams {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class_members: usize,
    pub per_class_nonmembers: usize,
    pub per_class_test: usize,
    pub class_spread: f64,
    pub within_spread: f64,
}

impl BlobParams {
    /// 8 classes in 32 dimensions, 64 samples per class in each split.
    pub fn desk() -> Self {
        Self {
            num_classes: 8,
            dim: 32,
            per_class_members: 64,
            per_class_nonmembers: 64,
            per_class_test: 64,
            class_spread: 1.0,
            within_spread: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config(format!(
                "blob dimension must be at least 2, got {}",
                self.dim
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "blobs need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(self.class_spread >= 0.0 && self.class_spread.is_finite()) {
            return Err(Error::config(
                "class_spread must be finite and non-negative",
            ));
        }
        if !(self.within_spread > 0.0 && self.within_spread.is_finite()) {
            return Err(Error::config("within_spread must be finite and positive"));
        }
        Ok(())
    }
}

/// Gaussian class blobs: centers from `N(0, class_spread² I)`, samples from
/// `N(center, within_spread² I)`. Splits are drawn independently, each laid
/// out class by class.
pub fn gen_blobs(params: &BlobParams, seed: u64) -> Result<Dataset> {
    params.validate()?;
    let mut rng = SplitMix64::new(derive_seed(seed, tags::DATASET));
    let (c, d) = (params.num_classes, params.dim);
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            (0..d)
                .map(|_| rng.normal(0.0, params.class_spread))
                .collect()
        })
        .collect();
    let mut split = |per_class: usize| -> Vec<Sample> {
        let mut out = Vec::with_capacity(per_class * c);
        for (label, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let features = center
                    .iter()
                    .map(|&m| rng.normal(m, params.within_spread))
                    .collect();
                out.push(Sample::new(features, label));
            }
        }
        out
    };
    let members = split(params.per_class_members);
    let nonmembers = split(params.per_class_nonmembers);
    let test = split(params.per_class_test);
    Ok(Dataset {
        members,
        nonmembers,
        test,
        num_classes: c,
        dim: d,
        provenance: Provenance::SyntheticBlobs,
    })
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.members
            .iter()
            .chain(&self.nonmembers)
            .chain(&self.test)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.all().enumerate() {
            if s.features.len() != self.dim {
                return Err(Error::dim(format!(
                    "sample {i} has {} features, dataset dim is {}",
                    s.features.len(),
                    self.dim
                )));
            }
            if s.label >= self.num_classes {
                return Err(Error::Index(format!(
                    "sample {i} has label {} with {} classes",
                    s.label, self.num_classes
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of sample {i}")));
            }
        }
        Ok(())
    }

    /// Number of samples whose statistics fall inside the encoding spec and
    /// would therefore be routed to the secondary normalization branch.
    pub fn count_routed_secondary(&self, spec: &EncodingSpec) -> usize {
        self.all()
            .filter(|s| matches_spec(&s.features, spec))
            .count()
    }

    /// Fails if any natural sample would be mistaken for an encoding sample.
    pub fn check_primary_routing(&self, spec: &EncodingSpec) -> Result<()> {
        match self.count_routed_secondary(spec) {
            0 => Ok(()),
            k => Err(Error::config(format!(
                "{k} dataset samples fall inside the encoding spec and would route secondary"
            ))),
        }
    }
}

/// Which rows of a CSV file are members, nonmembers and test samples.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvSplit {
    /// First `ratio` of the rows are members, the rest nonmembers.
    Ratio(f64),
    /// One tag per row: `member`, `nonmember` or `test`.
    Tags(Vec<String>),
}

fn parse_rows(text: &str, num_classes: usize) -> Result<(Vec<Sample>, usize)> {
    let mut rows = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 && line.starts_with("label") {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let label: usize = cells[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("label {:?} is not a class index", cells[0]),
        })?;
        if label >= num_classes {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("label {label} out of range for {num_classes} classes"),
            });
        }
        let features = cells[1..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: format!("cell {c:?} is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("{} features, expected {d}", features.len()),
                })
            }
            _ => {}
        }
        rows.push(Sample::new(features, label));
    }
    let dim = dim.ok_or_else(|| Error::empty("CSV file has no data rows"))?;
    if dim < 1 {
        return Err(Error::Parse {
            line: 1,
            msg: "rows have no feature columns".into(),
        });
    }
    Ok((rows, dim))
}

pub fn parse_csv(text: &str, num_classes: usize, split: &CsvSplit) -> Result<Dataset> {
    let (rows, dim) = parse_rows(text, num_classes)?;
    let (mut members, mut nonmembers, mut test) = (Vec::new(), Vec::new(), Vec::new());
    match split {
        CsvSplit::Ratio(r) => {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::config(format!(
                    "split ratio must lie in [0, 1], got {r}"
                )));
            }
            let k = (r * rows.len() as f64 + 1e-9).floor() as usize;
            let mut it = rows.into_iter();
            members.extend(it.by_ref().take(k));
            nonmembers.extend(it);
        }
        CsvSplit::Tags(tags) => {
            if tags.len() != rows.len() {
                return Err(Error::dim(format!(
                    "split file has {} entries for {} rows",
                    tags.len(),
                    rows.len()
                )));
            }
            for (s, t) in rows.into_iter().zip(tags) {
                match t.as_str() {
                    "member" => members.push(s),
                    "nonmember" => nonmembers.push(s),
                    "test" => test.push(s),
                    other => return Err(Error::Format(format!("unknown split tag {other:?}"))),
                }
            }
        }
    }
    Ok(Dataset {
        members,
        nonmembers,
        test,
        num_classes,
        dim,
        provenance: Provenance::Csv,
    })
}

pub fn load_csv(path: &Path, num_classes: usize, split: &CsvSplit) -> Result<Dataset> {
    parse_csv(&fs::read_to_string(path)?, num_classes, split)
}

/// Reads a split file: one tag per line, blank lines ignored.
pub fn load_split_tags(path: &Path) -> Result<CsvSplit> {
    let text = fs::read_to_string(path)?;
    Ok(CsvSplit::Tags(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
    ))
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn samples_to_csv(samples: &[Sample], dim: usize) -> String {
    let mut out = String::from("label");
    for j in 0..dim {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for s in samples {
        let _ = write!(out, "{}", s.label);
        for v in &s.features {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Writes all rows (members, nonmembers, test) and the matching split tags.
pub fn save_csv(dataset: &Dataset, csv_path: &Path, split_path: Option<&Path>) -> Result<()> {
    let all: Vec<Sample> = dataset.all().cloned().collect();
    fs::write(csv_path, samples_to_csv(&all, dataset.dim))?;
    if let Some(p) = split_path {
        let mut tags = String::new();
        for (tag, n) in [
            ("member", dataset.members.len()),
            ("nonmember", dataset.nonmembers.len()),
            ("test", dataset.test.len()),
        ] {
            for _ in 0..n {
                tags.push_str(tag);
                tags.push('\n');
            }
        }
        fs::write(p, tags)?;
    }
    Ok(())
}
