use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{gen_blobs, load_csv, load_split_tags, BlobParams, CsvSplit, Dataset};
use crate::audit::ScoreKind;
use crate::defense::{DpsgdConfig, MmdConfig};
use crate::encoder::{md5_digest, to_hex};
use crate::error::{Error, Result};
use crate::nn::{NormKind, SgdConfig, Topology};
use crate::norm::EncodingSpec;
use crate::poison::{AttackConfig, Variant};
use crate::rng::{derive_seed, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs(BlobParams),
    Csv {
        path: PathBuf,
        num_classes: usize,
        /// Fraction of rows used as members; ignored when `split_file` is set.
        #[serde(default)]
        split_ratio: Option<f64>,
        #[serde(default)]
        split_file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub norm: NormKind,
    #[serde(default)]
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub variant: Variant,
    #[serde(default)]
    pub spec: EncodingSpec,
    #[serde(default)]
    pub replacement_ratio: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub cache_encodings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DefenseConfig {
    #[default]
    None,
    Dpsgd(DpsgdConfig),
    /// The reference set is the dataset's test split.
    Mmd(MmdConfig),
    /// Soft labels from two half-split teachers.
    SoftLabel,
}

impl DefenseConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseConfig::None => "none",
            DefenseConfig::Dpsgd(_) => "dpsgd",
            DefenseConfig::Mmd(_) => "mmd",
            DefenseConfig::SoftLabel => "soft-label",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub fpr_levels: Vec<f64>,
    pub shadow_models: usize,
    pub score_kind: ScoreKind,
    /// Extra epochs at which `train` writes checkpoints (early-stopping audits).
    #[serde(default)]
    pub checkpoint_epochs: Vec<usize>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            fpr_levels: vec![0.001, 0.01, 0.1],
            shadow_models: 16,
            score_kind: ScoreKind::LogitScaled,
            checkpoint_epochs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub attack: AttackSection,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    pub seed: u64,
}

pub const PRESETS: [&str; 3] = ["paper-default", "norm-free", "replacement-30"];

impl ExperimentConfig {
    /// Named configuration on the desk-scale blob dataset.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            dataset: DatasetConfig::Blobs(BlobParams::desk()),
            model: ModelConfig {
                hidden: vec![256, 256],
                norm: NormKind::Dual,
                dropout: 0.0,
            },
            attack: AttackSection {
                variant: Variant::DualNorm,
                spec: EncodingSpec::default(),
                replacement_ratio: None,
                beta: None,
                epochs: 200,
                batch_size: 64,
                cache_encodings: true,
            },
            sgd: SgdConfig::default(),
            defense: DefenseConfig::None,
            audit: AuditConfig::default(),
            seed: 0,
        };
        match name {
            "paper-default" => Ok(base),
            "norm-free" => {
                let mut c = base;
                c.model.norm = NormKind::None;
                c.attack.variant = Variant::Basic;
                c.attack.spec = EncodingSpec::norm_free();
                Ok(c)
            }
            "replacement-30" => {
                let mut c = base;
                c.attack.variant = Variant::Replacement;
                c.attack.replacement_ratio = Some(0.3);
                Ok(c)
            }
            other => Err(Error::config(format!(
                "unknown preset {other:?}; known: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// MD5 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        to_hex(&md5_digest(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        ))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Blobs(b) => b.validate()?,
            DatasetConfig::Csv {
                num_classes,
                split_ratio,
                split_file,
                ..
            } => {
                if *num_classes < 2 {
                    return Err(Error::config("csv dataset needs num_classes >= 2"));
                }
                match (split_ratio, split_file) {
                    (None, None) => {
                        return Err(Error::config("csv dataset needs split_ratio or split_file"))
                    }
                    (Some(_), Some(_)) => {
                        return Err(Error::config(
                            "give either split_ratio or split_file, not both",
                        ))
                    }
                    (Some(r), None) if !(0.0..=1.0).contains(r) => {
                        return Err(Error::config(format!(
                            "split_ratio must lie in [0, 1], got {r}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        // Topology checks that do not depend on the data dimensions.
        self.topology(2, 2)?.validate()?;
        let attack = self.attack_config();
        attack.validate()?;
        attack.check_topology(&self.topology(2, 2)?)?;
        if self.attack.variant == Variant::Basic && self.model.norm == NormKind::Dual {
            return Err(Error::config(
                "basic variant needs single-path normalization",
            ));
        }
        self.sgd.validate()?;
        match &self.defense {
            DefenseConfig::None | DefenseConfig::SoftLabel => {}
            DefenseConfig::Dpsgd(d) => d.validate()?,
            DefenseConfig::Mmd(m) => m.validate()?,
        }
        if matches!(
            self.defense,
            DefenseConfig::Dpsgd(_) | DefenseConfig::Mmd(_)
        ) && self.attack.variant == Variant::Mgda
        {
            return Err(Error::config(format!(
                "{} defense cannot be combined with the mgda variant",
                self.defense.name()
            )));
        }
        if self
            .audit
            .fpr_levels
            .iter()
            .any(|f| !(*f > 0.0 && *f <= 1.0))
        {
            return Err(Error::config("fpr levels must lie in (0, 1]"));
        }
        if self.audit.shadow_models < 4 || !self.audit.shadow_models.is_multiple_of(2) {
            return Err(Error::config(format!(
                "shadow_models must be even and at least 4, got {}",
                self.audit.shadow_models
            )));
        }
        if let Some(e) = self
            .audit
            .checkpoint_epochs
            .iter()
            .find(|&&e| e == 0 || e > self.attack.epochs)
        {
            return Err(Error::config(format!(
                "checkpoint epoch {e} outside 1..={}",
                self.attack.epochs
            )));
        }
        Ok(())
    }

    pub fn topology(&self, input_dim: usize, num_classes: usize) -> Result<Topology> {
        let t = Topology {
            input_dim,
            hidden: self.model.hidden.clone(),
            num_classes,
            norm: self.model.norm,
            dropout: self.model.dropout,
            encoding: (self.model.norm == NormKind::Dual).then_some(self.attack.spec),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn attack_config(&self) -> AttackConfig {
        let a = &self.attack;
        AttackConfig {
            variant: a.variant,
            spec: a.spec,
            replacement_ratio: a.replacement_ratio,
            beta: a.beta,
            epochs: a.epochs,
            batch_size: a.batch_size,
            seed: derive_seed(self.seed, tags::SHUFFLE),
            cache_encodings: a.cache_encodings,
        }
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, tags::INIT)
    }

    /// Loads or generates the dataset; CSV paths are resolved against `base`.
    pub fn dataset(&self, base: &Path) -> Result<Dataset> {
        let ds = match &self.dataset {
            DatasetConfig::Blobs(b) => gen_blobs(b, self.seed)?,
            DatasetConfig::Csv {
                path,
                num_classes,
                split_ratio,
                split_file,
            } => {
                let split = match (split_ratio, split_file) {
                    (_, Some(f)) => load_split_tags(&base.join(f))?,
                    (Some(r), None) => CsvSplit::Ratio(*r),
                    (None, None) => {
                        return Err(Error::config("csv dataset needs split_ratio or split_file"))
                    }
                };
                load_csv(&base.join(path), *num_classes, &split)?
            }
        };
        ds.validate()?;
        if self.model.norm == NormKind::Dual {
            ds.check_primary_routing(&self.attack.spec)?;
        }
        Ok(ds)
    }
}
