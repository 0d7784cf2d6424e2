use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::DEFAULT_PRIOR;
use crate::error::{Error, Result};
use crate::face::MatchPolicy;
use crate::metrics::DcfParams;
use crate::wpe::WpeConfig;

fn default_prior() -> f64 {
    DEFAULT_PRIOR
}

fn default_em_iters() -> usize {
    10
}

/// Whole-pipeline configuration (TOML). Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_prior")]
    pub prior: f64,
    #[serde(default)]
    pub metrics: DcfParams,
    pub dev: SplitConfig,
    pub eval: SplitConfig,
    pub systems: Vec<SystemConfig>,
    pub fusion: Option<FusionConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub key: PathBuf,
    /// Trials to score; defaults to every trial in the key.
    pub trials: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    pub name: String,
    #[serde(flatten)]
    pub kind: SystemKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemKind {
    /// Precomputed embeddings through LDA + PLDA.
    Plda {
        train: PathBuf,
        train_labels: PathBuf,
        lda_dim: usize,
        #[serde(default = "default_em_iters")]
        em_iters: usize,
        dev: EmbeddingInputs,
        eval: EmbeddingInputs,
    },
    /// Waveforms through the audio chain and toy embedder, then LDA + PLDA.
    Wav {
        train_list: PathBuf,
        train_labels: PathBuf,
        bandwidth: u32,
        #[serde(default)]
        wpe: Option<WpeConfig>,
        lda_dim: usize,
        #[serde(default = "default_em_iters")]
        em_iters: usize,
        dev: WavInputs,
        eval: WavInputs,
    },
    /// Face detections with embeddings, scored by template matching.
    Face {
        #[serde(default)]
        policy: MatchPolicy,
        dev: FaceInputs,
        eval: FaceInputs,
    },
    /// Externally produced scores.
    Scores { dev: ScoreInputs, eval: ScoreInputs },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingInputs {
    pub enroll: PathBuf,
    pub test: PathBuf,
    /// `segment<TAB>model`; without it every enrollment id is a model.
    pub enroll_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavInputs {
    /// `id<TAB>path` lists.
    pub enroll_list: PathBuf,
    pub test_list: PathBuf,
    pub enroll_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceInputs {
    pub embeddings: PathBuf,
    pub enroll_detections: PathBuf,
    pub enroll_boxes: PathBuf,
    pub test_detections: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreInputs {
    pub scores: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub systems: Vec<String>,
    #[serde(default)]
    pub ridge: f64,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid pipeline config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn input_paths(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![&self.dev.key, &self.eval.key];
        v.extend(self.dev.trials.as_deref());
        v.extend(self.eval.trials.as_deref());
        for s in &self.systems {
            match &s.kind {
                SystemKind::Plda {
                    train,
                    train_labels,
                    dev,
                    eval,
                    ..
                } => {
                    v.extend([train.as_path(), train_labels.as_path()]);
                    for i in [dev, eval] {
                        v.extend([i.enroll.as_path(), i.test.as_path()]);
                        v.extend(i.enroll_map.as_deref());
                    }
                }
                SystemKind::Wav {
                    train_list,
                    train_labels,
                    dev,
                    eval,
                    ..
                } => {
                    v.extend([train_list.as_path(), train_labels.as_path()]);
                    for i in [dev, eval] {
                        v.extend([i.enroll_list.as_path(), i.test_list.as_path()]);
                        v.extend(i.enroll_map.as_deref());
                    }
                }
                SystemKind::Face { dev, eval, .. } => {
                    for i in [dev, eval] {
                        v.extend([
                            i.embeddings.as_path(),
                            i.enroll_detections.as_path(),
                            i.enroll_boxes.as_path(),
                            i.test_detections.as_path(),
                        ]);
                    }
                }
                SystemKind::Scores { dev, eval } => v.extend([dev.scores.as_path(), eval.scores.as_path()]),
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() {
            return Err(Error::Config("no systems configured".into()));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::Config(format!("prior must lie in (0, 1), got {}", self.prior)));
        }
        self.metrics.validate()?;
        let mut names = HashSet::new();
        for s in &self.systems {
            let valid_name = !s.name.is_empty()
                && s.name != "fusion"
                && s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
            if !valid_name {
                return Err(Error::Config(format!(
                    "system name {:?} must be non-empty [A-Za-z0-9_.-] and not `fusion`",
                    s.name
                )));
            }
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate system name {:?}", s.name)));
            }
            match &s.kind {
                SystemKind::Wav { bandwidth, wpe, lda_dim, .. } => {
                    if *bandwidth != 8000 && *bandwidth != 16000 {
                        return Err(Error::Config(format!("{}: bandwidth must be 8000 or 16000", s.name)));
                    }
                    if let Some(w) = wpe {
                        w.validate()?;
                    }
                    if *lda_dim == 0 {
                        return Err(Error::Config(format!("{}: lda_dim must be positive", s.name)));
                    }
                }
                SystemKind::Plda { lda_dim, .. } if *lda_dim == 0 => {
                    return Err(Error::Config(format!("{}: lda_dim must be positive", s.name)));
                }
                SystemKind::Face { policy, .. } => policy.validate()?,
                _ => {}
            }
        }
        if let Some(f) = &self.fusion {
            if f.systems.is_empty() {
                return Err(Error::Config("fusion needs at least one system".into()));
            }
            let mut seen = HashSet::new();
            for name in &f.systems {
                if !names.contains(name.as_str()) {
                    return Err(Error::Config(format!("fusion refers to unknown system {name:?}")));
                }
                if !seen.insert(name) {
                    return Err(Error::Config(format!("fusion lists {name:?} twice")));
                }
            }
            if !(f.ridge >= 0.0 && f.ridge.is_finite()) {
                return Err(Error::Config("fusion ridge must be non-negative".into()));
            }
        }
        for p in self.input_paths() {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", full.display())));
            }
        }
        Ok(())
    }
}
