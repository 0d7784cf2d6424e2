//! End-to-end orchestration: embed → backend → score → fuse → evaluate.
//!
//! Every stage reads its inputs from disk and writes its outputs under the
//! configured output directory, so a run can resume from any stage and end
//! with the same bytes as an uninterrupted one.

mod config;
pub mod scoring;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{
    EmbeddingInputs, FaceInputs, FusionConfig, PipelineConfig, ScoreInputs, SplitConfig, SystemConfig, SystemKind,
    WavInputs,
};

use crate::backend::train_backend;
use crate::calibration::{apply, train, TrainOptions};
use crate::embedder::AudioChain;
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{evaluate, DcfParams, EvalReport};
use crate::trials::{ScoreSet, TrialKey, TrialList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Embed,
    Backend,
    Score,
    Fuse,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Embed, Stage::Backend, Stage::Score, Stage::Fuse, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Embed => "embed",
            Stage::Backend => "backend",
            Stage::Score => "score",
            Stage::Fuse => "fuse",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Dev,
    Eval,
}

impl Split {
    pub const BOTH: [Split; 2] = [Split::Dev, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

/// Artifact locations under the output directory.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn embeddings(&self, system: &str, what: &str) -> PathBuf {
        self.root.join(system).join(format!("{what}.aveb"))
    }

    pub fn backend(&self, system: &str) -> PathBuf {
        self.root.join(system).join("backend.model")
    }

    pub fn scores(&self, system: &str, split: Split) -> PathBuf {
        self.root.join(system).join(format!("{}_scores.tsv", split.name()))
    }

    pub fn calibration(&self, system: &str) -> PathBuf {
        self.root.join(system).join("calibration.model")
    }

    pub fn calibrated(&self, system: &str, split: Split) -> PathBuf {
        self.root.join(system).join(format!("{}_calibrated.tsv", split.name()))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

pub const FUSION: &str = "fusion";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub systems: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub name: String,
    pub dev: EvalReport,
    pub eval: EvalReport,
    pub calibration: Affine,
    pub eval_calibrated: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub model: Affine,
    pub dev: EvalReport,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub prior: f64,
    pub params: DcfParams,
    pub systems: Vec<SystemReport>,
    pub fusion: Option<FusionReport>,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Format(format!("cannot serialize report: {e}")))
    }

    /// Fixed-width table mirroring the usual EER / minDCF / actDCF layout.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>8} {:>8}   {:>8} {:>8} {:>8}\n",
            "system", "devEER%", "minDCF", "actDCF", "evalEER%", "minDCF", "actDCF"
        );
        let mut row = |name: &str, dev: &EvalReport, eval: &EvalReport| {
            out.push_str(&format!(
                "{:<16} {:>8.2} {:>8.3} {:>8.3}   {:>8.2} {:>8.3} {:>8.3}\n",
                name, dev.eer_percent, dev.min_dcf, dev.act_dcf, eval.eer_percent, eval.min_dcf, eval.act_dcf
            ));
        };
        for s in &self.systems {
            row(&s.name, &s.dev, &s.eval);
            row(&format!("{} (cal)", s.name), &s.dev, &s.eval_calibrated);
        }
        if let Some(f) = &self.fusion {
            row(FUSION, &f.dev, &f.eval);
        }
        out
    }
}

/// Pipeline bound to a validated config.
pub struct Pipeline {
    config: PipelineConfig,
    layout: Layout,
    seed: u64,
}

fn staged<T>(stage: Stage, system: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(&format!("{}/{system}", stage.name())))
}

impl Pipeline {
    /// `seed` overrides the seed in the config file.
    pub fn new(config: PipelineConfig, seed: Option<u64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config.output_dir());
        let seed = seed.or(config.seed).unwrap_or(0);
        Ok(Self { config, layout, seed })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.config.resolve(p)
    }

    fn split(&self, split: Split) -> &SplitConfig {
        match split {
            Split::Dev => &self.config.dev,
            Split::Eval => &self.config.eval,
        }
    }

    fn key(&self, split: Split) -> Result<TrialKey> {
        io::load_key(&self.path(&self.split(split).key))
    }

    fn trials(&self, split: Split) -> Result<TrialList> {
        match &self.split(split).trials {
            Some(p) => io::load_trials(&self.path(p)),
            None => Ok(self.key(split)?.trial_list()),
        }
    }

    fn save_scores(&self, path: &Path, scores: &ScoreSet<f64>) -> Result<()> {
        io::write_text(path, &io::format_scores(scores)?)
    }

    fn load_scores(&self, path: &Path, system: &str) -> Result<ScoreSet<f64>> {
        io::load_scores(path, Some(system))
    }

    /// Runs stages `from..=Evaluate` and returns the report.
    pub fn run(&self, from: Stage) -> Result<PipelineReport> {
        for stage in Stage::ALL.into_iter().filter(|&s| s >= from) {
            log::info!("stage {}", stage.name());
            match stage {
                Stage::Embed => self.embed()?,
                Stage::Backend => self.backend()?,
                Stage::Score => self.score()?,
                Stage::Fuse => self.fuse()?,
                Stage::Evaluate => {
                    let report = staged(stage, "report", self.evaluate())?;
                    io::write_text(&self.layout.report(), &report.to_json()?)?;
                    return Ok(report);
                }
            }
        }
        unreachable!("evaluate is the last stage")
    }

    fn embed(&self) -> Result<()> {
        for sys in &self.config.systems {
            let SystemKind::Wav {
                train_list,
                bandwidth,
                wpe,
                dev,
                eval,
                ..
            } = &sys.kind
            else {
                continue;
            };
            let chain = AudioChain {
                target_rate: Some(*bandwidth),
                wpe: wpe.clone(),
            };
            let mut jobs = vec![("train".to_string(), self.path(train_list))];
            for (split, inputs) in [(Split::Dev, dev), (Split::Eval, eval)] {
                jobs.push((format!("{}_enroll", split.name()), self.path(&inputs.enroll_list)));
                jobs.push((format!("{}_test", split.name()), self.path(&inputs.test_list)));
            }
            for (what, list) in jobs {
                let r = (|| {
                    let list = scoring::load_wav_list(&list)?;
                    let table = scoring::embed_wavs::<f64>(&list, &chain, self.seed)?;
                    io::write_bytes(&self.layout.embeddings(&sys.name, &what), &io::write_embeddings(&table)?)
                })();
                staged(Stage::Embed, &sys.name, r)?;
            }
        }
        Ok(())
    }

    fn backend(&self) -> Result<()> {
        for sys in &self.config.systems {
            let (train, labels, lda_dim, em_iters) = match &sys.kind {
                SystemKind::Plda {
                    train,
                    train_labels,
                    lda_dim,
                    em_iters,
                    ..
                } => (self.path(train), self.path(train_labels), *lda_dim, *em_iters),
                SystemKind::Wav {
                    train_labels,
                    lda_dim,
                    em_iters,
                    ..
                } => (
                    self.layout.embeddings(&sys.name, "train"),
                    self.path(train_labels),
                    *lda_dim,
                    *em_iters,
                ),
                _ => continue,
            };
            let r = (|| {
                let table = io::load_embeddings::<f64>(&train)?;
                let data = table.labelled(&io::load_pairs(&labels)?)?;
                let model = train_backend(&data, lda_dim, em_iters)?;
                io::write_bytes(&self.layout.backend(&sys.name), &io::write_backend(&model)?)
            })();
            staged(Stage::Backend, &sys.name, r)?;
        }
        Ok(())
    }

    fn score_system(&self, sys: &SystemConfig, split: Split) -> Result<ScoreSet<f64>> {
        let trials = self.trials(split)?;
        fn pick<'a, I>(split: Split, dev: &'a I, eval: &'a I) -> &'a I {
            match split {
                Split::Dev => dev,
                Split::Eval => eval,
            }
        }
        let map = |p: &Option<PathBuf>| -> Result<Option<Vec<(String, String)>>> {
            p.as_ref().map(|p| io::load_pairs(&self.path(p))).transpose()
        };
        match &sys.kind {
            SystemKind::Plda { dev, eval, .. } => {
                let inputs: &EmbeddingInputs = pick(split, dev, eval);
                let model = io::read_backend::<f64>(&io::read_bytes(&self.layout.backend(&sys.name))?)?;
                let enroll = io::load_embeddings(&self.path(&inputs.enroll))?;
                let test = io::load_embeddings(&self.path(&inputs.test))?;
                let m = map(&inputs.enroll_map)?;
                scoring::score_embeddings(&model, &enroll, m.as_deref(), &test, &trials, &sys.name)
            }
            SystemKind::Wav { dev, eval, .. } => {
                let inputs: &WavInputs = pick(split, dev, eval);
                let model = io::read_backend::<f64>(&io::read_bytes(&self.layout.backend(&sys.name))?)?;
                let enroll = io::load_embeddings(&self.layout.embeddings(&sys.name, &format!("{}_enroll", split.name())))?;
                let test = io::load_embeddings(&self.layout.embeddings(&sys.name, &format!("{}_test", split.name())))?;
                let m = map(&inputs.enroll_map)?;
                scoring::score_embeddings(&model, &enroll, m.as_deref(), &test, &trials, &sys.name)
            }
            SystemKind::Face { policy, dev, eval } => {
                let inputs: &FaceInputs = pick(split, dev, eval);
                let faces = scoring::score_faces(
                    &io::load_embeddings(&self.path(&inputs.embeddings))?,
                    &io::load_detections(&self.path(&inputs.enroll_detections))?,
                    &io::load_boxes(&self.path(&inputs.enroll_boxes))?,
                    &io::load_detections(&self.path(&inputs.test_detections))?,
                    &trials,
                    policy,
                    &sys.name,
                )?;
                Ok(faces.scores)
            }
            SystemKind::Scores { dev, eval } => {
                let inputs: &ScoreInputs = pick(split, dev, eval);
                self.load_scores(&self.path(&inputs.scores), &sys.name)
            }
        }
    }

    fn score(&self) -> Result<()> {
        for sys in &self.config.systems {
            for split in Split::BOTH {
                let r = self
                    .score_system(sys, split)
                    .and_then(|s| self.save_scores(&self.layout.scores(&sys.name, split), &s));
                staged(Stage::Score, &sys.name, r)?;
            }
        }
        Ok(())
    }

    fn options(&self, ridge: f64) -> TrainOptions {
        TrainOptions {
            prior: self.config.prior,
            ridge,
            ..Default::default()
        }
    }

    fn calibrate(&self, systems: &[String], ridge: f64, model_path: &Path, outputs: [&Path; 2]) -> Result<()> {
        let load = |split| -> Result<Vec<ScoreSet<f64>>> {
            systems
                .iter()
                .map(|s| self.load_scores(&self.layout.scores(s, split), s))
                .collect()
        };
        let dev = load(Split::Dev)?;
        let model = train(&dev, &self.key(Split::Dev)?, &self.options(ridge))?;
        io::write_text(model_path, &io::format_calibration(&model)?)?;
        let id = if systems.len() == 1 { systems[0].as_str() } else { FUSION };
        for (out, scores) in [(outputs[0], dev), (outputs[1], load(Split::Eval)?)] {
            self.save_scores(out, &apply(&model, &scores, id)?)?;
        }
        Ok(())
    }

    fn fuse(&self) -> Result<()> {
        for sys in &self.config.systems {
            let names = [sys.name.clone()];
            let r = self.calibrate(
                &names,
                0.0,
                &self.layout.calibration(&sys.name),
                [
                    &self.layout.calibrated(&sys.name, Split::Dev),
                    &self.layout.calibrated(&sys.name, Split::Eval),
                ],
            );
            staged(Stage::Fuse, &sys.name, r)?;
        }
        if let Some(f) = &self.config.fusion {
            let r = self.calibrate(
                &f.systems,
                f.ridge,
                &self.layout.calibration(FUSION),
                [&self.layout.scores(FUSION, Split::Dev), &self.layout.scores(FUSION, Split::Eval)],
            );
            staged(Stage::Fuse, FUSION, r)?;
        }
        Ok(())
    }

    fn affine(&self, path: &Path) -> Result<Affine> {
        let m = io::parse_calibration::<f64>(&io::read_text(path)?, &path.display().to_string())?;
        Ok(Affine {
            systems: m.system_ids,
            weights: m.weights,
            bias: m.bias,
        })
    }

    fn evaluate(&self) -> Result<PipelineReport> {
        let params = self.config.metrics;
        let dev_key = self.key(Split::Dev)?;
        let eval_key = self.key(Split::Eval)?;
        let report_on = |path: &Path, name: &str, key: &TrialKey| -> Result<EvalReport> {
            evaluate(&self.load_scores(path, name)?, key, &params)
        };
        let mut systems = Vec::new();
        for sys in &self.config.systems {
            let n = &sys.name;
            systems.push(SystemReport {
                name: n.clone(),
                dev: report_on(&self.layout.scores(n, Split::Dev), n, &dev_key)?,
                eval: report_on(&self.layout.scores(n, Split::Eval), n, &eval_key)?,
                calibration: self.affine(&self.layout.calibration(n))?,
                eval_calibrated: report_on(&self.layout.calibrated(n, Split::Eval), n, &eval_key)?,
            });
        }
        let fusion = match &self.config.fusion {
            Some(_) => Some(FusionReport {
                model: self.affine(&self.layout.calibration(FUSION))?,
                dev: report_on(&self.layout.scores(FUSION, Split::Dev), FUSION, &dev_key)?,
                eval: report_on(&self.layout.scores(FUSION, Split::Eval), FUSION, &eval_key)?,
            }),
            None => None,
        };
        Ok(PipelineReport {
            prior: self.config.prior,
            params,
            systems,
            fusion,
        })
    }
}

/// Loads, validates and runs a config file.
pub fn run_pipeline(config_path: &Path, seed: Option<u64>, from: Stage) -> Result<PipelineReport> {
    Pipeline::new(PipelineConfig::load(config_path)?, seed)?.run(from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
        assert!(Stage::Embed < Stage::Evaluate);
    }
}
