//! Seeded synthetic audio-visual corpus drawn from the two-covariance model.
//!
//! Every speaker gets an independent identity per modality, `y ~ N(mu, B)`;
//! each audio session and each face frame adds `eps ~ N(0, W)`. Speakers are
//! split into a backend-training pool and equally sized dev and eval pools.
//! Within dev/eval the first half of each speaker's sessions are enrollment
//! videos and the rest are test videos.
//!
//! All randomness comes from ChaCha8 streams keyed by the spec seed, so the
//! written files are byte-identical across runs and platforms.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::{sample_test_frames, select_enroll_frames, BoundingBox};
use crate::io::{
    format_boxes, format_detections, format_key, format_pairs, format_trials, write_bytes, write_embeddings,
    write_text, BoxRecord, DetectionRecord, EmbeddingTable,
};
use crate::trials::{Label, Trial, TrialKey};

/// Covariance given as `s·I`, a diagonal, or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl CovSpec {
    pub fn matrix(&self, dim: usize) -> Result<DMatrix<f64>> {
        let m = match self {
            CovSpec::Scalar(s) => DMatrix::identity(dim, dim) * *s,
            CovSpec::Diagonal(d) if d.len() == dim => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            CovSpec::Full(rows) if rows.len() == dim && rows.iter().all(|r| r.len() == dim) => {
                DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
            }
            _ => return Err(Error::Config(format!("covariance does not match dimension {dim}"))),
        };
        if m.iter().any(|v| !v.is_finite()) || (&m - m.transpose()).amax() > 1e-12 {
            return Err(Error::Config("covariance must be finite and symmetric".into()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    /// Global mean; a scalar fills every coordinate.
    pub mean: f64,
    pub between: CovSpec,
    pub within: CovSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Speakers appearing in trials, split evenly into dev and eval.
    pub n_speakers: usize,
    /// Additional speakers used only to train the audio backend.
    pub n_train_speakers: usize,
    pub sessions_per_speaker: usize,
    pub dim: usize,
    pub audio: ModalitySpec,
    pub face: ModalitySpec,
    /// Per split.
    pub targets: usize,
    /// Per split.
    pub nontargets: usize,
    /// Frames in each enrollment video.
    pub enroll_video_frames: usize,
    /// Annotated frames per enrollment video.
    pub given_frames: usize,
    /// Test video length; sampled at one frame per second.
    pub test_video_seconds: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 200,
            n_train_speakers: 200,
            sessions_per_speaker: 10,
            dim: 16,
            audio: ModalitySpec {
                mean: 0.0,
                between: CovSpec::Scalar(1.0),
                within: CovSpec::Scalar(0.75),
            },
            face: ModalitySpec {
                mean: 0.0,
                between: CovSpec::Scalar(1.0),
                within: CovSpec::Scalar(3.0),
            },
            targets: 2500,
            nontargets: 10000,
            enroll_video_frames: 30,
            given_frames: 2,
            test_video_seconds: 4.0,
            seed: 0,
        }
    }
}

/// Gaussian sampler with a fixed square-root factor.
struct Gaussian {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl Gaussian {
    fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let factor = match cov.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let eig = SymmetricEigen::new(cov.clone());
                if eig.eigenvalues.min() < -1e-10 * cov.amax().max(1.0) {
                    return Err(Error::Config("covariance is not positive semi-definite".into()));
                }
                let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                &eig.eigenvectors * DMatrix::from_diagonal(&roots)
            }
        };
        Ok(Self { mean, factor })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(&mut *rng));
        &self.mean + &self.factor * z
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(&mut *rng));
        &self.factor * z
    }
}

struct Modality {
    identity: Gaussian,
    session: Gaussian,
}

impl Modality {
    fn new(spec: &ModalitySpec, dim: usize) -> Result<Self> {
        let mean = DVector::from_element(dim, spec.mean);
        Ok(Self {
            identity: Gaussian::new(mean, &spec.between.matrix(dim)?)?,
            session: Gaussian::new(DVector::zeros(dim), &spec.within.matrix(dim)?)?,
        })
    }
}

/// One dev or eval partition.
pub struct SplitData {
    pub audio: EmbeddingTable<f64>,
    pub faces: EmbeddingTable<f64>,
    pub enroll_detections: Vec<DetectionRecord<f64>>,
    pub enroll_boxes: Vec<BoxRecord<f64>>,
    pub test_detections: Vec<DetectionRecord<f64>>,
    pub key: TrialKey,
}

pub struct SynthData {
    pub train_audio: EmbeddingTable<f64>,
    pub train_utt2spk: Vec<(String, String)>,
    pub dev: SplitData,
    pub eval: SplitData,
}

const STREAM_TRAIN: u64 = 1;
const STREAM_DEV: u64 = 2;
const STREAM_EVAL: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn table(ids: Vec<String>, rows: Vec<DVector<f64>>, dim: usize) -> Result<EmbeddingTable<f64>> {
    // Stored as f32 on disk; round here so in-memory and file data agree.
    let m = DMatrix::from_fn(rows.len(), dim, |i, j| f64::from(rows[i][j] as f32));
    EmbeddingTable::new(ids, m)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.n_speakers < 4 || !self.n_speakers.is_multiple_of(2) {
            return Err(Error::Config("n_speakers must be even and at least 4".into()));
        }
        if self.n_train_speakers < 2 {
            return Err(Error::Config("n_train_speakers must be at least 2".into()));
        }
        if self.sessions_per_speaker < 2 {
            return Err(Error::Config("sessions_per_speaker must be at least 2".into()));
        }
        if self.targets == 0 || self.nontargets == 0 {
            return Err(Error::Config("trial counts must be at least 1".into()));
        }
        if self.given_frames == 0 || self.given_frames > self.enroll_video_frames {
            return Err(Error::Config("given_frames must lie in [1, enroll_video_frames]".into()));
        }
        if !(self.test_video_seconds > 0.0) {
            return Err(Error::Config("test_video_seconds must be positive".into()));
        }
        let spk = self.n_speakers / 2;
        let (enroll, test) = self.session_split();
        let target_pairs = spk * enroll * test;
        let nontarget_pairs = spk * enroll * (spk - 1) * test;
        if self.targets > target_pairs {
            return Err(Error::Config(format!(
                "{} targets requested but only {target_pairs} target pairs exist per split",
                self.targets
            )));
        }
        if self.nontargets > nontarget_pairs {
            return Err(Error::Config(format!(
                "{} nontargets requested but only {nontarget_pairs} nontarget pairs exist per split",
                self.nontargets
            )));
        }
        Ok(())
    }

    /// (enrollment, test) sessions per speaker.
    fn session_split(&self) -> (usize, usize) {
        let enroll = self.sessions_per_speaker.div_ceil(2);
        (enroll, self.sessions_per_speaker - enroll)
    }

    pub fn generate(&self) -> Result<SynthData> {
        self.validate()?;
        let audio = Modality::new(&self.audio, self.dim)?;
        let face = Modality::new(&self.face, self.dim)?;

        let mut rng = stream(self.seed, STREAM_TRAIN);
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut utt2spk = Vec::new();
        for s in 0..self.n_train_speakers {
            let spk = format!("trn{s:04}");
            let y = audio.identity.sample(&mut rng);
            for k in 0..self.sessions_per_speaker {
                let id = format!("{spk}-s{k:02}");
                rows.push(&y + audio.session.noise(&mut rng));
                utt2spk.push((id.clone(), spk.clone()));
                ids.push(id);
            }
        }
        let train_audio = table(ids, rows, self.dim)?;

        let half = self.n_speakers / 2;
        let dev = self.split("dev", 0, half, &audio, &face, &mut stream(self.seed, STREAM_DEV))?;
        let eval = self.split("eval", half, half, &audio, &face, &mut stream(self.seed, STREAM_EVAL))?;
        Ok(SynthData {
            train_audio,
            train_utt2spk: utt2spk,
            dev,
            eval,
        })
    }

    fn split(
        &self,
        name: &str,
        first_speaker: usize,
        speakers: usize,
        audio: &Modality,
        face: &Modality,
        rng: &mut ChaCha8Rng,
    ) -> Result<SplitData> {
        let (n_enroll, _) = self.session_split();
        let mut audio_ids = Vec::new();
        let mut audio_rows = Vec::new();
        let mut face_ids = Vec::new();
        let mut face_rows = Vec::new();
        let mut enroll_detections = Vec::new();
        let mut enroll_boxes = Vec::new();
        let mut test_detections = Vec::new();
        // sessions[speaker] = (enrollment ids, test ids)
        let mut sessions: Vec<(Vec<String>, Vec<String>)> = Vec::with_capacity(speakers);

        for s in first_speaker..first_speaker + speakers {
            let spk = format!("spk{s:04}");
            let y_audio = audio.identity.sample(rng);
            let y_face = face.identity.sample(rng);
            let mut enroll_ids = Vec::new();
            let mut test_ids = Vec::new();
            for k in 0..self.sessions_per_speaker {
                let video = format!("{spk}-s{k:02}");
                audio_ids.push(video.clone());
                audio_rows.push(&y_audio + audio.session.noise(rng));

                if k < n_enroll {
                    let given = self.given_frame_indices(rng);
                    let anchor = random_box(rng);
                    for &g in &given {
                        enroll_boxes.push(BoxRecord {
                            video: video.clone(),
                            frame: g,
                            bbox: anchor,
                        });
                    }
                    let distractor_identity = face.identity.sample(rng);
                    let distractor_box = far_box(&anchor);
                    for frame in select_enroll_frames(&given, Some(self.enroll_video_frames)) {
                        let id = format!("{video}/f{frame:03}/0");
                        face_ids.push(id.clone());
                        face_rows.push(&y_face + face.session.noise(rng));
                        enroll_detections.push(DetectionRecord {
                            video: video.clone(),
                            frame,
                            bbox: jitter(&anchor, rng),
                            embedding_ref: id,
                        });
                        let id = format!("{video}/f{frame:03}/1");
                        face_ids.push(id.clone());
                        face_rows.push(&distractor_identity + face.session.noise(rng));
                        enroll_detections.push(DetectionRecord {
                            video: video.clone(),
                            frame,
                            bbox: distractor_box,
                            embedding_ref: id,
                        });
                    }
                    enroll_ids.push(video);
                } else {
                    let anchor = random_box(rng);
                    for frame in sample_test_frames(self.test_video_seconds) {
                        let id = format!("{video}/t{frame:03}/0");
                        face_ids.push(id.clone());
                        face_rows.push(&y_face + face.session.noise(rng));
                        test_detections.push(DetectionRecord {
                            video: video.clone(),
                            frame,
                            bbox: jitter(&anchor, rng),
                            embedding_ref: id,
                        });
                    }
                    test_ids.push(video);
                }
            }
            sessions.push((enroll_ids, test_ids));
        }

        let key = self.trials(&sessions, rng).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{name}: {m}")),
            other => other,
        })?;
        Ok(SplitData {
            audio: table(audio_ids, audio_rows, self.dim)?,
            faces: table(face_ids, face_rows, self.dim)?,
            enroll_detections,
            enroll_boxes,
            test_detections,
            key,
        })
    }

    fn given_frame_indices(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut given = BTreeSet::new();
        while given.len() < self.given_frames {
            given.insert(rng.random_range(0..self.enroll_video_frames));
        }
        given.into_iter().collect()
    }

    /// Targets and nontargets drawn without replacement, sorted by trial.
    fn trials(&self, sessions: &[(Vec<String>, Vec<String>)], rng: &mut ChaCha8Rng) -> Result<TrialKey> {
        let mut targets: Vec<Trial> = sessions
            .iter()
            .flat_map(|(enroll, test)| {
                enroll
                    .iter()
                    .flat_map(move |e| test.iter().map(move |t| Trial::new(e.clone(), t.clone())))
            })
            .collect();
        // partial Fisher-Yates: keep the first `targets` entries
        for i in 0..self.targets {
            let j = rng.random_range(i..targets.len());
            targets.swap(i, j);
        }
        targets.truncate(self.targets);

        let mut nontargets = BTreeSet::new();
        let n = sessions.len();
        while nontargets.len() < self.nontargets {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let e = &sessions[a].0[rng.random_range(0..sessions[a].0.len())];
            let t = &sessions[b].1[rng.random_range(0..sessions[b].1.len())];
            nontargets.insert(Trial::new(e.clone(), t.clone()));
        }

        let mut entries: Vec<(Trial, Label)> = targets
            .into_iter()
            .map(|t| (t, Label::Target))
            .chain(nontargets.into_iter().map(|t| (t, Label::Nontarget)))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        TrialKey::new(entries)
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox<f64> {
    let x = f64::from(rng.random_range(0u32..200));
    let y = f64::from(rng.random_range(0u32..150));
    let side = f64::from(rng.random_range(60u32..120));
    BoundingBox { x, y, w: side, h: side }
}

/// Small integer shift of a box, keeping IoU well above 0.5.
fn jitter(b: &BoundingBox<f64>, rng: &mut ChaCha8Rng) -> BoundingBox<f64> {
    let dx = f64::from(rng.random_range(-3i32..=3));
    let dy = f64::from(rng.random_range(-3i32..=3));
    BoundingBox {
        x: b.x + dx,
        y: b.y + dy,
        ..*b
    }
}

/// A box that does not overlap `b`.
fn far_box(b: &BoundingBox<f64>) -> BoundingBox<f64> {
    BoundingBox {
        x: b.x + b.w + 40.0,
        y: b.y,
        w: 50.0,
        h: 50.0,
    }
}

/// File names written by [`write_corpus`], relative to the output directory.
pub mod files {
    pub const TRAIN_AUDIO: &str = "train_audio.aveb";
    pub const TRAIN_UTT2SPK: &str = "train_utt2spk.tsv";
    pub const CONFIG: &str = "pipeline.toml";
    pub const SPEC: &str = "synth.toml";

    pub fn split(split: &str, what: &str) -> String {
        format!("{split}_{what}")
    }
}

fn write_split(dir: &Path, name: &str, data: &SplitData) -> Result<()> {
    let f = |what: &str| dir.join(files::split(name, what));
    write_bytes(&f("audio.aveb"), &write_embeddings(&data.audio)?)?;
    write_bytes(&f("faces.aveb"), &write_embeddings(&data.faces)?)?;
    write_text(&f("enroll_det.tsv"), &format_detections(&data.enroll_detections)?)?;
    write_text(&f("enroll_boxes.tsv"), &format_boxes(&data.enroll_boxes)?)?;
    write_text(&f("test_det.tsv"), &format_detections(&data.test_detections)?)?;
    write_text(&f("trials.tsv"), &format_trials(&data.key.trial_list())?)?;
    write_text(&f("key.tsv"), &format_key(&data.key)?)?;
    Ok(())
}

/// Ready-to-run pipeline configuration for a generated corpus.
pub fn pipeline_config_text(spec: &SynthSpec) -> String {
    let lda_dim = spec.dim.min(spec.n_train_speakers - 1);
    let mut out = format!(
        r#"# Generated by `avkit simulate`. Paths are relative to this file.
seed = {seed}
output_dir = "run"
prior = 0.05

[metrics]
p_target = 0.05
c_miss = 1.0
c_fa = 1.0

[dev]
key = "dev_key.tsv"
trials = "dev_trials.tsv"

[eval]
key = "eval_key.tsv"
trials = "eval_trials.tsv"

[[systems]]
name = "audio"
kind = "plda"
train = "train_audio.aveb"
train_labels = "train_utt2spk.tsv"
lda_dim = {lda_dim}
em_iters = 10
"#,
        seed = spec.seed
    );
    for split in ["dev", "eval"] {
        out.push_str(&format!(
            "\n[systems.{split}]\nenroll = \"{split}_audio.aveb\"\ntest = \"{split}_audio.aveb\"\n"
        ));
    }
    out.push_str(
        r#"
[[systems]]
name = "face"
kind = "face"

[systems.policy]
mode = "top_k"
k = 10
p = 0.2
iou_threshold = 0.5
"#,
    );
    for split in ["dev", "eval"] {
        out.push_str(&format!(
            "\n[systems.{split}]\nembeddings = \"{split}_faces.aveb\"\nenroll_detections = \"{split}_enroll_det.tsv\"\nenroll_boxes = \"{split}_enroll_boxes.tsv\"\ntest_detections = \"{split}_test_det.tsv\"\n"
        ));
    }
    out.push_str("\n[fusion]\nsystems = [\"audio\", \"face\"]\n");
    out
}

/// Generates the corpus and writes it, with `synth.toml` (the spec) and a
/// matching `pipeline.toml`, into `dir`.
pub fn write_corpus(spec: &SynthSpec, dir: &Path) -> Result<SynthData> {
    let data = spec.generate()?;
    write_bytes(&dir.join(files::TRAIN_AUDIO), &write_embeddings(&data.train_audio)?)?;
    write_text(&dir.join(files::TRAIN_UTT2SPK), &format_pairs(&data.train_utt2spk)?)?;
    write_split(dir, "dev", &data.dev)?;
    write_split(dir, "eval", &data.eval)?;
    let spec_text = toml::to_string(spec).map_err(|e| Error::Format(format!("cannot serialize spec: {e}")))?;
    write_text(&dir.join(files::SPEC), &spec_text)?;
    write_text(&dir.join(files::CONFIG), &pipeline_config_text(spec))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_speakers: 8,
            n_train_speakers: 6,
            sessions_per_speaker: 4,
            dim: 3,
            targets: 10,
            nontargets: 30,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = small().generate().unwrap();
        let b = small().generate().unwrap();
        assert_eq!(a.train_audio, b.train_audio);
        assert_eq!(a.eval.faces, b.eval.faces);
        assert_eq!(a.dev.key, b.dev.key);
        let c = SynthSpec { seed: 6, ..small() }.generate().unwrap();
        assert_ne!(a.train_audio, c.train_audio);
    }

    #[test]
    fn trial_counts_and_labels() {
        let d = small().generate().unwrap();
        for split in [&d.dev, &d.eval] {
            assert_eq!(split.key.count(Label::Target), 10);
            assert_eq!(split.key.count(Label::Nontarget), 30);
            for (t, l) in split.key.entries() {
                let same = t.model[..7] == t.segment[..7];
                assert_eq!(same, *l == Label::Target, "{t}");
            }
        }
    }

    #[test]
    fn infeasible_counts_are_rejected() {
        // 4 speakers per split, 2 enroll × 2 test sessions → 16 target pairs
        let spec = SynthSpec { targets: 17, ..small() };
        assert!(matches!(spec.generate(), Err(Error::Config(_))));
        let spec = SynthSpec { n_speakers: 7, ..small() };
        assert!(spec.generate().is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = SynthSpec {
            face: ModalitySpec {
                mean: 0.5,
                between: CovSpec::Diagonal(vec![1.0, 2.0, 3.0]),
                within: CovSpec::Full(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]),
            },
            ..small()
        };
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<SynthSpec>(&text).unwrap(), spec);
    }
}
