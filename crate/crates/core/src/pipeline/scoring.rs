//! Trial scoring from on-disk inputs, shared by the pipeline and the CLI.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::backend::{score_trials, BackendModel};
use crate::embedder::{speech_features, AudioChain, ToyEmbedder};
use crate::error::{Error, Result};
use crate::face::{gate_enrollment, template_from, template_score, BoundingBox, Detection, FaceTemplate, MatchPolicy};
use crate::frontend::wav::read_wav;
use crate::io::{BoxRecord, DetectionRecord, EmbeddingTable};
use crate::scalar::Real;
use crate::trials::{ScoreSet, Trial, TrialList};

/// LLRs for every trial from raw enrollment and test embeddings.
pub fn score_embeddings<T: Real>(
    model: &BackendModel<T>,
    enroll: &EmbeddingTable<T>,
    enroll_map: Option<&[(String, String)]>,
    test: &EmbeddingTable<T>,
    trials: &TrialList,
    system_id: &str,
) -> Result<ScoreSet<T>> {
    score_trials(model, &enroll.enrollment(enroll_map)?, &test.by_id(), trials, system_id)
}

/// Face scores plus the trials that could not be scored because a template
/// was missing or empty after gating.
pub struct FaceScores<T: Real> {
    pub scores: ScoreSet<T>,
    pub missing: Vec<Trial>,
}

fn resolve_detections<T: Real>(
    records: &[DetectionRecord<T>],
    embeddings: &EmbeddingTable<T>,
) -> Result<BTreeMap<String, Vec<Detection<T>>>> {
    let mut by_video: BTreeMap<String, Vec<Detection<T>>> = BTreeMap::new();
    for r in records {
        let embedding = embeddings
            .get(&r.embedding_ref)
            .ok_or_else(|| Error::Contract(format!("detection refers to unknown embedding {:?}", r.embedding_ref)))?;
        by_video.entry(r.video.clone()).or_default().push(Detection {
            frame: r.frame,
            bbox: r.bbox,
            embedding,
            id: r.embedding_ref.clone(),
        });
    }
    Ok(by_video)
}

/// Enrollment templates after frame selection and box gating, per video.
pub fn enrollment_templates<T: Real>(
    records: &[DetectionRecord<T>],
    boxes: &[BoxRecord<T>],
    embeddings: &EmbeddingTable<T>,
    policy: &MatchPolicy,
) -> Result<BTreeMap<String, Option<FaceTemplate<T>>>> {
    let detections = resolve_detections(records, embeddings)?;
    let mut given: BTreeMap<&str, Vec<(usize, BoundingBox<T>)>> = BTreeMap::new();
    for b in boxes {
        given.entry(b.video.as_str()).or_default().push((b.frame, b.bbox));
    }
    let threshold = T::lit(policy.iou_threshold);
    let videos: Vec<(&String, &Vec<Detection<T>>)> = detections.iter().collect();
    let built: Vec<(String, Option<FaceTemplate<T>>)> = videos
        .par_iter()
        .map(|(video, dets)| {
            let template = match given.get(video.as_str()) {
                Some(g) => gate_enrollment(dets, g, threshold)?,
                None => None,
            };
            Ok(((*video).clone(), template))
        })
        .collect::<Result<_>>()?;
    Ok(built.into_iter().collect())
}

pub fn test_templates<T: Real>(
    records: &[DetectionRecord<T>],
    embeddings: &EmbeddingTable<T>,
) -> Result<BTreeMap<String, Option<FaceTemplate<T>>>> {
    resolve_detections(records, embeddings)?
        .into_iter()
        .map(|(video, dets)| {
            let refs: Vec<&Detection<T>> = dets.iter().collect();
            Ok((video, template_from(&refs)?))
        })
        .collect()
}

pub fn score_faces<T: Real>(
    embeddings: &EmbeddingTable<T>,
    enroll_detections: &[DetectionRecord<T>],
    enroll_boxes: &[BoxRecord<T>],
    test_detections: &[DetectionRecord<T>],
    trials: &TrialList,
    policy: &MatchPolicy,
    system_id: &str,
) -> Result<FaceScores<T>> {
    policy.validate()?;
    let enroll = enrollment_templates(enroll_detections, enroll_boxes, embeddings, policy)?;
    let test = test_templates(test_detections, embeddings)?;
    let results: Vec<(Trial, Option<T>)> = trials
        .trials()
        .par_iter()
        .map(|t| {
            let e = enroll.get(&t.model).and_then(Option::as_ref);
            let s = test.get(&t.segment).and_then(Option::as_ref);
            let score = match (e, s) {
                (Some(e), Some(s)) => Some(template_score(e, s, policy)?),
                _ => None,
            };
            Ok((t.clone(), score))
        })
        .collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(results.len());
    let mut missing = Vec::new();
    for (t, s) in results {
        match s {
            Some(s) => entries.push((t, s)),
            None => missing.push(t),
        }
    }
    if !missing.is_empty() {
        log::warn!("{system_id}: {} trial(s) have no usable face template", missing.len());
    }
    Ok(FaceScores {
        scores: ScoreSet::new(system_id, entries)?,
        missing,
    })
}

/// Reads an `id<TAB>path` list; relative paths resolve against the list's
/// directory.
pub fn load_wav_list(path: &Path) -> Result<Vec<(String, std::path::PathBuf)>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(crate::io::load_pairs(path)?
        .into_iter()
        .map(|(id, p)| {
            let p = std::path::PathBuf::from(p);
            let full = if p.is_absolute() { p } else { base.join(p) };
            (id, full)
        })
        .collect())
}

/// Audio chain and toy embedder over a list of waveforms.
pub fn embed_wavs<T: Real>(list: &[(String, std::path::PathBuf)], chain: &AudioChain, seed: u64) -> Result<EmbeddingTable<T>> {
    let rate = chain.target_rate.unwrap_or(crate::frontend::NARROWBAND_RATE);
    let embedder = ToyEmbedder::<T>::new(crate::frontend::FrontendConfig::for_rate(rate).num_ceps, seed);
    let rows: Vec<nalgebra::DVector<T>> = list
        .par_iter()
        .map(|(id, path)| {
            let audio = read_wav::<T>(path)?;
            let (features, _) = speech_features(&audio, chain)?;
            if features.is_empty() {
                return Err(Error::Contract(format!("{id}: no speech frames after VAD")));
            }
            embedder.embed(&features)
        })
        .collect::<Result<_>>()?;
    let dim = crate::embedder::EMBEDDING_DIM;
    let m = nalgebra::DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    EmbeddingTable::new(list.iter().map(|(id, _)| id.clone()).collect(), m)
}
