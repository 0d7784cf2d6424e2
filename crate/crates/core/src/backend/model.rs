use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{enroll_template, lda_train, length_normalize, plda, EmbeddingSet, LdaTransform, PldaModel, PldaScorer};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trials::{ScoreSet, Trial, TrialList};

/// LDA followed by PLDA, trained on one labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendModel<T: Real> {
    pub lda: LdaTransform<T>,
    pub plda: PldaModel<T>,
}

pub fn train_backend<T: Real>(data: &EmbeddingSet<T>, lda_dim: usize, em_iterations: usize) -> Result<BackendModel<T>> {
    let lda = lda_train(data, lda_dim)?;
    let projected = super::project_and_normalize(&lda, data.vectors())?;
    let zeros = projected.zero.iter().filter(|&&z| z).count();
    if zeros > 0 {
        log::warn!("{zeros} training vectors projected to zero");
    }
    let plda = plda::train_em(&data.with_vectors(projected.vectors)?, em_iterations)?;
    Ok(BackendModel { lda, plda })
}

/// Prepared scorer: raw embeddings in, LLRs out.
pub struct BackendScorer<'a, T: Real> {
    model: &'a BackendModel<T>,
    plda: PldaScorer<T>,
}

impl<'a, T: Real> BackendScorer<'a, T> {
    pub fn new(model: &'a BackendModel<T>) -> Result<Self> {
        Ok(Self {
            model,
            plda: PldaScorer::new(&model.plda)?,
        })
    }

    /// Centre, project and length-normalize one raw embedding.
    pub fn preprocess(&self, raw: &DVector<T>) -> Result<DVector<T>> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite embedding".into()));
        }
        let (v, zero) = length_normalize(&self.model.lda.project(raw)?);
        if zero {
            log::warn!("embedding projected to the zero vector");
        }
        Ok(v)
    }

    /// Enrollment vector from one or more raw segment embeddings.
    pub fn enroll(&self, segments: &[DVector<T>]) -> Result<DVector<T>> {
        let projected = segments
            .iter()
            .map(|s| self.preprocess(s))
            .collect::<Result<Vec<_>>>()?;
        if projected.len() == 1 {
            return Ok(projected.into_iter().next().expect("one segment"));
        }
        let (v, zero) = enroll_template(&projected)?;
        if zero {
            log::warn!("enrollment segments cancel to the zero vector");
        }
        Ok(v)
    }

    pub fn llr(&self, enroll: &DVector<T>, test: &DVector<T>) -> T {
        self.plda.llr_whitened(&self.plda.whiten(enroll), &self.plda.whiten(test))
    }
}

/// Scores every trial. `enroll` maps model ids to raw segment embeddings;
/// `test` maps segment ids to raw embeddings.
pub fn score_trials<T: Real>(
    model: &BackendModel<T>,
    enroll: &HashMap<String, Vec<DVector<T>>>,
    test: &HashMap<String, DVector<T>>,
    trials: &TrialList,
    system_id: &str,
) -> Result<ScoreSet<T>> {
    let scorer = BackendScorer::new(model)?;
    let mut models: Vec<&String> = trials.trials().iter().map(|t| &t.model).collect();
    models.sort();
    models.dedup();
    let mut segments: Vec<&String> = trials.trials().iter().map(|t| &t.segment).collect();
    segments.sort();
    segments.dedup();

    let whitened_models: HashMap<&str, DVector<T>> = models
        .par_iter()
        .map(|m| {
            let segs = enroll
                .get(m.as_str())
                .ok_or_else(|| Error::Contract(format!("no enrollment embeddings for model {m}")))?;
            Ok((m.as_str(), scorer.plda.whiten(&scorer.enroll(segs)?)))
        })
        .collect::<Result<_>>()?;
    let whitened_tests: HashMap<&str, DVector<T>> = segments
        .par_iter()
        .map(|s| {
            let raw = test
                .get(s.as_str())
                .ok_or_else(|| Error::Contract(format!("no test embedding for segment {s}")))?;
            Ok((s.as_str(), scorer.plda.whiten(&scorer.preprocess(raw)?)))
        })
        .collect::<Result<_>>()?;

    let entries: Vec<(Trial, T)> = trials
        .trials()
        .par_iter()
        .map(|t| {
            let llr = scorer
                .plda
                .llr_whitened(&whitened_models[t.model.as_str()], &whitened_tests[t.segment.as_str()]);
            (t.clone(), llr)
        })
        .collect();
    ScoreSet::new(system_id, entries)
}

/// Rows of `vectors` keyed by `ids`.
pub fn rows_by_id<T: Real>(ids: &[String], vectors: &DMatrix<T>) -> HashMap<String, DVector<T>> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), vectors.row(i).transpose()))
        .collect()
}
