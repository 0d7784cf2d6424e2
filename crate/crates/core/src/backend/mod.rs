//! Embedding backend: LDA projection, length normalization and
//! two-covariance PLDA.
//!
//! The pre-processing chain is fixed: centre on the LDA training mean,
//! project, then length-normalize. PLDA is trained and scored on the
//! normalized projections.

mod lda;
mod model;
mod plda;

pub use lda::{discriminant_directions, lda_train, project_and_normalize, scatter_matrices, LdaTransform, Projected, Scatter};
pub use model::{rows_by_id, score_trials, train_backend, BackendModel, BackendScorer};
pub use plda::{
    initialize as plda_initialize, llr as plda_llr, llr_bruteforce as plda_llr_bruteforce,
    log_likelihood as plda_log_likelihood, train_em as plda_train_em,
    train_em_traced as plda_train_em_traced, PldaModel, PldaScorer, PldaTrace,
};

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Labelled embeddings, one row per utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T: Real> {
    ids: Vec<String>,
    speakers: Vec<String>,
    vectors: DMatrix<T>,
}

impl<T: Real> EmbeddingSet<T> {
    pub fn new(ids: Vec<String>, speakers: Vec<String>, vectors: DMatrix<T>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Contract("embedding set is empty".into()));
        }
        if ids.len() != speakers.len() || ids.len() != vectors.nrows() {
            return Err(Error::Contract(format!(
                "{} ids, {} speaker labels, {} vectors",
                ids.len(),
                speakers.len(),
                vectors.nrows()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Contract(format!("duplicate utterance id {dup}")));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("embedding set has non-finite values".into()));
        }
        Ok(Self {
            ids,
            speakers,
            vectors,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn vectors(&self) -> &DMatrix<T> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Row indices grouped by speaker, in order of first appearance.
    pub fn speaker_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (row, spk) in self.speakers.iter().enumerate() {
            let slot = *index.entry(spk.as_str()).or_insert_with(|| {
                order.push((spk.clone(), Vec::new()));
                order.len() - 1
            });
            order[slot].1.push(row);
        }
        order
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.iter().collect::<HashSet<_>>().len()
    }

    /// Same ids and labels with replaced vectors (e.g. after projection).
    pub fn with_vectors(&self, vectors: DMatrix<T>) -> Result<Self> {
        Self::new(self.ids.clone(), self.speakers.clone(), vectors)
    }
}

/// Length-normalizes `v`; a zero vector stays zero and is flagged `true`.
pub fn length_normalize<T: Real>(v: &DVector<T>) -> (DVector<T>, bool) {
    let n = v.norm();
    if n == T::zero() {
        (v.clone(), true)
    } else {
        (v / n, false)
    }
}

/// Multi-segment enrollment: mean of the segment vectors, length-normalized.
pub fn enroll_template<T: Real>(vectors: &[DVector<T>]) -> Result<(DVector<T>, bool)> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Contract("enrollment needs at least one vector".into()))?;
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::Contract("enrollment vectors differ in dimension".into()));
    }
    let sum = vectors.iter().skip(1).fold(first.clone(), |acc, v| acc + v);
    Ok(length_normalize(&(sum / T::from_count(vectors.len()))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enrollment_examples() {
        let (v, zero) = enroll_template(&[DVector::from_vec(vec![3.0f64, 4.0])]).unwrap();
        assert!(!zero);
        assert_eq!(v.as_slice(), &[0.6, 0.8]);

        let a = DVector::from_vec(vec![1.0f64, -2.0, 0.5]);
        let (v, zero) = enroll_template(&[a.clone(), -a]).unwrap();
        assert!(zero);
        assert_eq!(v.norm(), 0.0);

        let (v, _) = enroll_template(&[
            DVector::from_vec(vec![1.0f64, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ])
        .unwrap();
        let h = 2f64.sqrt() / 2.0;
        assert!((v[0] - h).abs() < 1e-15 && (v[1] - h).abs() < 1e-15);

        assert!(enroll_template::<f64>(&[]).is_err());
    }

    #[test]
    fn embedding_set_validation() {
        let v = DMatrix::<f64>::zeros(2, 3);
        assert!(EmbeddingSet::new(vec!["a".into(), "a".into()], vec!["s".into(), "s".into()], v.clone()).is_err());
        assert!(EmbeddingSet::new(vec!["a".into()], vec!["s".into()], v.clone()).is_err());
        let mut bad = v.clone();
        bad[(0, 0)] = f64::INFINITY;
        assert!(EmbeddingSet::new(vec!["a".into(), "b".into()], vec!["s".into(), "t".into()], bad).is_err());
        let ok = EmbeddingSet::new(vec!["a".into(), "b".into()], vec!["t".into(), "s".into()], v).unwrap();
        assert_eq!(ok.num_speakers(), 2);
        assert_eq!(ok.speaker_groups()[0].0, "t");
    }
}
