//! Trials, keys and per-system score sets.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// An (enrollment model, test segment) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trial {
    pub model: String,
    pub segment: String,
}

impl Trial {
    pub fn new(model: impl Into<String>, segment: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            segment: segment.into(),
        }
    }
}

impl fmt::Display for Trial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.model, self.segment)
    }
}

fn index_unique<'a>(trials: impl Iterator<Item = &'a Trial>, what: &str) -> Result<HashMap<Trial, usize>> {
    let mut index = HashMap::new();
    for (i, t) in trials.enumerate() {
        if index.insert(t.clone(), i).is_some() {
            return Err(Error::Contract(format!("duplicate trial {t} in {what}")));
        }
    }
    Ok(index)
}

/// Ordered list of unique trials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialList {
    trials: Vec<Trial>,
}

impl TrialList {
    pub fn new(trials: Vec<Trial>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Contract("trial list is empty".into()));
        }
        index_unique(trials.iter(), "trial list")?;
        Ok(Self { trials })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Target,
    Nontarget,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Target => "target",
            Label::Nontarget => "nontarget",
        }
    }

    /// Case-exact parse of `target` / `nontarget`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "target" => Some(Label::Target),
            "nontarget" => Some(Label::Nontarget),
            _ => None,
        }
    }
}

/// Ground truth for a set of trials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialKey {
    entries: Vec<(Trial, Label)>,
    index: HashMap<Trial, usize>,
}

impl TrialKey {
    pub fn new(entries: Vec<(Trial, Label)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Contract("trial key is empty".into()));
        }
        let index = index_unique(entries.iter().map(|(t, _)| t), "key")?;
        Ok(Self { entries, index })
    }

    pub fn entries(&self) -> &[(Trial, Label)] {
        &self.entries
    }

    pub fn label(&self, trial: &Trial) -> Option<Label> {
        self.index.get(trial).map(|&i| self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|(_, l)| *l == label).count()
    }

    pub fn trial_list(&self) -> TrialList {
        TrialList {
            trials: self.entries.iter().map(|(t, _)| t.clone()).collect(),
        }
    }
}

/// Scores of one system, at most one per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet<T: Real> {
    system_id: String,
    entries: Vec<(Trial, T)>,
    index: HashMap<Trial, usize>,
}

impl<T: Real> ScoreSet<T> {
    pub fn new(system_id: impl Into<String>, entries: Vec<(Trial, T)>) -> Result<Self> {
        let system_id = system_id.into();
        if let Some((t, s)) = entries.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::Contract(format!("system {system_id}: non-finite score {s} for {t}")));
        }
        let index = index_unique(entries.iter().map(|(t, _)| t), &format!("scores of {system_id}"))?;
        Ok(Self {
            system_id,
            entries,
            index,
        })
    }

    pub fn system_id(&self) -> &str {
        &self.system_id
    }

    pub fn with_system_id(mut self, id: impl Into<String>) -> Self {
        self.system_id = id.into();
        self
    }

    pub fn entries(&self) -> &[(Trial, T)] {
        &self.entries
    }

    pub fn get(&self, trial: &Trial) -> Option<T> {
        self.index.get(trial).map(|&i| self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Splits the scores into (targets, nontargets) following the key.
    /// Every keyed trial must be scored; scores outside the key are ignored.
    pub fn split_by_key(&self, key: &TrialKey) -> Result<(Vec<T>, Vec<T>)> {
        let mut targets = Vec::new();
        let mut nontargets = Vec::new();
        let mut missing = Vec::new();
        for (trial, label) in key.entries() {
            match (self.get(trial), label) {
                (Some(s), Label::Target) => targets.push(s),
                (Some(s), Label::Nontarget) => nontargets.push(s),
                (None, _) => missing.push(trial.to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingScores(missing));
        }
        Ok((targets, nontargets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_rejected() {
        let t = Trial::new("m", "s");
        assert!(TrialList::new(vec![t.clone(), t.clone()]).is_err());
        assert!(TrialList::new(vec![]).is_err());
        assert!(TrialKey::new(vec![(t.clone(), Label::Target), (t.clone(), Label::Nontarget)]).is_err());
        assert!(ScoreSet::new("a", vec![(t.clone(), 1.0), (t, 2.0)]).is_err());
    }

    #[test]
    fn split_reports_missing_trials() {
        let key = TrialKey::new(vec![
            (Trial::new("m", "a"), Label::Target),
            (Trial::new("m", "b"), Label::Nontarget),
        ])
        .unwrap();
        let scores = ScoreSet::new("s", vec![(Trial::new("m", "a"), 1.0f64), (Trial::new("x", "y"), 0.0)]).unwrap();
        match scores.split_by_key(&key) {
            Err(Error::MissingScores(m)) => assert_eq!(m, vec!["m/b".to_string()]),
            other => panic!("{other:?}"),
        }
        let scores = ScoreSet::new("s", vec![(Trial::new("m", "b"), -1.0f64), (Trial::new("m", "a"), 1.0)]).unwrap();
        assert_eq!(scores.split_by_key(&key).unwrap(), (vec![1.0], vec![-1.0]));
    }

    #[test]
    fn labels_are_case_exact() {
        assert_eq!(Label::parse("target"), Some(Label::Target));
        assert_eq!(Label::parse("TARGET"), None);
        assert_eq!(Label::parse("nontarget"), Some(Label::Nontarget));
    }
}
