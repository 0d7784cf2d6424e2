//! Detection metrics: ROC sweep, EER, normalized DCF and DET export.

use serde::{Deserialize, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trials::{ScoreSet, TrialKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.05,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::Config(format!("p_target must lie in (0, 1), got {}", self.p_target)));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) || !self.c_miss.is_finite() || !self.c_fa.is_finite() {
            return Err(Error::Config("detection costs must be positive and finite".into()));
        }
        Ok(())
    }

    /// Bayes decision threshold on calibrated LLRs.
    pub fn bayes_threshold(&self) -> f64 {
        (self.c_fa * (1.0 - self.p_target) / (self.c_miss * self.p_target)).ln()
    }

    /// Cost of the best trivial system (accept all or reject all).
    pub fn normalizer(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }

    pub fn normalized_cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        (self.c_miss * p_miss * self.p_target + self.c_fa * p_fa * (1.0 - self.p_target)) / self.normalizer()
    }
}

/// Error rates at every distinct score, plus `+inf`; a trial is accepted
/// when its score is `>=` the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve<T: Real> {
    pub thresholds: Vec<T>,
    pub p_miss: Vec<f64>,
    pub p_fa: Vec<f64>,
}

impl<T: Real> RocCurve<T> {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.p_miss.iter().copied().zip(self.p_fa.iter().copied())
    }
}

fn sorted<T: Real>(v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    v
}

/// ROC from raw target and nontarget scores.
pub fn roc_from_scores<T: Real>(targets: &[T], nontargets: &[T]) -> Result<RocCurve<T>> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Contract(format!(
            "ROC needs both classes, got {} targets and {} nontargets",
            targets.len(),
            nontargets.len()
        )));
    }
    if targets.iter().chain(nontargets).any(|s| !s.is_finite()) {
        return Err(Error::Contract("non-finite score".into()));
    }
    let tar = sorted(targets);
    let non = sorted(nontargets);
    let (nt, nn) = (tar.len() as f64, non.len() as f64);

    let mut all = tar.clone();
    all.extend_from_slice(&non);
    let mut all = sorted(&all);
    all.dedup();

    let mut curve = RocCurve {
        thresholds: Vec::with_capacity(all.len() + 1),
        p_miss: Vec::with_capacity(all.len() + 1),
        p_fa: Vec::with_capacity(all.len() + 1),
    };
    // misses: targets strictly below the threshold
    let (mut below_t, mut below_n) = (0usize, 0usize);
    for &theta in &all {
        while below_t < tar.len() && tar[below_t] < theta {
            below_t += 1;
        }
        while below_n < non.len() && non[below_n] < theta {
            below_n += 1;
        }
        curve.thresholds.push(theta);
        curve.p_miss.push(below_t as f64 / nt);
        curve.p_fa.push((non.len() - below_n) as f64 / nn);
    }
    curve.thresholds.push(T::INFINITY);
    curve.p_miss.push(1.0);
    curve.p_fa.push(0.0);
    Ok(curve)
}

pub fn roc_points<T: Real>(scores: &ScoreSet<T>, key: &TrialKey) -> Result<RocCurve<T>> {
    let (t, n) = scores.split_by_key(key)?;
    roc_from_scores(&t, &n)
}

/// Equal error rate in percent, by linear interpolation between the two
/// operating points that bracket `p_miss = p_fa`.
pub fn eer<T: Real>(curve: &RocCurve<T>) -> f64 {
    let diff = |i: usize| curve.p_miss[i] - curve.p_fa[i];
    let Some(i) = (0..curve.len()).find(|&i| diff(i) >= 0.0) else {
        return 100.0 * curve.p_miss.last().copied().unwrap_or(0.0);
    };
    if diff(i) == 0.0 || i == 0 {
        return 100.0 * curve.p_miss[i];
    }
    let (d0, d1) = (diff(i - 1), diff(i));
    let frac = -d0 / (d1 - d0);
    let (m0, m1) = (curve.p_miss[i - 1], curve.p_miss[i]);
    100.0 * (m0 + frac * (m1 - m0))
}

pub fn min_dcf<T: Real>(curve: &RocCurve<T>, params: &DcfParams) -> f64 {
    curve
        .points()
        .map(|(m, f)| params.normalized_cost(m, f))
        .fold(f64::INFINITY, f64::min)
}

/// Normalized cost at the Bayes threshold, from per-class LLRs.
pub fn act_dcf_from_scores<T: Real>(targets: &[T], nontargets: &[T], params: &DcfParams) -> Result<f64> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Contract("actDCF needs both classes".into()));
    }
    let beta = params.bayes_threshold();
    let misses = targets.iter().filter(|s| s.to_f64_lossy() < beta).count();
    let fas = nontargets.iter().filter(|s| s.to_f64_lossy() >= beta).count();
    Ok(params.normalized_cost(
        misses as f64 / targets.len() as f64,
        fas as f64 / nontargets.len() as f64,
    ))
}

pub fn act_dcf<T: Real>(llrs: &ScoreSet<T>, key: &TrialKey, params: &DcfParams) -> Result<f64> {
    let (t, n) = llrs.split_by_key(key)?;
    act_dcf_from_scores(&t, &n, params)
}

pub const DET_CLAMP: f64 = 1e-6;

/// Inverse standard normal CDF.
pub fn probit(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// DET coordinates `(probit(p_fa), probit(p_miss))`, with rates clamped to
/// `[1e-6, 1 - 1e-6]`.
pub fn det_points<T: Real>(curve: &RocCurve<T>) -> Vec<(f64, f64)> {
    let c = |p: f64| probit(p.clamp(DET_CLAMP, 1.0 - DET_CLAMP));
    curve.points().map(|(m, f)| (c(f), c(m))).collect()
}

fn round_to<S: Serializer>(v: f64, digits: i32, s: S) -> std::result::Result<S::Ok, S::Error> {
    let scale = 10f64.powi(digits);
    s.serialize_f64((v * scale).round() / scale)
}

fn two_decimals<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    round_to(*v, 2, s)
}

fn three_decimals<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    round_to(*v, 3, s)
}

/// Summary metrics for one score set. Values are held at full precision;
/// serialization rounds EER to 2 and DCFs to 3 decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(serialize_with = "two_decimals")]
    pub eer_percent: f64,
    #[serde(serialize_with = "three_decimals")]
    pub min_dcf: f64,
    #[serde(serialize_with = "three_decimals")]
    pub act_dcf: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub params: DcfParams,
}

pub fn evaluate_scores<T: Real>(targets: &[T], nontargets: &[T], params: &DcfParams) -> Result<EvalReport> {
    params.validate()?;
    let curve = roc_from_scores(targets, nontargets)?;
    Ok(EvalReport {
        eer_percent: eer(&curve),
        min_dcf: min_dcf(&curve, params),
        act_dcf: act_dcf_from_scores(targets, nontargets, params)?,
        n_target: targets.len(),
        n_nontarget: nontargets.len(),
        params: *params,
    })
}

pub fn evaluate<T: Real>(scores: &ScoreSet<T>, key: &TrialKey, params: &DcfParams) -> Result<EvalReport> {
    let (t, n) = scores.split_by_key(key)?;
    evaluate_scores(&t, &n, params)
}
