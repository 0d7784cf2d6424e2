//! Score calibration and fusion by prior-weighted logistic regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Real};
use crate::trials::{Label, ScoreSet, Trial, TrialKey};

pub const DEFAULT_PRIOR: f64 = 0.05;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 500;

/// Affine map from per-system scores to an LLR.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel<T: Real> {
    pub system_ids: Vec<String>,
    pub weights: Vec<T>,
    pub bias: T,
    pub prior: T,
}

impl<T: Real> CalibrationModel<T> {
    pub fn new(system_ids: Vec<String>, weights: Vec<T>, bias: T, prior: T) -> Result<Self> {
        if system_ids.is_empty() || system_ids.len() != weights.len() {
            return Err(Error::Contract(format!(
                "{} system ids for {} weights",
                system_ids.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::Contract("calibration parameters must be finite".into()));
        }
        check_prior(prior)?;
        Ok(Self {
            system_ids,
            weights,
            bias,
            prior,
        })
    }

    pub fn llr(&self, scores: &[T]) -> T {
        self.weights
            .iter()
            .zip(scores)
            .fold(self.bias, |acc, (&w, &s)| acc + w * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub prior: f64,
    /// Optional L2 penalty on the weights (not the bias).
    pub ridge: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            prior: DEFAULT_PRIOR,
            ridge: 0.0,
            max_iterations: MAX_ITERATIONS,
            tolerance: GRADIENT_TOLERANCE,
        }
    }
}

fn check_prior<T: Real>(prior: T) -> Result<()> {
    if !(prior > T::zero() && prior < T::one()) {
        return Err(Error::Config(format!("prior must lie in (0, 1), got {prior}")));
    }
    Ok(())
}

/// Trials in `key` order with one column per system.
pub struct Design<T: Real> {
    pub trials: Vec<Trial>,
    pub scores: DMatrix<T>,
    pub labels: Vec<Label>,
}

/// Gathers the score matrix for every keyed trial; any unscored trial is an
/// error listing the offenders.
pub fn design_matrix<T: Real>(systems: &[ScoreSet<T>], key: &TrialKey) -> Result<Design<T>> {
    if systems.is_empty() {
        return Err(Error::Contract("no score sets given".into()));
    }
    let mut missing = Vec::new();
    let mut scores = DMatrix::zeros(key.len(), systems.len());
    for (i, (trial, _)) in key.entries().iter().enumerate() {
        for (j, sys) in systems.iter().enumerate() {
            match sys.get(trial) {
                Some(s) => scores[(i, j)] = s,
                None => missing.push(format!("{trial} ({})", sys.system_id())),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }
    Ok(Design {
        trials: key.entries().iter().map(|(t, _)| t.clone()).collect(),
        scores,
        labels: key.entries().iter().map(|(_, l)| *l).collect(),
    })
}

struct Problem<'a, T: Real> {
    scores: &'a DMatrix<T>,
    labels: &'a [Label],
    target_weight: T,
    nontarget_weight: T,
    logit_prior: T,
    ridge: T,
}

impl<'a, T: Real> Problem<'a, T> {
    fn new(design: &'a Design<T>, prior: T, ridge: T) -> Result<Self> {
        let nt = design.labels.iter().filter(|&&l| l == Label::Target).count();
        let nn = design.labels.len() - nt;
        if nt == 0 || nn == 0 {
            return Err(Error::Contract(format!(
                "calibration needs both classes, got {nt} targets and {nn} nontargets"
            )));
        }
        Ok(Self {
            scores: &design.scores,
            labels: &design.labels,
            target_weight: prior / T::from_count(nt),
            nontarget_weight: (T::one() - prior) / T::from_count(nn),
            logit_prior: (prior / (T::one() - prior)).ln(),
            ridge,
        })
    }

    fn dim(&self) -> usize {
        self.scores.ncols() + 1
    }

    /// Log-odds including the prior offset for trial `i`.
    fn logit(&self, params: &DVector<T>, i: usize) -> T {
        let s = self.scores.ncols();
        let mut f = params[s] + self.logit_prior;
        for j in 0..s {
            f += params[j] * self.scores[(i, j)];
        }
        f
    }

    fn penalty(&self, params: &DVector<T>) -> T {
        let s = self.scores.ncols();
        T::lit(0.5) * self.ridge * params.rows(0, s).norm_squared()
    }

    fn objective(&self, params: &DVector<T>) -> T {
        let mut acc = T::zero();
        for (i, &label) in self.labels.iter().enumerate() {
            let z = self.logit(params, i);
            acc += match label {
                Label::Target => self.target_weight * softplus(-z),
                Label::Nontarget => self.nontarget_weight * softplus(z),
            };
        }
        acc + self.penalty(params)
    }

    fn gradient_hessian(&self, params: &DVector<T>) -> (DVector<T>, DMatrix<T>) {
        let s = self.scores.ncols();
        let n = self.dim();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        let mut x = DVector::zeros(n);
        x[s] = T::one();
        for (i, &label) in self.labels.iter().enumerate() {
            for j in 0..s {
                x[j] = self.scores[(i, j)];
            }
            let z = self.logit(params, i);
            let p = sigmoid(z);
            let (dz, weight) = match label {
                Label::Target => (p - T::one(), self.target_weight),
                Label::Nontarget => (p, self.nontarget_weight),
            };
            g.axpy(weight * dz, &x, T::one());
            h.ger(weight * p * (T::one() - p), &x, &x, T::one());
        }
        for j in 0..s {
            g[j] += self.ridge * params[j];
            h[(j, j)] += self.ridge;
        }
        (g, h)
    }
}

fn newton_direction<T: Real>(g: &DVector<T>, h: &DMatrix<T>) -> DVector<T> {
    let scale = h.diagonal().amax().max(T::default_epsilon());
    let mut damping = T::zero();
    loop {
        let mut hd = h.clone();
        for i in 0..hd.nrows() {
            hd[(i, i)] += damping;
        }
        if let Some(chol) = hd.cholesky() {
            return -chol.solve(g);
        }
        damping = if damping == T::zero() {
            scale * T::lit(1e-12)
        } else {
            damping * T::lit(10.0)
        };
    }
}

/// Result of [`train`] with the optimizer trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub model: CalibrationModel<T>,
    pub objective: T,
    pub iterations: usize,
}

/// Damped Newton with Armijo backtracking from `start` = (weights…, bias).
pub fn train_from<T: Real>(
    systems: &[ScoreSet<T>],
    key: &TrialKey,
    options: &TrainOptions,
    start: Option<&[T]>,
) -> Result<TrainOutcome<T>> {
    let prior = T::lit(options.prior);
    check_prior(prior)?;
    if options.ridge < 0.0 || !options.ridge.is_finite() {
        return Err(Error::Config("ridge must be non-negative".into()));
    }
    let design = design_matrix(systems, key)?;
    let problem = Problem::new(&design, prior, T::lit(options.ridge))?;
    let n = problem.dim();
    let mut params = match start {
        Some(s) if s.len() == n => DVector::from_column_slice(s),
        Some(s) => {
            return Err(Error::Contract(format!("start has {} parameters, expected {n}", s.len())));
        }
        None => DVector::zeros(n),
    };
    let tolerance = T::lit(options.tolerance);
    let mut value = problem.objective(&params);
    for iteration in 0..=options.max_iterations {
        let (g, h) = problem.gradient_hessian(&params);
        if g.amax() < tolerance {
            let s = n - 1;
            let model = CalibrationModel::new(
                systems.iter().map(|x| x.system_id().to_string()).collect(),
                params.rows(0, s).iter().copied().collect(),
                params[s],
                prior,
            )?;
            return Ok(TrainOutcome {
                model,
                objective: value,
                iterations: iteration,
            });
        }
        if iteration == options.max_iterations {
            break;
        }
        let dir = newton_direction(&g, &h);
        let slope = g.dot(&dir);
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &params + &dir * step;
            let v = problem.objective(&candidate);
            if v <= value + T::lit(1e-4) * step * slope {
                params = candidate;
                value = v;
                accepted = true;
                break;
            }
            step *= T::lit(0.5);
        }
        if !accepted {
            // At the floating-point floor: accept the full step only if it
            // does not increase the objective.
            let candidate = &params + &dir;
            let v = problem.objective(&candidate);
            if v <= value {
                params = candidate;
                value = v;
            }
        }
    }
    Err(Error::Numerical(format!(
        "calibration did not converge in {} iterations",
        options.max_iterations
    )))
}

pub fn train<T: Real>(systems: &[ScoreSet<T>], key: &TrialKey, options: &TrainOptions) -> Result<CalibrationModel<T>> {
    train_from(systems, key, options, None).map(|o| o.model)
}

/// Value of the training objective for a given model.
pub fn objective<T: Real>(model: &CalibrationModel<T>, systems: &[ScoreSet<T>], key: &TrialKey, ridge: f64) -> Result<T> {
    let design = design_matrix(systems, key)?;
    let problem = Problem::new(&design, model.prior, T::lit(ridge))?;
    let mut params: DVector<T> = DVector::from_iterator(model.weights.len(), model.weights.iter().copied());
    params = params.push(model.bias);
    Ok(problem.objective(&params))
}

/// Fused LLR per trial, in the trial order of the first system.
pub fn apply<T: Real>(model: &CalibrationModel<T>, systems: &[ScoreSet<T>], output_id: &str) -> Result<ScoreSet<T>> {
    if systems.len() != model.weights.len() {
        return Err(Error::Contract(format!(
            "model has {} systems, got {} score sets",
            model.weights.len(),
            systems.len()
        )));
    }
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(systems[0].len());
    let mut row = vec![T::zero(); systems.len()];
    for (trial, first) in systems[0].entries() {
        row[0] = *first;
        let mut complete = true;
        for (j, sys) in systems.iter().enumerate().skip(1) {
            match sys.get(trial) {
                Some(s) => row[j] = s,
                None => {
                    missing.push(format!("{trial} ({})", sys.system_id()));
                    complete = false;
                }
            }
        }
        if complete {
            out.push((trial.clone(), model.llr(&row)));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }
    ScoreSet::new(output_id, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(id: &str, scores: &[f64]) -> ScoreSet<f64> {
        ScoreSet::new(
            id,
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| (Trial::new("m", format!("t{i}")), s))
                .collect(),
        )
        .unwrap()
    }

    fn key(labels: &[bool]) -> TrialKey {
        TrialKey::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &t)| (Trial::new("m", format!("t{i}")), if t { Label::Target } else { Label::Nontarget }))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn apply_examples() {
        let m = CalibrationModel::new(vec!["a".into()], vec![1.0], 0.0, 0.05).unwrap();
        let s = set("a", &[0.5, -2.0]);
        assert_eq!(apply(&m, std::slice::from_ref(&s), "out").unwrap().entries(), s.entries());

        let m = CalibrationModel::new(vec!["a".into(), "b".into()], vec![0.5, 0.5], 0.0, 0.05).unwrap();
        let out = apply(&m, &[set("a", &[2.0]), set("b", &[4.0])], "fused").unwrap();
        assert_eq!(out.entries()[0].1, 3.0);
        assert!(matches!(apply(&m, &[set("a", &[2.0, 1.0]), set("b", &[4.0])], "f"), Err(Error::MissingScores(_))));
    }

    #[test]
    fn overlapping_classes_converge() {
        let s = set("a", &[0.0, 1.0, 2.0, 0.5, 1.5, 0.2]);
        let k = key(&[true, true, false, false, true, false]);
        let out = train_from(std::slice::from_ref(&s), &k, &TrainOptions::default(), None).unwrap();
        let (g, _) = {
            let d = design_matrix(&[s], &k).unwrap();
            let p = Problem::new(&d, 0.05, 0.0).unwrap();
            p.gradient_hessian(&DVector::from_vec(vec![out.model.weights[0], out.model.bias]))
        };
        assert!(g.amax() < 1e-8);
    }

    #[test]
    fn ridge_bounds_separable_data() {
        let s = set("a", &[3.0, 4.0, -1.0, -2.0]);
        let k = key(&[true, true, false, false]);
        let opts = TrainOptions {
            ridge: 1e-2,
            ..Default::default()
        };
        let m = train(&[s], &k, &opts).unwrap();
        assert!(m.weights[0] > 0.0 && m.weights[0] < 100.0);
        let capped = TrainOptions {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(matches!(
            train(&[set("a", &[3.0, 4.0, -1.0, -2.0])], &k, &capped),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn one_class_and_missing_are_contract_errors() {
        let s = set("a", &[1.0, 2.0]);
        assert!(matches!(train(std::slice::from_ref(&s), &key(&[true, true]), &TrainOptions::default()), Err(Error::Contract(_))));
        assert!(matches!(
            train(&[set("a", &[1.0])], &key(&[true, false]), &TrainOptions::default()),
            Err(Error::MissingScores(_))
        ));
        let bad = TrainOptions {
            prior: 1.0,
            ..Default::default()
        };
        assert!(matches!(train(&[s], &key(&[true, false]), &bad), Err(Error::Config(_))));
    }
}
