//! Two-covariance PLDA: x = y + ε with y ~ N(μ, B) shared by all sessions of a
//! speaker and ε ~ N(0, W) per session.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::EmbeddingSet;
use crate::error::{Error, Result};
use crate::scalar::Real;

const COLLAPSE_LOADING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel<T: Real> {
    pub mean: DVector<T>,
    /// Between-speaker covariance B (PSD).
    pub between: DMatrix<T>,
    /// Within-speaker covariance W (PD).
    pub within: DMatrix<T>,
}

fn symmetric_within<T: Real>(m: &DMatrix<T>, tol: f64) -> bool {
    let scale = m.amax().max(T::one());
    (m - m.transpose()).amax() <= T::lit(tol) * scale
}

impl<T: Real> PldaModel<T> {
    pub fn new(mean: DVector<T>, between: DMatrix<T>, within: DMatrix<T>) -> Result<Self> {
        let d = mean.len();
        if between.shape() != (d, d) || within.shape() != (d, d) {
            return Err(Error::Contract(format!("PLDA covariances must be {d}x{d}")));
        }
        if mean.iter().chain(between.iter()).chain(within.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("PLDA parameters must be finite".into()));
        }
        if !symmetric_within(&between, 1e-10) || !symmetric_within(&within, 1e-10) {
            return Err(Error::Contract("PLDA covariances must be symmetric".into()));
        }
        if within.clone().cholesky().is_none() {
            return Err(Error::Numerical("PLDA within-speaker covariance is not positive definite".into()));
        }
        let min_eig = SymmetricEigen::new(between.clone()).eigenvalues.min();
        if min_eig < -T::lit(1e-10) * between.amax().max(T::one()) {
            return Err(Error::Numerical("PLDA between-speaker covariance is not PSD".into()));
        }
        Ok(Self {
            mean,
            between,
            within,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_pair(&self, enroll: &DVector<T>, test: &DVector<T>) -> Result<()> {
        if enroll.len() != self.dim() || test.len() != self.dim() {
            return Err(Error::Contract(format!(
                "PLDA model has dimension {}, got vectors of {} and {}",
                self.dim(),
                enroll.len(),
                test.len()
            )));
        }
        if enroll.iter().chain(test.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite PLDA input".into()));
        }
        Ok(())
    }
}

/// Closed-form pair scorer. B and W are jointly diagonalized once
/// (Vᵀ W V = I, Vᵀ B V = diag ψ), after which the LLR separates into
/// independent 2×2 Gaussian problems per dimension.
#[derive(Debug, Clone)]
pub struct PldaScorer<T: Real> {
    mean: DVector<T>,
    /// Vᵀ, applied to centred vectors.
    transform: DMatrix<T>,
    constant: T,
    /// Coefficient of (u₁² + u₂²) per dimension.
    quad: DVector<T>,
    /// Coefficient of u₁·u₂ per dimension.
    cross: DVector<T>,
}

impl<T: Real> PldaScorer<T> {
    pub fn new(model: &PldaModel<T>) -> Result<Self> {
        let chol = model
            .within
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("PLDA within covariance is not positive definite".into()))?;
        let l = chol.l();
        let left = l
            .solve_lower_triangular(&model.between)
            .ok_or_else(|| Error::Numerical("triangular solve failed in PLDA".into()))?;
        let c = l
            .solve_lower_triangular(&left.transpose())
            .ok_or_else(|| Error::Numerical("triangular solve failed in PLDA".into()))?;
        let c = (&c + c.transpose()) * T::lit(0.5);
        let eig = SymmetricEigen::new(c);
        // Vᵀ = Uᵀ L⁻¹
        let d = model.dim();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::Numerical("triangular solve failed in PLDA".into()))?;
        let transform = eig.eigenvectors.transpose() * l_inv;

        let half = T::lit(0.5);
        let mut constant = T::zero();
        let mut quad = DVector::zeros(d);
        let mut cross = DVector::zeros(d);
        for i in 0..d {
            let psi = eig.eigenvalues[i].max(T::zero());
            let a = T::one() + psi;
            let det = T::one() + psi + psi;
            constant += a.ln() - half * det.ln();
            quad[i] = -half * psi * psi / (a * det);
            cross[i] = psi / det;
        }
        Ok(Self {
            mean: model.mean.clone(),
            transform,
            constant,
            quad,
            cross,
        })
    }

    /// Maps a vector into the jointly diagonal coordinates.
    pub fn whiten(&self, v: &DVector<T>) -> DVector<T> {
        &self.transform * (v - &self.mean)
    }

    /// LLR of already-whitened vectors (see [`PldaScorer::whiten`]).
    pub fn llr_whitened(&self, u1: &DVector<T>, u2: &DVector<T>) -> T {
        let mut acc = self.constant;
        for i in 0..u1.len() {
            let (a, b) = (u1[i], u2[i]);
            acc += self.quad[i] * (a * a + b * b) + self.cross[i] * (a * b);
        }
        acc
    }

    pub fn llr(&self, enroll: &DVector<T>, test: &DVector<T>) -> T {
        self.llr_whitened(&self.whiten(enroll), &self.whiten(test))
    }
}

/// Same-speaker vs different-speaker log-likelihood ratio of a pair.
pub fn llr<T: Real>(model: &PldaModel<T>, enroll: &DVector<T>, test: &DVector<T>) -> Result<T> {
    model.check_pair(enroll, test)?;
    Ok(PldaScorer::new(model)?.llr(enroll, test))
}

fn gaussian_log_density_lu<T: Real>(z: &DVector<T>, cov: &DMatrix<T>) -> Result<T> {
    let k = T::from_count(z.len());
    let lu = cov.clone().lu();
    let det = lu.determinant();
    if !(det > T::zero()) {
        return Err(Error::Numerical("covariance determinant is not positive".into()));
    }
    let sol = lu
        .solve(z)
        .ok_or_else(|| Error::Numerical("covariance is singular".into()))?;
    let two_pi = T::two_pi();
    Ok(-T::lit(0.5) * (k * two_pi.ln() + det.ln() + z.dot(&sol)))
}

/// Reference LLR from the explicit 2d-dimensional joint Gaussian (LU
/// determinant and solve). Intended for small d.
pub fn llr_bruteforce<T: Real>(model: &PldaModel<T>, enroll: &DVector<T>, test: &DVector<T>) -> Result<T> {
    model.check_pair(enroll, test)?;
    let d = model.dim();
    let total = &model.between + &model.within;
    let mut joint = DMatrix::zeros(2 * d, 2 * d);
    joint.view_mut((0, 0), (d, d)).copy_from(&total);
    joint.view_mut((d, d), (d, d)).copy_from(&total);
    joint.view_mut((0, d), (d, d)).copy_from(&model.between);
    joint.view_mut((d, 0), (d, d)).copy_from(&model.between);

    let e = enroll - &model.mean;
    let t = test - &model.mean;
    let mut stacked = DVector::zeros(2 * d);
    stacked.rows_mut(0, d).copy_from(&e);
    stacked.rows_mut(d, d).copy_from(&t);

    let same = gaussian_log_density_lu(&stacked, &joint)?;
    let diff = gaussian_log_density_lu(&e, &total)? + gaussian_log_density_lu(&t, &total)?;
    Ok(same - diff)
}

/// Sufficient statistics per speaker.
struct SpeakerStats<T: Real> {
    count: usize,
    mean: DVector<T>,
}

struct Stats<T: Real> {
    speakers: Vec<SpeakerStats<T>>,
    /// Σ over speakers of Σ_i (x_i − x̄_s)(x_i − x̄_s)ᵀ.
    within_scatter: DMatrix<T>,
    total: usize,
    dim: usize,
}

fn collect_stats<T: Real>(data: &EmbeddingSet<T>) -> Stats<T> {
    let x = data.vectors();
    let dim = data.dim();
    let mut within_scatter = DMatrix::zeros(dim, dim);
    let speakers = data
        .speaker_groups()
        .into_iter()
        .map(|(_, rows)| {
            let mean: DVector<T> = rows
                .iter()
                .fold(DVector::zeros(dim), |acc, &r| acc + x.row(r).transpose())
                / T::from_count(rows.len());
            for &r in &rows {
                let d = x.row(r).transpose() - &mean;
                within_scatter.ger(T::one(), &d, &d, T::one());
            }
            SpeakerStats {
                count: rows.len(),
                mean,
            }
        })
        .collect();
    Stats {
        speakers,
        within_scatter,
        total: data.len(),
        dim,
    }
}

fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

fn log_det<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    (0..l.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * T::lit(2.0)
}

fn marginal_log_likelihood<T: Real>(model: &PldaModel<T>, stats: &Stats<T>) -> Result<T> {
    let d = T::from_count(stats.dim);
    let half = T::lit(0.5);
    let w_chol = model
        .within
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("PLDA within covariance is not positive definite".into()))?;
    let w_logdet = log_det(&w_chol);
    let w_inv = w_chol.inverse();
    let mut ll = -half * (w_inv.component_mul(&stats.within_scatter)).sum();
    ll -= half * T::from_count(stats.total) * d * T::two_pi().ln();

    let mut by_count: BTreeMap<usize, (Cholesky<T, Dyn>, T)> = BTreeMap::new();
    for spk in &stats.speakers {
        let n = spk.count;
        if let Entry::Vacant(slot) = by_count.entry(n) {
            let m = &model.within + &model.between * T::from_count(n);
            let chol = m
                .cholesky()
                .ok_or_else(|| Error::Numerical("W + nB is not positive definite".into()))?;
            let ld = log_det(&chol);
            slot.insert((chol, ld));
        }
        let (chol, ld) = &by_count[&n];
        let diff = &spk.mean - &model.mean;
        let quad = diff.dot(&chol.solve(&diff));
        ll -= half * (T::from_count(n - 1) * w_logdet + *ld + T::from_count(n) * quad);
    }
    Ok(ll)
}

/// Marginal (observed-data) log-likelihood of `data` under `model`.
pub fn log_likelihood<T: Real>(model: &PldaModel<T>, data: &EmbeddingSet<T>) -> Result<T> {
    if data.dim() != model.dim() {
        return Err(Error::Contract("data and model dimensions differ".into()));
    }
    marginal_log_likelihood(model, &collect_stats(data))
}

/// EM starting point: μ = global mean, B = W = ½ · total covariance.
pub fn initialize<T: Real>(data: &EmbeddingSet<T>) -> PldaModel<T> {
    let x = data.vectors();
    let n = T::from_count(data.len());
    let mean: DVector<T> = x.row_sum().transpose() / n;
    let mut cov = DMatrix::zeros(data.dim(), data.dim());
    for r in 0..data.len() {
        let d = x.row(r).transpose() - &mean;
        cov.ger(T::one(), &d, &d, T::one());
    }
    let half_cov = symmetrize(&(cov / n)) * T::lit(0.5);
    PldaModel {
        mean,
        between: half_cov.clone(),
        within: half_cov,
    }
}

fn em_step<T: Real>(model: &PldaModel<T>, stats: &Stats<T>) -> Result<PldaModel<T>> {
    let dim = stats.dim;
    let num_spk = T::from_count(stats.speakers.len());
    let mut posteriors: Vec<(DVector<T>, DMatrix<T>)> = Vec::with_capacity(stats.speakers.len());
    // Posterior of y given n sessions with mean x̄:
    //   K = B (B + W/n)⁻¹, cov = B − K B, mean = μ + K (x̄ − μ)
    let mut gains: BTreeMap<usize, (DMatrix<T>, DMatrix<T>)> = BTreeMap::new();
    for spk in &stats.speakers {
        let n = spk.count;
        if let Entry::Vacant(slot) = gains.entry(n) {
            let g = &model.between + &model.within / T::from_count(n);
            let chol = g
                .cholesky()
                .ok_or_else(|| Error::Numerical("B + W/n is not positive definite".into()))?;
            // K = B G⁻¹ = (G⁻¹ B)ᵀ since both are symmetric.
            let gain = chol.solve(&model.between).transpose();
            let cov = symmetrize(&(&model.between - &gain * &model.between));
            slot.insert((gain, cov));
        }
        let (gain, cov) = &gains[&n];
        let post_mean = &model.mean + gain * (&spk.mean - &model.mean);
        posteriors.push((post_mean, cov.clone()));
    }

    let mean = posteriors
        .iter()
        .fold(DVector::zeros(dim), |acc, (m, _)| acc + m)
        / num_spk;
    let mut between = DMatrix::zeros(dim, dim);
    let mut within = stats.within_scatter.clone();
    for (spk, (post_mean, cov)) in stats.speakers.iter().zip(&posteriors) {
        let dm = post_mean - &mean;
        between += cov;
        between.ger(T::one(), &dm, &dm, T::one());
        let n = T::from_count(spk.count);
        let dx = &spk.mean - post_mean;
        within += cov * n;
        within.ger(n, &dx, &dx, T::one());
    }
    let between = symmetrize(&(between / num_spk));
    let mut within = symmetrize(&(within / T::from_count(stats.total)));

    if within.clone().cholesky().is_none() {
        let load = T::lit(COLLAPSE_LOADING) * within.trace().abs().max(T::default_epsilon()) / T::from_count(dim);
        log::warn!("PLDA within covariance collapsed; adding {load} diagonal loading");
        for i in 0..dim {
            within[(i, i)] += load;
        }
        if within.clone().cholesky().is_none() {
            return Err(Error::Numerical(
                "PLDA within covariance is not positive definite after regularization".into(),
            ));
        }
    }
    Ok(PldaModel {
        mean,
        between,
        within,
    })
}

/// A trained model plus the marginal log-likelihood before EM (index 0) and
/// after each iteration.
#[derive(Debug, Clone)]
pub struct PldaTrace<T: Real> {
    pub model: PldaModel<T>,
    pub log_likelihood: Vec<T>,
}

fn check_training_data<T: Real>(data: &EmbeddingSet<T>) -> Result<()> {
    let speakers = data.num_speakers();
    if speakers < 2 {
        return Err(Error::Contract(format!("PLDA training needs at least 2 speakers, got {speakers}")));
    }
    Ok(())
}

pub fn train_em_traced<T: Real>(data: &EmbeddingSet<T>, iterations: usize) -> Result<PldaTrace<T>> {
    check_training_data(data)?;
    let stats = collect_stats(data);
    let mut model = initialize(data);
    let mut trace = vec![marginal_log_likelihood(&model, &stats)?];
    for _ in 0..iterations {
        model = em_step(&model, &stats)?;
        trace.push(marginal_log_likelihood(&model, &stats)?);
    }
    Ok(PldaTrace {
        model,
        log_likelihood: trace,
    })
}

pub fn train_em<T: Real>(data: &EmbeddingSet<T>, iterations: usize) -> Result<PldaModel<T>> {
    check_training_data(data)?;
    let stats = collect_stats(data);
    let mut model = initialize(data);
    for _ in 0..iterations {
        model = em_step(&model, &stats)?;
    }
    Ok(model)
}
