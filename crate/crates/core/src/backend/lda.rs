use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{length_normalize, EmbeddingSet};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative diagonal loading added to the within-class scatter.
const WITHIN_LOADING: f64 = 1e-6;

/// Class scatter matrices normalized by the number of vectors. `within`
/// already includes the diagonal loading used by [`lda_train`].
#[derive(Debug, Clone)]
pub struct Scatter<T: Real> {
    pub mean: DVector<T>,
    pub within: DMatrix<T>,
    pub between: DMatrix<T>,
}

pub fn scatter_matrices<T: Real>(data: &EmbeddingSet<T>) -> Scatter<T> {
    let x = data.vectors();
    let (n, dim) = x.shape();
    let total = T::from_count(n);
    let mean: DVector<T> = x.row_sum().transpose() / total;

    let mut within = DMatrix::zeros(dim, dim);
    let mut between = DMatrix::zeros(dim, dim);
    for (_, rows) in data.speaker_groups() {
        let count = T::from_count(rows.len());
        let class_mean: DVector<T> = rows
            .iter()
            .fold(DVector::zeros(dim), |acc, &r| acc + x.row(r).transpose())
            / count;
        for &r in &rows {
            let d = x.row(r).transpose() - &class_mean;
            within.ger(T::one(), &d, &d, T::one());
        }
        let d = &class_mean - &mean;
        between.ger(count, &d, &d, T::one());
    }
    within /= total;
    between /= total;
    let load = T::lit(WITHIN_LOADING) * within.trace() / T::from_count(dim);
    for i in 0..dim {
        within[(i, i)] += load;
    }
    Scatter {
        mean,
        within,
        between,
    }
}

/// Top `k` solutions of `between · v = λ · within · v` by descending λ, as the
/// rows of a `k × dim` matrix normalized so that vᵀ·within·v = 1.
pub fn discriminant_directions<T: Real>(
    within: &DMatrix<T>,
    between: &DMatrix<T>,
    k: usize,
) -> Result<(DMatrix<T>, Vec<T>)> {
    let dim = within.nrows();
    let chol = within
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("within-class scatter is singular after regularization".into()))?;
    let l = chol.l();
    // C = L⁻¹ S_b L⁻ᵀ
    let left = l
        .solve_lower_triangular(between)
        .ok_or_else(|| Error::Numerical("triangular solve failed in LDA".into()))?;
    let c = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed in LDA".into()))?;
    let c = (&c + c.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(c);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let lt = l.transpose();
    let mut projection = DMatrix::zeros(k, dim);
    let mut eigenvalues = Vec::with_capacity(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let u = eig.eigenvectors.column(idx).into_owned();
        let v = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::Numerical("triangular solve failed in LDA".into()))?;
        projection.set_row(row, &v.transpose());
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    Ok((projection, eigenvalues))
}

/// Centring plus projection onto the leading discriminant directions.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform<T: Real> {
    pub mean: DVector<T>,
    /// `output_dim × input_dim`; rows are the directions, scaled so that
    /// vᵀ S_w v = 1.
    pub projection: DMatrix<T>,
    /// Generalized eigenvalues, descending.
    pub eigenvalues: Vec<T>,
}

impl<T: Real> LdaTransform<T> {
    pub fn input_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn project(&self, v: &DVector<T>) -> Result<DVector<T>> {
        if v.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "vector has dimension {}, transform expects {}",
                v.len(),
                self.input_dim()
            )));
        }
        Ok(&self.projection * (v - &self.mean))
    }
}

/// Solves S_b v = λ S_w v and keeps the `target_dim` directions with the
/// largest λ. With identical class distributions S_b = 0 and every λ is ~0;
/// directions are still returned.
pub fn lda_train<T: Real>(data: &EmbeddingSet<T>, target_dim: usize) -> Result<LdaTransform<T>> {
    let speakers = data.num_speakers();
    if speakers < 2 {
        return Err(Error::Contract(format!("LDA needs at least 2 speakers, got {speakers}")));
    }
    let dim = data.dim();
    let max_dim = dim.min(speakers - 1);
    if target_dim == 0 || target_dim > max_dim {
        return Err(Error::Contract(format!(
            "LDA target dimension {target_dim} must be in [1, {max_dim}] (dim {dim}, {speakers} speakers)"
        )));
    }

    let Scatter {
        mean,
        within,
        between,
    } = scatter_matrices(data);
    let (projection, eigenvalues) = discriminant_directions(&within, &between, target_dim)?;
    Ok(LdaTransform {
        mean,
        projection,
        eigenvalues,
    })
}

/// Result of centre → project → length-normalize over a batch.
#[derive(Debug, Clone)]
pub struct Projected<T: Real> {
    /// One row per input vector.
    pub vectors: DMatrix<T>,
    /// Rows that projected to exactly zero (left as zero vectors).
    pub zero: Vec<bool>,
}

pub fn project_and_normalize<T: Real>(t: &LdaTransform<T>, vectors: &DMatrix<T>) -> Result<Projected<T>> {
    if vectors.ncols() != t.input_dim() {
        return Err(Error::Contract(format!(
            "vectors have dimension {}, transform expects {}",
            vectors.ncols(),
            t.input_dim()
        )));
    }
    let mut out = DMatrix::zeros(vectors.nrows(), t.output_dim());
    let mut zero = Vec::with_capacity(vectors.nrows());
    for r in 0..vectors.nrows() {
        let (v, z) = length_normalize(&t.project(&vectors.row(r).transpose())?);
        out.set_row(r, &v.transpose());
        zero.push(z);
    }
    Ok(Projected { vectors: out, zero })
}
