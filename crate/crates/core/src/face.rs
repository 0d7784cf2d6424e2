//! Face-template scoring over precomputed embeddings.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Axis-aligned box in pixels; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T: Real> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Real> BoundingBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self> {
        if !(w > T::zero() && h > T::zero()) || ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::Contract(format!("invalid box ({x}, {y}, {w}, {h})")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }
}

/// Intersection over union.
pub fn iou<T: Real>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    // Overlap length as (extent − offset into the box): exact for equal boxes.
    let overlap = |p0: T, l0: T, p1: T, l1: T| {
        let start = p0.max(p1);
        (l0 - (start - p0)).min(l1 - (start - p1)).max(T::zero())
    };
    let ix = overlap(a.x, a.w, b.x, b.w);
    let iy = overlap(a.y, a.h, b.y, b.h);
    let inter = ix * iy;
    // Symmetric in (a, b) by construction: the area sum is ordered.
    let (small, large) = if a.area() <= b.area() {
        (a.area(), b.area())
    } else {
        (b.area(), a.area())
    };
    (inter / (small + large - inter)).min(T::one())
}

/// Frames within ±2 of each given enrollment frame, clipped to
/// `[0, num_frames)` when the video length is known.
pub fn select_enroll_frames(given: &[usize], num_frames: Option<usize>) -> Vec<usize> {
    let mut out: Vec<usize> = given
        .iter()
        .flat_map(|&g| g.saturating_sub(2)..=g + 2)
        .filter(|&f| num_frames.is_none_or(|n| f < n))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// One test frame per second: `0, 1, 2, ...` strictly below `duration`.
pub fn sample_test_frames(duration: f64) -> Vec<usize> {
    if !(duration > 0.0) {
        return Vec::new();
    }
    (0..).take_while(|&t| (t as f64) < duration).collect()
}

/// Length-normalized face embeddings with the frame each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTemplate<T: Real> {
    embeddings: DMatrix<T>,
    frame_ids: Vec<String>,
}

const NORM_SLACK: f64 = 1e-6;

impl<T: Real> FaceTemplate<T> {
    /// Rows whose norm deviates from 1 by more than 1e-6 are renormalized.
    pub fn new(mut embeddings: DMatrix<T>, frame_ids: Vec<String>) -> Result<Self> {
        if embeddings.nrows() == 0 {
            return Err(Error::Contract("face template is empty".into()));
        }
        if frame_ids.len() != embeddings.nrows() {
            return Err(Error::Contract("one frame id per template row required".into()));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite face embedding".into()));
        }
        for mut row in embeddings.row_iter_mut() {
            let n = row.norm();
            if n == T::zero() {
                return Err(Error::Contract("zero face embedding".into()));
            }
            if (n - T::one()).abs() > T::lit(NORM_SLACK) {
                row /= n;
            }
        }
        Ok(Self {
            embeddings,
            frame_ids,
        })
    }

    pub fn embeddings(&self) -> &DMatrix<T> {
        &self.embeddings
    }

    pub fn frame_ids(&self) -> &[String] {
        &self.frame_ids
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }
}

/// A detected face on one frame.
#[derive(Debug, Clone)]
pub struct Detection<T: Real> {
    pub frame: usize,
    pub bbox: BoundingBox<T>,
    pub embedding: DVector<T>,
    pub id: String,
}

/// Keeps detections whose best IoU against `given` exceeds `threshold`.
/// `None` means nothing survived, which the caller treats as an enrollment
/// failure for the trial.
pub fn gate_detections<T: Real>(
    detections: &[Detection<T>],
    given: &[BoundingBox<T>],
    threshold: T,
) -> Result<Option<FaceTemplate<T>>> {
    let kept: Vec<&Detection<T>> = detections
        .iter()
        .filter(|d| given.iter().any(|g| iou(&d.bbox, g) > threshold))
        .collect();
    template_from(&kept)
}

/// Builds a template from detections without gating.
pub fn template_from<T: Real>(detections: &[&Detection<T>]) -> Result<Option<FaceTemplate<T>>> {
    let Some(first) = detections.first() else {
        return Ok(None);
    };
    let dim = first.embedding.len();
    if detections.iter().any(|d| d.embedding.len() != dim) {
        return Err(Error::Contract("face embeddings differ in dimension".into()));
    }
    let m = DMatrix::from_fn(detections.len(), dim, |i, j| detections[i].embedding[j]);
    FaceTemplate::new(m, detections.iter().map(|d| d.id.clone()).collect()).map(Some)
}

/// Enrollment gating for one video: detections on frames within ±2 of an
/// annotated frame are kept when their IoU with an annotated box on a frame
/// at most 2 away exceeds `threshold`.
pub fn gate_enrollment<T: Real>(
    detections: &[Detection<T>],
    given: &[(usize, BoundingBox<T>)],
    threshold: T,
) -> Result<Option<FaceTemplate<T>>> {
    let frames: Vec<usize> = given.iter().map(|(f, _)| *f).collect();
    let selected = select_enroll_frames(&frames, None);
    let kept: Vec<&Detection<T>> = detections
        .iter()
        .filter(|d| selected.binary_search(&d.frame).is_ok())
        .filter(|d| {
            given
                .iter()
                .any(|(f, b)| f.abs_diff(d.frame) <= 2 && iou(&d.bbox, b) > threshold)
        })
        .collect();
    template_from(&kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    TopK,
    TopPercent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchPolicy {
    pub mode: MatchMode,
    pub k: usize,
    pub p: f64,
    pub iou_threshold: f64,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        Self {
            mode: MatchMode::TopK,
            k: 10,
            p: 0.20,
            iou_threshold: 0.5,
        }
    }
}

impl MatchPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!(
                "iou_threshold must lie in [0, 1], got {}",
                self.iou_threshold
            )));
        }
        Ok(())
    }

    /// Number of top pairs averaged out of `pairs`.
    pub fn pairs_used(&self, pairs: usize) -> usize {
        match self.mode {
            MatchMode::TopK => self.k.min(pairs),
            MatchMode::TopPercent => ((self.p * pairs as f64).ceil() as usize).clamp(1, pairs),
        }
    }
}

/// Mean of the top cosine similarities between two templates. Ties are
/// ordered by (enroll row, test row) so the result is deterministic.
pub fn template_score<T: Real>(enroll: &FaceTemplate<T>, test: &FaceTemplate<T>, policy: &MatchPolicy) -> Result<T> {
    policy.validate()?;
    if enroll.is_empty() || test.is_empty() {
        return Err(Error::Contract("empty face template".into()));
    }
    if enroll.embeddings.ncols() != test.embeddings.ncols() {
        return Err(Error::Contract("face templates differ in dimension".into()));
    }
    // Pairwise dot products, so each similarity is independent of row order.
    let (e, t) = (&enroll.embeddings, &test.embeddings);
    let mut pairs: Vec<(T, usize, usize)> = (0..e.nrows())
        .flat_map(|i| (0..t.nrows()).map(move |j| (i, j)))
        .map(|(i, j)| (e.row(i).dot(&t.row(j)).clamp(-T::one(), T::one()), i, j))
        .collect();
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let used = policy.pairs_used(pairs.len());
    let sum = pairs[..used].iter().fold(T::zero(), |acc, p| acc + p.0);
    Ok(sum / T::from_count(used))
}
