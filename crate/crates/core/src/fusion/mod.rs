//! From per-cell predictions to per-instance 3D-to-2D correspondences:
//! instance clustering, then one of four selection strategies.

mod cluster;

pub use cluster::{cell_centroid, cluster_cells, discard_small};

use alloc::vec::Vec;

use nalgebra::{Point2, Point3};

use crate::error::{Error, Result};

/// Default linking distance at a 608-pixel-wide image.
pub const DEFAULT_THRESHOLD_608: f64 = 30.0;
pub const DEFAULT_BEST_N: usize = 10;
pub const DEFAULT_MIN_CELLS: usize = 2;

/// Linking distance scaled to the image width.
pub fn default_threshold(image_width: u32) -> f64 {
    DEFAULT_THRESHOLD_608 * image_width as f64 / 608.0
}

/// One cell's prediction for one keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Decoded location in pixels.
    pub point: Point2<f64>,
    pub confidence: f64,
    /// Linear index of the source cell.
    pub cell: usize,
}

/// Cells attributed to one detected instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub class_label: usize,
    /// Member cells, ascending.
    pub cells: Vec<usize>,
    /// Keypoint centroid of each member cell, parallel to `cells`.
    pub centroids: Vec<Point2<f64>>,
    /// `candidates[i]` holds keypoint `i` as predicted by each member, parallel to `cells`.
    pub candidates: Vec<Vec<Candidate>>,
}

impl Cluster {
    /// Mean of the member cell centroids.
    pub fn centroid(&self) -> Point2<f64> {
        cell_centroid(&self.centroids)
    }

    fn check(&self) -> Result<()> {
        if self.cells.is_empty() || self.candidates.iter().any(|c| c.len() != self.cells.len()) {
            return Err(Error::EmptyCluster);
        }
        Ok(())
    }
}

/// A single 3D-to-2D pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub keypoint: usize,
    pub object_point: Point3<f64>,
    pub image_point: Point2<f64>,
    pub confidence: f64,
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub class_label: usize,
    pub pairs: Vec<Correspondence>,
}

/// How to pick 2D locations from a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// Every keypoint from the cell nearest the cluster center.
    NoFusion,
    /// Per keypoint, the most confident candidate.
    HighestConfidence,
    /// Per keypoint, the `n` most confident candidates.
    BestN(usize),
    /// Per keypoint, the candidate closest to the ground truth.
    Oracle,
}

impl Strategy {
    /// Short name used in tables and file formats.
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::NoFusion => "nf",
            Strategy::HighestConfidence => "hc",
            Strategy::BestN(_) => "bn",
            Strategy::Oracle => "oracle",
        }
    }
}

fn pair(keypoints: &[Point3<f64>], kp: usize, c: &Candidate) -> Correspondence {
    Correspondence {
        keypoint: kp,
        object_point: keypoints[kp],
        image_point: c.point,
        confidence: c.confidence,
        cell: c.cell,
    }
}

fn check_keypoints(cluster: &Cluster, keypoints: &[Point3<f64>]) -> Result<()> {
    cluster.check()?;
    if keypoints.len() != cluster.candidates.len() {
        return Err(Error::SpecMismatch);
    }
    Ok(())
}

/// Index of the smallest value; ties keep the earliest.
fn argmin_by(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// The `N` predictions of the member whose centroid is nearest the cluster's mean centroid.
pub fn select_no_fusion(cluster: &Cluster, keypoints: &[Point3<f64>]) -> Result<CorrespondenceSet> {
    check_keypoints(cluster, keypoints)?;
    let center = cluster.centroid();
    let m = argmin_by(cluster.centroids.iter().map(|c| (c - center).norm_squared()));
    let pairs = (0..keypoints.len()).map(|kp| pair(keypoints, kp, &cluster.candidates[kp][m])).collect();
    Ok(CorrespondenceSet { class_label: cluster.class_label, pairs })
}

/// Per keypoint, the candidate with the largest confidence.
pub fn select_highest_confidence(cluster: &Cluster, keypoints: &[Point3<f64>]) -> Result<CorrespondenceSet> {
    check_keypoints(cluster, keypoints)?;
    let pairs = cluster
        .candidates
        .iter()
        .enumerate()
        .map(|(kp, cands)| pair(keypoints, kp, &cands[argmin_by(cands.iter().map(|c| -c.confidence))]))
        .collect();
    Ok(CorrespondenceSet { class_label: cluster.class_label, pairs })
}

/// Per keypoint, up to `n` candidates in descending confidence order.
pub fn select_best_n(cluster: &Cluster, keypoints: &[Point3<f64>], n: usize) -> Result<CorrespondenceSet> {
    if n == 0 {
        return Err(Error::InvalidConfig("best-n needs n >= 1"));
    }
    check_keypoints(cluster, keypoints)?;
    let mut pairs = Vec::with_capacity(n.min(cluster.cells.len()) * keypoints.len());
    for (kp, cands) in cluster.candidates.iter().enumerate() {
        let mut sorted = cands.clone();
        // Stable: equal confidences keep ascending cell order.
        sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        pairs.extend(sorted.iter().take(n).map(|c| pair(keypoints, kp, c)));
    }
    Ok(CorrespondenceSet { class_label: cluster.class_label, pairs })
}

/// Per keypoint, the candidate closest to the true projection `gt[i]`.
pub fn select_oracle(cluster: &Cluster, keypoints: &[Point3<f64>], gt: &[Point2<f64>]) -> Result<CorrespondenceSet> {
    check_keypoints(cluster, keypoints)?;
    if gt.len() != keypoints.len() {
        return Err(Error::SpecMismatch);
    }
    let pairs = cluster
        .candidates
        .iter()
        .enumerate()
        .map(|(kp, cands)| {
            let m = argmin_by(cands.iter().map(|c| (c.point - gt[kp]).norm_squared()));
            pair(keypoints, kp, &cands[m])
        })
        .collect();
    Ok(CorrespondenceSet { class_label: cluster.class_label, pairs })
}

/// Applies `strategy`; `gt` is required for [`Strategy::Oracle`] only.
pub fn select(
    cluster: &Cluster,
    keypoints: &[Point3<f64>],
    strategy: Strategy,
    gt: Option<&[Point2<f64>]>,
) -> Result<CorrespondenceSet> {
    match strategy {
        Strategy::NoFusion => select_no_fusion(cluster, keypoints),
        Strategy::HighestConfidence => select_highest_confidence(cluster, keypoints),
        Strategy::BestN(n) => select_best_n(cluster, keypoints, n),
        Strategy::Oracle => {
            let gt = gt.ok_or(Error::InvalidConfig("oracle selection needs ground-truth keypoints"))?;
            select_oracle(cluster, keypoints, gt)
        }
    }
}
