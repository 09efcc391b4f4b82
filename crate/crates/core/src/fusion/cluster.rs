use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Point2;

use super::{Candidate, Cluster};
use crate::grid::PredictionGrid;

/// Disjoint-set forest with path halving and union by size.
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            core::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// Mean of the points a cell predicts.
pub fn cell_centroid(points: &[Point2<f64>]) -> Point2<f64> {
    let n = points.len().max(1) as f64;
    let sum = points.iter().fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords);
    Point2::from(sum / n)
}

/// Single-linkage clustering of the foreground cells of each class. Two cells
/// are linked when their keypoint centroids are at most `threshold_px` apart.
///
/// Clusters come out ordered by class, then by their lowest cell index; members
/// are in ascending cell order.
pub fn cluster_cells(grid: &PredictionGrid, threshold_px: f64) -> Vec<Cluster> {
    assert!(threshold_px > 0.0, "clustering threshold must be positive");
    let cells: Vec<usize> = grid.foreground().collect();
    let decoded: Vec<Vec<Point2<f64>>> = cells.iter().map(|&c| grid.decoded(c)).collect();
    let centroids: Vec<Point2<f64>> = decoded.iter().map(|d| cell_centroid(d)).collect();

    // Sweep in x order: only pairs within threshold along x can link.
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| centroids[a].x.total_cmp(&centroids[b].x).then(a.cmp(&b)));
    let mut uf = UnionFind::new(cells.len());
    let t2 = threshold_px * threshold_px;
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            if centroids[b].x - centroids[a].x > threshold_px {
                break;
            }
            let label = |i: usize| grid.cells()[cells[i]].class_label;
            if label(a) == label(b) && (centroids[a] - centroids[b]).norm_squared() <= t2 {
                uf.union(a, b);
            }
        }
    }

    // Roots visited in ascending cell order give clusters keyed by their first member.
    let mut slot: Vec<Option<usize>> = vec![None; cells.len()];
    let mut clusters: Vec<Cluster> = Vec::new();
    for i in 0..cells.len() {
        let root = uf.find(i);
        let k = *slot[root].get_or_insert_with(|| {
            clusters.push(Cluster {
                class_label: grid.cells()[cells[i]].class_label,
                cells: Vec::new(),
                centroids: Vec::new(),
                candidates: vec![Vec::new(); grid.num_keypoints()],
            });
            clusters.len() - 1
        });
        let cluster = &mut clusters[k];
        cluster.cells.push(cells[i]);
        cluster.centroids.push(centroids[i]);
        for (kp, (point, pred)) in decoded[i].iter().zip(&grid.cells()[cells[i]].keypoints).enumerate() {
            cluster.candidates[kp].push(Candidate { point: *point, confidence: pred.confidence, cell: cells[i] });
        }
    }
    clusters.sort_by_key(|c| (c.class_label, c.cells[0]));
    clusters
}

/// Drops clusters with fewer than `min_cells` members.
pub fn discard_small(clusters: Vec<Cluster>, min_cells: usize) -> Vec<Cluster> {
    clusters.into_iter().filter(|c| c.cells.len() >= min_cells).collect()
}
