use alloc::vec::Vec;

use nalgebra::Point2;

use crate::fusion::{cell_centroid, Cluster};
use crate::grid::GtInstance;

/// Detection-to-instance assignment. Indices refer to the input slices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// `(cluster, instance)` pairs, sorted by cluster.
    pub matches: Vec<(usize, usize)>,
    pub missed: Vec<usize>,
    pub false_positives: Vec<usize>,
}

impl Assignment {
    pub fn cluster_for(&self, instance: usize) -> Option<usize> {
        self.matches.iter().find(|(_, i)| *i == instance).map(|(c, _)| *c)
    }
}

/// Greedy one-to-one matching within each class: repeatedly pairs the closest
/// remaining (cluster centroid, instance keypoint centroid) pair. Ties go to
/// the lower instance scene index, then the lower cluster index.
pub fn match_detections(clusters: &[Cluster], instances: &[GtInstance]) -> Assignment {
    let centers: Vec<Point2<f64>> = instances.iter().map(|i| cell_centroid(&i.keypoints)).collect();
    let mut edges: Vec<(f64, usize, usize, usize)> = Vec::new();
    for (c, cluster) in clusters.iter().enumerate() {
        let centroid = cluster.centroid();
        for (i, inst) in instances.iter().enumerate() {
            if inst.class_label == cluster.class_label {
                edges.push(((centroid - centers[i]).norm(), inst.scene_index, c, i));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut cluster_used = alloc::vec![false; clusters.len()];
    let mut instance_used = alloc::vec![false; instances.len()];
    let mut matches = Vec::new();
    for (_, _, c, i) in edges {
        if !cluster_used[c] && !instance_used[i] {
            cluster_used[c] = true;
            instance_used[i] = true;
            matches.push((c, i));
        }
    }
    matches.sort_unstable();
    Assignment {
        matches,
        missed: (0..instances.len()).filter(|&i| !instance_used[i]).collect(),
        false_positives: (0..clusters.len()).filter(|&c| !cluster_used[c]).collect(),
    }
}
