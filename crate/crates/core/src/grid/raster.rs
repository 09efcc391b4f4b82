//! Depth-aware ground-truth labels at grid resolution.
//!
//! Each cell is probed by `SUBSAMPLES × SUBSAMPLES` points. An instance covers
//! a probe when the probe lies inside the convex hull of the instance's
//! projected surface points; its depth there is the nearest depth among
//! surface points splatted around the probe. The nearest covering instance
//! wins the probe, and a cell takes the majority label of its probes
//! (background included), ties going to the nearer label.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Point2;
#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;

use super::{GridSpec, GroundTruthGrid, GtInstance};
use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, ObjectModel, Pose};
use crate::scene::{find_model, Scene};

/// Probes per cell side.
pub const SUBSAMPLES: usize = 4;

/// Labels each cell with the frontmost instance covering most of it.
pub fn rasterize_ground_truth(
    scene: &Scene,
    models: &[ObjectModel],
    spec: &GridSpec,
    k: &CameraIntrinsics,
) -> Result<GroundTruthGrid> {
    if spec.image_width() != k.width() || spec.image_height() != k.height() {
        return Err(Error::SpecMismatch);
    }
    let mut buffer = ProbeBuffer::new(spec);
    let mut instances = Vec::new();
    let mut skipped = Vec::new();

    for (scene_index, inst) in scene.instances.iter().enumerate() {
        let model = find_model(models, inst.model_id)?;
        let Some((keypoints, surface)) = project_instance(model, &inst.pose, k) else {
            skipped.push(scene_index);
            continue;
        };
        buffer.splat(instances.len(), &surface);
        instances.push(GtInstance { scene_index, class_label: model.id(), keypoints });
    }

    let owners = buffer.vote();
    GroundTruthGrid::new(*spec, instances, owners, skipped)
}

type Projected = (Vec<Point2<f64>>, Vec<(Point2<f64>, f64)>);

/// Projected keypoints and surface points with depth, or `None` when any
/// keypoint is behind the camera. The surface lies inside the keypoint box, so
/// it is then entirely in front as well.
fn project_instance(model: &ObjectModel, pose: &Pose, k: &CameraIntrinsics) -> Option<Projected> {
    let keypoints = model.keypoints().iter().map(|p| project(p, pose, k).ok()).collect::<Option<Vec<_>>>()?;
    let surface = model
        .surface_points()
        .iter()
        .map(|p| {
            let z = pose.transform_point(p).z;
            project(p, pose, k).ok().map(|px| (px, z))
        })
        .collect::<Option<Vec<_>>>()?;
    Some((keypoints, surface))
}

struct ProbeBuffer {
    spec: GridSpec,
    side: usize,
    pitch_x: f64,
    pitch_y: f64,
    depth: Vec<f64>,
    label: Vec<Option<usize>>,
}

impl ProbeBuffer {
    fn new(spec: &GridSpec) -> Self {
        let side = spec.size() * SUBSAMPLES;
        Self {
            spec: *spec,
            side,
            pitch_x: f64::from(spec.image_width()) / side as f64,
            pitch_y: f64::from(spec.image_height()) / side as f64,
            depth: vec![f64::INFINITY; side * side],
            label: vec![None; side * side],
        }
    }

    fn probe(&self, ix: usize, iy: usize) -> Point2<f64> {
        Point2::new((ix as f64 + 0.5) * self.pitch_x, (iy as f64 + 0.5) * self.pitch_y)
    }

    /// Probe index range whose centers fall within `[lo, hi]` along one axis.
    fn range(&self, lo: f64, hi: f64, pitch: f64) -> Option<(usize, usize)> {
        let first = (lo / pitch - 0.5).ceil().max(0.0);
        let last = (hi / pitch - 0.5).floor().min(self.side as f64 - 1.0);
        (first <= last).then_some((first as usize, last as usize))
    }

    fn splat(&mut self, instance: usize, surface: &[(Point2<f64>, f64)]) {
        let points: Vec<Point2<f64>> = surface.iter().map(|(p, _)| *p).collect();
        let hull = convex_hull(&points);
        if hull.len() < 3 {
            return;
        }
        let area = polygon_area(&hull);
        let radius = (6.0 * area / surface.len() as f64).sqrt().max(0.75 * self.pitch_x.max(self.pitch_y));

        let (min_x, max_x) = hull.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
        let (min_y, max_y) = hull.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
        let (Some((x0, x1)), Some((y0, y1))) =
            (self.range(min_x, max_x, self.pitch_x), self.range(min_y, max_y, self.pitch_y))
        else {
            return;
        };
        let width = x1 - x0 + 1;
        let mut local = vec![f64::INFINITY; width * (y1 - y0 + 1)];

        for (p, z) in surface {
            let (Some((sx0, sx1)), Some((sy0, sy1))) = (
                self.range(p.x - radius, p.x + radius, self.pitch_x),
                self.range(p.y - radius, p.y + radius, self.pitch_y),
            ) else {
                continue;
            };
            for iy in sy0.max(y0)..=sy1.min(y1) {
                for ix in sx0.max(x0)..=sx1.min(x1) {
                    if (self.probe(ix, iy) - p).norm_squared() <= radius * radius {
                        let slot = &mut local[(iy - y0) * width + (ix - x0)];
                        *slot = slot.min(*z);
                    }
                }
            }
        }

        let mut depths: Vec<f64> = surface.iter().map(|(_, z)| *z).collect();
        depths.sort_by(f64::total_cmp);
        let fallback = depths[depths.len() / 2];

        for iy in y0..=y1 {
            for ix in x0..=x1 {
                if !inside_convex(&hull, &self.probe(ix, iy)) {
                    continue;
                }
                let d = local[(iy - y0) * width + (ix - x0)];
                let d = if d.is_finite() { d } else { fallback };
                let g = iy * self.side + ix;
                if d < self.depth[g] {
                    self.depth[g] = d;
                    self.label[g] = Some(instance);
                }
            }
        }
    }

    fn vote(&self) -> Vec<Option<usize>> {
        let s = self.spec.size();
        let mut owners = Vec::with_capacity(s * s);
        let mut tally: Vec<(Option<usize>, usize, f64)> = Vec::with_capacity(SUBSAMPLES * SUBSAMPLES);
        for row in 0..s {
            for col in 0..s {
                tally.clear();
                for dy in 0..SUBSAMPLES {
                    for dx in 0..SUBSAMPLES {
                        let g = (row * SUBSAMPLES + dy) * self.side + col * SUBSAMPLES + dx;
                        let (l, d) = (self.label[g], self.depth[g]);
                        match tally.iter_mut().find(|t| t.0 == l) {
                            Some(t) => {
                                t.1 += 1;
                                t.2 = t.2.min(d);
                            }
                            None => tally.push((l, 1, d)),
                        }
                    }
                }
                let best = tally
                    .iter()
                    .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)))
                    .map(|t| t.0)
                    .unwrap_or(None);
                owners.push(best);
            }
        }
        owners
    }
}

fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain; counter-clockwise (in x-right, y-up terms), no collinear vertices.
pub(crate) fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: &mut dyn Iterator<Item = &Point2<f64>> =
            if pass == 0 { &mut pts.iter() } else { &mut pts.iter().rev() };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn polygon_area(hull: &[Point2<f64>]) -> f64 {
    let n = hull.len();
    (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

fn inside_convex(hull: &[Point2<f64>], p: &Point2<f64>) -> bool {
    let n = hull.len();
    (0..n).all(|i| cross(&hull[i], &hull[(i + 1) % n], p) >= 0.0)
}
