use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Point3, Vector3};
#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

/// Default number of surface samples drawn from a mesh.
pub const DEFAULT_SURFACE_SAMPLES: usize = 500;

/// Relative tolerance between a stored diameter and the recomputed one.
const DIAMETER_TOLERANCE: f64 = 1e-6;

/// A rigid object: its 3D keypoints (bounding-box corners), sampled surface and diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    id: usize,
    name: String,
    keypoints: Vec<Point3<f64>>,
    surface_points: Vec<Point3<f64>>,
    diameter: f64,
    symmetric: bool,
}

impl ObjectModel {
    /// Builds a model from its surface samples, deriving keypoints and diameter.
    pub fn from_surface(
        id: usize,
        name: impl Into<String>,
        surface_points: Vec<Point3<f64>>,
        symmetric: bool,
    ) -> Result<Self> {
        if id == 0 {
            return Err(Error::InvalidModel("class id 0 is reserved for background"));
        }
        if surface_points.is_empty() {
            return Err(Error::EmptyModel);
        }
        let keypoints = bounding_box_corners(&surface_points);
        let diameter = max_pairwise_distance(&surface_points);
        if !(diameter > 0.0) {
            return Err(Error::InvalidModel("diameter must be positive"));
        }
        Ok(Self { id, name: name.into(), keypoints, surface_points, diameter, symmetric })
    }

    /// Builds a model from stored fields, checking them against the surface samples.
    pub fn new(
        id: usize,
        name: impl Into<String>,
        keypoints: Vec<Point3<f64>>,
        surface_points: Vec<Point3<f64>>,
        diameter: f64,
        symmetric: bool,
    ) -> Result<Self> {
        let derived = Self::from_surface(id, name, surface_points, symmetric)?;
        if keypoints.len() != derived.keypoints.len() {
            return Err(Error::InvalidModel("keypoints must be the 8 bounding-box corners"));
        }
        let scale = derived.diameter;
        let corners_match =
            keypoints.iter().zip(&derived.keypoints).all(|(a, b)| (a - b).norm() <= 1e-9 * scale.max(1.0));
        if !corners_match {
            return Err(Error::InvalidModel("keypoints are not the bounding-box corners of the surface"));
        }
        if !((diameter - derived.diameter).abs() <= DIAMETER_TOLERANCE * derived.diameter) {
            return Err(Error::DiameterMismatch { stored: diameter, computed: derived.diameter });
        }
        Ok(Self { keypoints, diameter, ..derived })
    }

    pub fn id(&self) -> usize {
        self.id
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn keypoints(&self) -> &[Point3<f64>] {
        &self.keypoints
    }
    pub fn surface_points(&self) -> &[Point3<f64>] {
        &self.surface_points
    }
    pub fn diameter(&self) -> f64 {
        self.diameter
    }
    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn surface_centroid(&self) -> Point3<f64> {
        let sum = self.surface_points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.surface_points.len() as f64)
    }
}

/// Corners of the axis-aligned bounding box; corner `i` takes the max along
/// x, y, z when bit 0, 1, 2 of `i` is set.
pub(crate) fn bounding_box_corners(points: &[Point3<f64>]) -> Vec<Point3<f64>> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    (0..8)
        .map(|i| {
            Point3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect()
}

fn max_pairwise_distance(points: &[Point3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Triangle mesh used to draw surface samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    /// Axis-aligned box centred on the origin.
    pub fn cuboid(size_x: f64, size_y: f64, size_z: f64) -> Self {
        let h = Vector3::new(size_x, size_y, size_z) / 2.0;
        let vertices = bounding_box_corners(&[Point3::from(-h), Point3::from(h)]);
        // Faces as corner quads (corner index bits = x, y, z).
        let quads: [[usize; 4]; 6] = [
            [0, 2, 3, 1], // z-
            [4, 5, 7, 6], // z+
            [0, 1, 5, 4], // y-
            [2, 6, 7, 3], // y+
            [0, 4, 6, 2], // x-
            [1, 3, 7, 5], // x+
        ];
        let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        Self { vertices, triangles }
    }

    /// Closed prism approximating a cylinder about the z axis, centred on the origin.
    pub fn cylinder(radius: f64, height: f64, segments: usize) -> Self {
        let segments = segments.max(3);
        let mut vertices = Vec::with_capacity(2 * segments + 2);
        for ring in [-height / 2.0, height / 2.0] {
            for s in 0..segments {
                let a = core::f64::consts::TAU * s as f64 / segments as f64;
                vertices.push(Point3::new(radius * a.cos(), radius * a.sin(), ring));
            }
        }
        let bottom = vertices.len();
        vertices.push(Point3::new(0.0, 0.0, -height / 2.0));
        let top = vertices.len();
        vertices.push(Point3::new(0.0, 0.0, height / 2.0));
        let mut triangles = Vec::with_capacity(4 * segments);
        for s in 0..segments {
            let n = (s + 1) % segments;
            triangles.push([s, n, segments + n]);
            triangles.push([s, segments + n, segments + s]);
            triangles.push([bottom, n, s]);
            triangles.push([top, segments + s, segments + n]);
        }
        Self { vertices, triangles }
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        (b - a).cross(&(c - a)).norm() / 2.0
    }

    /// Draws `count` points uniformly over the surface area.
    pub fn sample_surface<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Point3<f64>> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in &self.triangles {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        (0..count)
            .map(|_| {
                let pick = rng.random::<f64>() * total;
                let idx = cumulative.partition_point(|&c| c <= pick).min(self.triangles.len() - 1);
                let [a, b, c] = self.triangles[idx].map(|i| self.vertices[i]);
                let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }
}
