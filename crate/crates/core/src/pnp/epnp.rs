use alloc::vec::Vec;

use nalgebra::{
    Matrix3, Matrix4, Matrix6, Point2, Point3, Rotation3, SMatrix, SVector, SymmetricEigen, Vector3, Vector4, Vector6,
};
#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

/// Below this ratio to the largest principal variance a direction counts as flat.
pub const PLANAR_RATIO: f64 = 1e-8;

const BETA_ITERATIONS: usize = 20;
const MAX_PAIRS: usize = 6;

/// Control points in the object frame and each point's barycentric weights.
struct ControlFrame {
    /// 3 for planar inputs, otherwise 4.
    m: usize,
    controls: [Point3<f64>; 4],
    alphas: Vec<Vector4<f64>>,
    /// Cholesky factor of `AᵀA` for the `n×m` weight matrix `A`, unused block padded with identity.
    gram: Option<nalgebra::Cholesky<f64, nalgebra::U4>>,
}

/// Centroid plus one control point per principal direction; planar inputs use two directions.
fn control_frame(object: &[Point3<f64>]) -> Result<ControlFrame> {
    let n = object.len() as f64;
    let c0 = Point3::from(object.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n);
    let mut cov = Matrix3::zeros();
    for p in object {
        let d = p - c0;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if !(largest > 0.0) || !largest.is_finite() || eig.eigenvalues[order[1]] < PLANAR_RATIO * largest {
        return Err(Error::Degenerate);
    }
    let dims = if eig.eigenvalues[order[2]] < PLANAR_RATIO * largest { 2 } else { 3 };
    let mut controls = [c0; 4];
    let mut axes = [(Vector3::zeros(), 1.0); 3];
    for (slot, &j) in order[..dims].iter().enumerate() {
        let (v, s) = (eig.eigenvectors.column(j).into_owned(), eig.eigenvalues[j].sqrt());
        axes[slot] = (v, s);
        controls[slot + 1] = c0 + v * s;
    }
    // Orthogonal axes make the barycentric solve a projection.
    let alphas: Vec<Vector4<f64>> = object
        .iter()
        .map(|p| {
            let d = p - c0;
            let mut a = Vector4::zeros();
            for (slot, (v, s)) in axes[..dims].iter().enumerate() {
                a[slot + 1] = d.dot(v) / s;
            }
            a[0] = 1.0 - a.sum();
            a
        })
        .collect();
    let m = dims + 1;
    let mut gram = Matrix4::zeros();
    for a in &alphas {
        gram += a * a.transpose();
    }
    for j in m..4 {
        gram[(j, j)] = 1.0;
    }
    Ok(ControlFrame { m, controls, alphas, gram: gram.cholesky() })
}

/// Best rigid transform mapping `from` onto `to` in the least-squares sense.
pub(crate) fn procrustes(from: &[Point3<f64>], to: &[Point3<f64>]) -> Option<Pose> {
    let n = from.len() as f64;
    let fc = from.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let tc = to.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (f, t) in from.iter().zip(to) {
        h += (t.coords - tc) * (f.coords - fc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    if !r.iter().all(|v| v.is_finite()) {
        return None;
    }
    let rot = Rotation3::from_matrix_unchecked(r);
    Some(Pose::from_rotation(rot, tc - rot * fc))
}

/// Least squares over the first `cols` unknowns via normal equations; the rest stay zero.
fn lstsq(rows: &[Vector6<f64>], rhs: &[f64], cols: usize) -> Option<Vector6<f64>> {
    let mut ata = Matrix6::zeros();
    let mut atb = Vector6::zeros();
    for (r, b) in rows.iter().zip(rhs) {
        ata += r * r.transpose();
        atb += r * *b;
    }
    for j in 0..6 {
        ata[(j, j)] = if j < cols { ata[(j, j)] } else { 1.0 };
    }
    let x = ata.cholesky()?.solve(&atb);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// The `m` null-space vectors of `M` as control layouts, and the distance constraints between controls.
struct NullSpace {
    m: usize,
    vectors: [[Vector3<f64>; 4]; 4],
    npairs: usize,
    rho: [f64; MAX_PAIRS],
    /// `dots[p][(k, l)]`: inner product of vectors `k` and `l` differenced over control pair `p`.
    dots: [Matrix4<f64>; MAX_PAIRS],
}

impl NullSpace {
    fn new(vectors: [[Vector3<f64>; 4]; 4], frame: &ControlFrame) -> Self {
        let m = frame.m;
        let mut rho = [0.0; MAX_PAIRS];
        let mut dots = [Matrix4::zeros(); MAX_PAIRS];
        let mut p = 0;
        for a in 0..m {
            for b in a + 1..m {
                rho[p] = (frame.controls[a] - frame.controls[b]).norm_squared();
                let d: [Vector3<f64>; 4] = core::array::from_fn(|k| vectors[k][a] - vectors[k][b]);
                dots[p] = Matrix4::from_fn(|k, l| if k < m && l < m { d[k].dot(&d[l]) } else { 0.0 });
                p += 1;
            }
        }
        Self { m, vectors, npairs: p, rho, dots }
    }

    fn residuals(&self, beta: &Vector4<f64>) -> [f64; MAX_PAIRS] {
        core::array::from_fn(|p| if p < self.npairs { beta.dot(&(self.dots[p] * beta)) - self.rho[p] } else { 0.0 })
    }

    fn cost(&self, beta: &Vector4<f64>) -> f64 {
        self.residuals(beta).iter().map(|r| r * r).sum()
    }

    /// Single vector: scale matching control-pair distances.
    fn single(&self) -> Option<Vector4<f64>> {
        let (mut num, mut den) = (0.0, 0.0);
        for p in 0..self.npairs {
            let d = self.dots[p][(0, 0)].sqrt();
            num += d * self.rho[p].sqrt();
            den += d * d;
        }
        (den > 0.0).then(|| Vector4::new(num / den, 0.0, 0.0, 0.0))
    }

    /// Linearized solve for products `β_a β_b` over the first `dims` vectors, then a rank-one fit.
    fn linearized(&self, dims: usize) -> Option<Vector4<f64>> {
        let mut cols = [(0, 0); 6];
        let mut c = 0;
        for a in 0..dims {
            for b in a..dims {
                cols[c] = (a, b);
                c += 1;
            }
        }
        if c > self.npairs {
            return None;
        }
        let rows: Vec<Vector6<f64>> = (0..self.npairs)
            .map(|p| {
                Vector6::from_fn(|j, _| {
                    if j >= c {
                        return 0.0;
                    }
                    let (a, b) = cols[j];
                    if a == b {
                        self.dots[p][(a, a)]
                    } else {
                        2.0 * self.dots[p][(a, b)]
                    }
                })
            })
            .collect();
        let bb = lstsq(&rows, &self.rho[..self.npairs], c)?;
        let mut prod = Matrix3::zeros();
        for (j, &(a, b)) in cols[..c].iter().enumerate() {
            prod[(a, b)] = bb[j];
            prod[(b, a)] = bb[j];
        }
        let eig = SymmetricEigen::new(prod);
        let top = eig.eigenvalues.imax();
        let lambda = eig.eigenvalues[top];
        if !(lambda > 0.0) {
            return None;
        }
        let v = eig.eigenvectors.column(top) * lambda.sqrt();
        Some(Vector4::new(v[0], v[1], v[2], 0.0))
    }

    /// Solves only for `β_1²` and `β_1 β_k` using every vector.
    fn first_row(&self) -> Option<Vector4<f64>> {
        let rows: Vec<Vector6<f64>> = (0..self.npairs)
            .map(|p| {
                Vector6::from_fn(|k, _| match k {
                    0 => self.dots[p][(0, 0)],
                    k if k < self.m => 2.0 * self.dots[p][(0, k)],
                    _ => 0.0,
                })
            })
            .collect();
        let b = lstsq(&rows, &self.rho[..self.npairs], self.m)?;
        let b11 = b[0].abs().sqrt();
        if !(b11 > 0.0) {
            return None;
        }
        let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
        Some(Vector4::from_fn(|k, _| match k {
            0 => sign * b11,
            k if k < self.m => sign * b[k] / b11,
            _ => 0.0,
        }))
    }

    /// Levenberg-Marquardt on `‖Σ β_k d_k‖² − ρ` over all vectors.
    fn polish(&self, start: &Vector4<f64>) -> Vector4<f64> {
        let mut beta = *start;
        let mut current = self.cost(&beta);
        let floor = 1e-28 * self.rho.iter().map(|r| r * r).sum::<f64>();
        let mut mu = 1e-4;
        for _ in 0..BETA_ITERATIONS {
            if current <= floor {
                break;
            }
            let r = self.residuals(&beta);
            let mut jtj = Matrix4::zeros();
            let mut jtr = Vector4::zeros();
            for (dots, r) in self.dots[..self.npairs].iter().zip(&r) {
                let g = dots * beta * 2.0;
                jtj += g * g.transpose();
                jtr += g * *r;
            }
            let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
            let mut accepted = false;
            while mu < 1e6 {
                let mut a = jtj;
                for j in 0..4 {
                    a[(j, j)] = if j < self.m { a[(j, j)] + mu * scale } else { 1.0 };
                }
                let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                    mu *= 10.0;
                    continue;
                };
                let next = beta - step;
                let c = self.cost(&next);
                if c < current {
                    let gain = current - c;
                    beta = next;
                    current = c;
                    mu = (mu / 10.0).max(1e-12);
                    accepted = gain > 1e-6 * current;
                    break;
                }
                mu *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        beta
    }

    fn controls(&self, beta: &Vector4<f64>) -> [Vector3<f64>; 4] {
        core::array::from_fn(|j| (0..self.m).map(|k| self.vectors[k][j] * beta[k]).sum())
    }

    /// Least-squares control layout reproducing camera-frame `points`, projected onto the null space.
    fn layout_start(&self, points: &[Point3<f64>], frame: &ControlFrame) -> Option<Vector4<f64>> {
        let gram = frame.gram.as_ref()?;
        let mut rhs = SMatrix::<f64, 4, 3>::zeros();
        for (a, p) in frame.alphas.iter().zip(points) {
            rhs += a * p.coords.transpose();
        }
        let layout = gram.solve(&rhs);
        Some(Vector4::from_fn(|k, _| {
            if k >= self.m {
                return 0.0;
            }
            (0..self.m).map(|j| self.vectors[k][j].dot(&layout.row(j).transpose())).sum()
        }))
    }
}

fn check_inputs(object: &[Point3<f64>], image: &[Point2<f64>]) -> Result<()> {
    if object.len() != image.len() {
        return Err(Error::SpecMismatch);
    }
    if object.len() < 4 {
        return Err(Error::TooFew { needed: 4, got: object.len() });
    }
    if object.iter().any(|p| !p.iter().all(|v| v.is_finite())) || image.iter().any(|p| !p.iter().all(|v| v.is_finite()))
    {
        return Err(Error::NonFinite { coordinate: None });
    }
    Ok(())
}

/// Mean pixel reprojection error, or `None` if any point lands behind the camera.
pub(crate) fn mean_reprojection(
    pose: &Pose,
    object: &[Point3<f64>],
    image: &[Point2<f64>],
    k: &CameraIntrinsics,
) -> Option<f64> {
    let mut sum = 0.0;
    for (p, u) in object.iter().zip(image) {
        sum += (k.project_camera_point(&pose.transform_point(p)).ok()? - u).norm();
    }
    Some(sum / object.len() as f64)
}

/// Every point at one common depth along its ray, scaled to match the object's spread.
fn weak_perspective(object: &[Point3<f64>], normalized: &[Point2<f64>]) -> Option<Vec<Point3<f64>>> {
    // Spread measured against the centroid keeps this linear in the point count.
    let n = object.len() as f64;
    let oc = object.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let ic = normalized.iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p.coords) / n;
    let world: f64 = object.iter().map(|p| (p.coords - oc).norm()).sum();
    let image: f64 = normalized.iter().map(|p| (p.coords - ic).norm()).sum();
    if !(image > 0.0) {
        return None;
    }
    let depth = world / image;
    Some(normalized.iter().map(|x| Point3::new(x.x * depth, x.y * depth, depth)).collect())
}

/// Mirrors depths about their mean along each ray; the other side of the
/// depth-reversal ambiguity near weak perspective.
fn reflect_depths(points: &[Point3<f64>], normalized: &[Point2<f64>]) -> Vec<Point3<f64>> {
    let mean = points.iter().map(|p| p.z).sum::<f64>() / points.len() as f64;
    points
        .iter()
        .zip(normalized)
        .map(|(p, x)| {
            let z = 2.0 * mean - p.z;
            Point3::new(x.x * z, x.y * z, z)
        })
        .collect()
}

/// Closed-form pose from at least four 3D-to-2D correspondences.
pub fn epnp(object: &[Point3<f64>], image: &[Point2<f64>], k: &CameraIntrinsics) -> Result<Pose> {
    check_inputs(object, image)?;
    let frame = control_frame(object)?;
    let m = frame.m;
    let normalized: Vec<Point2<f64>> = image.iter().map(|u| k.normalize(u)).collect();

    // MᵀM accumulated from two rows per point; a planar frame pads the last control with a stiff block.
    let mut mtm = SMatrix::<f64, 12, 12>::zeros();
    for (alpha, x) in frame.alphas.iter().zip(&normalized) {
        for (axis, coord) in [(0usize, x.x), (1, x.y)] {
            let mut row = SVector::<f64, 12>::zeros();
            for j in 0..m {
                row[3 * j + axis] = alpha[j];
                row[3 * j + 2] = -alpha[j] * coord;
            }
            mtm.ger(1.0, &row, &row, 1.0);
        }
    }
    if m < 4 {
        let stiff = 1e3 * (mtm.trace() + 1.0);
        for i in 9..12 {
            mtm[(i, i)] = stiff;
        }
    }
    let eig = SymmetricEigen::new(mtm);
    let mut order: [usize; 12] = core::array::from_fn(|i| i);
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vectors: [[Vector3<f64>; 4]; 4] = core::array::from_fn(|kk| {
        let v = eig.eigenvectors.column(order[kk]);
        core::array::from_fn(|j| Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]))
    });
    let null = NullSpace::new(vectors, &frame);

    let mut starts: Vec<Vector4<f64>> = Vec::with_capacity(6);
    starts.extend(null.single());
    starts.extend((2..=3).filter_map(|d| null.linearized(d)));
    starts.extend(null.first_row());
    let flat = weak_perspective(object, &normalized);
    starts.extend(flat.as_deref().and_then(|pts| null.layout_start(pts, &frame)));

    let camera = |beta: &Vector4<f64>| -> Vec<Point3<f64>> {
        let controls = null.controls(beta);
        let sign = {
            let z: f64 = frame.alphas.iter().map(|a| (0..m).map(|j| a[j] * controls[j].z).sum::<f64>()).sum();
            if z < 0.0 {
                -1.0
            } else {
                1.0
            }
        };
        frame
            .alphas
            .iter()
            .map(|a| Point3::from((0..m).map(|j| controls[j] * (a[j] * sign)).sum::<Vector3<f64>>()))
            .collect()
    };

    let mut best: Option<(f64, Pose)> = None;
    let mut consider = |pts: &[Point3<f64>]| {
        let Some(pose) = procrustes(object, pts) else { return };
        let Some(err) = mean_reprojection(&pose, object, image, k) else { return };
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    };
    let mut polished: Vec<Vector4<f64>> = Vec::with_capacity(2 * starts.len());
    for start in &starts {
        let beta = null.polish(start);
        // Starts that land on an already-found solution add nothing.
        if polished.iter().any(|b| (b - beta).norm() <= 1e-9 * beta.norm() || (b + beta).norm() <= 1e-9 * beta.norm()) {
            continue;
        }
        polished.push(beta);
        let pts = camera(&beta);
        consider(&pts);
        if let Some(flipped) = null.layout_start(&reflect_depths(&pts, &normalized), &frame) {
            consider(&camera(&null.polish(&flipped)));
        }
    }
    best.map(|(_, p)| p).ok_or(Error::CheiralityFailure)
}
