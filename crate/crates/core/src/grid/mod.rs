//! The `S×S` prediction grid laid over the image.
//!
//! Offsets are stored in normalized units: the full image width (height) maps
//! to `norm_span` units horizontally (vertically). A cell at center `c`
//! predicting offset `h` places keypoint `i` at `c + h` (after scaling back to
//! pixels), and the residual against the true projection `g` is
//! `Δ = encode(c + h) − encode(g) = h − encode(g)`.

mod raster;

pub use raster::rasterize_ground_truth;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Point2, Vector2};

use crate::error::{Error, Result};

/// Default normalization span for offsets.
pub const DEFAULT_NORM_SPAN: f64 = 10.0;

/// Grid resolution for 608×608 inputs: stride 8 after five stride-2 encoder
/// stages and two stride-2 decoder upsamplings.
pub const DEFAULT_GRID_SIZE: usize = 76;

/// Grid layout and offset normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    size: usize,
    image_width: u32,
    image_height: u32,
    norm_span: f64,
}

impl GridSpec {
    pub fn new(size: usize, image_width: u32, image_height: u32, norm_span: f64) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidGridSpec("grid needs at least 2 cells per side"));
        }
        if image_width == 0 || image_height == 0 {
            return Err(Error::InvalidGridSpec("image size must be positive"));
        }
        if !(image_width as usize).is_multiple_of(size) || !(image_height as usize).is_multiple_of(size) {
            return Err(Error::InvalidGridSpec("image size must be divisible by the grid size"));
        }
        if !(norm_span > 0.0 && norm_span.is_finite()) {
            return Err(Error::InvalidGridSpec("norm_span must be positive"));
        }
        Ok(Self { size, image_width, image_height, norm_span })
    }

    /// 76×76 cells over a 608×608 image.
    pub fn default_608() -> Self {
        Self { size: DEFAULT_GRID_SIZE, image_width: 608, image_height: 608, norm_span: DEFAULT_NORM_SPAN }
    }

    pub fn size(&self) -> usize {
        self.size
    }
    pub fn image_width(&self) -> u32 {
        self.image_width
    }
    pub fn image_height(&self) -> u32 {
        self.image_height
    }
    pub fn norm_span(&self) -> f64 {
        self.norm_span
    }
    pub fn num_cells(&self) -> usize {
        self.size * self.size
    }
    pub fn cell_width(&self) -> f64 {
        f64::from(self.image_width) / self.size as f64
    }
    pub fn cell_height(&self) -> f64 {
        f64::from(self.image_height) / self.size as f64
    }

    pub fn cell(&self, row: usize, col: usize) -> Result<CellIndex> {
        if row >= self.size || col >= self.size {
            return Err(Error::OutOfRange { row, col, size: self.size });
        }
        Ok(CellIndex { row, col })
    }

    /// Cell of a row-major linear index.
    pub fn cell_at(&self, linear: usize) -> Result<CellIndex> {
        self.cell(linear / self.size, linear % self.size)
    }

    pub fn linear(&self, idx: CellIndex) -> usize {
        idx.row * self.size + idx.col
    }

    fn scale(&self) -> Vector2<f64> {
        Vector2::new(self.norm_span / f64::from(self.image_width), self.norm_span / f64::from(self.image_height))
    }

    /// Converts a pixel displacement into normalized units.
    pub fn pixels_to_normalized(&self, d: &Vector2<f64>) -> Vector2<f64> {
        d.component_mul(&self.scale())
    }

    pub fn normalized_to_pixels(&self, d: &Vector2<f64>) -> Vector2<f64> {
        d.component_div(&self.scale())
    }
}

/// Row and column of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

fn check(idx: CellIndex, spec: &GridSpec) -> Result<()> {
    spec.cell(idx.row, idx.col).map(|_| ())
}

/// Pixel position of a cell center.
pub fn cell_center(idx: CellIndex, spec: &GridSpec) -> Result<Point2<f64>> {
    check(idx, spec)?;
    Ok(Point2::new((idx.col as f64 + 0.5) * spec.cell_width(), (idx.row as f64 + 0.5) * spec.cell_height()))
}

/// Normalized offset from the cell center to pixel location `g`.
pub fn encode_offset(g: &Point2<f64>, idx: CellIndex, spec: &GridSpec) -> Result<Vector2<f64>> {
    let c = cell_center(idx, spec)?;
    Ok(spec.pixels_to_normalized(&(g - c)))
}

/// Pixel location predicted by a cell: its center plus the de-normalized offset.
pub fn decode_prediction(idx: CellIndex, kp: &KeypointPrediction, spec: &GridSpec) -> Result<Point2<f64>> {
    let c = cell_center(idx, spec)?;
    Ok(c + spec.normalized_to_pixels(&kp.offset))
}

/// Residual `c + h − g` in normalized units.
pub fn residual(kp: &KeypointPrediction, idx: CellIndex, g: &Point2<f64>, spec: &GridSpec) -> Result<Vector2<f64>> {
    Ok(kp.offset - encode_offset(g, idx, spec)?)
}

/// One predicted keypoint: normalized offset and confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointPrediction {
    pub offset: Vector2<f64>,
    pub confidence: f64,
}

impl KeypointPrediction {
    pub fn new(offset: Vector2<f64>, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidConfig("confidence must lie in [0, 1]"));
        }
        Ok(Self { offset, confidence })
    }

    pub fn zero() -> Self {
        Self { offset: Vector2::zeros(), confidence: 0.0 }
    }
}

/// What one cell predicts: a class label (0 = background) and one entry per keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPrediction {
    pub class_label: usize,
    pub keypoints: Vec<KeypointPrediction>,
}

/// Per-cell predictions for a whole image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    spec: GridSpec,
    num_keypoints: usize,
    cells: Vec<CellPrediction>,
}

impl PredictionGrid {
    pub fn new(spec: GridSpec, num_keypoints: usize, cells: Vec<CellPrediction>) -> Result<Self> {
        if cells.len() != spec.num_cells() || cells.iter().any(|c| c.keypoints.len() != num_keypoints) {
            return Err(Error::SpecMismatch);
        }
        Ok(Self { spec, num_keypoints, cells })
    }

    /// All-background grid with zero offsets and zero confidences.
    pub fn background(spec: GridSpec, num_keypoints: usize) -> Self {
        let cell = CellPrediction { class_label: 0, keypoints: vec![KeypointPrediction::zero(); num_keypoints] };
        Self { spec, num_keypoints, cells: vec![cell; spec.num_cells()] }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn num_keypoints(&self) -> usize {
        self.num_keypoints
    }
    pub fn cells(&self) -> &[CellPrediction] {
        &self.cells
    }

    /// Mutable access to one cell; the keypoint count must be preserved.
    pub fn cell_mut(&mut self, linear: usize) -> &mut CellPrediction {
        &mut self.cells[linear]
    }

    /// Linear indices of cells with a non-background label.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, c)| c.class_label != 0).map(|(i, _)| i)
    }

    /// Pixel locations predicted by a cell, one per keypoint.
    pub fn decoded(&self, linear: usize) -> Vec<Point2<f64>> {
        let idx = CellIndex { row: linear / self.spec.size, col: linear % self.spec.size };
        let c = Point2::new(
            (idx.col as f64 + 0.5) * self.spec.cell_width(),
            (idx.row as f64 + 0.5) * self.spec.cell_height(),
        );
        self.cells[linear].keypoints.iter().map(|kp| c + self.spec.normalized_to_pixels(&kp.offset)).collect()
    }
}

/// One ground-truth instance owning cells of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    /// Index of the instance in its scene.
    pub scene_index: usize,
    pub class_label: usize,
    /// True keypoint projections in pixels.
    pub keypoints: Vec<Point2<f64>>,
}

/// Per-cell ground truth: which instance (if any) owns each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrid {
    spec: GridSpec,
    instances: Vec<GtInstance>,
    owners: Vec<Option<usize>>,
    skipped: Vec<usize>,
}

impl GroundTruthGrid {
    /// `owners[cell]` indexes into `instances`; `skipped` lists scene instances left out.
    pub fn new(
        spec: GridSpec,
        instances: Vec<GtInstance>,
        owners: Vec<Option<usize>>,
        skipped: Vec<usize>,
    ) -> Result<Self> {
        if owners.len() != spec.num_cells() || owners.iter().flatten().any(|&o| o >= instances.len()) {
            return Err(Error::SpecMismatch);
        }
        if instances
            .iter()
            .any(|i| i.class_label == 0 || i.keypoints.iter().any(|k| !(k.x.is_finite() && k.y.is_finite())))
        {
            return Err(Error::InvalidConfig("ground-truth instances need a foreground class and finite keypoints"));
        }
        Ok(Self { spec, instances, owners, skipped })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn instances(&self) -> &[GtInstance] {
        &self.instances
    }
    pub fn owners(&self) -> &[Option<usize>] {
        &self.owners
    }
    /// Scene instances not rasterized because they were behind the camera.
    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    pub fn owner(&self, linear: usize) -> Option<&GtInstance> {
        self.owners[linear].map(|o| &self.instances[o])
    }

    pub fn class_label(&self, linear: usize) -> usize {
        self.owner(linear).map_or(0, |i| i.class_label)
    }

    /// Linear indices of foreground cells (the segmentation mask).
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.owners.iter().enumerate().filter(|(_, o)| o.is_some()).map(|(i, _)| i)
    }

    /// Number of cells of each class `0..num_classes`.
    pub fn class_counts(&self, num_classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_classes];
        for i in 0..self.owners.len() {
            let c = self.class_label(i);
            if c < num_classes {
                counts[c] += 1;
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec608(s: usize) -> GridSpec {
        GridSpec::new(s, 608, 608, DEFAULT_NORM_SPAN).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(1, 608, 608, 10.0).is_err());
        assert!(GridSpec::new(7, 608, 608, 10.0).is_err());
        assert!(GridSpec::new(19, 608, 608, 0.0).is_err());
        assert_eq!(GridSpec::default_608(), spec608(76));
    }

    #[test]
    fn cell_centers() {
        let spec = spec608(2);
        assert_eq!(cell_center(CellIndex { row: 0, col: 0 }, &spec).unwrap(), Point2::new(152.0, 152.0));
        assert_eq!(cell_center(CellIndex { row: 1, col: 1 }, &spec).unwrap(), Point2::new(456.0, 456.0));
        assert!(matches!(cell_center(CellIndex { row: 2, col: 0 }, &spec), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn all_centers_distinct_and_inside() {
        let spec = GridSpec::new(19, 608, 304, 10.0).unwrap();
        let mut centers = Vec::new();
        for r in 0..19 {
            for c in 0..19 {
                let p = cell_center(CellIndex { row: r, col: c }, &spec).unwrap();
                assert!(p.x > 0.0 && p.x < 608.0 && p.y > 0.0 && p.y < 304.0);
                centers.push(p);
            }
        }
        for (i, a) in centers.iter().enumerate() {
            for b in &centers[i + 1..] {
                assert!(a != b);
            }
        }
    }

    #[test]
    fn encode_examples() {
        let spec = spec608(19);
        let idx = CellIndex { row: 3, col: 5 };
        let c = cell_center(idx, &spec).unwrap();
        assert_eq!(encode_offset(&c, idx, &spec).unwrap(), Vector2::zeros());
        let h = encode_offset(&(c + Vector2::new(60.8, 0.0)), idx, &spec).unwrap();
        assert!((h - Vector2::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let spec = spec608(19);
        let idx = CellIndex { row: 7, col: 2 };
        let g = Point2::new(100.0, 250.0);
        let perfect = KeypointPrediction::new(encode_offset(&g, idx, &spec).unwrap(), 1.0).unwrap();
        assert!(residual(&perfect, idx, &g, &spec).unwrap().norm() < 1e-12);
        let c = cell_center(idx, &spec).unwrap();
        let kp = KeypointPrediction::new(Vector2::new(1.0, 0.0), 0.5).unwrap();
        assert!((residual(&kp, idx, &c, &spec).unwrap() - Vector2::new(1.0, 0.0)).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(gx in -2000.0f64..2000.0, gy in -2000.0f64..2000.0,
                                    row in 0usize..19, col in 0usize..19) {
            let spec = spec608(19);
            let idx = CellIndex { row, col };
            let g = Point2::new(gx, gy);
            let kp = KeypointPrediction::new(encode_offset(&g, idx, &spec).unwrap(), 0.3).unwrap();
            prop_assert!((decode_prediction(idx, &kp, &spec).unwrap() - g).norm() < 1e-9);
        }

        #[test]
        fn residual_norm_is_scaled_pixel_error(dx in -100.0f64..100.0, dy in -100.0f64..100.0,
                                                row in 0usize..19, col in 0usize..19) {
            let spec = spec608(19);
            let idx = CellIndex { row, col };
            let g = Point2::new(300.0, 200.0);
            let h = encode_offset(&(g + Vector2::new(dx, dy)), idx, &spec).unwrap();
            let kp = KeypointPrediction::new(h, 1.0).unwrap();
            let r = residual(&kp, idx, &g, &spec).unwrap();
            let px_err = (dx * dx + dy * dy).sqrt();
            prop_assert!((r.norm() - px_err * 10.0 / 608.0).abs() < 1e-9);
        }

        #[test]
        fn norm_span_rescales_offsets_only(gx in -500.0f64..1000.0, gy in -500.0f64..1000.0, span in 0.5f64..50.0) {
            let a = spec608(19);
            let b = GridSpec::new(19, 608, 608, span).unwrap();
            let idx = CellIndex { row: 4, col: 11 };
            let g = Point2::new(gx, gy);
            let ha = encode_offset(&g, idx, &a).unwrap();
            let hb = encode_offset(&g, idx, &b).unwrap();
            prop_assert!((hb - ha * (span / 10.0)).norm() < 1e-9);
            let kb = KeypointPrediction::new(hb, 0.0).unwrap();
            prop_assert!((decode_prediction(idx, &kb, &b).unwrap() - g).norm() < 1e-9);
        }
    }
}
