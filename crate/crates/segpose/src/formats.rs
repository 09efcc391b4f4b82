//! Versioned JSON interchange formats and their conversions to core types.
//!
//! Every file carries `schema_version`. Numbers are written in the shortest
//! form that parses back to the same double.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point2, Point3, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use segpose_core::evaluation::{AccuracyRow, AccuracyTable, EvalRecord, FalsePositive, InstanceKey, Status};
use segpose_core::fusion::{Correspondence, CorrespondenceSet};
use segpose_core::geometry::{CameraIntrinsics, ObjectModel, Pose};
use segpose_core::grid::{CellPrediction, GridSpec, GroundTruthGrid, GtInstance, KeypointPrediction, PredictionGrid};
use segpose_core::scene::{Instance, Scene};
use segpose_core::Error as CoreError;

use crate::config::{parse_strategy, strategy_label};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

/// Parses `text`, reporting the path of the first offending field.
pub fn from_json_str<T: DeserializeOwned>(text: &str, file: &str) -> Result<T> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| Error::Schema {
        file: file.into(),
        path: ".".into(),
        message: e.to_string(),
    })?;
    match probe.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(found) => return Err(Error::SchemaVersion { file: file.into(), found, expected: SCHEMA_VERSION }),
        None => {
            return Err(Error::Schema {
                file: file.into(),
                path: "schema_version".into(),
                message: "missing field `schema_version`".into(),
            })
        }
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        file: file.into(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    from_json_str(&text, &path.display().to_string())
}

pub fn to_json<T: Serialize>(value: &T, pretty: bool) -> String {
    let mut s = if pretty { serde_json::to_string_pretty(value) } else { serde_json::to_string(value) }
        .expect("format types serialize");
    s.push('\n');
    s
}

pub fn save_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    fs::write(path, to_json(value, pretty)).map_err(Error::io(path))
}

fn data_error(file: &'static str) -> impl Fn(CoreError) -> Error {
    move |source| Error::Data { file, source }
}

fn p3(p: &Point3<f64>) -> [f64; 3] {
    [p.x, p.y, p.z]
}
fn p2(p: &Point2<f64>) -> [f64; 2] {
    [p.x, p.y]
}
fn to_p3(a: &[f64; 3]) -> Point3<f64> {
    Point3::new(a[0], a[1], a[2])
}
fn to_p2(a: &[f64; 2]) -> Point2<f64> {
    Point2::new(a[0], a[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl IntrinsicsRecord {
    pub fn from_core(k: &CameraIntrinsics) -> Self {
        Self { fx: k.fx(), fy: k.fy(), cx: k.cx(), cy: k.cy(), width: k.width(), height: k.height() }
    }
    pub fn to_core(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(data_error("intrinsics"))
    }
}

/// Rotation rows and translation, object to camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_core(p: &Pose) -> Self {
        let r = p.rotation();
        let t = p.translation();
        Self { rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]), translation: [t.x, t.y, t.z] }
    }
    pub fn to_core(&self) -> Result<Pose> {
        let r = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let t = Vector3::new(self.translation[0], self.translation[1], self.translation[2]);
        Pose::new(r, t).map_err(data_error("pose"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub models: Vec<ModelRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub id: usize,
    pub name: String,
    pub symmetric: bool,
    pub diameter: f64,
    pub keypoints: Vec<[f64; 3]>,
    pub surface_points: Vec<[f64; 3]>,
}

impl ModelFile {
    pub fn from_models(models: &[ObjectModel]) -> Self {
        let models = models
            .iter()
            .map(|m| ModelRecord {
                id: m.id(),
                name: m.name().into(),
                symmetric: m.symmetric(),
                diameter: m.diameter(),
                keypoints: m.keypoints().iter().map(p3).collect(),
                surface_points: m.surface_points().iter().map(p3).collect(),
            })
            .collect();
        Self { schema_version: SCHEMA_VERSION, models }
    }

    pub fn to_models(&self) -> Result<Vec<ObjectModel>> {
        self.models
            .iter()
            .map(|m| {
                ObjectModel::new(
                    m.id,
                    m.name.clone(),
                    m.keypoints.iter().map(to_p3).collect(),
                    m.surface_points.iter().map(to_p3).collect(),
                    m.diameter,
                    m.symmetric,
                )
                .map_err(data_error("models"))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema_version: u32,
    pub scenes: Vec<SceneRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub intrinsics: IntrinsicsRecord,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub model_id: usize,
    pub pose: PoseRecord,
}

impl SceneRecord {
    pub fn from_core(scene_id: u64, scene: &Scene) -> Self {
        Self {
            scene_id,
            intrinsics: IntrinsicsRecord::from_core(&scene.intrinsics),
            instances: scene
                .instances
                .iter()
                .map(|i| InstanceRecord { model_id: i.model_id, pose: PoseRecord::from_core(&i.pose) })
                .collect(),
        }
    }

    pub fn to_core(&self) -> Result<Scene> {
        let instances = self
            .instances
            .iter()
            .map(|i| Ok(Instance { model_id: i.model_id, pose: i.pose.to_core()? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene::new(self.intrinsics.to_core()?, instances))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpecRecord {
    pub size: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub norm_span: f64,
}

impl GridSpecRecord {
    pub fn from_core(s: &GridSpec) -> Self {
        Self { size: s.size(), image_width: s.image_width(), image_height: s.image_height(), norm_span: s.norm_span() }
    }
    pub fn to_core(&self) -> Result<GridSpec> {
        GridSpec::new(self.size, self.image_width, self.image_height, self.norm_span).map_err(data_error("grid spec"))
    }
}

/// Prediction grids; cells equal to an empty background cell are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub schema_version: u32,
    pub scenes: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub scene_id: u64,
    pub spec: GridSpecRecord,
    pub num_keypoints: usize,
    pub cells: Vec<CellRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRecord {
    pub index: usize,
    pub class_label: usize,
    pub offsets: Vec<[f64; 2]>,
    pub confidences: Vec<f64>,
}

impl PredictionRecord {
    pub fn from_core(scene_id: u64, grid: &PredictionGrid) -> Self {
        let empty =
            |c: &CellPrediction| c.class_label == 0 && c.keypoints.iter().all(|k| *k == KeypointPrediction::zero());
        let cells = grid
            .cells()
            .iter()
            .enumerate()
            .filter(|(_, c)| !empty(c))
            .map(|(index, c)| CellRecord {
                index,
                class_label: c.class_label,
                offsets: c.keypoints.iter().map(|k| [k.offset.x, k.offset.y]).collect(),
                confidences: c.keypoints.iter().map(|k| k.confidence).collect(),
            })
            .collect();
        Self { scene_id, spec: GridSpecRecord::from_core(grid.spec()), num_keypoints: grid.num_keypoints(), cells }
    }

    pub fn to_core(&self) -> Result<PredictionGrid> {
        let spec = self.spec.to_core()?;
        let mut grid = PredictionGrid::background(spec, self.num_keypoints);
        for c in &self.cells {
            if c.index >= spec.num_cells()
                || c.offsets.len() != self.num_keypoints
                || c.confidences.len() != self.num_keypoints
            {
                return Err(Error::Data { file: "predictions", source: CoreError::SpecMismatch });
            }
            let keypoints = c
                .offsets
                .iter()
                .zip(&c.confidences)
                .map(|(o, &conf)| KeypointPrediction::new(Vector2::new(o[0], o[1]), conf))
                .collect::<Result<Vec<_>, _>>()
                .map_err(data_error("predictions"))?;
            *grid.cell_mut(c.index) = CellPrediction { class_label: c.class_label, keypoints };
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub schema_version: u32,
    pub scenes: Vec<GroundTruthRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub scene_id: u64,
    pub spec: GridSpecRecord,
    pub instances: Vec<GtInstanceRecord>,
    /// `[cell, instance]` for every owned cell.
    pub owners: Vec<[usize; 2]>,
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtInstanceRecord {
    pub scene_index: usize,
    pub class_label: usize,
    pub keypoints: Vec<[f64; 2]>,
}

impl GroundTruthRecord {
    pub fn from_core(scene_id: u64, gt: &GroundTruthGrid) -> Self {
        Self {
            scene_id,
            spec: GridSpecRecord::from_core(gt.spec()),
            instances: gt
                .instances()
                .iter()
                .map(|i| GtInstanceRecord {
                    scene_index: i.scene_index,
                    class_label: i.class_label,
                    keypoints: i.keypoints.iter().map(p2).collect(),
                })
                .collect(),
            owners: gt.owners().iter().enumerate().filter_map(|(c, o)| o.map(|o| [c, o])).collect(),
            skipped: gt.skipped().to_vec(),
        }
    }

    pub fn to_core(&self) -> Result<GroundTruthGrid> {
        let spec = self.spec.to_core()?;
        let mut owners = vec![None; spec.num_cells()];
        for &[cell, owner] in &self.owners {
            *owners.get_mut(cell).ok_or(Error::Data { file: "ground truth", source: CoreError::SpecMismatch })? =
                Some(owner);
        }
        let instances = self
            .instances
            .iter()
            .map(|i| GtInstance {
                scene_index: i.scene_index,
                class_label: i.class_label,
                keypoints: i.keypoints.iter().map(to_p2).collect(),
            })
            .collect();
        GroundTruthGrid::new(spec, instances, owners, self.skipped.clone()).map_err(data_error("ground truth"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondenceFile {
    pub schema_version: u32,
    pub scenes: Vec<SceneCorrespondences>,
}

/// Fusion output for one scene: detected clusters, their ground-truth
/// matches, and the correspondences each strategy selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneCorrespondences {
    pub scene_id: u64,
    /// Scene indices of the instances that count towards accuracy.
    pub evaluated_instances: Vec<usize>,
    pub detections: Vec<Detection>,
    pub selections: Vec<Selection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub cluster: usize,
    pub class_label: usize,
    pub cells: usize,
    pub centroid: [f64; 2],
    /// Scene index of the matched instance; `None` for a false positive.
    pub instance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    pub cluster: usize,
    pub strategy: String,
    pub class_label: usize,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub keypoint: usize,
    pub object_point: [f64; 3],
    pub image_point: [f64; 2],
    pub confidence: f64,
    pub cell: usize,
}

impl Selection {
    pub fn from_core(cluster: usize, strategy: &str, set: &CorrespondenceSet) -> Self {
        Self {
            cluster,
            strategy: strategy.into(),
            class_label: set.class_label,
            pairs: set
                .pairs
                .iter()
                .map(|c| PairRecord {
                    keypoint: c.keypoint,
                    object_point: p3(&c.object_point),
                    image_point: p2(&c.image_point),
                    confidence: c.confidence,
                    cell: c.cell,
                })
                .collect(),
        }
    }

    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.pairs
            .iter()
            .map(|p| Correspondence {
                keypoint: p.keypoint,
                object_point: to_p3(&p.object_point),
                image_point: to_p2(&p.image_point),
                confidence: p.confidence,
                cell: p.cell,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub schema_version: u32,
    pub solutions: Vec<SolutionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionRecord {
    pub scene_id: u64,
    pub cluster: usize,
    pub strategy: String,
    /// `None` when the solver failed; `failure` then says why.
    pub pose: Option<PoseRecord>,
    pub inliers: Vec<bool>,
    pub mean_reprojection_px: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsFile {
    pub schema_version: u32,
    pub records: Vec<RecordRow>,
    pub false_positives: Vec<FalsePositiveRow>,
}

/// One evaluated instance. Also the row layout of `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordRow {
    pub scene_id: u64,
    pub instance_id: usize,
    pub class_label: usize,
    pub strategy: String,
    pub status: String,
    pub rep_px: Option<f64>,
    pub add_units: Option<f64>,
    pub rotation_error_rad: Option<f64>,
    pub diameter: f64,
    pub correct_rep5: bool,
    pub correct_add01d: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FalsePositiveRow {
    pub scene_id: u64,
    pub class_label: usize,
    pub strategy: String,
}

fn status_from_name(name: &str) -> Result<Status> {
    [Status::Solved, Status::Missed, Status::SolveFailed, Status::BehindCamera]
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::Schema {
            file: "results".into(),
            path: "status".into(),
            message: format!("unknown status `{name}`"),
        })
}

fn strategy_from_label(label: &str) -> Result<segpose_core::fusion::Strategy> {
    parse_strategy(label, 0).map_err(|_| Error::Schema {
        file: "results".into(),
        path: "strategy".into(),
        message: format!("unknown strategy `{label}`"),
    })
}

impl RecordRow {
    pub fn from_core(r: &EvalRecord) -> Self {
        Self {
            scene_id: r.key.scene_id,
            instance_id: r.key.instance_id,
            class_label: r.key.class_label,
            strategy: strategy_label(r.key.strategy),
            status: r.status.name().into(),
            rep_px: r.rep_px,
            add_units: r.add,
            rotation_error_rad: r.rotation_error_rad,
            diameter: r.diameter,
            correct_rep5: r.correct_rep5,
            correct_add01d: r.correct_add01d,
        }
    }

    pub fn to_core(&self) -> Result<EvalRecord> {
        Ok(EvalRecord {
            key: InstanceKey {
                scene_id: self.scene_id,
                instance_id: self.instance_id,
                class_label: self.class_label,
                strategy: strategy_from_label(&self.strategy)?,
            },
            status: status_from_name(&self.status)?,
            rep_px: self.rep_px,
            add: self.add_units,
            rotation_error_rad: self.rotation_error_rad,
            diameter: self.diameter,
            correct_rep5: self.correct_rep5,
            correct_add01d: self.correct_add01d,
            solve_time_us: None,
        })
    }
}

impl FalsePositiveRow {
    pub fn from_core(f: &FalsePositive) -> Self {
        Self { scene_id: f.scene_id, class_label: f.class_label, strategy: strategy_label(f.strategy) }
    }
    pub fn to_core(&self) -> Result<FalsePositive> {
        Ok(FalsePositive {
            scene_id: self.scene_id,
            class_label: self.class_label,
            strategy: strategy_from_label(&self.strategy)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFile {
    pub schema_version: u32,
    pub rows: Vec<TableRow>,
    pub overall: Vec<TableRow>,
}

/// One accuracy row. Also the row layout of `table.csv`, where the overall
/// rows carry an empty class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub strategy: String,
    pub class_label: Option<usize>,
    pub instances: usize,
    pub correct_rep5: usize,
    pub correct_add01d: usize,
    pub missed: usize,
    pub false_positives: usize,
    pub rep5_pct: f64,
    pub add01d_pct: f64,
    pub class_mean_rep5_pct: f64,
    pub class_mean_add01d_pct: f64,
}

impl TableRow {
    fn from_core(r: &AccuracyRow) -> Self {
        Self {
            strategy: strategy_label(r.strategy),
            class_label: r.class_label,
            instances: r.instances,
            correct_rep5: r.correct_rep5,
            correct_add01d: r.correct_add01d,
            missed: r.missed,
            false_positives: r.false_positives,
            rep5_pct: r.rep5_pct,
            add01d_pct: r.add01d_pct,
            class_mean_rep5_pct: r.class_mean_rep5_pct,
            class_mean_add01d_pct: r.class_mean_add01d_pct,
        }
    }
}

impl TableFile {
    pub fn from_core(t: &AccuracyTable) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            rows: t.rows.iter().map(TableRow::from_core).collect(),
            overall: t.overall.iter().map(TableRow::from_core).collect(),
        }
    }
}
