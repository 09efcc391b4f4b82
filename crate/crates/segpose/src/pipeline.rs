//! The pipeline stages as library functions. Each CLI subcommand is a thin
//! wrapper around one of these; [`run_pipeline`] chains them per scene.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use segpose_core::evaluation::{
    aggregate, evaluate_instance, match_detections, AccuracyTable, EvalRecord, FalsePositive, InstanceKey, Status,
};
use segpose_core::fusion::{cluster_cells, discard_small, select, Strategy};
use segpose_core::geometry::{CameraIntrinsics, ObjectModel};
use segpose_core::grid::{GroundTruthGrid, PredictionGrid};
use segpose_core::pnp::ransac_pnp;
use segpose_core::scene::{find_model, Scene};
use segpose_core::simulator::{sample_scene, standard_models, stream_rng, synthesize_predictions};

use crate::config::{mix, strategy_label, PipelineConfig};
use crate::error::{Error, Result};
use crate::formats::{Detection, PoseRecord, SceneCorrespondences, Selection, SolutionRecord, SCHEMA_VERSION};

fn micros(start: Instant) -> u64 {
    start.elapsed().as_micros() as u64
}

/// The object library of a run.
pub fn models(config: &PipelineConfig) -> Vec<ObjectModel> {
    standard_models(config.seeds.models)
}

/// Scenes `0..config.scenes`, each from its own random stream.
pub fn simulate_scenes(config: &PipelineConfig, models: &[ObjectModel]) -> Result<Vec<(u64, Scene)>> {
    config.validate()?;
    let k = config.camera.to_core()?;
    let scene_config = config.scene.to_core();
    (0..config.scenes as u64)
        .into_par_iter()
        .map(|id| {
            let scene = sample_scene(&scene_config, models, &k, &mut stream_rng(config.seeds.scenes, id))
                .map_err(Error::stage("simulate"))?;
            Ok((id, scene))
        })
        .collect()
}

/// Noisy predictions and ground truth for one scene.
pub fn synthesize_scene(
    config: &PipelineConfig,
    models: &[ObjectModel],
    scene_id: u64,
    scene: &Scene,
) -> Result<(PredictionGrid, GroundTruthGrid)> {
    let spec = config.grid_spec()?;
    let noise = config.noise.to_core();
    let mut rng = stream_rng(config.seeds.noise, scene_id);
    synthesize_predictions(scene, models, &spec, &scene.intrinsics, &noise, &mut rng).map_err(Error::stage("synth"))
}

/// Clusters one prediction grid, matches clusters to ground truth, and
/// selects correspondences for each configured strategy. Also returns the
/// time spent per selection, each including an equal share of the clustering.
pub fn fuse_scene(
    config: &PipelineConfig,
    models: &[ObjectModel],
    scene_id: u64,
    grid: &PredictionGrid,
    gt: &GroundTruthGrid,
) -> Result<(SceneCorrespondences, Vec<u64>)> {
    let strategies = config.fusion.parsed_strategies()?;
    let start = Instant::now();
    let threshold = config.fusion.threshold(grid.spec().image_width());
    let clusters = discard_small(cluster_cells(grid, threshold), config.fusion.min_cells);
    let cluster_us = micros(start);

    // Instances too occluded to ever form a cluster are left out of the evaluation.
    let mut owned = vec![0usize; gt.instances().len()];
    for o in gt.owners().iter().flatten() {
        owned[*o] += 1;
    }
    let evaluated: Vec<usize> = (0..owned.len()).filter(|&i| owned[i] >= config.fusion.min_cells).collect();
    let candidates: Vec<_> = evaluated.iter().map(|&i| gt.instances()[i].clone()).collect();
    let assignment = match_detections(&clusters, &candidates);

    let detections: Vec<Detection> = clusters
        .iter()
        .enumerate()
        .map(|(c, cluster)| {
            let centroid = cluster.centroid();
            Detection {
                cluster: c,
                class_label: cluster.class_label,
                cells: cluster.cells.len(),
                centroid: [centroid.x, centroid.y],
                instance: assignment.matches.iter().find(|(m, _)| *m == c).map(|(_, i)| candidates[*i].scene_index),
            }
        })
        .collect();

    let mut selections = Vec::new();
    let mut times = Vec::new();
    for &(c, i) in &assignment.matches {
        let cluster = &clusters[c];
        let model = find_model(models, cluster.class_label).map_err(Error::stage("fuse"))?;
        for &strategy in &strategies {
            let start = Instant::now();
            let set = select(cluster, model.keypoints(), strategy, Some(&candidates[i].keypoints))
                .map_err(Error::stage("fuse"))?;
            times.push(micros(start));
            selections.push(Selection::from_core(c, &strategy_label(strategy), &set));
        }
    }
    let share = cluster_us / assignment.matches.len().max(1) as u64;
    for t in &mut times {
        *t += share;
    }
    let instances = gt.instances().iter().map(|i| i.scene_index);
    let evaluated_instances = evaluated.iter().map(|&i| instances.clone().nth(i).expect("index in range")).collect();
    Ok((SceneCorrespondences { scene_id, evaluated_instances, detections, selections }, times))
}

/// RANSAC seed for one cluster; shared by all strategies so they see the same draws.
pub fn ransac_seed(config: &PipelineConfig, scene_id: u64, cluster: usize) -> u64 {
    mix(mix(config.seeds.ransac, scene_id), cluster as u64)
}

/// Solves every selection of a scene, in order. Solver failures are recorded,
/// not raised.
pub fn solve_scene(
    config: &PipelineConfig,
    k: &CameraIntrinsics,
    fused: &SceneCorrespondences,
) -> (Vec<SolutionRecord>, Vec<u64>) {
    fused
        .selections
        .iter()
        .map(|sel| {
            let params = config.ransac.to_core(ransac_seed(config, fused.scene_id, sel.cluster));
            let pairs = sel.correspondences();
            let start = Instant::now();
            let result = ransac_pnp(&pairs, k, &params);
            let time = micros(start);
            let record = match result {
                Ok(sol) => SolutionRecord {
                    scene_id: fused.scene_id,
                    cluster: sel.cluster,
                    strategy: sel.strategy.clone(),
                    pose: Some(PoseRecord::from_core(&sol.pose)),
                    inliers: sol.inliers,
                    mean_reprojection_px: Some(sol.mean_reprojection_px),
                    failure: None,
                },
                Err(e) => SolutionRecord {
                    scene_id: fused.scene_id,
                    cluster: sel.cluster,
                    strategy: sel.strategy.clone(),
                    pose: None,
                    inliers: Vec::new(),
                    mean_reprojection_px: None,
                    failure: Some(e.to_string()),
                },
            };
            (record, time)
        })
        .unzip()
}

/// Scores one scene. `solutions` holds the solver output for the scene's
/// selections in any order; `times`, when given, runs parallel to `solutions`.
pub fn evaluate_scene(
    config: &PipelineConfig,
    models: &[ObjectModel],
    scene: &Scene,
    fused: &SceneCorrespondences,
    solutions: &[SolutionRecord],
    times: Option<&[u64]>,
) -> Result<(Vec<EvalRecord>, Vec<FalsePositive>)> {
    let strategies = config.fusion.parsed_strategies()?;
    let mut records = Vec::new();
    for &index in &fused.evaluated_instances {
        let inst = scene
            .instances
            .get(index)
            .ok_or(Error::Data { file: "correspondences", source: segpose_core::Error::SpecMismatch })?;
        let model = find_model(models, inst.model_id).map_err(Error::stage("evaluate"))?;
        let detection = fused.detections.iter().find(|d| d.instance == Some(index));
        for &strategy in &strategies {
            let key = InstanceKey { scene_id: fused.scene_id, instance_id: index, class_label: model.id(), strategy };
            let label = strategy_label(strategy);
            let solved = detection.and_then(|d| {
                solutions
                    .iter()
                    .position(|s| s.scene_id == fused.scene_id && s.cluster == d.cluster && s.strategy == label)
            });
            let record = match (detection, solved) {
                (None, _) => EvalRecord::unsolved(key, Status::Missed, model),
                (Some(_), None) => EvalRecord::unsolved(key, Status::SolveFailed, model),
                (Some(_), Some(s)) => match &solutions[s].pose {
                    None => EvalRecord::unsolved(key, Status::SolveFailed, model),
                    Some(pose) => {
                        let mut r = evaluate_instance(key, &pose.to_core()?, &inst.pose, model, &scene.intrinsics);
                        r.solve_time_us = times.map(|t| t[s]);
                        r
                    }
                },
            };
            records.push(record);
        }
    }
    let false_positives = fused
        .detections
        .iter()
        .filter(|d| d.instance.is_none())
        .flat_map(|d| {
            strategies.iter().map(move |&strategy| FalsePositive {
                scene_id: fused.scene_id,
                class_label: d.class_label,
                strategy,
            })
        })
        .collect();
    Ok((records, false_positives))
}

/// Everything one scene contributes to a run.
#[derive(Debug, Clone)]
pub struct SceneOutcome {
    pub scene_id: u64,
    pub scene: Scene,
    pub correspondences: SceneCorrespondences,
    pub solutions: Vec<SolutionRecord>,
    pub records: Vec<EvalRecord>,
    pub false_positives: Vec<FalsePositive>,
    pub stage_us: StageTimes,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub simulate: u64,
    pub synth: u64,
    pub fuse: u64,
    pub solve: u64,
    pub evaluate: u64,
}

impl std::ops::AddAssign for StageTimes {
    fn add_assign(&mut self, o: Self) {
        self.simulate += o.simulate;
        self.synth += o.synth;
        self.fuse += o.fuse;
        self.solve += o.solve;
        self.evaluate += o.evaluate;
    }
}

/// All stages for scene `scene_id`.
pub fn run_scene(config: &PipelineConfig, models: &[ObjectModel], scene_id: u64) -> Result<SceneOutcome> {
    let k = config.camera.to_core()?;
    let mut t = StageTimes::default();
    let start = Instant::now();
    let scene = sample_scene(&config.scene.to_core(), models, &k, &mut stream_rng(config.seeds.scenes, scene_id))
        .map_err(Error::stage("simulate"))?;
    t.simulate = micros(start);
    let start = Instant::now();
    let (grid, gt) = synthesize_scene(config, models, scene_id, &scene)?;
    t.synth = micros(start);
    let start = Instant::now();
    let (correspondences, fuse_times) = fuse_scene(config, models, scene_id, &grid, &gt)?;
    t.fuse = micros(start);
    let start = Instant::now();
    let (solutions, solve_times) = solve_scene(config, &k, &correspondences);
    t.solve = micros(start);
    let times: Vec<u64> = fuse_times.iter().zip(&solve_times).map(|(a, b)| a + b).collect();
    let start = Instant::now();
    let (records, false_positives) =
        evaluate_scene(config, models, &scene, &correspondences, &solutions, Some(&times))?;
    t.evaluate = micros(start);
    Ok(SceneOutcome { scene_id, scene, correspondences, solutions, records, false_positives, stage_us: t })
}

/// Per-strategy distribution of fuse+solve time per object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub strategy: String,
    pub objects: usize,
    pub mean_us: f64,
    pub median_us: u64,
    pub p95_us: u64,
    pub max_us: u64,
}

pub fn timing_summary(records: &[EvalRecord]) -> Vec<TimingSummary> {
    let mut by: BTreeMap<Strategy, Vec<u64>> = BTreeMap::new();
    for r in records {
        if let Some(t) = r.solve_time_us {
            by.entry(r.key.strategy).or_default().push(t);
        }
    }
    by.into_iter()
        .map(|(s, mut v)| {
            v.sort_unstable();
            let n = v.len();
            TimingSummary {
                strategy: strategy_label(s),
                objects: n,
                mean_us: v.iter().sum::<u64>() as f64 / n as f64,
                median_us: v[n / 2],
                p95_us: v[((n as f64 * 0.95) as usize).min(n - 1)],
                max_us: v[n - 1],
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Summed over scenes; scenes may run concurrently.
    pub cpu_ms: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub segpose: String,
    pub schema: u32,
}

/// Provenance of a run. Everything except the timings is a function of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub versions: Versions,
    pub scenes: usize,
    pub instances: usize,
    /// Instances with too few visible cells to be detected, left out of the tables.
    pub excluded_instances: usize,
    pub stages: Vec<StageRecord>,
    pub wall_ms: f64,
    pub timing: Vec<TimingSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: AccuracyTable,
    pub manifest: RunManifest,
    pub scenes: Vec<SceneOutcome>,
}

impl RunOutput {
    pub fn records(&self) -> impl Iterator<Item = &EvalRecord> {
        self.scenes.iter().flat_map(|s| &s.records)
    }
    pub fn false_positives(&self) -> impl Iterator<Item = &FalsePositive> {
        self.scenes.iter().flat_map(|s| &s.false_positives)
    }
}

/// simulate → synthesize → fuse → solve → evaluate over every scene, in parallel
/// across scenes. Output is independent of the thread count.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    let start = Instant::now();
    let models = models(config);
    let scenes: Vec<SceneOutcome> =
        (0..config.scenes as u64).into_par_iter().map(|id| run_scene(config, &models, id)).collect::<Result<_>>()?;
    let records: Vec<EvalRecord> = scenes.iter().flat_map(|s| s.records.iter().copied()).collect();
    let false_positives: Vec<FalsePositive> = scenes.iter().flat_map(|s| s.false_positives.iter().copied()).collect();
    let table = aggregate(&records, &false_positives);

    let mut totals = StageTimes::default();
    for s in &scenes {
        totals += s.stage_us;
    }
    let stage = |name: &str, us: u64| StageRecord { name: name.into(), cpu_ms: us as f64 / 1e3, outputs: Vec::new() };
    let instances: usize = scenes.iter().map(|s| s.scene.instances.len()).sum();
    let evaluated: usize = scenes.iter().map(|s| s.correspondences.evaluated_instances.len()).sum();
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: config.hash(),
        versions: Versions { segpose: env!("CARGO_PKG_VERSION").into(), schema: SCHEMA_VERSION },
        scenes: scenes.len(),
        instances,
        excluded_instances: instances - evaluated,
        stages: vec![
            stage("simulate", totals.simulate),
            stage("synth", totals.synth),
            stage("fuse", totals.fuse),
            stage("solve", totals.solve),
            stage("evaluate", totals.evaluate),
        ],
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        timing: timing_summary(&records),
    };
    Ok(RunOutput { table, manifest, scenes })
}
