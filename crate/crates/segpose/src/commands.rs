//! One function per CLI subcommand, with the same semantics as the command.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use segpose_core::evaluation::{aggregate, AccuracyTable};
use segpose_core::geometry::ObjectModel;

use crate::config::{PipelineConfig, Seeds};
use crate::error::{Error, Result};
use crate::formats::{
    load_json, save_json, CorrespondenceFile, GroundTruthFile, GroundTruthRecord, ModelFile, PredictionFile,
    PredictionRecord, SceneFile, SceneRecord, SolutionFile, TableFile, SCHEMA_VERSION,
};
use crate::gradcheck::{check_seed, LossCheck};
use crate::pipeline::{
    self, evaluate_scene, fuse_scene, run_scene, solve_scene, synthesize_scene, RunManifest, TimingSummary,
};
use crate::report::{records_csv, render_table, results_file, table_csv, write_run};

/// Command-line adjustments applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scenes: Option<usize>,
    pub noise_profile: Option<String>,
    pub strategies: Option<Vec<String>>,
    pub best_n: Option<usize>,
    pub threshold_px: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

/// Defaults, then the file at `path`, then `overrides`; validated.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<PipelineConfig> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(Error::io(p))?;
            crate::formats::from_json_str::<PipelineConfig>(&text, &p.display().to_string()).map_err(|e| match e {
                Error::Schema { file, path, message } => Error::Config(format!("{file}: `{path}`: {message}")),
                other => other,
            })?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        config.seeds = Seeds::from_master(seed);
    }
    if let Some(n) = overrides.scenes {
        config.scenes = n;
    }
    if let Some(profile) = &overrides.noise_profile {
        config.noise = crate::config::NoiseSection::profile(profile)?;
    }
    if let Some(s) = &overrides.strategies {
        config.fusion.strategies = s.clone();
    }
    if let Some(n) = overrides.best_n {
        config.fusion.best_n = n;
    }
    if let Some(t) = overrides.threshold_px {
        config.fusion.threshold_px = Some(t);
    }
    if let Some(dir) = &overrides.output_dir {
        config.paths.output_dir = Some(dir.clone());
    }
    config.validate()?;
    Ok(config)
}

fn output_dir(config: &PipelineConfig) -> Result<PathBuf> {
    config
        .paths
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory (set paths.output_dir or --out)".into()))
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

fn load_models(path: &Path) -> Result<Vec<ObjectModel>> {
    load_json::<ModelFile>(path)?.to_models()
}

fn load_scenes(path: &Path) -> Result<Vec<(u64, segpose_core::scene::Scene)>> {
    load_json::<SceneFile>(path)?.scenes.iter().map(|s| Ok((s.scene_id, s.to_core()?))).collect()
}

/// Predictions and ground truth for `scenes`, written as `predictions.json` and `ground_truth.json`.
pub fn synth_to(
    config: &PipelineConfig,
    models: &[ObjectModel],
    scenes: &[(u64, segpose_core::scene::Scene)],
    dir: &Path,
) -> Result<()> {
    create(dir)?;
    let grids: Vec<(PredictionRecord, GroundTruthRecord)> = scenes
        .par_iter()
        .map(|(id, scene)| {
            let (grid, gt) = synthesize_scene(config, models, *id, scene)?;
            Ok((PredictionRecord::from_core(*id, &grid), GroundTruthRecord::from_core(*id, &gt)))
        })
        .collect::<Result<_>>()?;
    let (predictions, truths): (Vec<_>, Vec<_>) = grids.into_iter().unzip();
    save_json(
        &dir.join("predictions.json"),
        &PredictionFile { schema_version: SCHEMA_VERSION, scenes: predictions },
        false,
    )?;
    save_json(
        &dir.join("ground_truth.json"),
        &GroundTruthFile { schema_version: SCHEMA_VERSION, scenes: truths },
        false,
    )
}

/// `simulate`: models, scenes, predictions and ground truth.
pub fn simulate(config: &PipelineConfig) -> Result<PathBuf> {
    let dir = output_dir(config)?;
    create(&dir)?;
    let models = pipeline::models(config);
    let scenes = pipeline::simulate_scenes(config, &models)?;
    save_json(&dir.join("config.json"), config, true)?;
    save_json(&dir.join("models.json"), &ModelFile::from_models(&models), false)?;
    let file = SceneFile {
        schema_version: SCHEMA_VERSION,
        scenes: scenes.iter().map(|(id, s)| SceneRecord::from_core(*id, s)).collect(),
    };
    save_json(&dir.join("scenes.json"), &file, false)?;
    synth_to(config, &models, &scenes, &dir)?;
    Ok(dir)
}

/// `synth`: predictions and ground truth for stored scenes.
pub fn synth(config: &PipelineConfig, models: &Path, scenes: &Path) -> Result<PathBuf> {
    let dir = output_dir(config)?;
    let models = load_models(models)?;
    let scenes = load_scenes(scenes)?;
    for (id, scene) in &scenes {
        scene.validate(&models).map_err(|e| Error::Inconsistent(format!("scene {id}: {e}")))?;
    }
    synth_to(config, &models, &scenes, &dir)?;
    Ok(dir)
}

/// `fuse`: clustering, matching and selection, written as `correspondences.json`.
pub fn fuse(config: &PipelineConfig, models: &Path, predictions: &Path, ground_truth: &Path) -> Result<PathBuf> {
    let dir = output_dir(config)?;
    create(&dir)?;
    let models = load_models(models)?;
    let predictions: PredictionFile = load_json(predictions)?;
    let truths: GroundTruthFile = load_json(ground_truth)?;
    if predictions.scenes.len() != truths.scenes.len()
        || predictions.scenes.iter().zip(&truths.scenes).any(|(p, t)| p.scene_id != t.scene_id)
    {
        return Err(Error::Inconsistent("predictions and ground truth list different scenes".into()));
    }
    let scenes = predictions
        .scenes
        .par_iter()
        .zip(&truths.scenes)
        .map(|(p, t)| Ok(fuse_scene(config, &models, p.scene_id, &p.to_core()?, &t.to_core()?)?.0))
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join("correspondences.json");
    save_json(&path, &CorrespondenceFile { schema_version: SCHEMA_VERSION, scenes }, false)?;
    Ok(path)
}

/// `solve`: RANSAC-EPnP for every selection, written as `solutions.json`.
pub fn solve(config: &PipelineConfig, scenes: &Path, correspondences: &Path) -> Result<PathBuf> {
    let dir = output_dir(config)?;
    create(&dir)?;
    let scenes = load_scenes(scenes)?;
    let fused: CorrespondenceFile = load_json(correspondences)?;
    let solutions = fused
        .scenes
        .par_iter()
        .map(|f| {
            let (_, scene) = scenes
                .iter()
                .find(|(id, _)| *id == f.scene_id)
                .ok_or_else(|| Error::Inconsistent(format!("scene {} is not in the scenes file", f.scene_id)))?;
            Ok(solve_scene(config, &scene.intrinsics, f).0)
        })
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join("solutions.json");
    let file = SolutionFile { schema_version: SCHEMA_VERSION, solutions: solutions.into_iter().flatten().collect() };
    save_json(&path, &file, false)?;
    Ok(path)
}

/// `evaluate`: records and accuracy tables as JSON and CSV.
pub fn evaluate(
    config: &PipelineConfig,
    models: &Path,
    scenes: &Path,
    correspondences: &Path,
    solutions: &Path,
) -> Result<AccuracyTable> {
    let dir = output_dir(config)?;
    create(&dir)?;
    let models = load_models(models)?;
    let scenes = load_scenes(scenes)?;
    let fused: CorrespondenceFile = load_json(correspondences)?;
    let solutions: SolutionFile = load_json(solutions)?;
    let mut records = Vec::new();
    let mut false_positives = Vec::new();
    for f in &fused.scenes {
        let (_, scene) = scenes
            .iter()
            .find(|(id, _)| *id == f.scene_id)
            .ok_or_else(|| Error::Inconsistent(format!("scene {} is not in the scenes file", f.scene_id)))?;
        let own: Vec<_> = solutions.solutions.iter().filter(|s| s.scene_id == f.scene_id).cloned().collect();
        let (r, fp) = evaluate_scene(config, &models, scene, f, &own, None)?;
        records.extend(r);
        false_positives.extend(fp);
    }
    let table = aggregate(&records, &false_positives);
    save_json(&dir.join("results.json"), &results_file(&records, &false_positives), false)?;
    fs::write(dir.join("records.csv"), records_csv(&records)?).map_err(Error::io(dir.join("records.csv")))?;
    save_json(&dir.join("table.json"), &TableFile::from_core(&table), true)?;
    fs::write(dir.join("table.csv"), table_csv(&table)?).map_err(Error::io(dir.join("table.csv")))?;
    Ok(table)
}

/// `run`: every stage end to end, plus `manifest.json` and `report.txt`.
pub fn run(config: &PipelineConfig) -> Result<RunManifest> {
    let dir = output_dir(config)?;
    let output = pipeline::run_pipeline(config)?;
    write_run(&dir, config, &pipeline::models(config), &output)
}

/// `gradcheck`: `configs` random problems starting at `seed`. Fails with a
/// numerical error naming the first problem that exceeds `tolerance`.
pub fn gradcheck(seed: u64, configs: usize, step: f64, tolerance: f64) -> Result<Vec<LossCheck>> {
    let checks: Vec<LossCheck> =
        (0..configs as u64).into_par_iter().map(|i| check_seed(seed + i, step, tolerance)).collect::<Result<_>>()?;
    for c in &checks {
        for (name, s) in [("loss_pos", c.pos), ("loss_conf", c.conf), ("focal_loss", c.focal)] {
            if !(s.max_rel_err < tolerance) {
                return Err(Error::Numerical(format!(
                    "{name} gradient off by {:.3e} (relative) on problem {}",
                    s.max_rel_err, c.seed
                )));
            }
        }
    }
    Ok(checks)
}

/// `bench`: fuse and solve timings per object on one thread.
pub fn bench(config: &PipelineConfig) -> Result<Vec<TimingSummary>> {
    config.validate()?;
    let models = pipeline::models(config);
    let mut records = Vec::new();
    for id in 0..config.scenes as u64 {
        records.extend(run_scene(config, &models, id)?.records);
    }
    Ok(pipeline::timing_summary(&records))
}

/// `report`: the plain-text table for a stored `table.json`.
pub fn report(table: &Path, models: Option<&Path>) -> Result<String> {
    let table: TableFile = load_json(table)?;
    let models = match models {
        Some(p) => load_models(p)?,
        None => Vec::new(),
    };
    Ok(render_table(&table, &models))
}
