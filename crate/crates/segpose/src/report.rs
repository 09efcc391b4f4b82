//! Result files of a run: CSV tables, JSON artifacts, the manifest, and a
//! plain-text accuracy table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use segpose_core::evaluation::{AccuracyTable, EvalRecord, FalsePositive};
use segpose_core::geometry::ObjectModel;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::formats::{
    save_json, CorrespondenceFile, FalsePositiveRow, ModelFile, RecordRow, ResultsFile, SceneFile, SceneRecord,
    SolutionFile, TableFile, TableRow, SCHEMA_VERSION,
};
use crate::pipeline::{RunManifest, RunOutput};

pub fn records_csv<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(RecordRow::from_core(r))?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?).expect("csv output is utf-8"))
}

/// Class rows first, then one overall row per strategy with an empty class.
pub fn table_csv(table: &AccuracyTable) -> Result<String> {
    let file = TableFile::from_core(table);
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in file.rows.iter().chain(&file.overall) {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?).expect("csv output is utf-8"))
}

pub fn results_file<'a>(
    records: impl IntoIterator<Item = &'a EvalRecord>,
    false_positives: impl IntoIterator<Item = &'a FalsePositive>,
) -> ResultsFile {
    ResultsFile {
        schema_version: SCHEMA_VERSION,
        records: records.into_iter().map(RecordRow::from_core).collect(),
        false_positives: false_positives.into_iter().map(FalsePositiveRow::from_core).collect(),
    }
}

fn class_name(models: &[ObjectModel], class: usize) -> String {
    models.iter().find(|m| m.id() == class).map_or_else(
        || format!("class {class}"),
        |m| {
            if m.symmetric() {
                format!("{}*", m.name())
            } else {
                m.name().to_string()
            }
        },
    )
}

/// Objects down, strategies across, `REP-5px / ADD-0.1d` per entry, and an
/// average row over objects. Starred objects use the symmetric metrics.
pub fn render_table(table: &TableFile, models: &[ObjectModel]) -> String {
    let strategies: Vec<&str> = table.overall.iter().map(|r| r.strategy.as_str()).collect();
    let mut classes: Vec<usize> = table.rows.iter().filter_map(|r| r.class_label).collect();
    classes.sort_unstable();
    classes.dedup();
    let cell = |r: Option<&TableRow>, rep: f64, add: f64| match r {
        Some(_) => format!("{rep:6.2} / {add:6.2}"),
        None => format!("{:>15}", "-"),
    };
    let mut out = String::new();
    let _ = write!(out, "{:<14}", "object");
    for s in &strategies {
        let _ = write!(out, " | {s:^15}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(14 + 18 * strategies.len()));
    out.push('\n');
    for c in &classes {
        let _ = write!(out, "{:<14}", class_name(models, *c));
        for s in &strategies {
            let r = table.rows.iter().find(|r| r.class_label == Some(*c) && r.strategy == *s);
            let _ = write!(out, " | {}", cell(r, r.map_or(0.0, |r| r.rep5_pct), r.map_or(0.0, |r| r.add01d_pct)));
        }
        out.push('\n');
    }
    out.push_str(&"-".repeat(14 + 18 * strategies.len()));
    out.push('\n');
    for (label, macro_mean) in [("average", true), ("all instances", false)] {
        let _ = write!(out, "{label:<14}");
        for r in &table.overall {
            let (rep, add) =
                if macro_mean { (r.class_mean_rep5_pct, r.class_mean_add01d_pct) } else { (r.rep5_pct, r.add01d_pct) };
            let _ = write!(out, " | {}", cell(Some(r), rep, add));
        }
        out.push('\n');
    }
    let _ = write!(out, "\nentries are REP-5px / ADD-0.1d accuracy in %; * marks symmetric objects\n");
    for r in &table.overall {
        let _ = writeln!(
            out,
            "{}: instances {}, missed {}, false positives {}",
            r.strategy, r.instances, r.missed, r.false_positives
        );
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::io(path))
}

/// Writes every artifact of `run` into `dir` and returns the manifest with
/// the paths filled in. Everything except `manifest.json` is byte-identical
/// across reruns of the same config.
pub fn write_run(dir: &Path, config: &PipelineConfig, models: &[ObjectModel], run: &RunOutput) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let path = |name: &str| -> PathBuf { dir.join(name) };
    let mut manifest = run.manifest.clone();
    let mut outputs = |stage: &str, names: &[&str]| {
        if let Some(s) = manifest.stages.iter_mut().find(|s| s.name == stage) {
            s.outputs = names.iter().map(|n| n.to_string()).collect();
        }
    };

    save_json(&path("config.json"), config, true)?;
    save_json(&path("models.json"), &ModelFile::from_models(models), false)?;
    let scenes = SceneFile {
        schema_version: SCHEMA_VERSION,
        scenes: run.scenes.iter().map(|s| SceneRecord::from_core(s.scene_id, &s.scene)).collect(),
    };
    save_json(&path("scenes.json"), &scenes, false)?;
    outputs("simulate", &["models.json", "scenes.json"]);

    let correspondences = CorrespondenceFile {
        schema_version: SCHEMA_VERSION,
        scenes: run.scenes.iter().map(|s| s.correspondences.clone()).collect(),
    };
    save_json(&path("correspondences.json"), &correspondences, false)?;
    outputs("fuse", &["correspondences.json"]);

    let solutions = SolutionFile {
        schema_version: SCHEMA_VERSION,
        solutions: run.scenes.iter().flat_map(|s| s.solutions.iter().cloned()).collect(),
    };
    save_json(&path("solutions.json"), &solutions, false)?;
    outputs("solve", &["solutions.json"]);

    save_json(&path("results.json"), &results_file(run.records(), run.false_positives()), false)?;
    write_text(&path("records.csv"), &records_csv(run.records())?)?;
    let table = TableFile::from_core(&run.table);
    save_json(&path("table.json"), &table, true)?;
    write_text(&path("table.csv"), &table_csv(&run.table)?)?;
    write_text(&path("report.txt"), &render_table(&table, models))?;
    outputs("evaluate", &["results.json", "records.csv", "table.json", "table.csv", "report.txt"]);

    save_json(&path("manifest.json"), &manifest, true)?;
    Ok(manifest)
}
