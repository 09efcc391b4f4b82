//! Scoring estimated poses against ground truth: per-instance records,
//! detection-to-instance matching, and accuracy tables.

mod matching;

pub use matching::{match_detections, Assignment};

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::fusion::Strategy;
use crate::geometry::{add_metric, adds_metric, rep_metric, rotation_geodesic, CameraIntrinsics, ObjectModel, Pose};

/// An instance is REP-correct below this mean reprojection distance.
pub const REP_THRESHOLD_PX: f64 = 5.0;
/// An instance is ADD-correct below this fraction of the model diameter.
pub const ADD_DIAMETER_FRACTION: f64 = 0.1;

/// What happened to one ground-truth instance under one strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Solved,
    /// No detection was matched to the instance.
    Missed,
    /// A detection was matched but no pose could be recovered.
    SolveFailed,
    /// The estimate put part of the model behind the camera.
    BehindCamera,
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Solved => "solved",
            Status::Missed => "missed",
            Status::SolveFailed => "solve_failed",
            Status::BehindCamera => "behind_camera",
        }
    }
}

/// Identifies one scored instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceKey {
    pub scene_id: u64,
    /// Index of the instance within its scene.
    pub instance_id: usize,
    pub class_label: usize,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub key: InstanceKey,
    pub status: Status,
    /// Mean reprojection distance in pixels (symmetric form for symmetric models).
    pub rep_px: Option<f64>,
    /// ADD, or ADD-S for symmetric models, in model units.
    pub add: Option<f64>,
    pub rotation_error_rad: Option<f64>,
    pub diameter: f64,
    pub correct_rep5: bool,
    pub correct_add01d: bool,
    /// Time spent selecting correspondences and solving, when the caller measured it.
    pub solve_time_us: Option<u64>,
}

impl EvalRecord {
    /// A record for an instance without a usable estimate.
    pub fn unsolved(key: InstanceKey, status: Status, model: &ObjectModel) -> Self {
        Self {
            key,
            status,
            rep_px: None,
            add: None,
            rotation_error_rad: None,
            diameter: model.diameter(),
            correct_rep5: false,
            correct_add01d: false,
            solve_time_us: None,
        }
    }
}

/// Scores an estimate with the model's metric variants (symmetric models use ADD-S and 2D nearest neighbours).
pub fn evaluate_instance(
    key: InstanceKey,
    est: &Pose,
    gt: &Pose,
    model: &ObjectModel,
    k: &CameraIntrinsics,
) -> EvalRecord {
    let symmetric = model.symmetric();
    let add = if symmetric { adds_metric(est, gt, model) } else { add_metric(est, gt, model) };
    let rep = rep_metric(est, gt, model, k, symmetric);
    let (Ok(add), Ok(rep)) = (add, rep) else {
        return EvalRecord::unsolved(key, Status::BehindCamera, model);
    };
    EvalRecord {
        key,
        status: Status::Solved,
        rep_px: Some(rep),
        add: Some(add),
        rotation_error_rad: Some(rotation_geodesic(est.rotation(), gt.rotation())),
        diameter: model.diameter(),
        correct_rep5: rep < REP_THRESHOLD_PX,
        correct_add01d: add < ADD_DIAMETER_FRACTION * model.diameter(),
        solve_time_us: None,
    }
}

/// A detection not matched to any ground-truth instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FalsePositive {
    pub scene_id: u64,
    pub class_label: usize,
    pub strategy: Strategy,
}

/// Counts and accuracies for one strategy, over one class or over all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub strategy: Strategy,
    /// `None` for the all-classes row.
    pub class_label: Option<usize>,
    pub instances: usize,
    pub correct_rep5: usize,
    pub correct_add01d: usize,
    pub missed: usize,
    pub false_positives: usize,
    pub rep5_pct: f64,
    pub add01d_pct: f64,
    /// Mean of the per-class percentages; equals the row's own on class rows.
    pub class_mean_rep5_pct: f64,
    pub class_mean_add01d_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    /// Per (strategy, class), sorted.
    pub rows: Vec<AccuracyRow>,
    /// One per strategy over all instances.
    pub overall: Vec<AccuracyRow>,
}

impl AccuracyTable {
    pub fn overall_for(&self, strategy: Strategy) -> Option<&AccuracyRow> {
        self.overall.iter().find(|r| r.strategy == strategy)
    }
}

#[derive(Default)]
struct Tally {
    instances: usize,
    rep: usize,
    add: usize,
    missed: usize,
    fp: usize,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn row(strategy: Strategy, class_label: Option<usize>, t: &Tally) -> AccuracyRow {
    AccuracyRow {
        strategy,
        class_label,
        instances: t.instances,
        correct_rep5: t.rep,
        correct_add01d: t.add,
        missed: t.missed,
        false_positives: t.fp,
        rep5_pct: percent(t.rep, t.instances),
        add01d_pct: percent(t.add, t.instances),
        class_mean_rep5_pct: percent(t.rep, t.instances),
        class_mean_add01d_pct: percent(t.add, t.instances),
    }
}

/// Folds records into per-class and overall accuracies. Every record counts
/// in the denominator, so missed instances lower accuracy.
pub fn aggregate(records: &[EvalRecord], false_positives: &[FalsePositive]) -> AccuracyTable {
    let mut by_class: BTreeMap<(Strategy, usize), Tally> = BTreeMap::new();
    let mut overall: BTreeMap<Strategy, Tally> = BTreeMap::new();
    for r in records {
        for t in [
            by_class.entry((r.key.strategy, r.key.class_label)).or_default(),
            overall.entry(r.key.strategy).or_default(),
        ] {
            t.instances += 1;
            t.rep += r.correct_rep5 as usize;
            t.add += r.correct_add01d as usize;
            t.missed += (r.status == Status::Missed) as usize;
        }
    }
    for fp in false_positives {
        by_class.entry((fp.strategy, fp.class_label)).or_default().fp += 1;
        overall.entry(fp.strategy).or_default().fp += 1;
    }
    let rows: Vec<AccuracyRow> = by_class.iter().map(|(&(s, c), t)| row(s, Some(c), t)).collect();
    let overall = overall
        .iter()
        .map(|(&s, t)| {
            let mut r = row(s, None, t);
            let classes: Vec<&AccuracyRow> = rows.iter().filter(|c| c.strategy == s && c.instances > 0).collect();
            if !classes.is_empty() {
                let n = classes.len() as f64;
                r.class_mean_rep5_pct = classes.iter().map(|c| c.rep5_pct).sum::<f64>() / n;
                r.class_mean_add01d_pct = classes.iter().map(|c| c.add01d_pct).sum::<f64>() / n;
            }
            r
        })
        .collect();
    AccuracyTable { rows, overall }
}
