//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segpose::commands;
use segpose::config::Seeds;
use segpose::core::evaluation::{AccuracyRow, Status};
use segpose::core::fusion::{Correspondence, Strategy};
use segpose::core::geometry::{
    add_metric, adds_metric, project, rotation_geodesic, CameraIntrinsics, ObjectModel, Pose,
};
use segpose::core::pnp::{epnp, ransac_pnp, RansacParams};
use segpose::core::simulator::{random_rotation, standard_models};
use segpose::{run_pipeline, PipelineConfig};

const ZERO_NOISE_SCENES: usize = 100;
const ZERO_NOISE_MAX_MEDIAN_ROTATION_RAD: f64 = 1e-4;
const ZERO_NOISE_MAX_SECONDS: f64 = 60.0;

const ORDERING_SEED_SETS: [u64; 3] = [0, 1, 2];
const ORDERING_SCENES: usize = 400;
const ORDERING_MIN_INSTANCES: usize = 500;

const GRADCHECK_CONFIGS: usize = 100;
const GRADCHECK_STEP: f64 = 1e-6;
const GRADCHECK_MAX_REL_ERR: f64 = 1e-4;

const PNP_POSES: usize = 1000;
const PNP_MAX_ROTATION_RAD: f64 = 1e-6;
const PNP_MAX_REL_TRANSLATION: f64 = 1e-6;
const RANSAC_SEEDS: u64 = 200;
const RANSAC_OUTLIER_FRACTION: f64 = 0.3;
const RANSAC_MIN_SUCCESS: f64 = 0.99;
const RANSAC_SUCCESS_REP_PX: f64 = 1.0;

const METRIC_PAIRS: usize = 1000;
const METRIC_TOLERANCE: f64 = 1e-12;

const BENCH_SCENES: usize = 100;
const BENCH_MAX_MEAN_MS: f64 = 10.0;

const DETERMINISM_SCENES: usize = 30;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn overall(rows: &[AccuracyRow], strategy: Strategy) -> &AccuracyRow {
    rows.iter().find(|r| r.strategy == strategy).expect("strategy in table")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 304.0, 304.0, 608, 608).unwrap()
}

/// Uniform rotation; centre in front of the camera and inside the image.
fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let rot = random_rotation(rng).to_rotation_matrix();
    let z = rng.random_range(0.5..1.5);
    let t = Vector3::new(rng.random_range(-0.3..0.3) * z, rng.random_range(-0.3..0.3) * z, z);
    Pose::from_rotation(rot, t)
}

fn corners(size: f64) -> Vec<Point3<f64>> {
    let h = size / 2.0;
    (0..8)
        .map(|i| {
            Point3::new(
                if i & 1 != 0 { h } else { -h },
                if i & 2 != 0 { h } else { -h },
                if i & 4 != 0 { h } else { -h },
            )
        })
        .collect()
}

fn zero_noise_end_to_end() -> Outcome {
    let mut config = PipelineConfig::zero_noise();
    config.scenes = ZERO_NOISE_SCENES;
    let start = Instant::now();
    let out = run_pipeline(&config).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();

    let object_counts_ok = out.scenes.iter().all(|s| (3..=8).contains(&s.scene.instances.len()));
    let rows = &out.table.overall;
    let perfect =
        rows.iter().all(|r| r.instances > 0 && r.correct_rep5 == r.instances && r.correct_add01d == r.instances);
    let rotations: Vec<f64> = out.records().filter_map(|r| r.rotation_error_rad).collect();
    let median_rot = median(rotations);
    let detail = format!(
        "{} instances x {} strategies, REP-5px/ADD-0.1d {}, median rotation error {median_rot:.2e} rad, {seconds:.1} s",
        rows[0].instances,
        rows.len(),
        rows.iter().map(|r| format!("{:.1}/{:.1}", r.rep5_pct, r.add01d_pct)).collect::<Vec<_>>().join(" "),
    );
    check(
        object_counts_ok
            && perfect
            && median_rot < ZERO_NOISE_MAX_MEDIAN_ROTATION_RAD
            && seconds < ZERO_NOISE_MAX_SECONDS,
        detail,
    )
}

fn fusion_ordering() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for master in ORDERING_SEED_SETS {
        let config =
            PipelineConfig { seeds: Seeds::from_master(master), scenes: ORDERING_SCENES, ..PipelineConfig::default() };
        let out = run_pipeline(&config).map_err(|e| e.to_string())?;
        let rows = &out.table.overall;
        let [nf, hc, bn, oracle] =
            [Strategy::NoFusion, Strategy::HighestConfidence, Strategy::BestN(10), Strategy::Oracle]
                .map(|s| overall(rows, s).correct_rep5);
        let n = overall(rows, Strategy::Oracle).instances;
        let set_ok = n >= ORDERING_MIN_INSTANCES && oracle > bn && bn >= hc && oracle > hc && hc > nf && bn > nf;
        ok &= set_ok;
        lines.push(format!("seed set {master}: n={n} oracle {oracle} bn10 {bn} hc {hc} nf {nf}"));
    }
    check(ok, lines.join("; "))
}

fn gradient_verification() -> Outcome {
    let checks =
        commands::gradcheck(0, GRADCHECK_CONFIGS, GRADCHECK_STEP, GRADCHECK_MAX_REL_ERR).map_err(|e| e.to_string())?;
    let worst = |f: fn(&segpose::gradcheck::LossCheck) -> f64| checks.iter().map(f).fold(0.0, f64::max);
    let (pos, conf, focal) =
        (worst(|c| c.pos.max_rel_err), worst(|c| c.conf.max_rel_err), worst(|c| c.focal.max_rel_err));
    let skipped: usize = checks.iter().map(|c| c.pos.skipped + c.conf.skipped).sum();
    check(
        checks.len() == GRADCHECK_CONFIGS && pos.max(conf).max(focal) < GRADCHECK_MAX_REL_ERR,
        format!(
            "{} configurations, max relative error loss_pos {pos:.1e}, loss_conf {conf:.1e}, focal {focal:.1e}, {skipped} kink-adjacent probes skipped",
            checks.len()
        ),
    )
}

fn pnp_recovery() -> Outcome {
    let k = camera();
    let object = corners(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_rot, mut worst_trans, mut cheirality) = (0.0f64, 0.0f64, 0);
    for _ in 0..PNP_POSES {
        let pose = random_pose(&mut rng);
        let image: Vec<Point2<f64>> = object.iter().map(|p| project(p, &pose, &k).unwrap()).collect();
        match epnp(&object, &image, &k) {
            Ok(est) if object.iter().all(|p| est.transform_point(p).z > 0.0) => {
                worst_rot = worst_rot.max(rotation_geodesic(est.rotation(), pose.rotation()));
                worst_trans =
                    worst_trans.max((est.translation() - pose.translation()).norm() / pose.translation().norm());
            }
            _ => cheirality += 1,
        }
    }

    let mut successes = 0;
    for seed in 0..RANSAC_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let pose = random_pose(&mut rng);
        let mut pairs = Vec::new();
        for (kp, p) in object.iter().enumerate() {
            let u = project(p, &pose, &k).unwrap();
            for cell in 0..10 {
                let image_point = if rng.random_bool(RANSAC_OUTLIER_FRACTION) {
                    Point2::new(rng.random_range(0.0..608.0), rng.random_range(0.0..608.0))
                } else {
                    u
                };
                pairs.push(Correspondence {
                    keypoint: kp,
                    object_point: *p,
                    image_point,
                    confidence: rng.random(),
                    cell,
                });
            }
        }
        let params = RansacParams { seed, ..RansacParams::default() };
        if let Ok(sol) = ransac_pnp(&pairs, &k, &params) {
            let rep = object
                .iter()
                .map(|p| (project(p, &sol.pose, &k).unwrap() - project(p, &pose, &k).unwrap()).norm())
                .sum::<f64>()
                / object.len() as f64;
            if rep < RANSAC_SUCCESS_REP_PX {
                successes += 1;
            }
        }
    }
    let rate = successes as f64 / RANSAC_SEEDS as f64;
    check(
        worst_rot < PNP_MAX_ROTATION_RAD && worst_trans < PNP_MAX_REL_TRANSLATION && cheirality == 0 && rate >= RANSAC_MIN_SUCCESS,
        format!(
            "EPnP over {PNP_POSES} poses: worst rotation {worst_rot:.1e} rad, worst relative translation {worst_trans:.1e}, \
             {cheirality} cheirality failures; RANSAC at 30% outliers {successes}/{RANSAC_SEEDS}"
        ),
    )
}

/// Random surface points replicated under quarter turns about z.
fn quarter_turn_model(rng: &mut ChaCha8Rng) -> (ObjectModel, Matrix3<f64>) {
    let turn = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let base: Vec<Point3<f64>> = (0..50)
        .map(|_| {
            Point3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05))
        })
        .collect();
    let mut surface = Vec::new();
    let mut r = Matrix3::identity();
    for _ in 0..4 {
        surface.extend(base.iter().map(|p| Point3::from(r * p.coords)));
        r = turn * r;
    }
    (ObjectModel::from_surface(1, "quarter-turn", surface, true).unwrap(), turn)
}

fn metric_identities() -> Outcome {
    let models = standard_models(0);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut self_add, mut adds_excess, mut shift_err, mut sym_adds) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..METRIC_PAIRS {
        let model = &models[i % models.len()];
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        self_add = self_add.max(add_metric(&a, &a, model).unwrap());
        adds_excess = adds_excess.max(adds_metric(&a, &b, model).unwrap() - add_metric(&a, &b, model).unwrap());

        let shift = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        let moved = Pose::new(*a.rotation(), a.translation() + shift).unwrap();
        let add = add_metric(&moved, &a, model).unwrap();
        shift_err = shift_err.max((add - shift.norm()).abs() / shift.norm());

        let (sym, turn) = quarter_turn_model(&mut rng);
        let spun = Pose::new(a.rotation() * turn, *a.translation()).unwrap();
        sym_adds = sym_adds.max(adds_metric(&spun, &a, &sym).unwrap());
    }
    check(
        self_add == 0.0 && adds_excess <= 0.0 && shift_err <= METRIC_TOLERANCE && sym_adds <= METRIC_TOLERANCE,
        format!(
            "{METRIC_PAIRS} pairs: max ADD(P,P) {self_add:e}, max ADD-S minus ADD {adds_excess:.1e}, \
             translation ADD relative error {shift_err:.1e}, symmetric ADD-S {sym_adds:.1e}"
        ),
    )
}

fn runtime_budget() -> Outcome {
    let config = PipelineConfig { scenes: BENCH_SCENES, ..PipelineConfig::default() };
    let summary = commands::bench(&config).map_err(|e| e.to_string())?;
    let ok = summary.iter().all(|s| s.mean_us / 1000.0 <= BENCH_MAX_MEAN_MS);
    check(
        ok && !summary.is_empty(),
        summary
            .iter()
            .map(|s| {
                format!(
                    "{} mean {:.2} ms, p95 {:.2} ms over {} objects",
                    s.strategy,
                    s.mean_us / 1000.0,
                    s.p95_us as f64 / 1000.0,
                    s.objects
                )
            })
            .collect::<Vec<_>>()
            .join("; "),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = PipelineConfig { scenes: DETERMINISM_SCENES, ..PipelineConfig::default() };
    let mut outputs = Vec::new();
    for run in ["first", "second"] {
        config.paths.output_dir = Some(dir.path().join(run));
        commands::run(&config).map_err(|e| e.to_string())?;
        let read = |f: &str| std::fs::read(dir.path().join(run).join(f)).map_err(|e| e.to_string());
        outputs.push((read("records.csv")?, read("table.csv")?));
    }
    let records_solved = String::from_utf8_lossy(&outputs[0].0).matches(Status::Solved.name()).count();
    check(
        outputs[0] == outputs[1] && records_solved > 0,
        format!(
            "{DETERMINISM_SCENES} scenes, records.csv {} bytes and table.csv {} bytes identical across runs",
            outputs[0].0.len(),
            outputs[0].1.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("zero-noise end to end", zero_noise_end_to_end),
        ("fusion ordering", fusion_ordering),
        ("gradient verification", gradient_verification),
        ("pnp recovery", pnp_recovery),
        ("metric identities", metric_identities),
        ("runtime budget", runtime_budget),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
