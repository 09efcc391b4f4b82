use nalgebra::{Point2, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segpose::core::geometry::{CameraIntrinsics, Pose};
use segpose::core::grid::{CellPrediction, GridSpec, GroundTruthGrid, GtInstance, KeypointPrediction, PredictionGrid};
use segpose::core::scene::{Instance, Scene};
use segpose::core::simulator::{random_rotation, standard_models};
use segpose::formats::{
    from_json_str, to_json, CellRecord, GridSpecRecord, GroundTruthFile, GroundTruthRecord, ModelFile, PredictionFile,
    PredictionRecord, RecordRow, SceneFile, SceneRecord, SCHEMA_VERSION,
};
use segpose::{run_pipeline, PipelineConfig};

fn random_spec(rng: &mut ChaCha8Rng) -> GridSpec {
    let size = rng.random_range(2..8);
    GridSpec::new(size, 16 * size as u32, 16 * size as u32, rng.random_range(1.0..20.0)).unwrap()
}

fn random_prediction(rng: &mut ChaCha8Rng) -> PredictionGrid {
    let spec = random_spec(rng);
    let n = rng.random_range(1..9);
    let cells = (0..spec.num_cells())
        .map(|_| {
            if rng.random_bool(0.3) {
                return CellPrediction { class_label: 0, keypoints: vec![KeypointPrediction::zero(); n] };
            }
            CellPrediction {
                class_label: rng.random_range(0..5),
                keypoints: (0..n)
                    .map(|_| {
                        let offset = Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
                        KeypointPrediction::new(offset, rng.random()).unwrap()
                    })
                    .collect(),
            }
        })
        .collect();
    PredictionGrid::new(spec, n, cells).unwrap()
}

fn random_ground_truth(rng: &mut ChaCha8Rng) -> GroundTruthGrid {
    let spec = random_spec(rng);
    let instances: Vec<GtInstance> = (0..rng.random_range(0..4))
        .map(|i| GtInstance {
            scene_index: i,
            class_label: rng.random_range(1..7),
            keypoints: (0..8)
                .map(|_| Point2::new(rng.random_range(-50.0..200.0), rng.random_range(-50.0..200.0)))
                .collect(),
        })
        .collect();
    let owners = (0..spec.num_cells())
        .map(|_| {
            if instances.is_empty() || rng.random_bool(0.4) {
                None
            } else {
                Some(rng.random_range(0..instances.len()))
            }
        })
        .collect();
    let skipped = if rng.random_bool(0.2) { vec![instances.len()] } else { vec![] };
    GroundTruthGrid::new(spec, instances, owners, skipped).unwrap()
}

fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let k =
        CameraIntrinsics::new(rng.random_range(300.0..900.0), rng.random_range(300.0..900.0), 320.0, 240.0, 640, 480)
            .unwrap();
    let instances = (0..rng.random_range(0..9))
        .map(|_| {
            let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.3..3.0));
            Instance {
                model_id: rng.random_range(1..7),
                pose: Pose::from_rotation(random_rotation(rng).to_rotation_matrix(), t),
            }
        })
        .collect();
    Scene::new(k, instances)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prediction_grids_round_trip(seed in any::<u64>(), pretty in any::<bool>()) {
        let grid = random_prediction(&mut ChaCha8Rng::seed_from_u64(seed));
        let file = PredictionFile { schema_version: SCHEMA_VERSION, scenes: vec![PredictionRecord::from_core(seed, &grid)] };
        let back: PredictionFile = from_json_str(&to_json(&file, pretty), "predictions").unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.scenes[0].to_core().unwrap(), grid);
    }

    #[test]
    fn ground_truth_grids_round_trip(seed in any::<u64>()) {
        let gt = random_ground_truth(&mut ChaCha8Rng::seed_from_u64(seed));
        let file = GroundTruthFile { schema_version: SCHEMA_VERSION, scenes: vec![GroundTruthRecord::from_core(seed, &gt)] };
        let back: GroundTruthFile = from_json_str(&to_json(&file, false), "ground truth").unwrap();
        prop_assert_eq!(back.scenes[0].to_core().unwrap(), gt);
    }

    #[test]
    fn scenes_round_trip(seed in any::<u64>()) {
        let scene = random_scene(&mut ChaCha8Rng::seed_from_u64(seed));
        let file = SceneFile { schema_version: SCHEMA_VERSION, scenes: vec![SceneRecord::from_core(7, &scene)] };
        let back: SceneFile = from_json_str(&to_json(&file, true), "scenes").unwrap();
        prop_assert_eq!(back.scenes[0].to_core().unwrap(), scene);
    }

    #[test]
    fn finite_doubles_survive_bit_exact(bits in prop::collection::vec(any::<u64>(), 1..64)) {
        let values: Vec<f64> = bits.into_iter().map(f64::from_bits).filter(|v| v.is_finite()).collect();
        let file = carrier(&values);
        let back: PredictionFile = from_json_str(&to_json(&file, false), "predictions").unwrap();
        let got = &back.scenes[0].cells[0].confidences;
        prop_assert_eq!(got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

/// A prediction file whose single cell carries `values` as confidences.
fn carrier(values: &[f64]) -> PredictionFile {
    PredictionFile {
        schema_version: SCHEMA_VERSION,
        scenes: vec![PredictionRecord {
            scene_id: 0,
            spec: GridSpecRecord { size: 2, image_width: 32, image_height: 32, norm_span: 1.0 },
            num_keypoints: values.len(),
            cells: vec![CellRecord {
                index: 0,
                class_label: 1,
                offsets: vec![[0.0, 0.0]; values.len()],
                confidences: values.to_vec(),
            }],
        }],
    }
}

#[test]
fn many_random_doubles_round_trip_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut values: Vec<f64> =
        vec![0.0, -0.0, f64::MIN_POSITIVE, 5e-324, -5e-324, f64::MAX, f64::MIN, f64::EPSILON, 0.1, 1.0 / 3.0];
    while values.len() < 200_000 {
        let v = if rng.random_bool(0.5) {
            f64::from_bits(rng.random())
        } else {
            rng.random::<f64>() * 10f64.powi(rng.random_range(-20..20))
        };
        if v.is_finite() {
            values.push(v);
        }
    }
    let back: PredictionFile = from_json_str(&to_json(&carrier(&values), false), "predictions").unwrap();
    let got = &back.scenes[0].cells[0].confidences;
    let mismatches = got.iter().zip(&values).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    assert_eq!(mismatches, 0);
}

#[test]
fn models_round_trip() {
    let models = standard_models(3);
    let file = ModelFile::from_models(&models);
    let back: ModelFile = from_json_str(&to_json(&file, true), "models").unwrap();
    assert_eq!(back.to_models().unwrap(), models);
}

#[test]
fn result_rows_round_trip() {
    let config = PipelineConfig { scenes: 4, ..PipelineConfig::default() };
    let out = run_pipeline(&config).unwrap();
    for r in out.records() {
        let row = RecordRow::from_core(r);
        let text = serde_json::to_string(&row).unwrap();
        let back: RecordRow = serde_json::from_str(&text).unwrap();
        let core = back.to_core().unwrap();
        // Solve time is runtime measurement, deliberately not persisted.
        assert_eq!(core, segpose::core::evaluation::EvalRecord { solve_time_us: None, ..*r });
    }
}

#[test]
fn missing_field_is_named() {
    let text = r#"{"schema_version":1,"scenes":[{"scene_id":0,"intrinsics":{"fx":1,"fy":1,"cx":0,"cy":0,"width":4},"instances":[]}]}"#;
    let err = from_json_str::<SceneFile>(text, "scenes.json").unwrap_err();
    let message = err.to_string();
    assert!(message.contains("scenes[0].intrinsics") && message.contains("height"), "{message}");
    assert_eq!(err.exit_code(), 3);
}
