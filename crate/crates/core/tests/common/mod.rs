//! Independent oracles and property checks shared by the property tests and
//! the acceptance suite. Each check returns `Err` with a description of the
//! first violation.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmwlab::channel::{fresnel_parameter, knife_edge_loss, pedestrian_blockage_loss, ChannelParams};
use mmwlab::config::{parse_config, CameraLabel, ExperimentConfig, CAMERA_TARGET};
use mmwlab::dataset::{label_dataset, parse_dataset, serialize_dataset, Provenance};
use mmwlab::depthcam::{quantize_depth, render_depth, SmallFrame};
use mmwlab::ml::{read_model, train_forest, write_model, ForestConfig, Model, MlpModel, Samples};
use mmwlab::ml::mlp::gradient_check_with;
use mmwlab::mobility::{sample_arrivals, MobilityConfig};
use mmwlab::pipeline::{run_pipeline, Manifest, Stage};
use mmwlab::scene::{
    camera_ray, CameraConfig, LinkEndpoints, Passage, Pedestrian, SceneState, Side, TwinCylinder, Vec3,
};

const MARCH_STEP: f64 = 0.002;

fn solid(p: Vec3, scene: &SceneState, passage: &Passage) -> bool {
    if p.z < 0.0 {
        return true;
    }
    let outside = p.x.abs() > passage.length / 2.0 || p.y.abs() > passage.width / 2.0;
    if outside && p.z <= passage.wall_height {
        return true;
    }
    scene.pedestrians.iter().any(|ped| {
        let s = &ped.shape;
        let r2 = (p.x - s.center_x).powi(2) + (p.y - s.center_y).powi(2);
        (r2 <= s.body_radius * s.body_radius && p.z <= s.body_height)
            || (r2 <= s.head_radius * s.head_radius && p.z >= s.body_height && p.z <= s.head_top)
    })
}

/// Distance to the first solid point along the ray, found by fixed-step
/// marching and refined by bisection. Starts just off the origin so that a
/// viewpoint on a wall is not inside it.
pub fn march_depth(origin: Vec3, dir: Vec3, scene: &SceneState, passage: &Passage, max_t: f64) -> Option<f64> {
    let mut prev = 1e-6;
    let mut t = prev;
    while t <= max_t {
        if solid(origin + dir * t, scene, passage) {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if solid(origin + dir * mid, scene, passage) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        prev = t;
        t += MARCH_STEP;
    }
    None
}

fn random_scene(rng: &mut ChaCha8Rng, passage: &Passage, max_peds: usize) -> SceneState {
    let n = rng.random_range(0..=max_peds);
    let pedestrians = (0..n as u64)
        .map(|id| {
            let x = rng.random_range(-passage.length / 2.0..passage.length / 2.0);
            let y = rng.random_range(-1.75..1.75);
            Pedestrian { id, side: Side::Left, shape: TwinCylinder::adult(x, y), velocity: 1.0 }
        })
        .collect();
    SceneState { frame_index: 0, pedestrians }
}

/// Renders an 8x8 frame of a random scene from a random camera and compares
/// every pixel against the marching oracle.
pub fn check_occlusion(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let passage = Passage::default();
    let labels: Vec<_> = CameraLabel::all().collect();
    let label = labels[rng.random_range(0..labels.len())];
    let cam = CameraConfig {
        position: label.position(),
        look_at: CAMERA_TARGET,
        width_px: 8,
        height_px: 8,
        ..CameraConfig::default()
    };
    let scene = random_scene(&mut rng, &passage, 4);
    let frame = render_depth(&scene, &cam, &passage);
    for row in 0..8 {
        for col in 0..8 {
            let (o, d) = camera_ray(&cam, col as f64, row as f64);
            let got = frame.at(row, col);
            let want = march_depth(o, d, &scene, &passage, cam.max_range + 0.01);
            let ok = match want {
                None => got == 0,
                // Allow the quantizer to land either side of a range limit.
                Some(t) if (t - cam.min_range).abs() < 2e-3 || (t - cam.max_range).abs() < 2e-3 => true,
                Some(t) => {
                    let q = quantize_depth(t, &cam);
                    (got as i32 - q as i32).abs() <= 1
                }
            };
            if !ok {
                return Err(format!("seed {seed} camera {label} pixel ({row},{col}): render {got}, oracle {want:?}"));
            }
        }
    }
    Ok(())
}

/// Frames and powers tagged with their index so any misalignment shows.
pub fn marker_stream(n: usize, h: usize, w: usize) -> (Vec<SmallFrame>, Vec<f64>) {
    let frames = (0..n)
        .map(|i| SmallFrame {
            frame_index: i as u64,
            height: h,
            width: w,
            data: vec![i as f32 / n as f32; h * w],
        })
        .collect();
    let powers = (0..n).map(|i| -(i as f64)).collect();
    (frames, powers)
}

pub fn check_label_alignment(n: usize, s: usize, k: usize) -> Result<(), String> {
    let (h, w) = (2, 3);
    let (frames, powers) = marker_stream(n, h, w);
    let ds = label_dataset(&frames, &powers, s, k, 30, Provenance::default()).map_err(|e| e.to_string())?;
    if ds.len() != n + 1 - s - k {
        return Err(format!("n={n} s={s} k={k}: |D| = {}, expected {}", ds.len(), n + 1 - s - k));
    }
    for i in 0..ds.len() {
        let t = ds.anchor(i) as usize;
        if t != s - 1 + i {
            return Err(format!("sample {i} anchored at {t}"));
        }
        if ds.label(i) != -((t + k) as f32) {
            return Err(format!("sample {i}: label {} is not frame {}", ds.label(i), t + k));
        }
        let x = ds.features(i);
        for j in 0..s {
            let expect = (t + 1 - s + j) as f32 / n as f32;
            if x[j * h * w..(j + 1) * h * w].iter().any(|&v| v != expect) {
                return Err(format!("sample {i} layer {j} does not hold frame {}", t + 1 - s + j));
            }
        }
    }
    Ok(())
}

pub fn random_stream(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> (Vec<SmallFrame>, Vec<f64>) {
    let frames = (0..n)
        .map(|i| SmallFrame {
            frame_index: i as u64,
            height: h,
            width: w,
            data: (0..h * w).map(|_| rng.random::<f32>()).collect(),
        })
        .collect();
    let powers = (0..n).map(|_| rng.random_range(-68.0..-36.0)).collect();
    (frames, powers)
}

pub fn check_dataset_roundtrip(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
    let n = rng.random_range(6..40);
    let s = rng.random_range(1..4);
    let k = rng.random_range(0..3);
    let (frames, powers) = random_stream(&mut rng, n, h, w);
    let prov = Provenance { seed: rng.random(), config_digest: rng.random() };
    let ds = label_dataset(&frames, &powers, s, k, 30, prov).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    serialize_dataset(&ds, &mut bytes).map_err(|e| e.to_string())?;
    let back = parse_dataset(bytes.as_slice()).map_err(|e| e.to_string())?;
    if back != ds {
        return Err(format!("seed {seed}: dataset changed in round trip"));
    }
    let mut again = Vec::new();
    serialize_dataset(&back, &mut again).map_err(|e| e.to_string())?;
    if again != bytes {
        return Err(format!("seed {seed}: re-serialized bytes differ"));
    }
    Ok(())
}

pub fn check_model_roundtrip(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (frames, powers) = random_stream(&mut rng, 30, 2, 3);
    let ds = label_dataset(&frames, &powers, 2, 1, 30, Provenance::default()).map_err(|e| e.to_string())?;
    let cfg = ForestConfig { n_trees: 3, max_depth: 5, seed, ..ForestConfig::default() };
    let forest = Model::Forest(train_forest(&ds, &cfg).map_err(|e| e.to_string())?);
    let hidden = rng.random_range(1..6);
    let mut mlp = MlpModel::init(&[12, hidden, 1], seed);
    mlp.label_mean = rng.random_range(-60.0..-40.0);
    mlp.label_std = rng.random_range(0.5..10.0);
    for model in [forest, Model::Mlp(mlp)] {
        let mut bytes = Vec::new();
        write_model(&model, &mut bytes).map_err(|e| e.to_string())?;
        let back = read_model(bytes.as_slice()).map_err(|e| e.to_string())?;
        if back != model {
            return Err(format!("seed {seed}: model changed in round trip"));
        }
    }
    Ok(())
}

/// Largest relative gradient error of a random small network on a random
/// batch.
pub fn gradient_error(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = rng.random_range(2..10);
    let widths = [inputs, rng.random_range(2..10), rng.random_range(2..6), 1];
    let mut model = MlpModel::init(&widths, seed);
    model.label_mean = -50.0;
    model.label_std = 5.0;
    let rows: Vec<Vec<f32>> = (0..8).map(|_| (0..inputs).map(|_| rng.random::<f32>()).collect()).collect();
    let y: Vec<f64> = (0..8).map(|_| rng.random_range(-65.0..-40.0)).collect();
    let check = gradient_check_with(&model, &Samples::from_rows(&rows, &y), usize::MAX, seed);
    if check.checked == 0 {
        return Err(format!("seed {seed}: no parameter was checked"));
    }
    Ok(check.max_rel_error)
}

/// Per-side arrival counts over `duration_s` against `λT ± 4·sqrt(λT)`.
pub fn check_poisson(seed: u64, rate: f64, duration_s: f64) -> Result<(), String> {
    let cfg = MobilityConfig { arrival_rate: rate, seed, ..MobilityConfig::default() };
    let dt = 1.0 / 30.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0usize; 2];
    for _ in 0..(duration_s / dt).round() as usize {
        for a in sample_arrivals(&mut rng, &cfg, dt).map_err(|e| e.to_string())? {
            counts[(a.side == Side::Right) as usize] += 1;
        }
    }
    let mean = rate * duration_s;
    for (side, c) in ["left", "right"].iter().zip(counts) {
        if (c as f64 - mean).abs() > 4.0 * mean.sqrt() {
            return Err(format!("seed {seed}: {c} {side} arrivals, expected {mean:.1} ± {:.1}", 4.0 * mean.sqrt()));
        }
    }
    Ok(())
}

/// `J(0)` and monotonicity of the knife-edge curve, and of the loss as the
/// edge pushes further into the LOS.
pub fn check_knife_edge() -> Result<(), String> {
    let j0 = knife_edge_loss(0.0);
    if (j0 - 6.03).abs() > 0.01 {
        return Err(format!("J(0) = {j0:.4} dB"));
    }
    let mut prev = knife_edge_loss(-3.0);
    for i in -299..=1000 {
        let nu = i as f64 / 100.0;
        let j = knife_edge_loss(nu);
        if j < prev || j < 0.0 {
            return Err(format!("J({nu}) = {j} after {prev}"));
        }
        prev = j;
    }
    let lambda = ChannelParams::default().wavelength();
    let mut prev = f64::NEG_INFINITY;
    for i in -50..=50 {
        let clearance = i as f64 * 0.01;
        let j = knife_edge_loss(fresnel_parameter(clearance, 2.0, 2.0, lambda).map_err(|e| e.to_string())?);
        if j < prev {
            return Err(format!("loss fell as clearance rose to {clearance}"));
        }
        prev = j;
    }
    Ok(())
}

/// Loss of a pedestrian at `(x, y)` on the default link.
pub fn blockage_at(x: f64, y: f64) -> f64 {
    pedestrian_blockage_loss(&LinkEndpoints::default(), &TwinCylinder::adult(x, y), &ChannelParams::default())
}

pub fn tiny_config() -> ExperimentConfig {
    parse_config(
        "duration_s = 8.0\n\
         [mobility]\narrival_rate = 1.0\n\
         [sensor]\nwidth_px = 32\nheight_px = 24\n\
         [dataset]\ns = 2\nk = 3\nh = 6\nw = 8\n\
         [forest]\nn_trees = 2\nmax_depth = 4\n\
         [eval]\nlatency_repetitions = 30\nsweep_s = [1, 2]\n",
    )
    .expect("tiny config parses")
}

/// Runs every deterministic stage twice into fresh directories under `root`
/// and compares the manifests.
pub fn check_determinism(root: &Path, cfg: &ExperimentConfig) -> Result<(), String> {
    let stages = [Stage::Simulate, Stage::BuildDataset, Stage::Train, Stage::Evaluate, Stage::SweepS];
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let dir = root.join(run);
        run_pipeline(cfg, &dir, &stages).map_err(|e| format!("{e:#}"))?;
        manifests.push(Manifest::read(&dir).ok_or("manifest missing")?);
    }
    if manifests[0] != manifests[1] {
        return Err(format!("manifests differ:\n{}\n{}", manifests[0].to_text(), manifests[1].to_text()));
    }
    if manifests[0].artifacts.is_empty() {
        return Err("manifest lists no artifacts".into());
    }
    Ok(())
}
