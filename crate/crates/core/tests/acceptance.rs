//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The scenario runs at the default config except for the depth sensor,
//! which renders at 128x106 instead of 512x424 to keep the 600 s run short.
//! The reduced 24x32 frames the models see come out of the same block-mean
//! reduction either way.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use mmwlab::channel::{fspl, los_power, received_power, ChannelParams, SPEED_OF_LIGHT};
use mmwlab::config::ExperimentConfig;
use mmwlab::dataset::{label_dataset, split_dataset, Dataset, Provenance};
use mmwlab::eval::{bench_latency, persistence_predictions, predict_dataset, BLOCKAGE_DEPTH_DB};
use mmwlab::ml::{train_forest, ForestModel, Model, MlpModel};
use mmwlab::scene::{LinkEndpoints, SceneState};
use mmwlab::sim::{fade_events, simulate, SimOutput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LOS_TARGET_DBM: f64 = -36.3;
const LOS_TOL_DB: f64 = 0.05;
const MIN_BLOCKAGE_DB: f64 = 15.0;
const MAX_OFFSET_LOSS_DB: f64 = 1.0;
const FADE_MEAN_RANGE_S: (f64, f64) = (0.2, 1.2);
const K0_MAX_RMSE_DB: f64 = 3.0;
const K15_MAX_RMSE_DB: f64 = 6.0;
const SWEEP_SLACK_DB: f64 = 0.2;
const MAX_LATENCY_MS: f64 = 10.0;
const MAX_GRAD_REL_ERR: f64 = 1e-4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Scenario {
    cfg: ExperimentConfig,
    sim: SimOutput,
}

impl Scenario {
    fn new() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.sensor.width_px = 128;
        cfg.sensor.height_px = 106;
        let sim = simulate(&cfg.sim_config().expect("default config")).expect("simulation");
        Self { cfg, sim }
    }

    fn test_split(&self, s: usize, k: usize) -> (Dataset, Dataset) {
        let ds = label_dataset(&self.sim.frames, &self.sim.powers, s, k, self.cfg.sensor.fps, Provenance::default())
            .expect("dataset");
        let (train, _holdout, test) = split_dataset(&ds, &self.cfg.split_spec()).expect("split");
        (train, test)
    }

    fn forest(&self, train: &Dataset) -> ForestModel {
        train_forest(train, &self.cfg.forest_config()).expect("forest")
    }
}

fn los_power_sanity() -> Outcome {
    let link = LinkEndpoints::default();
    let params = ChannelParams::default();
    // Friis with boresight gains, written out independently of the library.
    let d = 17f64.sqrt();
    let oracle = 20.0 + 24.0 + 0.0 - 20.0 * (4.0 * std::f64::consts::PI * d * 60e9 / SPEED_OF_LIGHT).log10();
    let p = received_power(&SceneState::default(), &link, &params, &mut ChaCha8Rng::seed_from_u64(0));
    let pass = (p - LOS_TARGET_DBM).abs() <= LOS_TOL_DB
        && (p - oracle).abs() < 1e-9
        && (los_power(&link, &params) - p).abs() < 1e-12
        && fspl(d, 60e9).is_ok_and(|l| (l - (44.0 - oracle)).abs() < 1e-9);
    outcome(pass, format!("{p:.4} dBm, oracle {oracle:.4} dBm, target {LOS_TARGET_DBM} ± {LOS_TOL_DB}"))
}

fn blockage_depth() -> Outcome {
    let centre = common::blockage_at(0.0, 0.0);
    let mut worst_offset: f64 = 0.0;
    for xi in 0..=40 {
        let x = 1.0 + xi as f64 * 0.1;
        for yi in -18..=18 {
            let y = yi as f64 * 0.1;
            worst_offset = worst_offset.max(common::blockage_at(x, y)).max(common::blockage_at(-x, y));
        }
    }
    let pass = centre >= MIN_BLOCKAGE_DB && worst_offset < MAX_OFFSET_LOSS_DB;
    outcome(
        pass,
        format!("centred {centre:.2} dB (>= {MIN_BLOCKAGE_DB}), worst at >= 1 m offset {worst_offset:.3} dB (< {MAX_OFFSET_LOSS_DB})"),
    )
}

fn blockage_duration(sc: &Scenario) -> Outcome {
    let events = fade_events(&sc.sim.powers, sc.sim.los_dbm, BLOCKAGE_DEPTH_DB);
    if events.is_empty() {
        return outcome(false, "no fade events".into());
    }
    let fps = sc.cfg.sensor.fps as f64;
    let mean = events.iter().map(|&(_, n)| n as f64).sum::<f64>() / events.len() as f64 / fps;
    let (lo, hi) = FADE_MEAN_RANGE_S;
    outcome(
        (lo..=hi).contains(&mean),
        format!("{} events over {} s, mean {mean:.3} s (in [{lo}, {hi}])", events.len(), sc.cfg.duration_s),
    )
}

fn current_power(sc: &Scenario) -> Outcome {
    let (train, test) = sc.test_split(16, 0);
    let forest = Model::Forest(sc.forest(&train));
    let rmse = predict_dataset(&forest, &test).and_then(|p| p.rmse()).expect("predictions");
    outcome(rmse <= K0_MAX_RMSE_DB, format!("forest test RMSE {rmse:.3} dB (<= {K0_MAX_RMSE_DB}), {} test samples", test.len()))
}

struct FutureResult {
    rmse_s16: f64,
    forest: Model,
    test: Dataset,
}

fn future_power(sc: &Scenario) -> (Outcome, FutureResult) {
    let (train, test) = sc.test_split(16, 15);
    let forest = Model::Forest(sc.forest(&train));
    let preds = predict_dataset(&forest, &test).expect("predictions");
    let persist = persistence_predictions(&test, &sc.sim.powers).expect("persistence");
    let rmse = preds.rmse().expect("rmse");
    let los = sc.sim.los_dbm;
    let blk = preds.blockage_rmse(los, BLOCKAGE_DEPTH_DB);
    let blk_persist = persist.blockage_rmse(los, BLOCKAGE_DEPTH_DB);
    let n_blk = preds.blockage_indices(los, BLOCKAGE_DEPTH_DB).len();
    let pass = rmse <= K15_MAX_RMSE_DB && matches!((blk, blk_persist), (Some(a), Some(b)) if a < b);
    let fmt = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.3}"));
    let o = outcome(
        pass,
        format!(
            "forest test RMSE {rmse:.3} dB (<= {K15_MAX_RMSE_DB}); blockage windows ({n_blk} samples): forest {} dB < persistence {} dB",
            fmt(blk),
            fmt(blk_persist)
        ),
    );
    (o, FutureResult { rmse_s16: rmse, forest, test })
}

fn s_sweep(sc: &Scenario, rmse_s16: f64) -> Outcome {
    let (train, test) = sc.test_split(1, 15);
    let forest = Model::Forest(sc.forest(&train));
    let rmse_s1 = predict_dataset(&forest, &test).and_then(|p| p.rmse()).expect("predictions");
    outcome(
        rmse_s16 <= rmse_s1 + SWEEP_SLACK_DB,
        format!("k=15: rmse(s=16) {rmse_s16:.3} dB <= rmse(s=1) {rmse_s1:.3} + {SWEEP_SLACK_DB} dB"),
    )
}

fn latency(sc: &Scenario, fut: &FutureResult) -> Outcome {
    let samples: Vec<&[f32]> = (0..fut.test.len().min(200)).map(|i| fut.test.features(i)).collect();
    let reps = sc.cfg.eval.latency_repetitions;
    let forest = bench_latency(&fut.forest, &samples, reps).expect("forest latency");
    // Inference cost depends only on the architecture, so an initialized
    // network of the configured shape stands in for a trained one.
    let mut widths = vec![fut.test.dims().feature_len()];
    widths.extend(&sc.cfg.mlp.hidden);
    widths.push(1);
    let mlp = Model::Mlp(MlpModel::init(&widths, 1));
    let mlp_stats = bench_latency(&mlp, &samples, reps).expect("mlp latency");
    outcome(
        forest.mean_ms < MAX_LATENCY_MS && mlp_stats.mean_ms < MAX_LATENCY_MS,
        format!(
            "mean per sample over {reps} reps: forest {:.4} ms, mlp {widths:?} {:.4} ms (< {MAX_LATENCY_MS})",
            forest.mean_ms, mlp_stats.mean_ms
        ),
    )
}

fn property_suites() -> Outcome {
    let mut failures = Vec::new();
    let mut record = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    for seed in 0..32 {
        record("occlusion", common::check_occlusion(seed));
    }
    for (n, s, k) in [(40, 1, 0), (40, 4, 3), (50, 16, 15), (31, 16, 15), (20, 5, 0)] {
        record("label alignment", common::check_label_alignment(n, s, k));
    }
    for seed in 0..16 {
        record("dataset round trip", common::check_dataset_roundtrip(seed));
        record("model round trip", common::check_model_roundtrip(seed));
        record("poisson", common::check_poisson(seed, 0.25, 600.0));
    }
    let mut worst: f64 = 0.0;
    for seed in 0..16 {
        match common::gradient_error(seed) {
            Ok(e) => worst = worst.max(e),
            Err(e) => failures.push(format!("gradient: {e}")),
        }
    }
    if worst >= MAX_GRAD_REL_ERR {
        failures.push(format!("gradient: max rel err {worst:e}"));
    }
    let mut record = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    record("knife edge", common::check_knife_edge());
    let root = tempfile::tempdir().expect("tempdir");
    record("determinism", common::check_determinism(root.path(), &common::tiny_config()));
    let detail = if failures.is_empty() {
        format!("occlusion, labels, round trips, poisson, knife edge, determinism green; gradient max rel err {worst:.2e}")
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn report(id: u32, name: &str, started: Instant, o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {id} {name}: {} ({:.1} s)", o.detail, started.elapsed().as_secs_f64());
}

fn main() -> ExitCode {
    let mut all = true;
    let mut run = |id, name, started: Instant, o: Outcome| {
        report(id, name, started, &o);
        all &= o.pass;
    };

    let t = Instant::now();
    run(1, "LOS power sanity", t, los_power_sanity());
    let t = Instant::now();
    run(2, "blockage depth", t, blockage_depth());

    let t = Instant::now();
    let sc = Scenario::new();
    run(3, "blockage duration", t, blockage_duration(&sc));
    let t = Instant::now();
    run(4, "current-power prediction", t, current_power(&sc));
    let t = Instant::now();
    let (o, fut) = future_power(&sc);
    run(5, "future prediction", t, o);
    let t = Instant::now();
    run(6, "s-sweep direction", t, s_sweep(&sc, fut.rmse_s16));
    let t = Instant::now();
    run(7, "inference latency", t, latency(&sc, &fut));
    let t = Instant::now();
    run(8, "property suites", t, property_suites());

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
