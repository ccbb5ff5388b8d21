//! Staged experiment driver. Every stage reads its inputs from and writes
//! its artifacts to one output directory, and records them in
//! `manifest.txt` together with the seed and the config digest.

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::dataset::{
    label_dataset, read_dataset_file, split_dataset, write_dataset_file, Dataset, Provenance,
};
use crate::eval::{
    bench_latency, evaluate_model, persistence_predictions, sweep_s, write_sweep_csv, EvalReport, SweepInputs,
};
use crate::ml::{
    read_model_file, train_forest, train_mlp, write_model_file, Model, ModelKind, Regressor, Samples,
};
use crate::mobility::format_event_log;
use crate::sim::stream::{read_stream_file, write_stream_file, Stream};
use crate::sim::simulate_with;

pub const STREAM_FILE: &str = "stream.mmws";
pub const EVENTS_FILE: &str = "events.csv";
pub const DATASET_FILE: &str = "dataset.mmwv";
pub const MODEL_FILE: &str = "model.mmwm";
pub const TRAINING_FILE: &str = "training.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const LATENCY_FILE: &str = "latency.txt";
pub const SWEEP_FILE: &str = "sweep_s.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Simulate,
    BuildDataset,
    Train,
    Evaluate,
    Bench,
    SweepS,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Simulate, Stage::BuildDataset, Stage::Train, Stage::Evaluate, Stage::Bench, Stage::SweepS];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::BuildDataset => "build-dataset",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Bench => "bench",
            Stage::SweepS => "sweep-s",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

type BoxError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: missing artifact {} (run the upstream stage first)", path.display())]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error("{stage}: {} was produced with a different config or seed; rerun simulate", path.display())]
    ConfigMismatch { stage: Stage, path: PathBuf },
    #[error("{stage}: artifact {name} does not match its manifest digest")]
    ArtifactChanged { stage: Stage, name: String },
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

/// Seed, config digest and artifact digests of an output directory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub seed: u64,
    pub config_digest: String,
    /// File name (relative to the output directory) to SHA-256 hex.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("seed = {}\nconfig_digest = {}\n", self.seed, self.config_digest);
        for (name, digest) in &self.artifacts {
            out.push_str(&format!("artifact.{name} = {digest}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut m = Manifest::default();
        let mut seen_seed = false;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ")?;
            match k {
                "seed" => {
                    m.seed = v.parse().ok()?;
                    seen_seed = true;
                }
                "config_digest" => m.config_digest = v.to_string(),
                _ => {
                    m.artifacts.insert(k.strip_prefix("artifact.")?.to_string(), v.to_string());
                }
            }
        }
        (seen_seed && !m.config_digest.is_empty()).then_some(m)
    }

    pub fn read(dir: &Path) -> Option<Self> {
        Self::parse(&fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?)
    }
}

pub fn file_digest(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = BufReader::with_capacity(1 << 20, File::open(path)?);
    loop {
        let buf = file.fill_buf()?;
        if buf.is_empty() {
            break;
        }
        hasher.update(buf);
        let n = buf.len();
        file.consume(n);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// One pipeline run over an output directory.
pub struct Pipeline<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    manifest: Manifest,
}

/// Files written by a stage, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutput {
    pub stage: Stage,
    pub files: Vec<String>,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a ExperimentConfig, out: &Path) -> Self {
        let manifest = Manifest { seed: cfg.seed, config_digest: hex::encode(cfg.digest()), artifacts: BTreeMap::new() };
        Self { cfg, out: out.to_path_buf(), manifest }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn run(&mut self, stages: &[Stage]) -> Result<Vec<StageOutput>, PipelineError> {
        stages.iter().map(|&s| self.run_stage(s)).collect()
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<StageOutput, PipelineError> {
        let wrap = |e: BoxError| PipelineError::Stage { stage, source: e };
        fs::create_dir_all(&self.out).map_err(|e| wrap(e.into()))?;
        if stage == Stage::Simulate {
            self.manifest.artifacts.clear();
        } else {
            self.adopt_manifest(stage)?;
        }
        let files = match stage {
            Stage::Simulate => self.simulate(),
            Stage::BuildDataset => self.build_dataset(),
            Stage::Train => self.train(),
            Stage::Evaluate => self.evaluate(),
            Stage::Bench => self.bench(),
            Stage::SweepS => self.sweep(),
        }?;
        fs::write(self.out.join(MANIFEST_FILE), self.manifest.to_text()).map_err(|e| wrap(e.into()))?;
        Ok(StageOutput { stage, files })
    }

    /// Loads the directory's manifest, insisting it came from this config.
    fn adopt_manifest(&mut self, stage: Stage) -> Result<(), PipelineError> {
        let path = self.out.join(MANIFEST_FILE);
        let Some(found) = Manifest::read(&self.out) else {
            // nothing upstream has run here; name the input the stage reads first
            let first = match stage {
                Stage::BuildDataset | Stage::SweepS => STREAM_FILE,
                _ => DATASET_FILE,
            };
            return Err(PipelineError::MissingArtifact { stage, path: self.out.join(first) });
        };
        if found.seed != self.manifest.seed || found.config_digest != self.manifest.config_digest {
            return Err(PipelineError::ConfigMismatch { stage, path });
        }
        self.manifest = found;
        Ok(())
    }

    /// Path of an upstream artifact after checking it against the manifest.
    fn input(&self, stage: Stage, name: &str) -> Result<PathBuf, PipelineError> {
        let path = self.out.join(name);
        let Some(expected) = self.manifest.artifacts.get(name) else {
            return Err(PipelineError::MissingArtifact { stage, path });
        };
        let actual = file_digest(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => PipelineError::MissingArtifact { stage, path: path.clone() },
            _ => PipelineError::Stage { stage, source: e.into() },
        })?;
        if &actual != expected {
            return Err(PipelineError::ArtifactChanged { stage, name: name.to_string() });
        }
        Ok(path)
    }

    fn record(&mut self, stage: Stage, name: &str) -> Result<String, PipelineError> {
        let digest = file_digest(&self.out.join(name)).map_err(|e| PipelineError::Stage { stage, source: e.into() })?;
        self.manifest.artifacts.insert(name.to_string(), digest);
        Ok(name.to_string())
    }

    fn provenance(&self) -> Provenance {
        Provenance { seed: self.cfg.seed, config_digest: self.cfg.digest() }
    }

    fn simulate(&mut self) -> Result<Vec<String>, PipelineError> {
        let st = Stage::Simulate;
        let wrap = |e: BoxError| PipelineError::Stage { stage: st, source: e };
        let sim = self.cfg.sim_config().map_err(|e| wrap(e.into()))?;
        let every = self.cfg.output.pgm_every;
        let frames_dir = self.out.join(FRAMES_DIR);
        if every > 0 {
            fs::create_dir_all(&frames_dir).map_err(|e| wrap(e.into()))?;
        }
        let mut dump_err: Option<io::Error> = None;
        let out = simulate_with(&sim, |state, raw| {
            if every == 0 || state.frame_index % every as u64 != 0 || dump_err.is_some() {
                return;
            }
            let path = frames_dir.join(format!("frame_{:06}.pgm", state.frame_index));
            let res = File::create(path).and_then(|f| {
                let mut w = BufWriter::new(f);
                raw.write_pgm(&mut w)?;
                w.flush()
            });
            if let Err(e) = res {
                dump_err = Some(e);
            }
        })
        .map_err(|e| wrap(e.into()))?;
        if let Some(e) = dump_err {
            return Err(wrap(e.into()));
        }
        let stream = Stream { fps: sim.camera.fps, los_dbm: out.los_dbm, frames: out.frames, powers: out.powers };
        write_stream_file(&stream, &self.out.join(STREAM_FILE)).map_err(|e| wrap(e.into()))?;
        fs::write(self.out.join(EVENTS_FILE), format_event_log(&out.events)).map_err(|e| wrap(e.into()))?;
        Ok(vec![self.record(st, STREAM_FILE)?, self.record(st, EVENTS_FILE)?])
    }

    fn load_stream(&self, stage: Stage) -> Result<Stream, PipelineError> {
        let path = self.input(stage, STREAM_FILE)?;
        read_stream_file(&path).map_err(|e| PipelineError::Stage { stage, source: e.into() })
    }

    fn load_dataset(&self, stage: Stage) -> Result<Dataset, PipelineError> {
        let path = self.input(stage, DATASET_FILE)?;
        read_dataset_file(&path).map_err(|e| PipelineError::Stage { stage, source: e.into() })
    }

    fn load_model(&self, stage: Stage) -> Result<Model, PipelineError> {
        let path = self.input(stage, MODEL_FILE)?;
        read_model_file(&path).map_err(|e| PipelineError::Stage { stage, source: e.into() })
    }

    fn split(&self, stage: Stage, ds: &Dataset) -> Result<(Dataset, Dataset, Dataset), PipelineError> {
        split_dataset(ds, &self.cfg.split_spec()).map_err(|e| PipelineError::Stage { stage, source: e.into() })
    }

    fn build_dataset(&mut self) -> Result<Vec<String>, PipelineError> {
        let st = Stage::BuildDataset;
        let wrap = |e: BoxError| PipelineError::Stage { stage: st, source: e };
        let stream = self.load_stream(st)?;
        let d = &self.cfg.dataset;
        let ds = label_dataset(&stream.frames, &stream.powers, d.s, d.k, stream.fps, self.provenance())
            .map_err(|e| wrap(e.into()))?;
        write_dataset_file(&ds, &self.out.join(DATASET_FILE)).map_err(|e| wrap(e.into()))?;
        Ok(vec![self.record(st, DATASET_FILE)?])
    }

    fn train(&mut self) -> Result<Vec<String>, PipelineError> {
        let st = Stage::Train;
        let wrap = |e: BoxError| PipelineError::Stage { stage: st, source: e };
        let ds = self.load_dataset(st)?;
        let (train, holdout, _) = self.split(st, &ds)?;
        let mut files = Vec::new();
        let model = match self.cfg.model_kind().map_err(|e| wrap(e.into()))? {
            ModelKind::Mlp => {
                let (m, report) =
                    train_mlp(&Samples::from_dataset(&train), &Samples::from_dataset(&holdout), &self.cfg.mlp_config())
                        .map_err(|e| wrap(e.into()))?;
                let mut text = String::from("epoch,train_loss,holdout_mse_db\n");
                for (i, l) in report.train_loss.iter().enumerate() {
                    let h = report.holdout_mse.get(i).copied().unwrap_or(f64::NAN);
                    text.push_str(&format!("{i},{l:.4},{h:.4}\n"));
                }
                fs::write(self.out.join(TRAINING_FILE), text).map_err(|e| wrap(e.into()))?;
                files.push(TRAINING_FILE);
                Model::Mlp(m)
            }
            _ => Model::Forest(train_forest(&train, &self.cfg.forest_config()).map_err(|e| wrap(e.into()))?),
        };
        write_model_file(&model, &self.out.join(MODEL_FILE)).map_err(|e| wrap(e.into()))?;
        files.push(MODEL_FILE);
        files.into_iter().map(|f| self.record(st, f)).collect()
    }

    fn evaluate(&mut self) -> Result<Vec<String>, PipelineError> {
        let st = Stage::Evaluate;
        let wrap = |e: BoxError| PipelineError::Stage { stage: st, source: e };
        let stream = self.load_stream(st)?;
        let ds = self.load_dataset(st)?;
        let model = self.load_model(st)?;
        let (_, _, test) = self.split(st, &ds)?;
        let camera = self.cfg.camera.clone();

        let (mut report, preds) = evaluate_model(&model, &test, &camera, stream.los_dbm).map_err(|e| wrap(e.into()))?;
        let base = persistence_predictions(&test, &stream.powers).map_err(|e| wrap(e.into()))?;
        let mut base_report = EvalReport::from_predictions(ModelKind::Persistence, &camera, &test, &base, stream.los_dbm)
            .map_err(|e| wrap(e.into()))?;

        let model_csv = format!("predictions_{}.csv", report.model.name());
        let base_csv = "predictions_persistence.csv".to_string();
        for (name, p) in [(&model_csv, &preds), (&base_csv, &base)] {
            let mut w = BufWriter::new(File::create(self.out.join(name)).map_err(|e| wrap(e.into()))?);
            p.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| wrap(e.into()))?;
        }
        report.csv_paths.push(model_csv.clone());
        base_report.csv_paths.push(base_csv.clone());
        let text = format!("los_dbm = {:.4}\n{}{}", stream.los_dbm, report.to_kv(), base_report.to_kv());
        fs::write(self.out.join(REPORT_FILE), text).map_err(|e| wrap(e.into()))?;
        [model_csv.as_str(), base_csv.as_str(), REPORT_FILE].into_iter().map(|f| self.record(st, f)).collect()
    }

    /// Timings vary between runs, so the latency file is not digested.
    fn bench(&mut self) -> Result<Vec<String>, PipelineError> {
        let st = Stage::Bench;
        let wrap = |e: BoxError| PipelineError::Stage { stage: st, source: e };
        let ds = self.load_dataset(st)?;
        let model = self.load_model(st)?;
        let (_, _, test) = self.split(st, &ds)?;
        let samples: Vec<&[f32]> = (0..test.len()).map(|i| test.features(i)).collect();
        let stats = bench_latency(&model, &samples, self.cfg.eval.latency_repetitions).map_err(|e| wrap(e.into()))?;
        let text = format!(
            "model = {}\nrepetitions = {}\nmean_ms = {:.4}\np95_ms = {:.4}\nmax_ms = {:.4}\n",
            model.kind().name(),
            stats.repetitions,
            stats.mean_ms,
            stats.p95_ms,
            stats.max_ms
        );
        fs::write(self.out.join(LATENCY_FILE), text).map_err(|e| wrap(e.into()))?;
        Ok(vec![LATENCY_FILE.to_string()])
    }

    fn sweep(&mut self) -> Result<Vec<String>, PipelineError> {
        let st = Stage::SweepS;
        let wrap = |e: BoxError| PipelineError::Stage { stage: st, source: e };
        let stream = self.load_stream(st)?;
        let models = self.cfg.sweep_models().map_err(|e| wrap(e.into()))?;
        let forest = self.cfg.forest_config();
        let mlp = self.cfg.mlp_config();
        let inputs = SweepInputs {
            frames: &stream.frames,
            powers: &stream.powers,
            fps: stream.fps,
            k: self.cfg.dataset.k,
            split: self.cfg.split_spec(),
            forest: &forest,
            mlp: &mlp,
            provenance: self.provenance(),
        };
        let rows = sweep_s(&inputs, &self.cfg.eval.sweep_s, &models);
        for r in &rows {
            if let Err(e) = &r.result {
                eprintln!("sweep-s: s={} {}: {e}", r.s, r.model.name());
            }
        }
        let mut w = BufWriter::new(File::create(self.out.join(SWEEP_FILE)).map_err(|e| wrap(e.into()))?);
        write_sweep_csv(&rows, &mut w).and_then(|_| w.flush()).map_err(|e| wrap(e.into()))?;
        drop(w);
        Ok(vec![self.record(st, SWEEP_FILE)?])
    }
}

/// Runs `stages` in order against `out`.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out: &Path,
    stages: &[Stage],
) -> Result<Vec<StageOutput>, PipelineError> {
    Pipeline::new(cfg, out).run(stages)
}
