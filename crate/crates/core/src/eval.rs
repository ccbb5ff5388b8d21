//! Accuracy and latency metrics, prediction traces and the s-sweep.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{label_dataset, split_dataset, DatasetError, Provenance, SplitSpec};
use crate::depthcam::SmallFrame;
use crate::ml::{
    persistence_predict, train_model, ForestConfig, MlError, MlpConfig, ModelKind, Regressor,
};
use crate::dataset::Dataset;

/// Truth this far below the pedestrian-free power counts as blockage.
pub const BLOCKAGE_DEPTH_DB: f64 = 6.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{pred} predictions for {truth} truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("latency benchmark needs at least 30 repetitions, got {0}")]
    TooFewRepetitions(usize),
    #[error("power stream has no sample at frame {0}")]
    MissingPower(u64),
    #[error(transparent)]
    Model(#[from] MlError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Per-sample predictions keyed by the frame whose power they forecast.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub frames: Vec<u64>,
    pub truth: Vec<f64>,
    pub pred: Vec<f64>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rmse(&self) -> Result<f64, EvalError> {
        rmse(&self.pred, &self.truth)
    }

    /// Indices where the truth is more than `depth_db` below `los_dbm`.
    pub fn blockage_indices(&self, los_dbm: f64, depth_db: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.truth[i] < los_dbm - depth_db).collect()
    }

    /// RMSE restricted to blockage samples; `None` when there are none.
    pub fn blockage_rmse(&self, los_dbm: f64, depth_db: f64) -> Option<f64> {
        let idx = self.blockage_indices(los_dbm, depth_db);
        let p: Vec<f64> = idx.iter().map(|&i| self.pred[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| self.truth[i]).collect();
        rmse(&p, &y).ok()
    }

    /// `frame,truth_dbm,pred_dbm` with four decimals.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "frame,truth_dbm,pred_dbm")?;
        for i in 0..self.len() {
            writeln!(out, "{},{:.4},{:.4}", self.frames[i], self.truth[i], self.pred[i])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> io::Result<Self> {
        let bad = |line: usize| io::Error::new(io::ErrorKind::InvalidData, format!("bad prediction row {line}"));
        let mut out = Predictions::default();
        for (n, line) in input.lines().enumerate().skip(1) {
            let line = line?;
            let mut it = line.split(',');
            let (Some(f), Some(t), Some(p), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(bad(n + 1));
            };
            out.frames.push(f.parse().map_err(|_| bad(n + 1))?);
            out.truth.push(t.parse().map_err(|_| bad(n + 1))?);
            out.pred.push(p.parse().map_err(|_| bad(n + 1))?);
        }
        Ok(out)
    }
}

fn target_frames(test: &Dataset) -> Vec<u64> {
    (0..test.len()).map(|i| test.anchor(i) + test.horizon() as u64).collect()
}

/// Model predictions over every sample of `test`.
pub fn predict_dataset(model: &dyn Regressor, test: &Dataset) -> Result<Predictions, EvalError> {
    let want = test.dims().feature_len();
    if model.input_dim() != want {
        return Err(MlError::DimensionMismatch { expected: model.input_dim(), got: want }.into());
    }
    let pred = (0..test.len())
        .into_par_iter()
        .map(|i| model.predict(test.features(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Predictions {
        frames: target_frames(test),
        truth: test.labels().iter().map(|&v| v as f64).collect(),
        pred,
    })
}

/// Persistence forecasts: the power at each sample's anchor frame.
pub fn persistence_predictions(test: &Dataset, powers: &[f64]) -> Result<Predictions, EvalError> {
    let pred = (0..test.len())
        .map(|i| {
            let a = test.anchor(i);
            powers.get(a as usize).map(|&p| persistence_predict(p)).ok_or(EvalError::MissingPower(a))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Predictions {
        frames: target_frames(test),
        truth: test.labels().iter().map(|&v| v as f64).collect(),
        pred,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub repetitions: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: ModelKind,
    pub camera: String,
    pub k: usize,
    pub s: usize,
    pub rmse: f64,
    pub n_samples: usize,
    pub blockage_rmse: Option<f64>,
    pub n_blockage: usize,
    pub latency: Option<LatencyStats>,
    pub csv_paths: Vec<String>,
}

impl EvalReport {
    pub fn from_predictions(
        model: ModelKind,
        camera: &str,
        test: &Dataset,
        preds: &Predictions,
        los_dbm: f64,
    ) -> Result<Self, EvalError> {
        Ok(Self {
            model,
            camera: camera.to_string(),
            k: test.horizon(),
            s: test.dims().s,
            rmse: preds.rmse()?,
            n_samples: preds.len(),
            blockage_rmse: preds.blockage_rmse(los_dbm, BLOCKAGE_DEPTH_DB),
            n_blockage: preds.blockage_indices(los_dbm, BLOCKAGE_DEPTH_DB).len(),
            latency: None,
            csv_paths: Vec::new(),
        })
    }

    /// `key = value` lines under a `<model>.` prefix.
    pub fn to_kv(&self) -> String {
        let m = self.model.name();
        let mut out = String::new();
        let _ = writeln!(out, "{m}.camera = {}", self.camera);
        let _ = writeln!(out, "{m}.s = {}", self.s);
        let _ = writeln!(out, "{m}.k = {}", self.k);
        let _ = writeln!(out, "{m}.samples = {}", self.n_samples);
        let _ = writeln!(out, "{m}.rmse_db = {:.4}", self.rmse);
        let _ = writeln!(out, "{m}.blockage_samples = {}", self.n_blockage);
        match self.blockage_rmse {
            Some(v) => {
                let _ = writeln!(out, "{m}.blockage_rmse_db = {v:.4}");
            }
            None => {
                let _ = writeln!(out, "{m}.blockage_rmse_db = nan");
            }
        }
        if let Some(l) = self.latency {
            let _ = writeln!(out, "{m}.latency_reps = {}", l.repetitions);
            let _ = writeln!(out, "{m}.latency_mean_ms = {:.4}", l.mean_ms);
            let _ = writeln!(out, "{m}.latency_p95_ms = {:.4}", l.p95_ms);
            let _ = writeln!(out, "{m}.latency_max_ms = {:.4}", l.max_ms);
        }
        for p in &self.csv_paths {
            let _ = writeln!(out, "{m}.csv = {p}");
        }
        out
    }
}

/// Predictions and report for a trained model on its test split.
pub fn evaluate_model(
    model: &dyn Regressor,
    test: &Dataset,
    camera: &str,
    los_dbm: f64,
) -> Result<(EvalReport, Predictions), EvalError> {
    let preds = predict_dataset(model, test)?;
    let report = EvalReport::from_predictions(model.kind(), camera, test, &preds, los_dbm)?;
    Ok((report, preds))
}

/// Times single-sample predictions, cycling through `samples`, after one
/// untimed warm-up pass over up to 10 of them.
pub fn bench_latency(
    model: &dyn Regressor,
    samples: &[&[f32]],
    repetitions: usize,
) -> Result<LatencyStats, EvalError> {
    if repetitions < 30 {
        return Err(EvalError::TooFewRepetitions(repetitions));
    }
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    for x in samples.iter().take(10) {
        std::hint::black_box(model.predict(x)?);
    }
    let mut times = Vec::with_capacity(repetitions);
    for r in 0..repetitions {
        let x = samples[r % samples.len()];
        let t = Instant::now();
        std::hint::black_box(model.predict(std::hint::black_box(x))?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(latency_stats(&mut times))
}

fn latency_stats(times: &mut [f64]) -> LatencyStats {
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
    LatencyStats {
        repetitions: n,
        mean_ms: times.iter().sum::<f64>() / n as f64,
        p95_ms: times[rank],
        max_ms: times[n - 1],
    }
}

/// Streams and settings shared by every row of an s-sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepInputs<'a> {
    pub frames: &'a [SmallFrame],
    pub powers: &'a [f64],
    pub fps: u32,
    pub k: usize,
    pub split: SplitSpec,
    pub forest: &'a ForestConfig,
    pub mlp: &'a MlpConfig,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub s: usize,
    pub model: ModelKind,
    pub n_samples: usize,
    pub result: Result<f64, String>,
}

/// Rebuilds, retrains and scores each `(s, model)` pair on the same streams.
/// A failing row records its error and the sweep moves on.
pub fn sweep_s(inputs: &SweepInputs, s_values: &[usize], models: &[ModelKind]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &s in s_values {
        let built = label_dataset(inputs.frames, inputs.powers, s, inputs.k, inputs.fps, inputs.provenance)
            .map_err(EvalError::from)
            .and_then(|ds| Ok((split_dataset(&ds, &inputs.split)?, ds.len())));
        for &model in models {
            let (result, n_samples) = match &built {
                Err(e) => (Err(e.to_string()), 0),
                Ok(((train, holdout, test), n)) => {
                    let r = match model {
                        ModelKind::Persistence => persistence_predictions(test, inputs.powers).and_then(|p| p.rmse()),
                        _ => train_model(model, train, holdout, inputs.forest, inputs.mlp)
                            .map_err(EvalError::from)
                            .and_then(|m| predict_dataset(&m, test))
                            .and_then(|p| p.rmse()),
                    };
                    (r.map_err(|e| e.to_string()), *n)
                }
            };
            rows.push(SweepRow { s, model, n_samples, result });
        }
    }
    rows
}

/// `s,model,rmse_db`; failed rows print `nan`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "s,model,rmse_db")?;
    for r in rows {
        match &r.result {
            Ok(v) => writeln!(out, "{},{},{:.4}", r.s, r.model.name(), v)?,
            Err(_) => writeln!(out, "{},{},nan", r.s, r.model.name())?,
        }
    }
    Ok(())
}
