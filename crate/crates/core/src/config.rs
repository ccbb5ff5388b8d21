//! Experiment configuration files (TOML, dotted sections).
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected.
//!
//! ```toml
//! seed = 1
//! duration_s = 600.0
//! camera = "A_low"          # A|B|C|D x low|high
//!
//! [dataset]
//! s = 16
//! k = 15
//!
//! [model]
//! kind = "forest"           # forest | mlp
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::ChannelParams;
use crate::dataset::SplitSpec;
use crate::ml::{derive_seed, ForestConfig, MlpConfig, ModelKind};
use crate::mobility::MobilityConfig;
use crate::scene::{CameraConfig, LinkEndpoints, Passage, Vec3};
use crate::sim::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Missing { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, reason: reason.into() }
}

/// Camera mounting site from the evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    A,
    B,
    C,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CameraLabel {
    pub site: Site,
    pub high: bool,
}

pub const LOW_HEIGHT: f64 = 2.25;
pub const HIGH_HEIGHT: f64 = 5.0;
/// Point every grid camera is aimed at.
pub const CAMERA_TARGET: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.75 };

impl CameraLabel {
    pub fn position(self) -> Vec3 {
        let (x, y) = match self.site {
            Site::A => (0.0, -2.0),
            Site::B => (-4.0, -2.0),
            Site::C => (-4.0, 0.0),
            Site::D => (0.0, 0.0),
        };
        Vec3::new(x, y, if self.high { HIGH_HEIGHT } else { LOW_HEIGHT })
    }

    pub fn all() -> impl Iterator<Item = CameraLabel> {
        [Site::A, Site::B, Site::C, Site::D]
            .into_iter()
            .flat_map(|site| [false, true].map(|high| CameraLabel { site, high }))
    }
}

impl FromStr for CameraLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (site, height) = s.split_once('_').ok_or_else(|| format!("`{s}` is not of the form <A-D>_<low|high>"))?;
        let site = match site {
            "A" => Site::A,
            "B" => Site::B,
            "C" => Site::C,
            "D" => Site::D,
            _ => return Err(format!("unknown camera site `{site}`")),
        };
        let high = match height {
            "low" => false,
            "high" => true,
            _ => return Err(format!("unknown camera height `{height}`")),
        };
        Ok(CameraLabel { site, high })
    }
}

impl fmt::Display for CameraLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}_{}", self.site, if self.high { "high" } else { "low" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub passage_length: f64,
    pub passage_width: f64,
    pub wall_height: f64,
    pub ap: [f64; 3],
    pub sta: [f64; 3],
}

impl Default for SceneSection {
    fn default() -> Self {
        let p = Passage::default();
        let l = LinkEndpoints::default();
        Self {
            passage_length: p.length,
            passage_width: p.width,
            wall_height: p.wall_height,
            ap: [l.ap_pos.x, l.ap_pos.y, l.ap_pos.z],
            sta: [l.sta_pos.x, l.sta_pos.y, l.sta_pos.z],
        }
    }
}

/// Depth sensor optics; the mounting comes from the camera label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub min_range: f64,
    pub max_range: f64,
    pub fps: u32,
}

impl Default for SensorSection {
    fn default() -> Self {
        let c = CameraConfig::default();
        Self {
            hfov_deg: c.hfov_deg,
            vfov_deg: c.vfov_deg,
            width_px: c.width_px,
            height_px: c.height_px,
            min_range: c.min_range,
            max_range: c.max_range,
            fps: c.fps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilitySection {
    pub arrival_rate: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub lane_left: [f64; 2],
    pub lane_right: [f64; 2],
}

impl Default for MobilitySection {
    fn default() -> Self {
        let m = MobilityConfig::default();
        Self {
            arrival_rate: m.arrival_rate,
            speed_min: m.speed_range.0,
            speed_max: m.speed_range.1,
            lane_left: [m.lane_left.0, m.lane_left.1],
            lane_right: [m.lane_right.0, m.lane_right.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub frequency_hz: f64,
    pub tx_power_dbm: f64,
    pub tx_peak_gain_dbi: f64,
    pub tx_beamwidth_deg: f64,
    pub rx_gain_dbi: f64,
    pub floor_dbm: f64,
    pub noise_sigma_db: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let c = ChannelParams::default();
        Self {
            frequency_hz: c.frequency_hz,
            tx_power_dbm: c.tx_power_dbm,
            tx_peak_gain_dbi: c.tx_peak_gain_dbi,
            tx_beamwidth_deg: c.tx_beamwidth_deg,
            rx_gain_dbi: c.rx_gain_dbi,
            floor_dbm: c.floor_dbm,
            noise_sigma_db: c.noise_sigma_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub s: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub train_fraction: f64,
    pub holdout_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let split = SplitSpec::default();
        Self { s: 16, k: 15, h: 24, w: 32, train_fraction: split.train_fraction, holdout_fraction: split.holdout_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { kind: "forest".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    pub max_depth: usize,
    /// 0 selects ⌈p/3⌉.
    pub mtry: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestSection {
    fn default() -> Self {
        let f = ForestConfig::default();
        Self {
            n_trees: f.n_trees,
            max_depth: f.max_depth,
            mtry: f.mtry.unwrap_or(0),
            min_samples_leaf: f.min_samples_leaf,
            bootstrap: f.bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSection {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for MlpSection {
    fn default() -> Self {
        let m = MlpConfig::default();
        Self {
            hidden: m.hidden,
            learning_rate: m.learning_rate,
            lr_decay: m.lr_decay,
            batch_size: m.batch_size,
            epochs: m.epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub latency_repetitions: usize,
    pub sweep_s: Vec<usize>,
    pub sweep_models: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            latency_repetitions: 200,
            sweep_s: vec![1, 2, 4, 8, 16],
            sweep_models: vec!["forest".into(), "persistence".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Dump every n-th raw depth frame as PGM; 0 disables.
    pub pgm_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub camera: String,
    /// Ignored when the CLI passes `--out`; not part of the digest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub scene: SceneSection,
    pub sensor: SensorSection,
    pub mobility: MobilitySection,
    pub channel: ChannelSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub forest: ForestSection,
    pub mlp: MlpSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_s: 600.0,
            camera: "A_low".into(),
            output_dir: None,
            scene: SceneSection::default(),
            sensor: SensorSection::default(),
            mobility: MobilitySection::default(),
            channel: ChannelSection::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            forest: ForestSection::default(),
            mlp: MlpSection::default(),
            eval: EvalSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl ExperimentConfig {
    pub fn camera_label(&self) -> Result<CameraLabel, ConfigError> {
        self.camera.parse().map_err(|e| invalid("camera", e))
    }

    pub fn model_kind(&self) -> Result<ModelKind, ConfigError> {
        match self.model.kind.parse() {
            Ok(ModelKind::Persistence) => Err(invalid("model.kind", "persistence is a baseline, not a trainable model")),
            Ok(k) => Ok(k),
            Err(e) => Err(invalid("model.kind", e)),
        }
    }

    pub fn sweep_models(&self) -> Result<Vec<ModelKind>, ConfigError> {
        self.eval.sweep_models.iter().map(|m| m.parse().map_err(|e| invalid("eval.sweep_models", e))).collect()
    }

    pub fn camera_config(&self) -> Result<CameraConfig, ConfigError> {
        let s = &self.sensor;
        Ok(CameraConfig {
            position: self.camera_label()?.position(),
            look_at: CAMERA_TARGET,
            hfov_deg: s.hfov_deg,
            vfov_deg: s.vfov_deg,
            width_px: s.width_px,
            height_px: s.height_px,
            min_range: s.min_range,
            max_range: s.max_range,
            fps: s.fps,
        })
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let c = &self.channel;
        let m = &self.mobility;
        Ok(SimConfig {
            passage: Passage {
                length: self.scene.passage_length,
                width: self.scene.passage_width,
                wall_height: self.scene.wall_height,
            },
            link: LinkEndpoints { ap_pos: vec3(self.scene.ap), sta_pos: vec3(self.scene.sta) },
            channel: ChannelParams {
                frequency_hz: c.frequency_hz,
                tx_power_dbm: c.tx_power_dbm,
                tx_peak_gain_dbi: c.tx_peak_gain_dbi,
                tx_beamwidth_deg: c.tx_beamwidth_deg,
                rx_gain_dbi: c.rx_gain_dbi,
                floor_dbm: c.floor_dbm,
                noise_sigma_db: c.noise_sigma_db,
                tx_aim: None,
            },
            mobility: MobilityConfig {
                arrival_rate: m.arrival_rate,
                speed_range: (m.speed_min, m.speed_max),
                lane_left: (m.lane_left[0], m.lane_left[1]),
                lane_right: (m.lane_right[0], m.lane_right[1]),
                seed: self.seed,
            },
            camera: self.camera_config()?,
            small_h: self.dataset.h,
            small_w: self.dataset.w,
            duration_s: self.duration_s,
        })
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { train_fraction: self.dataset.train_fraction, holdout_fraction: self.dataset.holdout_fraction }
    }

    pub fn forest_config(&self) -> ForestConfig {
        let f = &self.forest;
        ForestConfig {
            n_trees: f.n_trees,
            max_depth: f.max_depth,
            mtry: (f.mtry > 0).then_some(f.mtry),
            min_samples_leaf: f.min_samples_leaf,
            bootstrap: f.bootstrap,
            seed: derive_seed(self.seed, 1),
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        let m = &self.mlp;
        MlpConfig {
            hidden: m.hidden.clone(),
            learning_rate: m.learning_rate,
            lr_decay: m.lr_decay,
            batch_size: m.batch_size,
            epochs: m.epochs,
            seed: derive_seed(self.seed, 2),
            ..MlpConfig::default()
        }
    }

    /// Checks every section, naming the first offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s", "must be positive"));
        }
        self.camera_label()?;
        self.model_kind()?;
        self.sweep_models()?;
        let sc = &self.scene;
        for (key, v) in [
            ("scene.passage_length", sc.passage_length),
            ("scene.passage_width", sc.passage_width),
            ("scene.wall_height", sc.wall_height),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, "must be positive"));
            }
        }
        if sc.ap == sc.sta || sc.ap.iter().chain(&sc.sta).any(|v| !v.is_finite()) {
            return Err(invalid("scene.ap", "endpoints must be finite and distinct"));
        }
        let cam = self.camera_config()?;
        cam.validate().map_err(|field| ConfigError::Invalid { key: sensor_key(field), reason: "out of range".into() })?;
        let sim = self.sim_config()?;
        sim.channel.validate().map_err(|e| invalid("channel", e.to_string()))?;
        sim.mobility.validate(&sim.passage).map_err(|e| invalid("mobility", e.to_string()))?;
        if sim.mobility.arrival_rate / cam.fps as f64 >= 0.1 {
            return Err(invalid("mobility.arrival_rate", "per-frame arrival probability must stay below 0.1"));
        }
        let d = &self.dataset;
        if d.s == 0 {
            return Err(invalid("dataset.s", "must be at least 1"));
        }
        if d.h == 0 || d.h > cam.height_px as usize {
            return Err(invalid("dataset.h", "must be in 1..=sensor.height_px"));
        }
        if d.w == 0 || d.w > cam.width_px as usize {
            return Err(invalid("dataset.w", "must be in 1..=sensor.width_px"));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(invalid("dataset.train_fraction", "must be in (0, 1)"));
        }
        if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
            return Err(invalid("dataset.holdout_fraction", "must be in (0, 1)"));
        }
        let f = &self.forest;
        if f.n_trees == 0 {
            return Err(invalid("forest.n_trees", "must be at least 1"));
        }
        if f.max_depth == 0 {
            return Err(invalid("forest.max_depth", "must be at least 1"));
        }
        if f.min_samples_leaf == 0 {
            return Err(invalid("forest.min_samples_leaf", "must be at least 1"));
        }
        if f.mtry > d.s * d.h * d.w {
            return Err(invalid("forest.mtry", "exceeds the feature count"));
        }
        let m = &self.mlp;
        if m.hidden.contains(&0) {
            return Err(invalid("mlp.hidden", "widths must be positive"));
        }
        if !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            return Err(invalid("mlp.learning_rate", "must be positive"));
        }
        if !(m.lr_decay > 0.0 && m.lr_decay <= 1.0) {
            return Err(invalid("mlp.lr_decay", "must be in (0, 1]"));
        }
        if m.batch_size == 0 {
            return Err(invalid("mlp.batch_size", "must be at least 1"));
        }
        if self.eval.latency_repetitions < 30 {
            return Err(invalid("eval.latency_repetitions", "must be at least 30"));
        }
        if self.eval.sweep_s.contains(&0) {
            return Err(invalid("eval.sweep_s", "values must be at least 1"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering, excluding `output_dir`.
    pub fn digest(&self) -> [u8; 32] {
        let canonical = ExperimentConfig { output_dir: None, ..self.clone() };
        let text = toml::to_string(&canonical).expect("config serializes");
        Sha256::digest(text.as_bytes()).into()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn sensor_key(field: &str) -> &'static str {
    match field {
        "hfov_deg" => "sensor.hfov_deg",
        "vfov_deg" => "sensor.vfov_deg",
        "width_px" => "sensor.width_px",
        "height_px" => "sensor.height_px",
        "min_range" | "max_range" => "sensor.min_range",
        "fps" => "sensor.fps",
        _ => "camera",
    }
}

/// Parses and validates config text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Missing { path: path.display().to_string(), source })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let sim = cfg.sim_config().unwrap();
        assert_eq!(sim.passage, Passage::default());
        assert_eq!(sim.link, LinkEndpoints::default());
        assert_eq!(sim.camera, CameraConfig::default());
        assert_eq!(sim.n_frames(), 18000);
        assert_eq!((cfg.dataset.s, cfg.dataset.k, cfg.dataset.h, cfg.dataset.w), (16, 15, 24, 32));
        assert_eq!(cfg.forest_config().n_trees, 20);
    }

    #[test]
    fn camera_grid() {
        let cfg = parse_config("camera = \"A_low\"").unwrap();
        assert_eq!(cfg.camera_config().unwrap().position, Vec3::new(0.0, -2.0, 2.25));
        let expect = [
            ("A_low", (0.0, -2.0, 2.25)),
            ("B_high", (-4.0, -2.0, 5.0)),
            ("C_low", (-4.0, 0.0, 2.25)),
            ("D_high", (0.0, 0.0, 5.0)),
        ];
        for (label, (x, y, z)) in expect {
            let l: CameraLabel = label.parse().unwrap();
            assert_eq!(l.position(), Vec3::new(x, y, z));
            assert_eq!(l.to_string(), label);
        }
        assert_eq!(CameraLabel::all().count(), 8);
        for l in CameraLabel::all() {
            let cfg = parse_config(&format!("camera = \"{l}\"")).unwrap();
            cfg.camera_config().unwrap().validate().unwrap();
        }
        let err = parse_config("camera = \"E_low\"").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { key: "camera", .. }));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config("fooo = 1").unwrap_err().to_string();
        assert!(err.contains("fooo"), "{err}");
        let err = parse_config("[dataset]\nfooo = 1").unwrap_err().to_string();
        assert!(err.contains("fooo"), "{err}");
    }

    #[test]
    fn validation_names_the_key() {
        let cases = [
            ("duration_s = -1.0", "duration_s"),
            ("[dataset]\ns = 0", "dataset.s"),
            ("[dataset]\nh = 1000", "dataset.h"),
            ("[forest]\nn_trees = 0", "forest.n_trees"),
            ("[model]\nkind = \"persistence\"", "model.kind"),
            ("[sensor]\nhfov_deg = 200.0", "sensor.hfov_deg"),
            ("[mobility]\narrival_rate = 5.0", "mobility.arrival_rate"),
            ("[eval]\nlatency_repetitions = 3", "eval.latency_repetitions"),
        ];
        for (text, key) in cases {
            match parse_config(text) {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn digest_tracks_fields_but_not_output_dir() {
        let base = ExperimentConfig::default();
        let moved = ExperimentConfig { output_dir: Some("elsewhere".into()), ..base.clone() };
        assert_eq!(base.digest(), moved.digest());
        let mut changed = base.clone();
        changed.dataset.k = 0;
        assert_ne!(base.digest(), changed.digest());
        let mut changed = base.clone();
        changed.channel.noise_sigma_db = 0.5;
        assert_ne!(base.digest(), changed.digest());
        assert_eq!(parse_config(&base.to_toml()).unwrap(), base);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_config(Path::new("/nonexistent/x.toml")), Err(ConfigError::Missing { .. })));
    }
}
