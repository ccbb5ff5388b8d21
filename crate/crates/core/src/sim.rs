//! Time-stepped simulation producing aligned depth-frame and received-power
//! streams.
//!
//! Frame `t` is rendered and measured before the scene advances. One ChaCha8
//! stream seeded from `mobility.seed` feeds both arrivals and measurement
//! noise; per frame the noise draw (if any) comes first, then the arrivals.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{los_power, received_power, ChannelError, ChannelParams};
use crate::depthcam::{downscale, render_depth, DepthError, DepthFrame, SmallFrame};
use crate::mobility::{
    sample_arrivals, spawn, step_pedestrians, EventKind, MobilityConfig, MobilityError, MobilityEvent,
};
use crate::scene::{CameraConfig, LinkEndpoints, Passage, SceneState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error("invalid camera field `{0}`")]
    Camera(&'static str),
    #[error("invalid passage or link geometry")]
    Geometry,
    #[error("duration must be positive, got {0}")]
    Duration(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub passage: Passage,
    pub link: LinkEndpoints,
    pub channel: ChannelParams,
    pub mobility: MobilityConfig,
    pub camera: CameraConfig,
    /// Reduced frame size fed to the dataset.
    pub small_h: usize,
    pub small_w: usize,
    pub duration_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            passage: Passage::default(),
            link: LinkEndpoints::default(),
            channel: ChannelParams::default(),
            mobility: MobilityConfig::default(),
            camera: CameraConfig::default(),
            small_h: 24,
            small_w: 32,
            duration_s: 600.0,
        }
    }
}

impl SimConfig {
    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.camera.fps as f64).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.camera.fps as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SimError::Duration(self.duration_s));
        }
        if !self.passage.is_valid() || !(self.link.distance() > 0.0) {
            return Err(SimError::Geometry);
        }
        self.camera.validate().map_err(SimError::Camera)?;
        self.channel.validate()?;
        self.mobility.validate(&self.passage)?;
        if self.small_h == 0
            || self.small_w == 0
            || self.small_h > self.camera.height_px as usize
            || self.small_w > self.camera.width_px as usize
        {
            return Err(SimError::Depth(DepthError::BadTargetSize {
                src_h: self.camera.height_px as usize,
                src_w: self.camera.width_px as usize,
                h: self.small_h,
                w: self.small_w,
            }));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub frames: Vec<SmallFrame>,
    pub powers: Vec<f64>,
    pub events: Vec<MobilityEvent>,
    /// Pedestrian-free power for this geometry.
    pub los_dbm: f64,
}

/// Runs the full simulation, rendering every frame.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    simulate_with(cfg, |_, _| {})
}

/// Like [`simulate`], handing each raw depth frame to `on_frame` first.
pub fn simulate_with(
    cfg: &SimConfig,
    mut on_frame: impl FnMut(&SceneState, &DepthFrame),
) -> Result<SimOutput, SimError> {
    let mut frames = Vec::with_capacity(cfg.n_frames());
    let (powers, events, los_dbm) = run(cfg, |state| {
        let raw = render_depth(state, &cfg.camera, &cfg.passage);
        on_frame(state, &raw);
        frames.push(downscale(&raw, cfg.small_h, cfg.small_w)?);
        Ok(())
    })?;
    Ok(SimOutput { frames, powers, events, los_dbm })
}

/// Power trace and events only. The trace is identical to the one
/// [`simulate`] produces for the same config.
pub fn simulate_powers(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    let (powers, events, los_dbm) = run(cfg, |_| Ok(()))?;
    Ok(SimOutput { frames: Vec::new(), powers, events, los_dbm })
}

fn run(
    cfg: &SimConfig,
    mut per_frame: impl FnMut(&SceneState) -> Result<(), SimError>,
) -> Result<(Vec<f64>, Vec<MobilityEvent>, f64), SimError> {
    cfg.validate()?;
    let n = cfg.n_frames();
    let dt = cfg.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mobility.seed);
    let mut state = SceneState::default();
    let mut next_id = 0u64;
    let mut powers = Vec::with_capacity(n);
    let mut events = Vec::new();
    for t in 0..n {
        per_frame(&state)?;
        powers.push(received_power(&state, &cfg.link, &cfg.channel, &mut rng));
        let (mut next, gone) = step_pedestrians(&state, dt, &cfg.passage)?;
        for p in gone {
            events.push(MobilityEvent {
                frame: t as u64 + 1,
                kind: EventKind::Exit,
                side: p.side,
                y: p.shape.center_y,
                speed: p.velocity.abs(),
            });
        }
        for a in sample_arrivals(&mut rng, &cfg.mobility, dt)? {
            next.pedestrians.push(spawn(a, next_id, &cfg.passage));
            next_id += 1;
            events.push(MobilityEvent { frame: t as u64 + 1, kind: EventKind::Spawn, side: a.side, y: a.y, speed: a.speed });
        }
        state = next;
    }
    Ok((powers, events, los_power(&cfg.link, &cfg.channel)))
}

/// Maximal runs of consecutive samples more than `depth_db` below `los_dbm`,
/// as `(start, length)` in frames. A run still open at the end is included.
pub fn fade_events(powers: &[f64], los_dbm: f64, depth_db: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &p) in powers.iter().enumerate() {
        let faded = p < los_dbm - depth_db;
        match (faded, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, powers.len() - s));
    }
    out
}

/// `MMWS` stream files hold a simulation's reduced frames and powers.
///
/// ```text
/// "MMWS" | u16 version = 1 | u32 h, w, F, N | f64 los_dbm
/// N × f64 powers (dBm) | N·h·w × f32 frame pixels (frame-major, row-major)
/// ```
pub mod stream {
    use super::*;

    pub const MAGIC: [u8; 4] = *b"MMWS";
    pub const VERSION: u16 = 1;

    #[derive(Debug, Error)]
    pub enum StreamError {
        #[error("bad magic {0:02x?}")]
        BadMagic([u8; 4]),
        #[error("unsupported version {0}")]
        VersionMismatch(u16),
        #[error("stream ends early")]
        Truncated,
        #[error("frame shape is empty, too large, or inconsistent")]
        Shape,
        #[error("{0} unexpected bytes after the stream")]
        TrailingData(u64),
        #[error(transparent)]
        Io(#[from] io::Error),
    }

    /// Frames and powers as stored on disk.
    #[derive(Debug, Clone, PartialEq)]
    pub struct Stream {
        pub fps: u32,
        pub los_dbm: f64,
        pub frames: Vec<SmallFrame>,
        pub powers: Vec<f64>,
    }

    pub fn write_stream<W: Write>(s: &Stream, sink: W) -> Result<(), StreamError> {
        let mut out = BufWriter::new(sink);
        let (h, w) = s.frames.first().map_or((0, 0), |f| (f.height, f.width));
        if s.frames.len() != s.powers.len() || s.frames.iter().any(|f| f.height != h || f.width != w) {
            return Err(StreamError::Shape);
        }
        let field = |v: usize| u32::try_from(v).map_err(|_| StreamError::Shape);
        out.write_all(&MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        for v in [field(h)?, field(w)?, s.fps, field(s.powers.len())?] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&s.los_dbm.to_le_bytes())?;
        for p in &s.powers {
            out.write_all(&p.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(h * w * 4);
        for f in &s.frames {
            buf.clear();
            for v in &f.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    fn take<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], StreamError> {
        let mut b = [0u8; N];
        r.read_exact(&mut b).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => StreamError::Truncated,
            _ => StreamError::Io(e),
        })?;
        Ok(b)
    }

    pub fn read_stream<R: Read>(source: R) -> Result<Stream, StreamError> {
        let mut r = BufReader::new(source);
        let magic = take::<_, 4>(&mut r)?;
        if magic != MAGIC {
            return Err(StreamError::BadMagic(magic));
        }
        let version = u16::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(StreamError::VersionMismatch(version));
        }
        let mut hdr = [0u32; 4];
        for v in &mut hdr {
            *v = u32::from_le_bytes(take(&mut r)?);
        }
        let [h, w, fps, n] = hdr.map(|v| v as usize);
        let frame_len = h.checked_mul(w).filter(|&l| l > 0 || n == 0).ok_or(StreamError::Shape)?;
        if frame_len.checked_mul(n).is_none_or(|t| t > 1 << 36) {
            return Err(StreamError::Shape);
        }
        let los_dbm = f64::from_le_bytes(take(&mut r)?);
        let mut powers = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            powers.push(f64::from_le_bytes(take(&mut r)?));
        }
        let mut frames = Vec::with_capacity(n.min(1 << 20));
        let mut buf = vec![0u8; frame_len * 4];
        for t in 0..n {
            r.read_exact(&mut buf).map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => StreamError::Truncated,
                _ => StreamError::Io(e),
            })?;
            let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            frames.push(SmallFrame { frame_index: t as u64, height: h, width: w, data });
        }
        let extra = io::copy(&mut r, &mut io::sink())?;
        if extra > 0 {
            return Err(StreamError::TrailingData(extra));
        }
        Ok(Stream { fps: fps as u32, los_dbm, frames, powers })
    }

    pub fn write_stream_file(s: &Stream, path: &Path) -> Result<(), StreamError> {
        write_stream(s, File::create(path)?)
    }

    pub fn read_stream_file(path: &Path) -> Result<Stream, StreamError> {
        read_stream(File::open(path)?)
    }
}
