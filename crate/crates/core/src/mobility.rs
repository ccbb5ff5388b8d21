//! Pedestrian arrivals and straight-line walking.
//!
//! Each passage end spawns pedestrians independently with per-frame
//! probability `λ·dt`. Left-entering pedestrians walk `+x` in the left lane,
//! right-entering ones walk `-x` in the right lane.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::scene::{Passage, Pedestrian, SceneState, Side, TwinCylinder};

/// Distance beyond the passage ends at which pedestrians are retired.
pub const EXIT_MARGIN: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("arrival probability per frame {0} is too large for the Bernoulli approximation (needs < 0.1)")]
    RateTooHigh(f64),
    #[error("invalid mobility config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityConfig {
    /// Arrivals per second at each passage end.
    pub arrival_rate: f64,
    pub speed_range: (f64, f64),
    pub lane_left: (f64, f64),
    pub lane_right: (f64, f64),
    pub seed: u64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            arrival_rate: 0.25,
            speed_range: (0.5, 2.0),
            lane_left: (-1.75, 0.0),
            lane_right: (0.0, 1.75),
            seed: 0,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self, passage: &Passage) -> Result<(), MobilityError> {
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return Err(MobilityError::InvalidConfig("arrival_rate"));
        }
        let (lo, hi) = self.speed_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(MobilityError::InvalidConfig("speed_range"));
        }
        let half = passage.width / 2.0;
        for (name, (a, b)) in [("lane_left", self.lane_left), ("lane_right", self.lane_right)] {
            if !(a <= b && a >= -half && b <= half) {
                return Err(MobilityError::InvalidConfig(name));
            }
        }
        Ok(())
    }
}

/// A freshly spawned pedestrian before placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub side: Side,
    pub y: f64,
    pub speed: f64,
}

/// Draws this frame's arrivals: one Bernoulli trial per side (left first),
/// then lane position and speed for each success.
pub fn sample_arrivals<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &MobilityConfig,
    dt: f64,
) -> Result<Vec<Arrival>, MobilityError> {
    if !(dt > 0.0) {
        return Err(MobilityError::NonPositiveStep(dt));
    }
    let p = cfg.arrival_rate * dt;
    if p >= 0.1 {
        return Err(MobilityError::RateTooHigh(p));
    }
    let mut out = Vec::new();
    for (side, lane) in [(Side::Left, cfg.lane_left), (Side::Right, cfg.lane_right)] {
        let u: f64 = rng.random();
        if u < p {
            let y = lane.0 + (lane.1 - lane.0) * rng.random::<f64>();
            let speed = cfg.speed_range.0
                + (cfg.speed_range.1 - cfg.speed_range.0) * rng.random::<f64>();
            out.push(Arrival { side, y, speed });
        }
    }
    Ok(out)
}

/// Turns an arrival into a pedestrian standing at its passage end.
pub fn spawn(arrival: Arrival, id: u64, passage: &Passage) -> Pedestrian {
    let half = passage.length / 2.0;
    let (x, velocity) = match arrival.side {
        Side::Left => (-half, arrival.speed),
        Side::Right => (half, -arrival.speed),
    };
    Pedestrian { id, side: arrival.side, shape: TwinCylinder::adult(x, arrival.y), velocity }
}

/// Advances every pedestrian by `velocity·dt` and drops the ones that left
/// the passage. Returns the next state and the retired pedestrians.
pub fn step_pedestrians(
    state: &SceneState,
    dt: f64,
    passage: &Passage,
) -> Result<(SceneState, Vec<Pedestrian>), MobilityError> {
    if !(dt > 0.0) {
        return Err(MobilityError::NonPositiveStep(dt));
    }
    let limit = passage.length / 2.0 + EXIT_MARGIN;
    let mut kept = Vec::with_capacity(state.pedestrians.len());
    let mut gone = Vec::new();
    for ped in &state.pedestrians {
        let mut p = *ped;
        p.shape.center_x += p.velocity * dt;
        if p.shape.center_x.abs() > limit {
            gone.push(p);
        } else {
            kept.push(p);
        }
    }
    Ok((SceneState { frame_index: state.frame_index + 1, pedestrians: kept }, gone))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Spawn,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityEvent {
    pub frame: u64,
    pub kind: EventKind,
    pub side: Side,
    pub y: f64,
    pub speed: f64,
}

/// Renders the event log as `frame,side,y,speed` lines. Exits carry an `x`
/// prefix on the side tag (`xL`, `xR`).
pub fn format_event_log(events: &[MobilityEvent]) -> String {
    let mut out = String::from("frame,side,y,speed\n");
    for e in events {
        let prefix = match e.kind {
            EventKind::Spawn => "",
            EventKind::Exit => "x",
        };
        let _ = writeln!(out, "{},{}{},{:.4},{:.4}", e.frame, prefix, e.side.tag(), e.y, e.speed);
    }
    out
}
