//! Received power at the STA: Friis free-space loss, a Gaussian main-lobe AP
//! antenna, and per-pedestrian knife-edge shadowing, clamped at the receiver
//! sensitivity floor.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::scene::{los_crossing, LinkEndpoints, SceneState, TwinCylinder, Vec3};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Below this Fresnel parameter the knife-edge approximation reports no loss.
pub const KNIFE_EDGE_THRESHOLD: f64 = -0.78;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("invalid channel parameter `{0}`")]
    InvalidParam(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub frequency_hz: f64,
    pub tx_power_dbm: f64,
    pub tx_peak_gain_dbi: f64,
    /// Full 3-dB beamwidth in degrees.
    pub tx_beamwidth_deg: f64,
    pub rx_gain_dbi: f64,
    pub floor_dbm: f64,
    pub noise_sigma_db: f64,
    /// Point the AP antenna is aimed at; `None` aims at the STA.
    pub tx_aim: Option<Vec3>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            frequency_hz: 60e9,
            tx_power_dbm: 20.0,
            tx_peak_gain_dbi: 24.0,
            tx_beamwidth_deg: 15.0,
            rx_gain_dbi: 0.0,
            floor_dbm: -68.0,
            noise_sigma_db: 0.0,
            tx_aim: None,
        }
    }
}

impl ChannelParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(ChannelError::InvalidParam("frequency_hz"));
        }
        if !(self.tx_beamwidth_deg > 0.0 && self.tx_beamwidth_deg < 180.0) {
            return Err(ChannelError::InvalidParam("tx_beamwidth_deg"));
        }
        if !(self.noise_sigma_db >= 0.0 && self.noise_sigma_db.is_finite()) {
            return Err(ChannelError::InvalidParam("noise_sigma_db"));
        }
        if !self.floor_dbm.is_finite() {
            return Err(ChannelError::InvalidParam("floor_dbm"));
        }
        Ok(())
    }
}

/// Free-space path loss `20·log10(4π·d·f/c)` in dB.
pub fn fspl(distance: f64, frequency_hz: f64) -> Result<f64, ChannelError> {
    if !(distance > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * distance * frequency_hz / SPEED_OF_LIGHT).log10())
}

/// AP gain `θ` degrees off boresight: Gaussian main lobe with a side-lobe
/// floor 30 dB under the peak.
pub fn antenna_gain(theta_deg: f64, params: &ChannelParams) -> f64 {
    let rel = theta_deg / params.tx_beamwidth_deg;
    let peak = params.tx_peak_gain_dbi;
    (peak - 12.0 * rel * rel).max(peak - 30.0)
}

/// Fresnel-Kirchhoff parameter of an edge whose tip is `clearance` meters
/// into the LOS (negative when the LOS clears it).
pub fn fresnel_parameter(
    clearance: f64,
    d1: f64,
    d2: f64,
    wavelength: f64,
) -> Result<f64, ChannelError> {
    if !(d1 > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d1));
    }
    if !(d2 > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d2));
    }
    if !(wavelength > 0.0) {
        return Err(ChannelError::InvalidParam("wavelength"));
    }
    Ok(clearance * (2.0 * (d1 + d2) / (wavelength * d1 * d2)).sqrt())
}

/// Single knife-edge diffraction loss `J(ν)` in dB.
pub fn knife_edge_loss(nu: f64) -> f64 {
    if nu <= KNIFE_EDGE_THRESHOLD {
        return 0.0;
    }
    let a = nu - 0.1;
    6.9 + 20.0 * ((a * a + 1.0).sqrt() + a).log10()
}

fn edge_amplitude(clearance: f64, d1: f64, d2: f64, wavelength: f64) -> f64 {
    // d1, d2 come from a crossing strictly inside the segment
    let nu = clearance * (2.0 * (d1 + d2) / (wavelength * d1 * d2)).sqrt();
    10f64.powf(-knife_edge_loss(nu) / 20.0)
}

/// Loss through a vertical slab of half-width `half_width` whose centre sits
/// `offset` meters to the side of the LOS, modelled as two knife edges whose
/// diffracted amplitudes add.
pub fn double_edge_loss(offset: f64, half_width: f64, d1: f64, d2: f64, wavelength: f64) -> f64 {
    // each edge's penetration into the LOS, measured from its open side
    let near = half_width - offset;
    let far = half_width + offset;
    let sum = edge_amplitude(near, d1, d2, wavelength) + edge_amplitude(far, d1, d2, wavelength);
    (-20.0 * sum.log10()).max(0.0)
}

/// Shadowing loss of one pedestrian on the AP-STA link, in dB.
///
/// While the LOS crosses the pedestrian's axis at or below the crown, the
/// silhouette is a slab as wide as the body. Above the crown the wave can also
/// bend over the head, and the weaker of the two shadows applies.
pub fn pedestrian_blockage_loss(
    link: &LinkEndpoints,
    ped: &TwinCylinder,
    params: &ChannelParams,
) -> f64 {
    let Some(c) = los_crossing(link, ped) else {
        return 0.0;
    };
    let wavelength = params.wavelength();
    let lateral = double_edge_loss(c.center_offset, ped.body_radius, c.d1, c.d2, wavelength);
    if c.los_height <= ped.head_top {
        return lateral;
    }
    let nu_top = (ped.head_top - c.los_height)
        * (2.0 * (c.d1 + c.d2) / (wavelength * c.d1 * c.d2)).sqrt();
    knife_edge_loss(nu_top).min(lateral)
}

/// Pedestrian-free received power in dBm, before the floor clamp.
pub fn los_power(link: &LinkEndpoints, params: &ChannelParams) -> f64 {
    let to_sta = link.sta_pos - link.ap_pos;
    let theta = match params.tx_aim {
        None => 0.0,
        Some(aim) => {
            let a = (aim - link.ap_pos).normalized();
            let b = to_sta.normalized();
            a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
        }
    };
    let path = fspl(to_sta.norm(), params.frequency_hz).unwrap_or(0.0);
    params.tx_power_dbm + antenna_gain(theta, params) + params.rx_gain_dbi - path
}

/// Total shadowing from every pedestrian in the scene (dB losses add).
pub fn total_blockage_loss(state: &SceneState, link: &LinkEndpoints, params: &ChannelParams) -> f64 {
    state
        .pedestrians
        .iter()
        .map(|p| pedestrian_blockage_loss(link, &p.shape, params))
        .sum()
}

/// Noise-free received power before the floor clamp.
pub fn unclamped_power(state: &SceneState, link: &LinkEndpoints, params: &ChannelParams) -> f64 {
    los_power(link, params) - total_blockage_loss(state, link, params)
}

/// Received power in dBm, clamped below at the sensitivity floor. Measurement
/// noise is drawn from `rng` only when `noise_sigma_db > 0`.
pub fn received_power<R: Rng + ?Sized>(
    state: &SceneState,
    link: &LinkEndpoints,
    params: &ChannelParams,
    rng: &mut R,
) -> f64 {
    let mut p = unclamped_power(state, link, params);
    if params.noise_sigma_db > 0.0 {
        if let Ok(n) = Normal::new(0.0, params.noise_sigma_db) {
            p -= n.sample(rng);
        }
    }
    p.max(params.floor_dbm)
}
