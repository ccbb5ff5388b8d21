//! Kinect-style depth rendering by ray casting, and block-mean reduction of
//! depth frames to the small normalized grids the regressors consume.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::scene::{camera_ray, ray_scene_intersect, CameraConfig, Passage, SceneState};

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("cannot reduce {src_h}x{src_w} frame to {h}x{w}")]
    BadTargetSize { src_h: usize, src_w: usize, h: usize, w: usize },
}

/// Raw depth image in millimeters, row-major; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    pub frame_index: u64,
    pub height: usize,
    pub width: usize,
    pub max_range_mm: u16,
    pub data: Vec<u16>,
}

impl DepthFrame {
    pub fn at(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    /// Binary PGM (`P5`, 16-bit big-endian samples).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.data.len() * 2);
        for v in &self.data {
            buf.extend_from_slice(&v.to_be_bytes());
        }
        out.write_all(&buf)
    }
}

/// Reduced depth image: depth divided by the camera's max range, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallFrame {
    pub frame_index: u64,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl SmallFrame {
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Ray casts one depth frame. Each pixel holds the distance along its camera
/// ray to the nearest surface, rounded to whole millimeters; hits outside the
/// sensor's range read 0.
pub fn render_depth(state: &SceneState, cam: &CameraConfig, passage: &Passage) -> DepthFrame {
    let w = cam.width_px as usize;
    let h = cam.height_px as usize;
    let mut data = vec![0u16; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        for (col, px) in out.iter_mut().enumerate() {
            let (origin, dir) = camera_ray(cam, col as f64, row as f64);
            *px = match ray_scene_intersect(origin, dir, state, passage) {
                Some((t, _)) => quantize_depth(t, cam),
                None => 0,
            };
        }
    });
    DepthFrame {
        frame_index: state.frame_index,
        height: h,
        width: w,
        max_range_mm: (cam.max_range * 1000.0).round() as u16,
        data,
    }
}

/// Millimeter code for a hit at `t` meters, or 0 outside the capture range.
pub fn quantize_depth(t: f64, cam: &CameraConfig) -> u16 {
    if t < cam.min_range || t > cam.max_range {
        0
    } else {
        (t * 1000.0).round() as u16
    }
}

/// Block-mean reduction to `h x w`. Output cell `(r, c)` averages the valid
/// pixels of source rows `[r·H/h, (r+1)·H/h)` and columns
/// `[c·W/w, (c+1)·W/w)` (integer division), normalized by the max range.
pub fn downscale(frame: &DepthFrame, h: usize, w: usize) -> Result<SmallFrame, DepthError> {
    if h == 0 || w == 0 || h > frame.height || w > frame.width {
        return Err(DepthError::BadTargetSize { src_h: frame.height, src_w: frame.width, h, w });
    }
    let scale = 1.0 / frame.max_range_mm as f64;
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let (r0, r1) = (r * frame.height / h, (r + 1) * frame.height / h);
        for c in 0..w {
            let (c0, c1) = (c * frame.width / w, (c + 1) * frame.width / w);
            let mut sum = 0u64;
            let mut n = 0u64;
            for row in r0..r1 {
                for &v in &frame.data[row * frame.width + c0..row * frame.width + c1] {
                    if v != 0 {
                        sum += v as u64;
                        n += 1;
                    }
                }
            }
            let v = if n == 0 { 0.0 } else { (sum as f64 / n as f64 * scale).min(1.0) };
            data.push(v as f32);
        }
    }
    Ok(SmallFrame { frame_index: frame.frame_index, height: h, width: w, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Pedestrian, Side, TwinCylinder, Vec3};

    fn frame(h: usize, w: usize, data: Vec<u16>) -> DepthFrame {
        DepthFrame { frame_index: 0, height: h, width: w, max_range_mm: 8000, data }
    }

    #[test]
    fn perpendicular_wall_centre_pixel() {
        let cam = CameraConfig {
            position: Vec3::new(2.0, 0.0, 1.0),
            look_at: Vec3::new(5.0, 0.0, 1.0),
            width_px: 16,
            height_px: 12,
            ..Default::default()
        };
        let f = render_depth(&SceneState::default(), &cam, &Passage::default());
        assert_eq!(f.at(6, 8), 3000);
    }

    #[test]
    fn far_hits_are_invalid() {
        let cam = CameraConfig {
            position: Vec3::new(-4.0, 0.0, 1.0),
            look_at: Vec3::new(5.0, 0.0, 1.0),
            width_px: 8,
            height_px: 6,
            ..Default::default()
        };
        let f = render_depth(&SceneState::default(), &cam, &Passage::default());
        // 9 m to the far end wall
        assert_eq!(f.at(3, 4), 0);
        assert_eq!(quantize_depth(0.3, &cam), 0);
        assert_eq!(quantize_depth(8.0, &cam), 8000);
    }

    #[test]
    fn render_is_deterministic() {
        let cam = CameraConfig { width_px: 24, height_px: 20, ..Default::default() };
        let scene = SceneState {
            frame_index: 4,
            pedestrians: vec![Pedestrian {
                id: 0,
                side: Side::Left,
                shape: TwinCylinder::adult(0.3, -0.8),
                velocity: 1.0,
            }],
        };
        let a = render_depth(&scene, &cam, &Passage::default());
        let b = render_depth(&scene, &cam, &Passage::default());
        assert_eq!(a, b);
        assert_eq!(a.frame_index, 4);
    }

    #[test]
    fn block_mean() {
        let f = frame(2, 2, vec![1000, 1000, 3000, 3000]);
        let s = downscale(&f, 1, 1).unwrap();
        assert_eq!(s.data, vec![0.25]);
    }

    #[test]
    fn invalid_pixels_are_ignored() {
        let f = frame(2, 4, vec![0, 0, 4000, 0, 0, 0, 0, 2000]);
        let s = downscale(&f, 1, 2).unwrap();
        assert_eq!(s.data, vec![0.0, 0.375]);
    }

    #[test]
    fn rejects_upscaling() {
        let f = frame(2, 2, vec![1; 4]);
        assert!(downscale(&f, 3, 2).is_err());
        assert!(downscale(&f, 2, 0).is_err());
    }

    #[test]
    fn pgm_header_and_payload() {
        let f = frame(1, 2, vec![0x0102, 8000]);
        let mut buf = Vec::new();
        f.write_pgm(&mut buf).unwrap();
        let header = b"P5\n2 1\n65535\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..], &[0x01, 0x02, 0x1f, 0x40]);
    }
}
