use std::collections::VecDeque;

use super::{DatasetError, Dims, Tensor};
use crate::depthcam::SmallFrame;

/// Holds the `s` most recent reduced frames for live prediction.
#[derive(Debug, Clone)]
pub struct RollingBuffer {
    dims: Dims,
    frames: VecDeque<SmallFrame>,
}

impl RollingBuffer {
    pub fn new(dims: Dims) -> Self {
        Self { dims, frames: VecDeque::with_capacity(dims.s) }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// Adds a frame, evicting the oldest once full. Returns the current
    /// stack, oldest first, as soon as `s` frames are held.
    pub fn push(&mut self, frame: SmallFrame) -> Result<Option<Tensor>, DatasetError> {
        if frame.height != self.dims.h || frame.width != self.dims.w || frame.data.len() != self.dims.frame_len() {
            return Err(DatasetError::FrameShape {
                h: self.dims.h,
                w: self.dims.w,
                got_h: frame.height,
                got_w: frame.width,
            });
        }
        if self.dims.s == 0 {
            return Err(DatasetError::ZeroStack);
        }
        if self.frames.len() == self.dims.s {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
        if self.frames.len() < self.dims.s {
            return Ok(None);
        }
        let mut data = Vec::with_capacity(self.dims.feature_len());
        for f in &self.frames {
            data.extend_from_slice(&f.data);
        }
        Ok(Some(Tensor { dims: self.dims, data }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{stack_window, tests::ramp_frames};

    #[test]
    fn fills_then_slides() {
        let frames = ramp_frames(20, 3, 4);
        let mut buf = RollingBuffer::new(Dims::new(16, 3, 4));
        for f in &frames[..15] {
            assert!(buf.push(f.clone()).unwrap().is_none());
        }
        let first = buf.push(frames[15].clone()).unwrap().unwrap();
        assert_eq!(first, stack_window(&frames, 16, 15).unwrap());
        let next = buf.push(frames[16].clone()).unwrap().unwrap();
        assert_eq!(next, stack_window(&frames, 16, 16).unwrap());
        assert_eq!(buf.len(), 16);
    }

    #[test]
    fn rejects_wrong_shape() {
        let mut buf = RollingBuffer::new(Dims::new(2, 3, 4));
        let frames = ramp_frames(1, 4, 3);
        assert!(buf.push(frames[0].clone()).is_err());
    }
}
