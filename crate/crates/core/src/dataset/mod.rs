//! Time-sequential samples: stacks of `s` reduced depth frames labelled with
//! the received power `k` frames after the newest one.
//!
//! Consecutive windows overlap in `s - 1` frames, so a [`Dataset`] keeps one
//! shared pool of frames and each sample refers to `s` contiguous frames in
//! it. The flattened tensor of a sample (time-major, then row-major) is thus
//! a plain slice of the pool.

mod buffer;
mod format;

use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use crate::depthcam::SmallFrame;

pub use buffer::RollingBuffer;
pub use format::{parse_dataset, read_dataset_file, serialize_dataset, write_dataset_file, FormatError};

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("frame stream has {frames} frames but power stream has {powers} samples")]
    Misaligned { frames: usize, powers: usize },
    #[error("frame {expected} expected, found frame {found}")]
    Gap { expected: u64, found: u64 },
    #[error("anchor frame {anchor} needs {s} frames of history")]
    AnchorTooEarly { anchor: u64, s: usize },
    #[error("anchor frame {0} is not in the frame list")]
    AnchorMissing(u64),
    #[error("frame shape {got_h}x{got_w} differs from {h}x{w}")]
    FrameShape { h: usize, w: usize, got_h: usize, got_w: usize },
    #[error("stack depth must be at least 1")]
    ZeroStack,
    #[error("{n} frames are too few for s={s}, k={k}")]
    TooShort { n: usize, s: usize, k: usize },
    #[error("dataset has {0} samples; splitting needs at least 10")]
    TooSmallToSplit(usize),
    #[error("split fraction `{0}` must lie in (0, 1)")]
    BadFraction(&'static str),
    #[error("depth value {0} outside [0, 1]")]
    OutOfRange(f32),
}

/// Tensor shape: `s` frames of `h x w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub s: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(s: usize, h: usize, w: usize) -> Self {
        Self { s, h, w }
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w
    }

    pub fn feature_len(&self) -> usize {
        self.s * self.h * self.w
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub seed: u64,
    pub config_digest: [u8; 32],
}

/// `s x h x w` stack, oldest frame first.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Dims,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn layer(&self, j: usize) -> &[f32] {
        let n = self.dims.frame_len();
        &self.data[j * n..(j + 1) * n]
    }

    pub fn at(&self, j: usize, r: usize, c: usize) -> f32 {
        self.data[(j * self.dims.h + r) * self.dims.w + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    anchor: u64,
    label: f32,
    /// Index of the sample's oldest frame in the pool.
    start: usize,
}

/// Borrowed view of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceSample<'a> {
    pub anchor: u64,
    pub label: f32,
    pub horizon: usize,
    pub dims: Dims,
    /// Flattened `s x h x w` tensor.
    pub features: &'a [f32],
}

#[derive(Debug, Clone)]
pub struct Dataset {
    dims: Dims,
    horizon: usize,
    fps: u32,
    provenance: Provenance,
    pool: Arc<Vec<f32>>,
    entries: Vec<Entry>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.horizon == other.horizon
            && self.fps == other.fps
            && self.provenance == other.provenance
            && self.len() == other.len()
            && self.iter().zip(other.iter()).all(|(a, b)| {
                a.anchor == b.anchor
                    && a.label.to_bits() == b.label.to_bits()
                    && a.features.iter().zip(b.features).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl Dataset {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label(&self, i: usize) -> f32 {
        self.entries[i].label
    }

    pub fn anchor(&self, i: usize) -> u64 {
        self.entries[i].anchor
    }

    pub fn labels(&self) -> Vec<f32> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn anchors(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.anchor).collect()
    }

    /// Flattened tensor of sample `i`.
    pub fn features(&self, i: usize) -> &[f32] {
        let n = self.dims.frame_len();
        let start = self.entries[i].start * n;
        &self.pool[start..start + self.dims.s * n]
    }

    pub fn tensor(&self, i: usize) -> Tensor {
        Tensor { dims: self.dims, data: self.features(i).to_vec() }
    }

    pub fn sample(&self, i: usize) -> SequenceSample<'_> {
        let e = self.entries[i];
        SequenceSample {
            anchor: e.anchor,
            label: e.label,
            horizon: self.horizon,
            dims: self.dims,
            features: self.features(i),
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = SequenceSample<'_>> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    /// Contiguous sub-range sharing this dataset's frame pool.
    pub fn slice(&self, range: Range<usize>) -> Dataset {
        Dataset {
            dims: self.dims,
            horizon: self.horizon,
            fps: self.fps,
            provenance: self.provenance,
            pool: Arc::clone(&self.pool),
            entries: self.entries[range].to_vec(),
        }
    }

    /// Frames of the shared pool, `h·w` values each.
    pub(crate) fn pool(&self) -> &[f32] {
        &self.pool
    }

    pub(crate) fn pool_start(&self, i: usize) -> usize {
        self.entries[i].start
    }

    pub(crate) fn from_parts(
        dims: Dims,
        horizon: usize,
        fps: u32,
        provenance: Provenance,
        pool: Vec<f32>,
        entries: impl IntoIterator<Item = (u64, f32, usize)>,
    ) -> Self {
        Dataset {
            dims,
            horizon,
            fps,
            provenance,
            pool: Arc::new(pool),
            entries: entries
                .into_iter()
                .map(|(anchor, label, start)| Entry { anchor, label, start })
                .collect(),
        }
    }
}

fn check_contiguous(frames: &[SmallFrame]) -> Result<(), DatasetError> {
    let Some(first) = frames.first() else { return Ok(()) };
    for (i, f) in frames.iter().enumerate() {
        let expected = first.frame_index + i as u64;
        if f.frame_index != expected {
            return Err(DatasetError::Gap { expected, found: f.frame_index });
        }
        if f.height != first.height || f.width != first.width || f.data.len() != f.height * f.width {
            return Err(DatasetError::FrameShape {
                h: first.height,
                w: first.width,
                got_h: f.height,
                got_w: f.width,
            });
        }
    }
    Ok(())
}

/// Stacks the `s` frames ending at frame index `anchor`, oldest first.
pub fn stack_window(frames: &[SmallFrame], s: usize, anchor: u64) -> Result<Tensor, DatasetError> {
    if s == 0 {
        return Err(DatasetError::ZeroStack);
    }
    if anchor < (s - 1) as u64 {
        return Err(DatasetError::AnchorTooEarly { anchor, s });
    }
    let first = frames.first().ok_or(DatasetError::AnchorMissing(anchor))?;
    if anchor < first.frame_index {
        return Err(DatasetError::AnchorMissing(anchor));
    }
    let pos = (anchor - first.frame_index) as usize;
    if pos >= frames.len() {
        return Err(DatasetError::AnchorMissing(anchor));
    }
    if pos + 1 < s {
        return Err(DatasetError::AnchorTooEarly { anchor, s });
    }
    let window = &frames[pos + 1 - s..=pos];
    check_contiguous(window)?;
    let (h, w) = (window[0].height, window[0].width);
    let mut data = Vec::with_capacity(s * h * w);
    for f in window {
        data.extend_from_slice(&f.data);
    }
    Ok(Tensor { dims: Dims::new(s, h, w), data })
}

/// Builds `{(x_t, y_{t+k})}` for every anchor `t` in `[s-1, N-1-k]`.
///
/// `frames` and `powers` are time aligned: `powers[i]` was measured at
/// `frames[i]`. Anchors are positions in the stream.
pub fn label_dataset(
    frames: &[SmallFrame],
    powers: &[f64],
    s: usize,
    k: usize,
    fps: u32,
    provenance: Provenance,
) -> Result<Dataset, DatasetError> {
    if frames.len() != powers.len() {
        return Err(DatasetError::Misaligned { frames: frames.len(), powers: powers.len() });
    }
    if s == 0 {
        return Err(DatasetError::ZeroStack);
    }
    let n = frames.len();
    if n + 1 < s + k + 1 {
        return Err(DatasetError::TooShort { n, s, k });
    }
    check_contiguous(frames)?;
    let (h, w) = (frames[0].height, frames[0].width);
    let mut pool = Vec::with_capacity(n * h * w);
    for f in frames {
        if let Some(&bad) = f.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DatasetError::OutOfRange(bad));
        }
        pool.extend_from_slice(&f.data);
    }
    let entries = (s - 1..n - k).map(|t| (t as u64, powers[t + k] as f32, t + 1 - s));
    Ok(Dataset::from_parts(Dims::new(s, h, w), k, fps, provenance, pool, entries))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Share of the training pool held out for model selection.
    pub holdout_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, holdout_fraction: 0.25 }
    }
}

/// Sizes of a chronological split of `n` samples: (train, holdout, test).
pub fn split_sizes(n: usize, spec: &SplitSpec) -> Result<(usize, usize, usize), DatasetError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DatasetError::BadFraction("train_fraction"));
    }
    if !(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0) {
        return Err(DatasetError::BadFraction("holdout_fraction"));
    }
    // the epsilon keeps 0.8 * 1000 from landing on 799.999...
    let pool = ((n as f64) * spec.train_fraction + 1e-9).floor() as usize;
    let train = ((pool as f64) * (1.0 - spec.holdout_fraction) + 1e-9).floor() as usize;
    Ok((train, pool - train, n - pool))
}

/// Chronological split: the first `train_fraction` of the samples form the
/// training pool, whose last `holdout_fraction` is the holdout set; the rest
/// is the test set.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    if ds.len() < 10 {
        return Err(DatasetError::TooSmallToSplit(ds.len()));
    }
    let (train, holdout, _) = split_sizes(ds.len(), spec)?;
    Ok((
        ds.slice(0..train),
        ds.slice(train..train + holdout),
        ds.slice(train + holdout..ds.len()),
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Frames whose every pixel equals `frame_index / 1000`.
    pub(crate) fn ramp_frames(n: usize, h: usize, w: usize) -> Vec<SmallFrame> {
        (0..n)
            .map(|i| SmallFrame {
                frame_index: i as u64,
                height: h,
                width: w,
                data: (0..h * w).map(|p| ((i * 7 + p) % 1000) as f32 / 1000.0).collect(),
            })
            .collect()
    }

    #[test]
    fn degenerate_stack() {
        let frames = ramp_frames(5, 2, 3);
        let t = stack_window(&frames, 1, 3).unwrap();
        assert_eq!(t.data, frames[3].data);
    }

    #[test]
    fn stack_shape_and_order() {
        let frames = ramp_frames(40, 24, 32);
        let t = stack_window(&frames, 16, 30).unwrap();
        assert_eq!(t.dims, Dims::new(16, 24, 32));
        assert_eq!(t.data.len(), 16 * 24 * 32);
        for j in 0..16 {
            assert_eq!(t.layer(j), frames[30 - 15 + j].data.as_slice());
        }
    }

    #[test]
    fn stack_rejects_early_anchor_and_gaps() {
        let mut frames = ramp_frames(10, 1, 1);
        assert!(matches!(stack_window(&frames, 4, 2), Err(DatasetError::AnchorTooEarly { .. })));
        frames[5].frame_index = 50;
        assert!(matches!(stack_window(&frames, 4, 7), Err(DatasetError::Gap { .. })));
    }

    #[test]
    fn current_power_labels() {
        let frames = ramp_frames(20, 1, 2);
        let powers: Vec<f64> = (0..20).map(|i| -40.0 - i as f64).collect();
        let ds = label_dataset(&frames, &powers, 4, 0, 30, Provenance::default()).unwrap();
        assert_eq!(ds.len(), 17);
        for s in ds.iter() {
            assert_eq!(s.label as f64, powers[s.anchor as usize]);
        }
    }

    #[test]
    fn full_scale_count() {
        let (n, s, k) = (54_000usize, 16usize, 15usize);
        assert_eq!(n - s + 1 - k, 53_970);
    }

    #[test]
    fn rejects_misaligned_streams() {
        let frames = ramp_frames(20, 1, 2);
        let powers = vec![-40.0; 19];
        assert_eq!(
            label_dataset(&frames, &powers, 4, 0, 30, Provenance::default()),
            Err(DatasetError::Misaligned { frames: 20, powers: 19 })
        );
        assert!(matches!(
            label_dataset(&frames, &[-40.0; 20], 10, 11, 30, Provenance::default()),
            Err(DatasetError::TooShort { .. })
        ));
    }

    #[test]
    fn split_counts() {
        let spec = SplitSpec::default();
        assert_eq!(split_sizes(1000, &spec).unwrap(), (600, 200, 200));
        let (tr, ho, _) = split_sizes(54_000, &spec).unwrap();
        assert_eq!(tr + ho, 43_200);
        assert!(split_sizes(100, &SplitSpec { train_fraction: 1.0, ..spec }).is_err());
    }

    #[test]
    fn split_is_a_chronological_partition() {
        let frames = ramp_frames(1015, 1, 1);
        let powers: Vec<f64> = (0..1015).map(|i| i as f64).collect();
        let ds = label_dataset(&frames, &powers, 16, 0, 30, Provenance::default()).unwrap();
        assert_eq!(ds.len(), 1000);
        let (a, b, c) = split_dataset(&ds, &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (600, 200, 200));
        let mut all = a.anchors();
        all.extend(b.anchors());
        all.extend(c.anchors());
        assert_eq!(all, ds.anchors());
        assert!(a.anchors().last() < b.anchors().first());
        assert!(b.anchors().last() < c.anchors().first());
        assert_eq!(c.features(0), ds.features(800));
    }

    #[test]
    fn split_rejects_tiny() {
        let frames = ramp_frames(8, 1, 1);
        let ds = label_dataset(&frames, &[0.0; 8], 1, 0, 30, Provenance::default()).unwrap();
        assert_eq!(split_dataset(&ds, &SplitSpec::default()), Err(DatasetError::TooSmallToSplit(8)));
    }
}
