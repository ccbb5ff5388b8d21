use crate::dataset::Dataset;

/// Column access to a training matrix. Tree growing reads one feature for
/// many rows at a time, so sources are free to store data column-major.
pub trait FeatureSource: Sync {
    fn n_samples(&self) -> usize;
    fn n_features(&self) -> usize;
    /// Writes feature `feature` of each row in `rows` into `out`.
    fn gather(&self, feature: usize, rows: &[u32], out: &mut [f32]);
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    p: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == p), "ragged rows");
        Self { n: rows.len(), p, data: rows.concat() }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

impl FeatureSource for DenseMatrix {
    fn n_samples(&self) -> usize {
        self.n
    }

    fn n_features(&self) -> usize {
        self.p
    }

    fn gather(&self, feature: usize, rows: &[u32], out: &mut [f32]) {
        for (o, &r) in out.iter_mut().zip(rows) {
            *o = self.data[r as usize * self.p + feature];
        }
    }
}

/// Pixel-major copy of a dataset's frame pool. Feature `(j, pixel)` of
/// sample `i` is pixel `pixel` of the pool frame `start_i + j`, so gathering
/// one feature over chronologically ordered rows walks memory forwards.
#[derive(Debug, Clone)]
pub struct WindowedColumns {
    frame_len: usize,
    s: usize,
    n_frames: usize,
    columns: Vec<f32>,
    starts: Vec<u32>,
}

impl WindowedColumns {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let dims = ds.dims();
        let frame_len = dims.frame_len();
        let n = ds.len();
        let first = (0..n).map(|i| ds.pool_start(i)).min().unwrap_or(0);
        let last = (0..n).map(|i| ds.pool_start(i) + dims.s).max().unwrap_or(0);
        let n_frames = last.saturating_sub(first);
        let pool = &ds.pool()[first * frame_len..last * frame_len];
        let mut columns = vec![0f32; frame_len * n_frames];
        for (f, frame) in pool.chunks_exact(frame_len).enumerate() {
            for (p, &v) in frame.iter().enumerate() {
                columns[p * n_frames + f] = v;
            }
        }
        let starts = (0..n).map(|i| (ds.pool_start(i) - first) as u32).collect();
        Self { frame_len, s: dims.s, n_frames, columns, starts }
    }
}

impl FeatureSource for WindowedColumns {
    fn n_samples(&self) -> usize {
        self.starts.len()
    }

    fn n_features(&self) -> usize {
        self.s * self.frame_len
    }

    fn gather(&self, feature: usize, rows: &[u32], out: &mut [f32]) {
        let j = feature / self.frame_len;
        let p = feature % self.frame_len;
        let col = &self.columns[p * self.n_frames + j..(p + 1) * self.n_frames];
        for (o, &r) in out.iter_mut().zip(rows) {
            *o = col[self.starts[r as usize] as usize];
        }
    }
}
