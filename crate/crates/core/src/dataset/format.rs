//! `MMWV` binary dataset files.
//!
//! Little-endian layout:
//!
//! ```text
//! "MMWV" | u16 version = 1 | u32 s, h, w, k, F, N
//! N × f32 labels (dBm)
//! N·s·h·w × f32 tensor entries (sample-major, time-major, row-major)
//! u64 seed | 32-byte config digest
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Dataset, Dims, Provenance};

pub const MAGIC: [u8; 4] = *b"MMWV";
pub const VERSION: u16 = 1;

/// Upper bound on `N·s·h·w`, far beyond any dataset that fits in memory.
const MAX_ENTRIES: u64 = 1 << 36;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    VersionMismatch(u16),
    #[error("payload ends early while reading {0}")]
    Truncated(&'static str),
    #[error("{0} unexpected bytes after the trailer")]
    TrailingData(u64),
    #[error("declared shape s={s} h={h} w={w} n={n} is empty or too large")]
    DimOverflow { s: u32, h: u32, w: u32, n: u32 },
    #[error("{0} does not fit the u32 header field")]
    FieldOverflow(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn field(v: usize, name: &'static str) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::FieldOverflow(name))
}

pub fn serialize_dataset<W: Write>(ds: &Dataset, sink: W) -> Result<(), FormatError> {
    let mut out = BufWriter::new(sink);
    let d = ds.dims();
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for (v, name) in [
        (d.s, "s"),
        (d.h, "h"),
        (d.w, "w"),
        (ds.horizon(), "k"),
        (ds.fps() as usize, "F"),
        (ds.len(), "N"),
    ] {
        out.write_all(&field(v, name)?.to_le_bytes())?;
    }
    for i in 0..ds.len() {
        out.write_all(&ds.label(i).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(d.feature_len() * 4);
    for i in 0..ds.len() {
        buf.clear();
        for v in ds.features(i) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    let p = ds.provenance();
    out.write_all(&p.seed.to_le_bytes())?;
    out.write_all(&p.config_digest)?;
    out.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), FormatError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FormatError::Truncated(what),
        _ => FormatError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads an `MMWV` stream. Samples whose first `s-1` frames repeat the
/// previous sample's last `s-1` frames share them in memory. Anchors are
/// renumbered `s-1, s, ...` since the format does not store them.
pub fn parse_dataset<R: Read>(source: R) -> Result<Dataset, FormatError> {
    let mut r = BufReader::new(source);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let mut vb = [0u8; 2];
    read_exact(&mut r, &mut vb, "version")?;
    let version = u16::from_le_bytes(vb);
    if version != VERSION {
        return Err(FormatError::VersionMismatch(version));
    }
    let s = read_u32(&mut r, "header")?;
    let h = read_u32(&mut r, "header")?;
    let w = read_u32(&mut r, "header")?;
    let k = read_u32(&mut r, "header")?;
    let fps = read_u32(&mut r, "header")?;
    let n = read_u32(&mut r, "header")?;
    let frame_len = (h as u64) * (w as u64);
    let stack = frame_len.checked_mul(s as u64).filter(|&v| v <= MAX_ENTRIES);
    let total = stack.and_then(|v| v.checked_mul(n as u64)).filter(|&v| v <= MAX_ENTRIES);
    if s == 0 || frame_len == 0 || total.is_none() {
        return Err(FormatError::DimOverflow { s, h, w, n });
    }
    let dims = Dims::new(s as usize, h as usize, w as usize);
    let n = n as usize;
    let frame_len = frame_len as usize;

    let mut labels = Vec::new();
    let mut b4 = [0u8; 4];
    for _ in 0..n {
        read_exact(&mut r, &mut b4, "labels")?;
        labels.push(f32::from_le_bytes(b4));
    }

    let tensor_len = dims.feature_len();
    let mut raw = vec![0u8; tensor_len * 4];
    let mut tensor = vec![0f32; tensor_len];
    let mut pool: Vec<f32> = Vec::new();
    let mut starts = Vec::with_capacity(n);
    for i in 0..n {
        read_exact(&mut r, &mut raw, "tensors")?;
        for (v, c) in tensor.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        let shares = i > 0 && {
            let prev = *starts.last().unwrap() + 1;
            let overlap = (dims.s - 1) * frame_len;
            let tail = &pool[prev * frame_len..];
            tail.len() == overlap
                && tail.iter().zip(&tensor[..overlap]).all(|(a, b)| a.to_bits() == b.to_bits())
        };
        if shares {
            let start = starts.last().unwrap() + 1;
            pool.extend_from_slice(&tensor[(dims.s - 1) * frame_len..]);
            starts.push(start);
        } else {
            starts.push(pool.len() / frame_len);
            pool.extend_from_slice(&tensor);
        }
    }

    let mut seed = [0u8; 8];
    read_exact(&mut r, &mut seed, "seed")?;
    let mut digest = [0u8; 32];
    read_exact(&mut r, &mut digest, "digest")?;
    let extra = io::copy(&mut r, &mut io::sink())?;
    if extra != 0 {
        return Err(FormatError::TrailingData(extra));
    }

    let provenance = Provenance { seed: u64::from_le_bytes(seed), config_digest: digest };
    let base = dims.s as u64 - 1;
    let entries = labels
        .into_iter()
        .zip(starts)
        .enumerate()
        .map(|(i, (label, start))| (base + i as u64, label, start));
    Ok(Dataset::from_parts(dims, k as usize, fps, provenance, pool, entries))
}

pub fn write_dataset_file(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    serialize_dataset(ds, File::create(path)?)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset, FormatError> {
    parse_dataset(File::open(path)?)
}
