//! `MMWM` model files.
//!
//! ```text
//! "MMWM" | u16 version = 1 | u8 kind (1 forest, 2 mlp)
//! forest: u32 p | f64 y_min | f64 y_max | u32 n_trees
//!         per tree: u32 n_nodes, then preorder nodes
//!           0: f64 value
//!           1: u32 feature | f32 threshold | u32 right
//! mlp:    f64 label_mean | f64 label_std | u32 n_layers
//!         per layer: u32 in | u32 out | out·in f64 weights | out f64 bias
//! ```
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::forest::{Node, Tree};
use super::mlp::Layer;
use super::{ForestModel, MlpModel, Model};

pub const MAGIC: [u8; 4] = *b"MMWM";
pub const VERSION: u16 = 1;

const KIND_FOREST: u8 = 1;
const KIND_MLP: u8 = 2;
const MAX_COUNT: u32 = 1 << 28;

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    VersionMismatch(u16),
    #[error("unknown model kind tag {0}")]
    UnknownKind(u8),
    #[error("file ends early while reading {0}")]
    Truncated(&'static str),
    #[error("malformed model: {0}")]
    Malformed(&'static str),
    #[error("{0} unexpected bytes after the model")]
    TrailingData(u64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], ModelFormatError> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => ModelFormatError::Truncated(what),
            _ => ModelFormatError::Io(e),
        })?;
        Ok(b)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ModelFormatError> {
        Ok(self.bytes::<1>(what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ModelFormatError> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn count(&mut self, what: &'static str) -> Result<usize, ModelFormatError> {
        let v = self.u32(what)?;
        if v > MAX_COUNT {
            return Err(ModelFormatError::Malformed(what));
        }
        Ok(v as usize)
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, ModelFormatError> {
        Ok(f32::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, ModelFormatError> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }
}

fn count_field(v: usize) -> Result<u32, ModelFormatError> {
    u32::try_from(v).ok().filter(|&c| c <= MAX_COUNT).ok_or(ModelFormatError::Malformed("count too large"))
}

pub fn write_model<W: Write>(model: &Model, sink: W) -> Result<(), ModelFormatError> {
    let mut out = BufWriter::new(sink);
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    match model {
        Model::Forest(f) => {
            out.write_all(&[KIND_FOREST])?;
            out.write_all(&count_field(f.n_features)?.to_le_bytes())?;
            out.write_all(&f.y_min.to_le_bytes())?;
            out.write_all(&f.y_max.to_le_bytes())?;
            out.write_all(&count_field(f.trees.len())?.to_le_bytes())?;
            for t in &f.trees {
                out.write_all(&count_field(t.nodes.len())?.to_le_bytes())?;
                for n in &t.nodes {
                    match *n {
                        Node::Leaf { value } => {
                            out.write_all(&[0])?;
                            out.write_all(&value.to_le_bytes())?;
                        }
                        Node::Split { feature, threshold, right } => {
                            out.write_all(&[1])?;
                            out.write_all(&feature.to_le_bytes())?;
                            out.write_all(&threshold.to_le_bytes())?;
                            out.write_all(&right.to_le_bytes())?;
                        }
                    }
                }
            }
        }
        Model::Mlp(m) => {
            out.write_all(&[KIND_MLP])?;
            out.write_all(&m.label_mean.to_le_bytes())?;
            out.write_all(&m.label_std.to_le_bytes())?;
            out.write_all(&count_field(m.layers.len())?.to_le_bytes())?;
            for l in &m.layers {
                out.write_all(&count_field(l.inputs)?.to_le_bytes())?;
                out.write_all(&count_field(l.outputs)?.to_le_bytes())?;
                for v in l.weights.iter().chain(&l.bias) {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Checks that `nodes` is one complete preorder tree with in-range
/// features.
fn check_tree(nodes: &[Node], p: usize) -> Result<(), ModelFormatError> {
    fn walk(nodes: &[Node], i: usize, p: usize, depth: usize) -> Result<usize, ModelFormatError> {
        if depth > 4096 {
            return Err(ModelFormatError::Malformed("tree too deep"));
        }
        match nodes.get(i) {
            None => Err(ModelFormatError::Malformed("child index out of range")),
            Some(Node::Leaf { .. }) => Ok(i + 1),
            Some(Node::Split { feature, right, .. }) => {
                if *feature as usize >= p {
                    return Err(ModelFormatError::Malformed("split feature out of range"));
                }
                let end_left = walk(nodes, i + 1, p, depth + 1)?;
                if *right as usize != end_left {
                    return Err(ModelFormatError::Malformed("right child is not after the left subtree"));
                }
                walk(nodes, end_left, p, depth + 1)
            }
        }
    }
    if walk(nodes, 0, p, 0)? != nodes.len() {
        return Err(ModelFormatError::Malformed("unreachable nodes"));
    }
    Ok(())
}

pub fn read_model<R: Read>(source: R) -> Result<Model, ModelFormatError> {
    let mut r = Reader { inner: BufReader::new(source) };
    let magic = r.bytes::<4>("magic")?;
    if magic != MAGIC {
        return Err(ModelFormatError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(r.bytes("version")?);
    if version != VERSION {
        return Err(ModelFormatError::VersionMismatch(version));
    }
    let model = match r.u8("kind")? {
        KIND_FOREST => {
            let p = r.count("feature count")?;
            let y_min = r.f64("label range")?;
            let y_max = r.f64("label range")?;
            let n_trees = r.count("tree count")?;
            if n_trees == 0 {
                return Err(ModelFormatError::Malformed("forest has no trees"));
            }
            let mut trees = Vec::with_capacity(n_trees.min(1024));
            for _ in 0..n_trees {
                let n = r.count("node count")?;
                let mut nodes = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    nodes.push(match r.u8("node tag")? {
                        0 => Node::Leaf { value: r.f64("leaf")? },
                        1 => Node::Split {
                            feature: r.u32("split")?,
                            threshold: r.f32("split")?,
                            right: r.u32("split")?,
                        },
                        _ => return Err(ModelFormatError::Malformed("unknown node tag")),
                    });
                }
                check_tree(&nodes, p)?;
                trees.push(Tree { nodes });
            }
            Model::Forest(ForestModel { trees, n_features: p, y_min, y_max })
        }
        KIND_MLP => {
            let label_mean = r.f64("label scale")?;
            let label_std = r.f64("label scale")?;
            let n_layers = r.count("layer count")?;
            if n_layers == 0 {
                return Err(ModelFormatError::Malformed("network has no layers"));
            }
            let mut layers: Vec<Layer> = Vec::with_capacity(n_layers.min(64));
            for _ in 0..n_layers {
                let inputs = r.count("layer shape")?;
                let outputs = r.count("layer shape")?;
                if inputs == 0 || outputs == 0 {
                    return Err(ModelFormatError::Malformed("empty layer"));
                }
                if layers.last().is_some_and(|prev| prev.outputs != inputs) {
                    return Err(ModelFormatError::Malformed("layer shapes do not chain"));
                }
                let len = inputs.checked_mul(outputs).filter(|&l| l <= MAX_COUNT as usize);
                let len = len.ok_or(ModelFormatError::Malformed("layer too large"))?;
                let mut weights = Vec::with_capacity(len.min(1 << 20));
                for _ in 0..len {
                    weights.push(r.f64("weights")?);
                }
                let mut bias = Vec::with_capacity(outputs);
                for _ in 0..outputs {
                    bias.push(r.f64("bias")?);
                }
                layers.push(Layer { inputs, outputs, weights, bias });
            }
            if layers.last().map(|l| l.outputs) != Some(1) {
                return Err(ModelFormatError::Malformed("network must have one output"));
            }
            Model::Mlp(MlpModel { layers, label_mean, label_std })
        }
        other => return Err(ModelFormatError::UnknownKind(other)),
    };
    let extra = io::copy(&mut r.inner, &mut io::sink())?;
    if extra > 0 {
        return Err(ModelFormatError::TrailingData(extra));
    }
    Ok(model)
}

pub fn write_model_file(model: &Model, path: &Path) -> Result<(), ModelFormatError> {
    write_model(model, File::create(path)?)
}

pub fn read_model_file(path: &Path) -> Result<Model, ModelFormatError> {
    read_model(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forest() -> Model {
        let t1 = Tree {
            nodes: vec![
                Node::Split { feature: 2, threshold: 0.5, right: 4 },
                Node::Split { feature: 0, threshold: -1.25, right: 3 },
                Node::Leaf { value: -50.0 },
                Node::Leaf { value: -45.5 },
                Node::Leaf { value: -40.125 },
            ],
        };
        let t2 = Tree { nodes: vec![Node::Leaf { value: -42.0 }] };
        Model::Forest(ForestModel { trees: vec![t1, t2], n_features: 3, y_min: -68.0, y_max: -36.3 })
    }

    fn bytes(m: &Model) -> Vec<u8> {
        let mut v = Vec::new();
        write_model(m, &mut v).unwrap();
        v
    }

    #[test]
    fn forest_round_trip() {
        let m = forest();
        assert_eq!(read_model(bytes(&m).as_slice()).unwrap(), m);
    }

    #[test]
    fn mlp_round_trip() {
        let mut m = MlpModel::init(&[7, 5, 3, 1], 9);
        m.label_mean = -44.0;
        m.label_std = 6.5;
        let m = Model::Mlp(m);
        assert_eq!(read_model(bytes(&m).as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_header() {
        let mut b = bytes(&forest());
        b[0] = b'X';
        assert!(matches!(read_model(b.as_slice()), Err(ModelFormatError::BadMagic(_))));
        let mut b = bytes(&forest());
        b[4] = 9;
        assert!(matches!(read_model(b.as_slice()), Err(ModelFormatError::VersionMismatch(9))));
        let mut b = bytes(&forest());
        b[6] = 7;
        assert!(matches!(read_model(b.as_slice()), Err(ModelFormatError::UnknownKind(7))));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let b = bytes(&forest());
        for cut in [3, 10, b.len() - 1] {
            assert!(matches!(read_model(&b[..cut]), Err(ModelFormatError::Truncated(_))), "cut {cut}");
        }
        let mut b = b;
        b.push(0);
        assert!(matches!(read_model(b.as_slice()), Err(ModelFormatError::TrailingData(1))));
    }

    #[test]
    fn rejects_bad_tree_structure() {
        let bad = Model::Forest(ForestModel {
            trees: vec![Tree {
                nodes: vec![
                    Node::Split { feature: 0, threshold: 0.0, right: 1 },
                    Node::Leaf { value: 0.0 },
                    Node::Leaf { value: 1.0 },
                ],
            }],
            n_features: 1,
            y_min: 0.0,
            y_max: 1.0,
        });
        assert!(matches!(read_model(bytes(&bad).as_slice()), Err(ModelFormatError::Malformed(_))));
        let bad_feature = Model::Forest(ForestModel {
            trees: vec![Tree {
                nodes: vec![
                    Node::Split { feature: 5, threshold: 0.0, right: 2 },
                    Node::Leaf { value: 0.0 },
                    Node::Leaf { value: 1.0 },
                ],
            }],
            n_features: 1,
            y_min: 0.0,
            y_max: 1.0,
        });
        assert!(matches!(read_model(bytes(&bad_feature).as_slice()), Err(ModelFormatError::Malformed(_))));
    }
}
