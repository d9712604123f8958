use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Network, NetworkError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CPNW";
const VERSION: u32 = 1;

/// Named parameter tensors of the whole cascade.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkWeights {
    params: BTreeMap<String, Tensor<f32>>,
}

impl NetworkWeights {
    /// Kaiming-normal weights for leaky-ReLU layers, prediction layers scaled
    /// by 0.1, biases zero.
    pub fn init(net: &Network, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope = net.config().leaky_slope;
        let mut params = BTreeMap::new();
        for layer in net.layers() {
            let gain = (2.0 / (1.0 + slope * slope)).sqrt();
            let mut std = gain / (layer.fan_in() as f64).sqrt();
            if layer.is_prediction() {
                std *= 0.1;
            }
            let normal = Normal::new(0.0, std).expect("finite std");
            for (name, shape) in layer.params() {
                let t = if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::from_fn(&shape, |_| normal.sample(&mut rng) as f32)
                };
                params.insert(name, t);
            }
        }
        Self { params }
    }

    pub fn zeros(net: &Network) -> Self {
        Self {
            params: net
                .param_shapes()
                .into_iter()
                .map(|(name, shape)| {
                    let t = Tensor::zeros(&shape);
                    (name, t)
                })
                .collect(),
        }
    }

    pub fn from_map(params: BTreeMap<String, Tensor<f32>>) -> Self {
        Self { params }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<f32>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// Checks names and shapes against the graph, in graph order, so the first
    /// mismatching layer is the one reported.
    pub fn check_against(&self, net: &Network) -> Result<(), NetworkError> {
        let expected = net.param_shapes();
        for (name, shape) in &expected {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| NetworkError::Missing(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(NetworkError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            if !t.all_finite() {
                return Err(NetworkError::NonFinite(name.clone()));
            }
        }
        if self.params.len() != expected.len() {
            let known: std::collections::BTreeSet<&String> = expected.iter().map(|(n, _)| n).collect();
            if let Some(extra) = self.params.keys().find(|k| !known.contains(k)) {
                return Err(NetworkError::Unexpected(extra.clone()));
            }
        }
        Ok(())
    }
}

pub fn write_weights<W: Write>(weights: &NetworkWeights, mut out: W) -> Result<(), NetworkError> {
    if let Some((name, _)) = weights.params.iter().find(|(_, t)| !t.all_finite()) {
        return Err(NetworkError::NonFinite(name.clone()));
    }
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(weights.params.len() as u32).to_le_bytes())?;
    for (name, t) in &weights.params {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| NetworkError::Format(format!("parameter name too long: {name}")))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(bytes)?;
        out.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), NetworkError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NetworkError::Truncated(what.to_string()),
        _ => NetworkError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, NetworkError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_weights<R: Read>(mut input: R) -> Result<NetworkWeights, NetworkError> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "header")?;
    if &magic != MAGIC {
        return Err(NetworkError::Format(format!(
            "bad magic {magic:?}, not a weight file"
        )));
    }
    let version = read_u32(&mut input, "header")?;
    if version != VERSION {
        return Err(NetworkError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let count = read_u32(&mut input, "header")?;
    let mut params = BTreeMap::new();
    for i in 0..count {
        let mut lb = [0u8; 2];
        read_exact(&mut input, &mut lb, &format!("entry {i}"))?;
        let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
        read_exact(&mut input, &mut name, &format!("entry {i}"))?;
        let name = String::from_utf8(name)
            .map_err(|_| NetworkError::Format(format!("entry {i} has a non-UTF-8 name")))?;
        let mut rank = [0u8; 1];
        read_exact(&mut input, &mut rank, &name)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut input, &name)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 4];
        read_exact(&mut input, &mut raw, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data)?;
        if params.insert(name.clone(), t).is_some() {
            return Err(NetworkError::Format(format!("duplicate parameter `{name}`")));
        }
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(NetworkError::Format("trailing bytes after last entry".into()));
    }
    Ok(NetworkWeights { params })
}

pub fn save_weights(weights: &NetworkWeights, path: &Path) -> Result<(), NetworkError> {
    let file = std::fs::File::create(path)?;
    write_weights(weights, std::io::BufWriter::new(file))
}

/// Reads a weight file and validates it against `net`.
pub fn load_weights(net: &Network, path: &Path) -> Result<NetworkWeights, NetworkError> {
    let file = std::fs::File::open(path)?;
    let w = read_weights(std::io::BufReader::new(file))?;
    w.check_against(net)?;
    Ok(w)
}
