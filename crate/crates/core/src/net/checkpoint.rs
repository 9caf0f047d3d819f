//! Versioned little-endian checkpoint files.
//!
//! ```text
//! magic      4 bytes  "RSAT"
//! version    u32
//! config     u32 byte length, then UTF-8 `key=value\n` lines
//! epoch      u32
//! tensors    u32 count, then records
//! velocities u32 count, then records
//! record     u32 name length, name bytes, u32 axis count,
//!            u32 extent per axis, f32 values
//! ```
//!
//! Config lines carry the [`NetworkConfig`] keys followed by free-form
//! metadata keys prefixed with `meta.`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Network, NetworkConfig};
use crate::layers::Layer;
use crate::{Error, Result, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RSAT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub metadata: BTreeMap<String, String>,
    pub epoch: u32,
    pub tensors: Vec<(String, Tensor<f32>)>,
    /// Optimizer momentum buffers keyed by parameter name.
    pub velocities: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.string("tensor name")?;
        let rank = self.u32("tensor rank")? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Format(format!("tensor '{name}' has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32("tensor extents")? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = self.take(
            len.checked_mul(4).ok_or(Error::Truncated("tensor data"))?,
            "tensor data",
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("tensor '{name}': {e}")))?;
        Ok((name, t))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value exceeds u32").to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank());
    for &d in t.dims() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        Checkpoint {
            config: net.config.clone(),
            metadata: BTreeMap::new(),
            epoch: 0,
            tensors: net.named_tensors().into_iter().map(|(n, t)| (n, t.cast())).collect(),
            velocities: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION as usize);
        let mut block = String::new();
        for (k, v) in self.config.to_kv() {
            block.push_str(&format!("{k}={v}\n"));
        }
        for (k, v) in &self.metadata {
            block.push_str(&format!("meta.{k}={v}\n"));
        }
        put_u32(&mut out, block.len());
        out.extend_from_slice(block.as_bytes());
        put_u32(&mut out, self.epoch as usize);
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_record(&mut out, name, t);
        }
        put_u32(&mut out, self.velocities.len());
        for (name, t) in &self.velocities {
            put_record(&mut out, name, t);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic (not a checkpoint file)".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let block = r.string("config block")?;
        let mut kv = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for line in block.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line '{line}' has no '='")))?;
            if let Some(meta) = k.strip_prefix("meta.") {
                metadata.insert(meta.to_string(), v.to_string());
            } else if NetworkConfig::KEYS.contains(&k) {
                kv.insert(k.to_string(), v.to_string());
            } else {
                return Err(Error::Format(format!("unknown config key '{k}'")));
            }
        }
        let config = NetworkConfig::from_kv(&kv)?;
        let epoch = r.u32("epoch")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            tensors.push(r.record()?);
        }
        let count = r.u32("velocity count")? as usize;
        let mut velocities = Vec::new();
        for _ in 0..count {
            velocities.push(r.record()?);
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            metadata,
            epoch,
            tensors,
            velocities,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Build the embedded architecture and load every tensor into it.
    pub fn to_network<T: Scalar>(&self) -> Result<Network<T>> {
        let mut net = Network::new(self.config.clone(), 0)?;
        net.load_tensors(&self.tensors, !self.config.sa_enabled)?;
        Ok(net)
    }
}

impl<T: Scalar> Network<T> {
    /// Copy named tensors into this network.
    ///
    /// Every architecture tensor must be present with matching dims, except
    /// that spatial-attention tensors may be absent when
    /// `allow_missing_sa` is set; those keep their current values.
    pub fn load_tensors(&mut self, tensors: &[(String, Tensor<f32>)], allow_missing_sa: bool) -> Result<()> {
        let by_name: BTreeMap<&str, &Tensor<f32>> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut expected = Vec::new();
        self.visit("", &mut |name, p| {
            expected.push((name.to_string(), p.value.dims().to_vec()))
        });
        for (name, dims) in &expected {
            match by_name.get(name.as_str()) {
                Some(t) if t.dims() != dims.as_slice() => {
                    return Err(Error::TensorDims {
                        name: name.clone(),
                        expected: dims.clone(),
                        found: t.dims().to_vec(),
                    })
                }
                Some(_) => {}
                None if allow_missing_sa && name.contains(".sa.") => {}
                None => return Err(Error::MissingTensor(name.clone())),
            }
        }
        if let Some((name, _)) = tensors.iter().find(|(n, _)| !expected.iter().any(|(e, _)| e == n)) {
            return Err(Error::UnknownTensor(name.clone()));
        }
        self.visit_mut("", &mut |name, p| {
            if let Some(t) = by_name.get(name) {
                p.value = t.cast();
            }
        });
        Ok(())
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let sa_free_source = !ckpt.config.sa_enabled && self.config.sa_enabled;
        self.load_tensors(&ckpt.tensors, sa_free_source)
    }
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_network(net).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>> {
    Checkpoint::load(path)?.to_network()
}
