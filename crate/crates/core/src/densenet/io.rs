//! `MBOXNET1` model files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes   "MBOXNET1"
//! version      u32       FORMAT_VERSION
//! header_len   u32       byte length of the JSON header
//! header       UTF-8 JSON {"config": ModelConfig, "tensors": [TensorEntry...]}
//! padding      zeros up to the next multiple of 8
//! data         raw f32 values; each entry's `offset` is relative to the
//!              start of this section and is a multiple of 8
//! ```
//!
//! Tensor names follow `features.denseblock1.denselayer1.conv1.weight`
//! style; batch-norm running statistics are stored as
//! `<layer>.running_mean` / `<layer>.running_var` entries.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::network::Network;

pub const MAGIC: &[u8; 8] = b"MBOXNET1";
pub const FORMAT_VERSION: u32 = 1;
const ALIGN: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    #[serde(default = "default_trainable")]
    pub trainable: bool,
}

fn default_trainable() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelHeader {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

impl Network<f32> {
    /// Serializes configuration, parameters and running statistics.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut items: Vec<(String, Vec<usize>, &[f32], bool)> = Vec::new();
        for (_, p) in self.params().iter() {
            items.push((p.name.clone(), p.tensor.shape().to_vec(), p.tensor.data(), p.trainable));
        }
        for s in self.running_stats() {
            let c = s.stats.channels();
            items.push((format!("{}.running_mean", s.prefix), vec![c], &s.stats.mean, false));
            items.push((format!("{}.running_var", s.prefix), vec![c], &s.stats.var, false));
        }
        let mut entries = Vec::with_capacity(items.len());
        let mut offset = 0usize;
        for (name, shape, data, trainable) in &items {
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: shape.clone(),
                offset: offset as u64,
                trainable: *trainable,
            });
            offset = align(offset + data.len() * 4);
        }
        let header = serde_json::to_vec(&ModelHeader {
            config: self.config().clone(),
            tensors: entries,
        })
        .expect("header serializes");

        let mut out = Vec::with_capacity(align(16 + header.len()) + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.resize(align(out.len()), 0);
        let data_start = out.len();
        for (_, _, data, _) in &items {
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.resize(data_start + align(out.len() - data_start), 0);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..bytes.len().min(8)].to_vec(),
            });
        }
        if bytes.len() < 16 {
            return Err(Error::MalformedHeader("file ends inside the preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header_end = 16 + header_len;
        if bytes.len() < header_end {
            return Err(Error::MalformedHeader(format!(
                "header needs {header_len} bytes, file has {}",
                bytes.len() - 16
            )));
        }
        let header: ModelHeader = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;
        let data = bytes.get(align(header_end)..).unwrap_or(&[]);

        let mut net = Network::<f32>::build(header.config, 0)
            .map_err(|e| Error::MalformedHeader(format!("config: {e}")))?;
        let mut seen = std::collections::HashSet::new();
        for entry in &header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::MalformedHeader(format!("{}: unsupported dtype {}", entry.name, entry.dtype)));
            }
            if entry.offset as usize % ALIGN != 0 {
                return Err(Error::MalformedHeader(format!("{}: offset {} is not 8-byte aligned", entry.name, entry.offset)));
            }
            let len: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + len * 4;
            if end > data.len() {
                return Err(Error::TruncatedTensorData(format!(
                    "{} needs bytes {start}..{end} of the data section, only {} present",
                    entry.name,
                    data.len()
                )));
            }
            let values: Vec<f32> = data[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            net.assign(entry, values)?;
            seen.insert(entry.name.as_str());
        }
        let expected = net.params().len() + 2 * net.running_stats().len();
        if seen.len() != expected {
            let missing: Vec<String> = net
                .params()
                .iter()
                .map(|(_, p)| p.name.clone())
                .chain(net.running_stats().iter().flat_map(|s| {
                    [format!("{}.running_mean", s.prefix), format!("{}.running_var", s.prefix)]
                }))
                .filter(|n| !seen.contains(n.as_str()))
                .collect();
            return Err(Error::MalformedHeader(format!("missing tensors: {missing:?}")));
        }
        Ok(net)
    }

    fn assign(&mut self, entry: &TensorEntry, values: Vec<f32>) -> Result<()> {
        let mismatch = |want: &[usize]| {
            Error::MalformedHeader(format!(
                "{}: stored shape {:?}, config implies {want:?}",
                entry.name, entry.shape
            ))
        };
        if let Some(id) = self.params().id(&entry.name) {
            let want = self.params().tensor(id).shape().to_vec();
            if want != entry.shape {
                return Err(mismatch(&want));
            }
            *self.params_mut().tensor_mut(id) = Tensor::new(want, values)?;
            self.params_mut().set_trainable(id, entry.trainable);
            return Ok(());
        }
        let (prefix, field) = entry
            .name
            .rsplit_once('.')
            .ok_or_else(|| Error::MalformedHeader(format!("unknown tensor {}", entry.name)))?;
        let stats = self
            .stats_mut(prefix)
            .ok_or_else(|| Error::MalformedHeader(format!("unknown tensor {}", entry.name)))?;
        let c = stats.channels();
        if entry.shape != [c] {
            return Err(mismatch(&[c]));
        }
        match field {
            "running_mean" => stats.mean = values,
            "running_var" => stats.var = values,
            _ => return Err(Error::MalformedHeader(format!("unknown tensor {}", entry.name))),
        }
        Ok(())
    }
}
