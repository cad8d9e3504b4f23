//! Binary checkpoint container.
//!
//! Layout: magic `XPLT`, `u32` version, `u64` header length, JSON header
//! (config, tokenizer vocabulary, tensor directory, free-form metadata),
//! tensor payload, then the SHA-256 of everything before it. Base tensors are
//! little-endian `f32` (or packed NF4); adapter tensors are `f64` so that a
//! reloaded adapter reproduces in-memory predictions exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, Target};
use super::lora::Adapters;
use super::nf4::{DoubleQuant, QuantizedBase, QuantizedMatrix};
use super::transformer::BaseWeights;
use crate::artifact::write_atomic;
use crate::error::{Error, Result};
use crate::params::ParamSet;

const MAGIC: &[u8; 4] = b"XPLT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum BaseStorage {
    Full(BaseWeights),
    Nf4(QuantizedBase),
}

impl BaseStorage {
    pub fn weights(&self) -> Result<BaseWeights> {
        match self {
            BaseStorage::Full(b) => Ok(b.clone()),
            BaseStorage::Nf4(q) => q.dequantize(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub base: Option<BaseStorage>,
    pub adapters: Option<Adapters>,
    pub meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Encoding {
    F32,
    F64,
    Nf4,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    encoding: Encoding,
    offset: usize,
    len: usize,
    /// NF4 only: number of scale groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groups: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    has_base: bool,
    quantized: bool,
    adapter_targets: Option<Vec<Target>>,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

struct Writer {
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn put(&mut self, name: String, shape: Vec<usize>, encoding: Encoding, bytes: Vec<u8>, groups: Option<usize>) {
        self.entries.push(TensorEntry {
            name,
            shape,
            encoding,
            offset: self.payload.len(),
            len: bytes.len(),
            groups,
        });
        self.payload.extend(bytes);
    }

    fn put_f32(&mut self, name: String, shape: Vec<usize>, v: &[f64]) {
        let bytes = v.iter().flat_map(|x| (*x as f32).to_le_bytes()).collect();
        self.put(name, shape, Encoding::F32, bytes, None);
    }

    fn put_nf4(&mut self, name: String, q: &QuantizedMatrix) {
        let mut bytes = q.packed.clone();
        bytes.extend(&q.scales.codes);
        for (lo, hi) in &q.scales.meta {
            bytes.extend(lo.to_le_bytes());
            bytes.extend(hi.to_le_bytes());
        }
        self.put(
            name,
            vec![q.rows, q.cols],
            Encoding::Nf4,
            bytes,
            Some(q.scales.meta.len()),
        );
    }
}

fn is_projection(name: &str) -> bool {
    name.split_once('.').is_some_and(|(_, t)| t.parse::<Target>().is_ok())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer {
            entries: Vec::new(),
            payload: Vec::new(),
        };
        match &self.base {
            Some(BaseStorage::Full(b)) => {
                let shapes = b.tensor_shapes();
                let mut i = 0;
                b.visit(&mut |name, v| {
                    w.put_f32(name.to_string(), shapes[i].clone(), v);
                    i += 1;
                });
            }
            Some(BaseStorage::Nf4(q)) => {
                let shapes = q.full.tensor_shapes();
                let mut i = 0;
                q.full.visit(&mut |name, v| {
                    if !is_projection(name) {
                        w.put_f32(name.to_string(), shapes[i].clone(), v);
                    }
                    i += 1;
                });
                for (i, mats) in q.projections.iter().enumerate() {
                    for (t, m) in mats {
                        w.put_nf4(format!("block{i}.{t}"), m);
                    }
                }
            }
            None => {}
        }
        if let Some(a) = &self.adapters {
            for (i, blk) in a.blocks.iter().enumerate() {
                for (t, p) in blk {
                    for (suffix, m) in [("lora_a", &p.a), ("lora_b", &p.b)] {
                        let bytes = m.iter().flat_map(|x| x.to_le_bytes()).collect();
                        w.put(
                            format!("block{i}.{t}.{suffix}"),
                            m.shape().to_vec(),
                            Encoding::F64,
                            bytes,
                            None,
                        );
                    }
                }
            }
        }
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            has_base: self.base.is_some(),
            quantized: matches!(self.base, Some(BaseStorage::Nf4(_))),
            adapter_targets: self.adapters.as_ref().map(Adapters::targets),
            tensors: w.entries,
            meta: self.meta.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header_bytes.len() + w.payload.len() + 32);
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((header_bytes.len() as u64).to_le_bytes());
        out.extend(header_bytes);
        out.extend(w.payload);
        let digest = Sha256::digest(&out);
        out.extend(digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 + 32 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("content hash mismatch"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&body[16..header_end])?;
        header.config.validate()?;
        let payload = &body[header_end..];
        let tensor = |name: &str| -> Result<(&TensorEntry, &[u8])> {
            let e = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            let end = e.offset.checked_add(e.len).filter(|&x| x <= payload.len());
            let end = end.ok_or_else(|| Error::Checkpoint(format!("tensor {name} out of bounds")))?;
            Ok((e, &payload[e.offset..end]))
        };
        let cfg = &header.config;

        let base = if header.has_base {
            let mut b = BaseWeights::zeros(cfg);
            let quantized = header.quantized;
            let mut err = None;
            b.visit_mut(&mut |name, dst| {
                if err.is_some() {
                    return;
                }
                if quantized && is_projection(name) {
                    dst.fill(0.0);
                    return;
                }
                match tensor(name) {
                    Ok((e, data)) if matches!(e.encoding, Encoding::F32) && data.len() == dst.len() * 4 => {
                        for (d, c) in dst.iter_mut().zip(data.chunks_exact(4)) {
                            *d = f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")));
                        }
                    }
                    Ok(_) => err = Some(Error::Checkpoint(format!("tensor {name} has wrong size or encoding"))),
                    Err(e) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            if quantized {
                let mut projections = Vec::new();
                for i in 0..cfg.n_blocks {
                    let mut mats = Vec::new();
                    for t in Target::ALL {
                        let (e, data) = tensor(&format!("block{i}.{t}"))?;
                        let (rows, cols) = match e.shape[..] {
                            [r, c] => (r, c),
                            _ => return Err(bad("nf4 tensor must be 2-d")),
                        };
                        let n = rows * cols;
                        let n_blocks = n.div_ceil(super::nf4::BLOCK_SIZE);
                        let groups = e.groups.ok_or_else(|| bad("nf4 tensor without group count"))?;
                        let packed_len = n.div_ceil(2);
                        if data.len() != packed_len + n_blocks + groups * 16 {
                            return Err(Error::Checkpoint(format!("nf4 tensor block{i}.{t} has wrong size")));
                        }
                        let meta = data[packed_len + n_blocks..]
                            .chunks_exact(16)
                            .map(|c| {
                                (
                                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                                )
                            })
                            .collect();
                        mats.push((
                            t,
                            QuantizedMatrix {
                                rows,
                                cols,
                                packed: data[..packed_len].to_vec(),
                                scales: DoubleQuant {
                                    group_size: super::nf4::SCALE_GROUP,
                                    codes: data[packed_len..packed_len + n_blocks].to_vec(),
                                    meta,
                                },
                            },
                        ));
                    }
                    projections.push(mats);
                }
                Some(BaseStorage::Nf4(QuantizedBase { full: b, projections }))
            } else {
                b.check_shapes(cfg)?;
                Some(BaseStorage::Full(b))
            }
        } else {
            None
        };

        let adapters = match &header.adapter_targets {
            Some(targets) => {
                let mut c = cfg.clone();
                c.lora_targets = targets.clone();
                let mut a = Adapters::zeros(&c);
                for (i, blk) in a.blocks.iter_mut().enumerate() {
                    for (t, p) in blk.iter_mut() {
                        for (suffix, m) in [("lora_a", &mut p.a), ("lora_b", &mut p.b)] {
                            let name = format!("block{i}.{t}.{suffix}");
                            let (e, data) = tensor(&name)?;
                            if e.shape != m.shape() || data.len() != m.len() * 8 {
                                return Err(Error::Checkpoint(format!("tensor {name} has wrong shape")));
                            }
                            for (d, c) in m.iter_mut().zip(data.chunks_exact(8)) {
                                *d = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                            }
                        }
                    }
                }
                Some(a)
            }
            None => None,
        };

        Ok(Checkpoint {
            config: header.config,
            vocab: header.vocab,
            base,
            adapters,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)?;
        Ok(hex::encode(&bytes[bytes.len() - 32..]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// SHA-256 trailer of a serialized checkpoint.
pub fn content_hash(bytes: &[u8]) -> Option<String> {
    (bytes.len() >= 32).then(|| hex::encode(&bytes[bytes.len() - 32..]))
}
