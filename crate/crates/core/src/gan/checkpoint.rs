//! Binary checkpoints: the magic `MGANCKPT`, a little-endian `u16`
//! version, a little-endian `u64` byte length followed by a UTF-8 JSON
//! header, then raw little-endian `f32` blobs in directory order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::trace::{LossTrace, TraceRecord};
use super::train::{check_architecture, DataCursor, RngState, TrainConfig, Trainer};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{
    build_discriminator_with, build_generator_with, LayerSpec, ModelConfig, Sequential,
};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MGANCKPT";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Architecture {
    model: ModelConfig,
    generator: Vec<LayerSpec>,
    discriminator: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    config: AdamConfig,
    t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    tensors: Vec<TensorEntry>,
    config: TrainConfig,
    rng: RngState,
    cursor: DataCursor,
    adam_generator: OptimizerMeta,
    adam_discriminator: OptimizerMeta,
    trace: Vec<TraceRecord>,
}

/// Everything needed to resume training, minus the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub generator: Sequential<f32>,
    pub discriminator: Sequential<f32>,
    pub adam_generator: AdamState<f32>,
    pub adam_discriminator: AdamState<f32>,
    pub rng: RngState,
    pub cursor: DataCursor,
    pub trace: LossTrace,
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model,
            config: self.config.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            adam_generator: self.adam_generator.clone(),
            adam_discriminator: self.adam_discriminator.clone(),
            rng: RngState::capture(&self.rng),
            cursor: self.cursor,
            trace: self.trace.clone(),
        }
    }

    /// Continues a checkpointed run on `dataset`, which must be the one it was trained on.
    pub fn resume(checkpoint: Checkpoint, dataset: Dataset) -> Result<Self> {
        let mut trainer = Trainer::from_models(
            checkpoint.config,
            checkpoint.model,
            checkpoint.generator,
            checkpoint.discriminator,
            dataset,
        )?;
        trainer.adam_generator = checkpoint.adam_generator;
        trainer.adam_discriminator = checkpoint.adam_discriminator;
        trainer.rng = checkpoint.rng.restore()?;
        trainer.cursor = checkpoint.cursor;
        trainer.trace = checkpoint.trace;
        Ok(trainer)
    }
}

// Every stored tensor in directory order.
fn named_tensors(ckpt: &Checkpoint) -> Vec<(String, &Tensor<f32>)> {
    let mut out = Vec::new();
    for net in [&ckpt.generator, &ckpt.discriminator] {
        out.extend(net.parameters());
        out.extend(net.buffers());
    }
    for state in [&ckpt.adam_generator, &ckpt.adam_discriminator] {
        out.extend(state.m.iter().map(|(k, t)| (format!("adam.m.{k}"), t)));
        out.extend(state.v.iter().map(|(k, t)| (format!("adam.v.{k}"), t)));
    }
    out
}

/// Writes `ckpt` to a sibling temporary file, then renames it over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tensors = named_tensors(ckpt);
    let mut offset = 0u64;
    let mut directory = Vec::with_capacity(tensors.len());
    for (name, t) in &tensors {
        directory.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 4 * t.numel() as u64;
    }
    let header = Header {
        architecture: Architecture {
            model: ckpt.model,
            generator: ckpt.generator.specs(),
            discriminator: ckpt.discriminator.specs(),
        },
        tensors: directory,
        config: ckpt.config.clone(),
        rng: ckpt.rng.clone(),
        cursor: ckpt.cursor,
        adam_generator: OptimizerMeta {
            config: ckpt.adam_generator.config,
            t: ckpt.adam_generator.t,
        },
        adam_discriminator: OptimizerMeta {
            config: ckpt.adam_discriminator.config,
            t: ckpt.adam_discriminator.t,
        },
        trace: ckpt.trace.records().to_vec(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");

    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for (_, t) in &tensors {
            for v in t.data().iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.into_inner().map_err(|e| e.into_error())?.sync_all()
    };
    if let Err(e) = write() {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn take(
    stored: &mut BTreeMap<&str, Tensor<f32>>,
    name: &str,
    shape: &[usize],
) -> Result<Tensor<f32>> {
    let t = stored
        .remove(name)
        .ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
    if t.shape() != shape {
        return Err(corrupt(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Reads and fully validates a checkpoint before building anything from it.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    const PREAMBLE: usize = 8 + 2 + 8;
    if bytes.len() < PREAMBLE {
        return Err(corrupt("file too short for the preamble"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
    let blob_start = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| corrupt("truncated header"))? as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..blob_start])
        .map_err(|e| corrupt(format!("malformed header: {e}")))?;
    let blobs = &bytes[blob_start..];

    let arch = &header.architecture;
    let mut generator = build_generator_with::<f32>(&arch.model)?;
    let mut discriminator = build_discriminator_with::<f32>(&arch.model)?;
    if generator.specs() != arch.generator || discriminator.specs() != arch.discriminator {
        return Err(corrupt("stored layer specs do not match the architecture"));
    }
    check_architecture(&arch.model, &generator, &discriminator)?;

    let mut stored: BTreeMap<&str, Tensor<f32>> = BTreeMap::new();
    let mut expected_offset = 0u64;
    for entry in &header.tensors {
        if entry.offset != expected_offset {
            return Err(corrupt(format!(
                "tensor {} at offset {}, expected {expected_offset}",
                entry.name, entry.offset
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start
            .checked_add(4 * numel)
            .filter(|&e| e <= blobs.len())
            .ok_or_else(|| corrupt(format!("truncated data for tensor {}", entry.name)))?;
        let data = blobs[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(&entry.shape, data)
            .map_err(|e| corrupt(format!("tensor {}: {e}", entry.name)))?;
        if stored.insert(&entry.name, t).is_some() {
            return Err(corrupt(format!("duplicate tensor {}", entry.name)));
        }
        expected_offset = end as u64;
    }
    if expected_offset != blobs.len() as u64 {
        return Err(corrupt(format!(
            "{} trailing bytes after the last tensor",
            blobs.len() as u64 - expected_offset
        )));
    }

    for net in [&mut generator, &mut discriminator] {
        for (name, slot) in net.parameters_mut() {
            *slot = take(&mut stored, &name, slot.shape())?;
        }
        for (name, slot) in net.buffers_mut() {
            *slot = take(&mut stored, &name, slot.shape())?;
        }
    }
    let mut adam = |meta: &OptimizerMeta, net: &Sequential<f32>| -> Result<AdamState<f32>> {
        let mut state = AdamState::new(meta.config);
        state.t = meta.t;
        for (name, p) in net.parameters() {
            let m_key = format!("adam.m.{name}");
            if stored.contains_key(m_key.as_str()) {
                state
                    .m
                    .insert(name.clone(), take(&mut stored, &m_key, p.shape())?);
                state.v.insert(
                    name.clone(),
                    take(&mut stored, &format!("adam.v.{name}"), p.shape())?,
                );
            }
        }
        Ok(state)
    };
    let adam_generator = adam(&header.adam_generator, &generator)?;
    let adam_discriminator = adam(&header.adam_discriminator, &discriminator)?;
    if let Some(name) = stored.keys().next() {
        return Err(corrupt(format!("unexpected tensor {name}")));
    }
    header.rng.restore()?;
    let trace =
        LossTrace::from_records(header.trace).map_err(|e| corrupt(format!("trace: {e}")))?;
    Ok(Checkpoint {
        model: arch.model,
        config: header.config,
        generator,
        discriminator,
        adam_generator,
        adam_discriminator,
        rng: header.rng,
        cursor: header.cursor,
        trace,
    })
}
