//! Checkpoint files.
//!
//! Layout: a magic line `LVSM-CHECKPOINT 1`, a line holding the byte length
//! of the header, the header as TOML (config, seed, tensor manifest with
//! names, shapes and byte offsets), then the raw little-endian tensor
//! payloads in manifest order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LvsmConfig;
use crate::diffnum::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "LVSM-CHECKPOINT 1";

/// Optimizer progress stored alongside the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainCounters {
    pub step: u64,
    pub skipped: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub seed: u64,
    pub model: LvsmConfig,
    pub train_state: Option<TrainCounters>,
    /// Snapshot of the run configuration that produced the checkpoint.
    pub run: Option<toml::Table>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderFile {
    seed: u64,
    dtype: DType,
    model: LvsmConfig,
    train_state: Option<TrainCounters>,
    run: Option<toml::Table>,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<T: Scalar>(
    path: &Path,
    header: &CheckpointHeader,
    tensors: &[(String, &Tensor<T>)],
) -> Result<()> {
    let elem = T::DTYPE.size_of() as u64;
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let bytes = t.numel() as u64 * elem;
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                bytes,
            };
            offset += bytes;
            e
        })
        .collect();
    let file = HeaderFile {
        seed: header.seed,
        dtype: T::DTYPE,
        model: header.model.clone(),
        train_state: header.train_state,
        run: header.run.clone(),
        tensors: entries,
    };
    let text =
        toml::to_string(&file).map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{MAGIC}").map_err(io)?;
    writeln!(w, "{}", text.len()).map_err(io)?;
    w.write_all(text.as_bytes()).map_err(io)?;
    for (_, t) in tensors {
        for &v in t.data() {
            match T::DTYPE {
                DType::F32 => w.write_all(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => w.write_all(&v.as_f64().to_le_bytes()),
            }
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Tensors in file order, keyed by name.
pub type NamedTensors<T> = Vec<(String, Tensor<T>)>;

/// Reads a checkpoint, converting payloads to `T`. Returns the header, the
/// stored precision and the named tensors in file order.
pub fn read_checkpoint<T: Scalar>(
    path: &Path,
) -> Result<(CheckpointHeader, DType, NamedTensors<T>)> {
    let io = |e| Error::io(path, e);
    let parse = |line: usize, message: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        message,
    };
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io)?;
    if line.trim_end() != MAGIC {
        return Err(parse(1, "not an LVSM checkpoint".into()));
    }
    line.clear();
    r.read_line(&mut line).map_err(io)?;
    let len: usize = line
        .trim()
        .parse()
        .map_err(|_| parse(2, format!("bad header length `{}`", line.trim())))?;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text).map_err(io)?;
    let text = String::from_utf8(text).map_err(|_| parse(3, "header is not UTF-8".into()))?;
    let file: HeaderFile = toml::from_str(&text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start].lines().count());
        parse(line + 2, e.message().to_string())
    })?;
    let elem = file.dtype.size_of();
    let mut tensors = Vec::with_capacity(file.tensors.len());
    let mut expected_offset = 0;
    for entry in &file.tensors {
        let numel: usize = entry.shape.iter().product();
        if entry.offset != expected_offset || entry.bytes != (numel * elem) as u64 {
            return Err(Error::Incompatible(format!(
                "tensor `{}` manifest is inconsistent",
                entry.name
            )));
        }
        expected_offset += entry.bytes;
        let mut buf = vec![0u8; numel * elem];
        r.read_exact(&mut buf).map_err(io)?;
        let data = match file.dtype {
            DType::F32 => buf
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect(),
            DType::F64 => buf
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        };
        tensors.push((
            entry.name.clone(),
            Tensor::from_vec(entry.shape.clone(), data)?,
        ));
    }
    let header = CheckpointHeader {
        seed: file.seed,
        model: file.model,
        train_state: file.train_state,
        run: file.run,
    };
    Ok((header, file.dtype, tensors))
}
