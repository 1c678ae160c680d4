//! Binary checkpoints and JSONL metrics.
//!
//! Checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! "RBMP"                  4 bytes
//! version                 u32
//! M, N                    u64, u64
//! b, c, W (row-major)     (M + N + M*N) f64
//! state length            u64
//! state                   UTF-8 JSON (resume state and metadata)
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::RbmParams;
use crate::pruning::{PruneStateSnapshot, RemovalEvent};
use crate::training::TrainerSnapshot;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RBMP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 8 + 8;
/// Largest parameter count a checkpoint header may declare.
const MAX_PARAMS: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Prune,
}

/// Resume state stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ResumeState {
    /// Parameters only.
    Model,
    Train(TrainerSnapshot),
    Prune(PruneStateSnapshot),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub train_steps: u64,
    pub prune_steps: u64,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: RbmParams,
    pub state: ResumeState,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    state: ResumeState,
    meta: CheckpointMeta,
}

/// Hex SHA-256 of the JSON encoding of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl CheckpointMeta {
    pub fn new<T: Serialize>(config: &T, train_steps: u64, prune_steps: u64) -> Result<Self> {
        Ok(Self {
            train_steps,
            prune_steps,
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
        })
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let p = &ckpt.params;
    let trailer = serde_json::to_vec(&Trailer {
        state: ckpt.state.clone(),
        meta: ckpt.meta.clone(),
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN as usize + 8 * p.num_params() + 8 + trailer.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.num_visible() as u64).to_le_bytes());
    out.extend_from_slice(&(p.num_hidden() as u64).to_le_bytes());
    for x in p.visible_bias().iter().chain(p.hidden_bias()).chain(p.weights()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(trailer.len() as u64).to_le_bytes());
    out.extend_from_slice(&trailer);
    Ok(out)
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("eight bytes"))
}

fn truncated(expected: u64, bytes: &[u8]) -> Error {
    Error::Truncated {
        expected,
        actual: bytes.len() as u64,
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(truncated(HEADER_LEN, bytes));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: u32::from_be_bytes(CHECKPOINT_MAGIC),
            found: u32::from_be_bytes(bytes[..4].try_into().expect("four bytes")),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(truncated(HEADER_LEN, bytes));
    }
    let m = u64_at(bytes, 8);
    let n = u64_at(bytes, 16);
    let count = m
        .checked_mul(n)
        .and_then(|w| w.checked_add(m))
        .and_then(|w| w.checked_add(n))
        .filter(|&c| c <= MAX_PARAMS)
        .ok_or_else(|| Error::DimensionOverflow(format!("M = {m}, N = {n}")))?;
    let params_end = HEADER_LEN + 8 * count;
    if (bytes.len() as u64) < params_end + 8 {
        return Err(truncated(params_end + 8, bytes));
    }
    let trailer_len = u64_at(bytes, params_end as usize);
    let expected = (params_end + 8)
        .checked_add(trailer_len)
        .ok_or_else(|| Error::DimensionOverflow(format!("state length {trailer_len}")))?;
    if bytes.len() as u64 != expected {
        if (bytes.len() as u64) < expected {
            return Err(truncated(expected, bytes));
        }
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() as u64 - expected
        )));
    }
    let (m, n) = (m as usize, n as usize);
    let floats: Vec<f64> = bytes[HEADER_LEN as usize..params_end as usize]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    let params = RbmParams::new(
        floats[..m].to_vec(),
        floats[m..m + n].to_vec(),
        floats[m + n..].to_vec(),
    )?;
    let trailer: Trailer = serde_json::from_slice(&bytes[params_end as usize + 8..])?;
    Ok(Checkpoint {
        params,
        state: trailer.state,
        meta: trailer.meta,
    })
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    write().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// One line of a metrics file. Absent quantities are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub phase: Phase,
    pub num_hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_kld: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_tilde_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_cost_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removals: Vec<RemovalEvent>,
    /// Seconds since the command started; only written on request, since it
    /// breaks byte-identical re-runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock: Option<f64>,
}

impl MetricsRecord {
    pub fn new(step: u64, phase: Phase, num_hidden: usize) -> Self {
        Self {
            step,
            phase,
            num_hidden,
            exact_kld: None,
            d_tilde: None,
            d_tilde_std: None,
            nll: None,
            reconstruction_error: None,
            min_cost: None,
            min_cost_std: None,
            removals: Vec::new(),
            wall_clock: None,
        }
    }
}

/// First line of a metrics file: the effective configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
}

fn append_line<T: Serialize>(file: &mut impl Write, value: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(std::io::Error::other)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()
}

/// Appends one record to `path`, creating the file if needed.
pub fn append_metrics(path: impl AsRef<Path>, record: &MetricsRecord) -> Result<()> {
    let path = path.as_ref();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    append_line(&mut f, record).map_err(|e| Error::io(path, e))
}

/// Open metrics file that enforces strictly increasing steps per phase.
#[derive(Debug)]
pub struct MetricsLog {
    path: PathBuf,
    file: BufWriter<File>,
    last: Option<(Phase, u64)>,
}

impl MetricsLog {
    /// Truncates `path` and writes `header` as the first line.
    pub fn create(path: impl AsRef<Path>, header: &MetricsHeader) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = Self {
            file: BufWriter::new(file),
            path,
            last: None,
        };
        append_line(&mut log.file, header).map_err(|e| Error::io(&log.path, e))?;
        Ok(log)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        if let Some((phase, step)) = self.last {
            if phase == record.phase && record.step <= step {
                return Err(Error::InvalidArgument(format!(
                    "metrics step {} does not follow step {step}",
                    record.step
                )));
            }
        }
        append_line(&mut self.file, record).map_err(|e| Error::io(&self.path, e))?;
        self.last = Some((record.phase, record.step));
        Ok(())
    }
}
