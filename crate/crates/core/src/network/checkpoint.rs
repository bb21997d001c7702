//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CXRNET"                      6 bytes
//! version                       u16
//! header length                 u32, then that many bytes of UTF-8
//!                               `key=value` lines (network config, epoch,
//!                               val_loss, seed)
//! parameter count               u32
//! per parameter:
//!   name length u16, name bytes
//!   rank u8, extents u32 × rank
//!   values f32 × product(extents)
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{check_table, plan, DenseNetConfig, Network, NetworkError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"CXRNET";
pub const FORMAT_VERSION: u16 = 1;

/// Network parameters plus the training context they were saved in.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network<f32>,
    /// 1-based epoch the parameters come from.
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
    /// Extra `key=value` header entries; keys and values hold no `=` or newline
    /// in keys and no newline in values.
    pub meta: Vec<(String, String)>,
}

const RESERVED: [&str; 3] = ["epoch", "val_loss", "seed"];

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        let mut lines = self.network.config().to_kv_lines();
        lines.push(format!("epoch={}", self.epoch));
        lines.push(format!("val_loss={:?}", self.val_loss));
        lines.push(format!("seed={}", self.seed));
        for (k, v) in &self.meta {
            debug_assert!(!k.contains(['=', '\n']) && !v.contains('\n'));
            lines.push(format!("{k}={v}"));
        }
        let header = lines.join("\n");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());

        let params = self.network.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.value.rank() as u8);
            for &e in p.value.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = RawCheckpoint::parse(bytes)?;
        let config = DenseNetConfig::from_kv(raw.header.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        let network = Network::from_params(&config, raw.params)?;
        let config_keys: Vec<String> =
            config.to_kv_lines().iter().filter_map(|l| l.split_once('=')).map(|(k, _)| k.to_string()).collect();
        let meta = |key: &str| {
            raw.header
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| NetworkError::Format(format!("header key {key:?} missing")))
        };
        let bad = |key: &str| NetworkError::Format(format!("header key {key:?} unparseable"));
        Ok(Checkpoint {
            network,
            epoch: meta("epoch")?.parse().map_err(|_| bad("epoch"))?,
            val_loss: meta("val_loss")?.parse().map_err(|_| bad("val_loss"))?,
            seed: meta("seed")?.parse().map_err(|_| bad("seed"))?,
            meta: raw
                .header
                .iter()
                .filter(|(k, _)| !RESERVED.contains(&k.as_str()) && !config_keys.contains(k))
                .cloned()
                .collect(),
        })
    }
}

struct RawCheckpoint {
    header: Vec<(String, String)>,
    params: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NetworkError::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

impl RawCheckpoint {
    fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(NetworkError::Format("not a CXRNET checkpoint (bad magic)".into()));
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(NetworkError::Version { found: version, expected: FORMAT_VERSION });
        }
        let header_len = r.u32("header length")? as usize;
        let header = std::str::from_utf8(r.take(header_len, "header")?)
            .map_err(|_| NetworkError::Format("header is not UTF-8".into()))?;
        let header = header
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| NetworkError::Format(format!("header line {l:?} lacks '='")))
            })
            .collect::<Result<Vec<_>>>()?;

        let count = r.u32("parameter count")? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16("parameter name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
                .map_err(|_| NetworkError::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("extent").map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
            let numel = numel.ok_or_else(|| NetworkError::Format(format!("{name}: extent overflow")))?;
            let raw = r.take(numel.saturating_mul(4), &name)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let tensor = Tensor::new(shape, data).map_err(|e| NetworkError::Format(format!("{name}: {e}")))?;
            params.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(NetworkError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(RawCheckpoint { header, params })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&checkpoint.to_bytes())?;
    file.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Loads a checkpoint and verifies that it was produced for `expected`.
///
/// The parameter table is compared first so the error names the first
/// parameter that disagrees.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &DenseNetConfig) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let raw = RawCheckpoint::parse(&bytes)?;
    expected.validate()?;
    let (_, specs) = plan(expected);
    check_table(&specs, raw.params.iter().map(|(n, t)| (n.as_str(), t.shape())))?;
    let checkpoint = Checkpoint::from_bytes(&bytes)?;
    let (got, want) = (checkpoint.network.config().to_kv_lines(), expected.to_kv_lines());
    if let Some((g, w)) = got.iter().zip(&want).find(|(g, w)| g != w) {
        return Err(NetworkError::InvalidConfig(format!("checkpoint has {g}, expected {w}")));
    }
    Ok(checkpoint)
}

/// Reads only the named parameter table of a checkpoint-format file, without
/// requiring it to match any particular config.
pub fn read_parameter_table(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    Ok(RawCheckpoint::parse(&fs::read(path)?)?.params)
}

/// Renames foreign parameter names onto this crate's names.
///
/// Text format: one `source_name -> target_name` pair per line; blank lines
/// and lines starting with `#` are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NameMap {
    pairs: HashMap<String, String>,
}

impl NameMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (src, dst) = line
                .split_once("->")
                .ok_or_else(|| NetworkError::Format(format!("name map line {}: expected 'a -> b'", i + 1)))?;
            pairs.insert(src.trim().to_string(), dst.trim().to_string());
        }
        Ok(NameMap { pairs })
    }

    pub fn target<'a>(&'a self, source: &'a str) -> &'a str {
        self.pairs.get(source).map(String::as_str).unwrap_or(source)
    }
}

impl Network<f32> {
    /// Overwrites parameters from a foreign table; names are translated
    /// through `map` (unmapped names are used as-is). Returns how many were
    /// imported. Every imported name must exist with the same shape.
    pub fn import_parameters(&mut self, table: Vec<(String, Tensor<f32>)>, map: &NameMap) -> Result<usize> {
        let mut staged = Vec::with_capacity(table.len());
        for (name, value) in table {
            let target = map.target(&name).to_string();
            let current = self.param(&target).ok_or_else(|| NetworkError::ParamMismatch {
                name: name.clone(),
                detail: format!("maps to unknown parameter {target:?}"),
            })?;
            if current.value.shape() != value.shape() {
                return Err(NetworkError::ParamMismatch {
                    name: target,
                    detail: format!("shape {:?}, expected {:?}", value.shape(), current.value.shape()),
                });
            }
            staged.push((target, value));
        }
        let n = staged.len();
        for (name, value) in staged {
            self.set_param(&name, value)?;
        }
        Ok(n)
    }
}
