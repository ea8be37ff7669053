//! Checkpoint container: a text header followed by little-endian `f32` data.
//!
//! ```text
//! EORM-CHECKPOINT 1
//! variant=transformer
//! vocab_size=258
//! ...
//! meta.tokenizer=byte
//! leaves=27
//! leaf tok_emb 258 128 0
//! leaf pos_emb 512 128 132096
//! ...
//! end_header
//! <raw bytes>
//! ```
//!
//! Leaf offsets are byte offsets into the data section, which holds every
//! leaf back to back in header order.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::real::Real;

pub const CHECKPOINT_MAGIC: &str = "EORM-CHECKPOINT";
const VERSION: u32 = 1;
const META_PREFIX: &str = "meta.";

/// Parameters plus free-form string metadata (tokenizer, training seed, ...).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub meta: BTreeMap<String, String>,
}

pub fn write_checkpoint<T: Real, W: Write>(params: &ModelParams<T>, meta: &BTreeMap<String, String>, mut w: W) -> Result<()> {
    let mut header = format!("{CHECKPOINT_MAGIC} {VERSION}\n");
    for line in params.config.to_kv_lines() {
        header.push_str(&line);
        header.push('\n');
    }
    for (k, v) in meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("metadata entry {k:?} cannot be stored in the header")));
        }
        header.push_str(&format!("{META_PREFIX}{k}={v}\n"));
    }
    let leaves = params.leaves();
    header.push_str(&format!("leaves={}\n", leaves.len()));
    let mut offset = 0usize;
    for l in &leaves {
        let (r, c) = l.shape();
        header.push_str(&format!("leaf {} {r} {c} {offset}\n", l.name));
        offset += r * c * 4;
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(offset);
    for l in &leaves {
        for v in l.value.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = Vec::new();
    let n = r.read_until(b'\n', &mut line)?;
    if n == 0 || line.last() != Some(&b'\n') {
        return Err(bad("truncated header"));
    }
    line.pop();
    String::from_utf8(line).map_err(|_| bad("header is not UTF-8"))
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut r = BufReader::new(r);
    let first = read_line(&mut r)?;
    let version = first
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|rest| rest.trim().parse::<u32>().ok())
        .ok_or_else(|| bad("not a checkpoint file (bad magic line)"))?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }

    let mut config_lines = Vec::new();
    let mut meta = BTreeMap::new();
    let n_leaves = loop {
        let line = read_line(&mut r)?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
        if k == "leaves" {
            break v.parse::<usize>().map_err(|_| bad(format!("bad leaf count {v:?}")))?;
        }
        match k.strip_prefix(META_PREFIX) {
            Some(mk) => {
                meta.insert(mk.to_string(), v.to_string());
            }
            None => config_lines.push((k.to_string(), v.to_string())),
        }
    };
    let config = ModelConfig::from_kv(config_lines.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| bad(format!("invalid model config: {e}")))?;
    let specs = config.leaf_specs();
    if n_leaves != specs.len() {
        return Err(bad(format!(
            "header lists {n_leaves} leaves but the config implies {}",
            specs.len()
        )));
    }
    let mut expected_offset = 0usize;
    for spec in &specs {
        let line = read_line(&mut r)?;
        let parts: Vec<&str> = line.split(' ').collect();
        let [tag, name, rows, cols, offset] = parts[..] else {
            return Err(bad(format!("malformed leaf line {line:?}")));
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number in {line:?}")));
        let (rows, cols, offset) = (num(rows)?, num(cols)?, num(offset)?);
        if tag != "leaf" || name != spec.name || (rows, cols) != (spec.rows, spec.cols) {
            return Err(bad(format!(
                "leaf {name} {rows}x{cols} does not match expected {} {}x{}",
                spec.name, spec.rows, spec.cols
            )));
        }
        if offset != expected_offset {
            return Err(bad(format!("leaf {name} at offset {offset}, expected {expected_offset}")));
        }
        expected_offset += rows * cols * 4;
    }
    if read_line(&mut r)? != "end_header" {
        return Err(bad("missing end_header"));
    }
    let mut blob = Vec::with_capacity(expected_offset);
    r.read_to_end(&mut blob)?;
    if blob.len() != expected_offset {
        return Err(bad(format!(
            "data section has {} bytes, header describes {expected_offset}",
            blob.len()
        )));
    }

    let mut params = ModelParams::<f32>::zeros(&config)?;
    let mut chunks = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for leaf in params.leaves_mut() {
        let (rows, cols) = leaf.shape();
        let data: Vec<f32> = chunks.by_ref().take(rows * cols).collect();
        leaf.value = Tensor::from_vec(rows, cols, data)?;
    }
    params
        .ensure_finite()
        .map_err(|e| bad(format!("checkpoint holds non-finite values: {e}")))?;
    Ok(Checkpoint { params, meta })
}

/// Writes to `path` through a temporary sibling file, then renames.
pub fn save_checkpoint<T: Real>(params: &ModelParams<T>, meta: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let f = File::create(&tmp).map_err(|e| bad(format!("cannot create {}: {e}", tmp.display())))?;
        write_checkpoint(params, meta, BufWriter::new(f))?;
    }
    fs::rename(&tmp, path).map_err(|e| bad(format!("cannot move checkpoint to {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| bad(format!("cannot open {}: {e}", path.display())))?;
    read_checkpoint(f).map_err(|e| match e {
        Error::Checkpoint(m) => bad(format!("{}: {m}", path.display())),
        other => bad(format!("{}: {other}", path.display())),
    })
}
