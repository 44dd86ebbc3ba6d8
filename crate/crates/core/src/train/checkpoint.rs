//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "SNDR" | u32 version | u8 variant | u32 input size | u64 iteration
//!        | u64 optimizer steps | u32 record count
//! record: u32 name length | name (UTF-8) | u32 rank | rank x u32 dims
//!         | f32 payload
//! ```
//!
//! Every parameter `p` is stored as `p`, `p@adam_m` and `p@adam_v`; every
//! batch-norm layer `n` as `n@running_mean` and `n@running_var`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{build_snider, SniderModel, VariantKind};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SNDR";
pub const VERSION: u32 = 1;

struct Record {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn push_record(out: &mut Vec<u8>, name: &str, dims: &[usize], data: impl Iterator<Item = f32>) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend((d as u32).to_le_bytes());
    }
    for v in data {
        out.extend(v.to_le_bytes());
    }
}

/// Serializes parameters, Adam state, running statistics and the number of
/// completed iterations.
pub fn save_checkpoint<T: Scalar>(model: &SniderModel<T>, iteration: u64) -> Vec<u8> {
    let params = model.params();
    let steps = params.iter().map(|p| p.step_count).max().unwrap_or(0);
    let records = 3 * params.len() + 2 * model.running_stats().len();
    let mut out = Vec::with_capacity(64 + 12 * model.num_parameters());
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.push(model.kind().tag());
    out.extend((model.input_size() as u32).to_le_bytes());
    out.extend(iteration.to_le_bytes());
    out.extend(steps.to_le_bytes());
    out.extend((records as u32).to_le_bytes());
    let f = |v: &T| v.as_f64() as f32;
    for p in params.iter() {
        push_record(&mut out, &p.name, p.value.shape(), p.value.data().iter().map(f));
        push_record(
            &mut out,
            &format!("{}@adam_m", p.name),
            &[p.len()],
            p.adam_m.iter().map(f),
        );
        push_record(
            &mut out,
            &format!("{}@adam_v", p.name),
            &[p.len()],
            p.adam_v.iter().map(f),
        );
    }
    for rs in model.running_stats() {
        push_record(
            &mut out,
            &format!("{}@running_mean", rs.name),
            &[rs.mean.len()],
            rs.mean.iter().map(f),
        );
        push_record(
            &mut out,
            &format!("{}@running_var", rs.name),
            &[rs.var.len()],
            rs.var.iter().map(f),
        );
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Parse {
                offset: self.pos,
                message: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

/// Parsed header fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub variant: VariantKind,
    pub input_size: usize,
    pub iteration: u64,
    pub optimizer_steps: u64,
}

fn read_header(r: &mut Reader) -> Result<(CheckpointHeader, u32)> {
    if r.take(4, "magic")? != MAGIC {
        return Err(r.error(0, "bad magic, not a checkpoint"));
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(at, format!("unsupported version {version} (expected {VERSION})")));
    }
    let at = r.pos;
    let tag = r.u8("variant tag")?;
    let variant =
        VariantKind::from_tag(tag).ok_or_else(|| r.error(at, format!("unknown variant tag {tag}")))?;
    let input_size = r.u32("input size")? as usize;
    let iteration = r.u64("iteration")?;
    let optimizer_steps = r.u64("optimizer steps")?;
    let count = r.u32("record count")?;
    Ok((
        CheckpointHeader {
            variant,
            input_size,
            iteration,
            optimizer_steps,
        },
        count,
    ))
}

/// Reads only the header.
pub fn read_checkpoint_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    Ok(read_header(&mut Reader { bytes, pos: 0 })?.0)
}

/// Rebuilds a model, its optimizer state and the iteration counter. Nothing
/// is returned unless every record parses and matches the architecture.
pub fn load_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(SniderModel<T>, u64)> {
    let mut r = Reader { bytes, pos: 0 };
    let (header, count) = read_header(&mut r)?;
    let mut records = HashMap::new();
    let mut order = Vec::new();
    for _ in 0..count {
        let start = r.pos;
        let len = r.u32("record name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "record name")?)
            .map_err(|_| r.error(start + 4, "record name is not UTF-8"))?
            .to_string();
        let rank = r.u32("record rank")? as usize;
        if rank > 8 {
            return Err(r.error(start, format!("record `{name}` has implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| r.u32("record dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.error(start, format!("record `{name}` is too large")))?;
        let payload = r.take(n, "record payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if records.contains_key(&name) {
            return Err(r.error(start, format!("duplicate record `{name}`")));
        }
        order.push((name.clone(), start));
        records.insert(name.clone(), Record { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(r.error(r.pos, "trailing bytes after the last record"));
    }

    let mut model = build_snider::<T>(header.variant, header.input_size, 0)?;
    let mut used = 0;
    let mut fetch = |name: String, dims: &[usize]| -> Result<Vec<T>> {
        let rec = records.get(&name).ok_or_else(|| Error::Parse {
            offset: bytes.len(),
            message: format!("missing record `{name}`"),
        })?;
        if rec.dims != dims {
            let at = order.iter().find(|(n, _)| *n == rec.name).map_or(0, |o| o.1);
            return Err(Error::Parse {
                offset: at,
                message: format!("record `{name}` has shape {:?}, expected {dims:?}", rec.dims),
            });
        }
        used += 1;
        Ok(rec.data.iter().map(|&v| T::from_f64(v as f64)).collect())
    };
    for p in model.params_mut().iter_mut() {
        let shape = p.value.shape().to_vec();
        let n = p.len();
        let value = fetch(p.name.clone(), &shape)?;
        p.value.data_mut().copy_from_slice(&value);
        p.adam_m = fetch(format!("{}@adam_m", p.name), &[n])?;
        p.adam_v = fetch(format!("{}@adam_v", p.name), &[n])?;
        p.step_count = header.optimizer_steps;
        p.grad = None;
    }
    for rs in model.running_stats_mut() {
        let n = rs.mean.len();
        rs.mean = fetch(format!("{}@running_mean", rs.name), &[n])?;
        rs.var = fetch(format!("{}@running_var", rs.name), &[n])?;
    }
    if used != records.len() {
        return Err(Error::Parse {
            offset: 0,
            message: format!(
                "{} records do not belong to a {} model",
                records.len() - used,
                header.variant
            ),
        });
    }
    Ok((model, header.iteration))
}

/// Like [`load_checkpoint`] but rejects checkpoints of another variant.
pub fn load_checkpoint_expecting<T: Scalar>(
    bytes: &[u8],
    expected: VariantKind,
) -> Result<(SniderModel<T>, u64)> {
    let header = read_checkpoint_header(bytes)?;
    if header.variant != expected {
        return Err(Error::VariantMismatch {
            expected: expected.to_string(),
            found: header.variant.to_string(),
        });
    }
    load_checkpoint(bytes)
}

pub fn save_checkpoint_file<T: Scalar>(path: &Path, model: &SniderModel<T>, iteration: u64) -> Result<()> {
    let bytes = save_checkpoint(model, iteration);
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint_file<T: Scalar>(path: &Path) -> Result<(SniderModel<T>, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&bytes)
}
