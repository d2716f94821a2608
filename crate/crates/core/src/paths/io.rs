//! Binary dataset container and CSV export.
//!
//! Layout (little endian):
//!
//! ```text
//! magic[8] version:u8 d:u64 M:u64 P:u64 T:f64 tag_len:u32 tag[tag_len] seed:u64
//! states[P·(M+1)·d]:f64  brownian[P·M·d]:f64  compensated[P·M]:f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PathBatch, TimeGrid};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SWPATHS\0";
pub const VERSION: u8 = 1;

pub fn save_batch(batch: &PathBatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_batch(batch, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_batch(batch: &PathBatch, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(batch.dim() as u64).to_le_bytes())?;
    w.write_all(&(batch.grid().steps as u64).to_le_bytes())?;
    w.write_all(&(batch.paths() as u64).to_le_bytes())?;
    w.write_all(&batch.grid().horizon.to_le_bytes())?;
    let tag = batch.model_tag().as_bytes();
    w.write_all(&(tag.len() as u32).to_le_bytes())?;
    w.write_all(tag)?;
    w.write_all(&batch.seed().to_le_bytes())?;
    for arr in [batch.states_raw(), batch.brownian_raw(), batch.compensated_raw()] {
        for v in arr {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_batch(path: impl AsRef<Path>) -> Result<PathBatch> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let expected = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = Reader {
        inner: BufReader::new(file),
        consumed: 0,
    };
    let fmt = |msg: String| Error::Format(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 8];
    r.exact(&mut magic).map_err(fmt)?;
    if &magic != MAGIC {
        return Err(fmt("not a path dataset (bad magic)".into()));
    }
    let version = r.u8().map_err(fmt)?;
    if version != VERSION {
        return Err(fmt(format!("unsupported dataset version {version}")));
    }
    let d = r.u64().map_err(fmt)? as usize;
    let m = r.u64().map_err(fmt)? as usize;
    let p = r.u64().map_err(fmt)? as usize;
    let horizon = r.f64().map_err(fmt)?;
    let tag_len = r.u32().map_err(fmt)? as usize;
    if tag_len > 4096 {
        return Err(fmt(format!("model tag length {tag_len} is implausible")));
    }
    let mut tag = vec![0u8; tag_len];
    r.exact(&mut tag).map_err(fmt)?;
    let tag = String::from_utf8(tag).map_err(|_| fmt("model tag is not UTF-8".into()))?;
    let seed = r.u64().map_err(fmt)?;

    let grid = TimeGrid::new(horizon, m).map_err(|e| fmt(format!("bad grid in header: {e}")))?;
    let counts = [
        p.checked_mul(m + 1).and_then(|v| v.checked_mul(d)),
        p.checked_mul(m).and_then(|v| v.checked_mul(d)),
        p.checked_mul(m),
    ];
    let [ns, nw, nn] = counts.map(|c| c.ok_or_else(|| fmt("header shape overflows".into())));
    let (ns, nw, nn) = (ns?, nw?, nn?);
    let payload = ((ns + nw + nn) as u64).checked_mul(8);
    if payload.map(|b| b + r.consumed) != Some(expected) {
        return Err(fmt(format!(
            "file holds {} bytes but header (d={d}, M={m}, P={p}) implies {}",
            expected,
            payload.map_or("an overflowing size".to_owned(), |b| (b + r.consumed).to_string())
        )));
    }
    let states = r.f64s(ns).map_err(fmt)?;
    let brownian = r.f64s(nw).map_err(fmt)?;
    let compensated = r.f64s(nn).map_err(fmt)?;
    PathBatch::from_parts(grid, d, p, tag, seed, states, brownian, compensated)
        .map_err(|e| fmt(e.to_string()))
}

struct Reader<R> {
    inner: R,
    consumed: u64,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8]) -> std::result::Result<(), String> {
        self.inner
            .read_exact(buf)
            .map_err(|_| format!("truncated at byte {}", self.consumed))?;
        self.consumed += buf.len() as u64;
        Ok(())
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        let mut b = [0u8; 1];
        self.exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let mut raw = vec![0u8; n * 8];
        self.exact(&mut raw)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

/// One row per (path, step): `path,step,time,x_0..,dw_0..,dn`. The final
/// node of each path has empty increment columns.
pub fn write_csv(batch: &PathBatch, w: &mut impl Write) -> std::io::Result<()> {
    let d = batch.dim();
    let m = batch.grid().steps;
    let mut header = vec!["path".to_owned(), "step".into(), "time".into()];
    header.extend((0..d).map(|k| format!("x{k}")));
    header.extend((0..d).map(|k| format!("dw{k}")));
    header.push("dn".into());
    writeln!(w, "{}", header.join(","))?;
    for p in 0..batch.paths() {
        for n in 0..=m {
            write!(w, "{p},{n},{}", batch.grid().time(n))?;
            for x in batch.state(p, n) {
                write!(w, ",{x}")?;
            }
            if n < m {
                for v in batch.brownian(p, n) {
                    write!(w, ",{v}")?;
                }
                writeln!(w, ",{}", batch.compensated(p, n))?;
            } else {
                writeln!(w, "{}", ",".repeat(d + 1))?;
            }
        }
    }
    Ok(())
}
