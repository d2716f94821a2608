//! Weight snapshot format (little endian):
//!
//! ```text
//! magic[8] version:u8 layers:u32 widths[layers]:u32 seed:u64 step:u64 mode:u64
//! input_shift[d]:f64 input_scale[d]:f64 output_shift:f64 output_scale:f64
//! params[count]:f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Scalar;

use super::Mlp;

pub const NET_MAGIC: &[u8; 8] = b"SWNET\0\0\0";
const NET_VERSION: u8 = 1;

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SnapshotMeta {
    pub seed: u64,
    pub step: u64,
    pub mode: u64,
}

pub fn write_network<T: Scalar>(net: &Mlp<T>, meta: SnapshotMeta, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(NET_MAGIC)?;
    w.write_all(&[NET_VERSION])?;
    w.write_all(&(net.widths().len() as u32).to_le_bytes())?;
    for &width in net.widths() {
        w.write_all(&(width as u32).to_le_bytes())?;
    }
    for v in [meta.seed, meta.step, meta.mode] {
        w.write_all(&v.to_le_bytes())?;
    }
    let (shift, scale) = net.input_normalization();
    let (oshift, oscale) = net.output_normalization();
    let all = shift
        .iter()
        .chain(scale)
        .chain([&oshift, &oscale])
        .chain(net.params());
    for v in all {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_network<T: Scalar>(r: &mut impl Read) -> Result<(Mlp<T>, SnapshotMeta)> {
    let fail = |what: &str| Error::Format(format!("weight snapshot: {what}"));
    let mut buf8 = [0u8; 8];
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf8).map_err(|_| fail("truncated header"))?;
    if &buf8 != NET_MAGIC {
        return Err(fail("bad magic"));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version).map_err(|_| fail("truncated header"))?;
    if version[0] != NET_VERSION {
        return Err(fail("unsupported version"));
    }
    r.read_exact(&mut buf4).map_err(|_| fail("truncated header"))?;
    let layers = u32::from_le_bytes(buf4) as usize;
    if !(2..=64).contains(&layers) {
        return Err(fail("implausible layer count"));
    }
    let mut widths = Vec::with_capacity(layers);
    for _ in 0..layers {
        r.read_exact(&mut buf4).map_err(|_| fail("truncated widths"))?;
        widths.push(u32::from_le_bytes(buf4) as usize);
    }
    let mut meta = [0u64; 3];
    for m in &mut meta {
        r.read_exact(&mut buf8).map_err(|_| fail("truncated header"))?;
        *m = u64::from_le_bytes(buf8);
    }
    let mut net = Mlp::<T>::zeros(&widths).map_err(|e| fail(&e.to_string()))?;
    let d = widths[0];
    let mut next = || -> Result<T> {
        r.read_exact(&mut buf8).map_err(|_| fail("truncated payload"))?;
        Ok(T::from_f64_lossy(f64::from_le_bytes(buf8)))
    };
    let shift = (0..d).map(|_| next()).collect::<Result<Vec<_>>>()?;
    let scale = (0..d).map(|_| next()).collect::<Result<Vec<_>>>()?;
    let oshift = next()?;
    let oscale = next()?;
    for p in net.params_mut() {
        *p = next()?;
    }
    let net = net
        .with_normalization(shift, scale, oshift, oscale)
        .map_err(|e| fail(&e.to_string()))?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe).map_err(|_| fail("read error"))? != 0 {
        return Err(fail("trailing bytes after parameters"));
    }
    Ok((
        net,
        SnapshotMeta {
            seed: meta[0],
            step: meta[1],
            mode: meta[2],
        },
    ))
}

pub fn save_network<T: Scalar>(net: &Mlp<T>, meta: SnapshotMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_network(net, meta, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_network<T: Scalar>(path: impl AsRef<Path>) -> Result<(Mlp<T>, SnapshotMeta)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_network(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
