//! `CKPT` files: magic, metadata text, a manifest of named tensors and a
//! little-endian f32 payload.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::config::NetConfig;
use super::model::{EfpsNet, Readout};
use crate::diffcore::Scalar;
use crate::{io, Error, Result};

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

fn readout_name(r: Readout) -> &'static str {
    match r {
        Readout::GlobalPool => "pool",
        Readout::Flatten => "flatten",
    }
}

pub fn write_checkpoint<S: Scalar>(net: &mut EfpsNet<S>, w: &mut impl Write) -> Result<()> {
    let meta = format!("{}readout = {}\n", net.config.to_text(), readout_name(net.readout));
    let params = net.params();
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(meta.len() as u32)?;
    w.write_all(meta.as_bytes())?;
    w.write_u32::<LE>(params.len() as u32)?;
    let mut offset = 0u64;
    for (name, p) in &params {
        w.write_u16::<LE>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        let shape = p.value.shape();
        w.write_u8(shape.len() as u8)?;
        for &d in shape {
            w.write_u32::<LE>(d as u32)?;
        }
        w.write_u64::<LE>(offset)?;
        offset += p.value.len() as u64;
    }
    w.write_u64::<LE>(offset)?;
    for (_, p) in &params {
        for v in &p.value.data {
            w.write_f32::<LE>(v.as_f64() as f32)?;
        }
    }
    Ok(())
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn read_checkpoint<S: Scalar>(r: &mut impl Read) -> Result<EfpsNet<S>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not a CKPT file"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported CKPT version {version}")));
    }
    let meta_len = r.read_u32::<LE>()? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let meta = String::from_utf8(meta).map_err(|_| Error::format("CKPT metadata is not UTF-8"))?;
    let mut readout = Readout::GlobalPool;
    let mut config_text = String::new();
    for line in meta.lines() {
        match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some(("readout", "pool")) => readout = Readout::GlobalPool,
            Some(("readout", "flatten")) => readout = Readout::Flatten,
            Some(("readout", other)) => return Err(Error::format(format!("unknown readout `{other}`"))),
            _ => {
                config_text.push_str(line);
                config_text.push('\n');
            }
        }
    }
    let config = NetConfig::parse(&config_text)?;
    let count = r.read_u32::<LE>()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.read_u16::<LE>()? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::format("parameter name is not UTF-8"))?;
        let rank = r.read_u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.read_u32::<LE>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let offset = r.read_u64::<LE>()? as usize;
        entries.push(Entry { name, shape, offset });
    }
    let total = r.read_u64::<LE>()? as usize;
    let mut payload = vec![0f32; total];
    r.read_f32_into::<LE>(&mut payload)?;
    let mut net = EfpsNet::with_readout(&config, readout)?;
    let mut params = net.params();
    if params.len() != entries.len() {
        return Err(Error::format(format!(
            "checkpoint holds {} tensors, network has {}",
            entries.len(),
            params.len()
        )));
    }
    for ((name, p), e) in params.iter_mut().zip(&entries) {
        if *name != e.name || p.value.shape() != e.shape.as_slice() {
            return Err(Error::format(format!(
                "checkpoint tensor {} {:?} does not match network tensor {} {:?}",
                e.name,
                e.shape,
                name,
                p.value.shape()
            )));
        }
        let src = payload
            .get(e.offset..e.offset + p.value.len())
            .ok_or_else(|| Error::format(format!("tensor {} runs past the payload", e.name)))?;
        for (d, &v) in p.value.data.iter_mut().zip(src) {
            *d = S::of(v as f64);
        }
    }
    drop(params);
    Ok(net)
}

pub fn save_checkpoint<S: Scalar>(net: &mut EfpsNet<S>, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(net, &mut bytes)?;
    io::write_atomic(path, &bytes)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<EfpsNet<S>> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
