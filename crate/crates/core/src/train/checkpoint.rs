//! `SGN1` checkpoint files: a flat list of named f32 tensors followed by a
//! CRC-32 of everything before it.
//!
//! Metadata rides along as tensors under `meta/`. Integers up to 64 bits are
//! split into four 16-bit limbs, each exactly representable in f32.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use sentigan_tensor::Tensor;

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nets::{ModelParams, NetConfig, ParamLayout};

pub const MAGIC: &[u8; 4] = b"SGN1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam_gen: AdamState,
    pub adam_disc: AdamState,
    pub iteration: u64,
    /// `(seed, counter)` of the training stream.
    pub rng: (u64, u64),
}

impl Checkpoint {
    pub fn config(&self) -> &NetConfig {
        self.params.config()
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.params.bitwise_eq(&other.params)
            && self.adam_gen.bitwise_eq(&other.adam_gen)
            && self.adam_disc.bitwise_eq(&other.adam_disc)
            && self.iteration == other.iteration
            && self.rng == other.rng
    }
}

fn limbs(v: u64) -> [f32; 4] {
    [0, 16, 32, 48].map(|s| ((v >> s) & 0xFFFF) as f32)
}

fn from_limbs(d: &[f32]) -> Result<u64> {
    let mut v = 0u64;
    for (i, &x) in d.iter().enumerate() {
        if !(0.0..=65535.0).contains(&x) || x.fract() != 0.0 {
            return Err(Error::Corrupt(format!("bad integer limb {x}")));
        }
        v |= (x as u64) << (16 * i);
    }
    Ok(v)
}

fn config_vector(c: &NetConfig) -> Vec<f32> {
    [
        c.image_size,
        c.content_channels,
        c.style_dim,
        c.mlp_hidden,
        c.res_blocks,
        c.enc_width,
        c.style_width,
        c.dec_width,
        c.disc_width,
    ]
    .iter()
    .map(|&v| v as f32)
    .collect()
}

fn config_from(d: &[f32]) -> Result<NetConfig> {
    if d.len() != 9 || d.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(Error::Corrupt(format!("bad network configuration {d:?}")));
    }
    let u = |i: usize| d[i] as usize;
    Ok(NetConfig {
        image_size: u(0),
        content_channels: u(1),
        style_dim: u(2),
        mlp_hidden: u(3),
        res_blocks: u(4),
        enc_width: u(5),
        style_width: u(6),
        dec_width: u(7),
        disc_width: u(8),
    })
}

fn entries(ck: &Checkpoint) -> Vec<(String, Tensor)> {
    let mut out = vec![
        ("meta/net".to_string(), Tensor::vector(config_vector(ck.config())).expect("non-empty")),
        ("meta/iteration".to_string(), Tensor::vector(limbs(ck.iteration).to_vec()).expect("non-empty")),
        (
            "meta/rng".to_string(),
            Tensor::vector(limbs(ck.rng.0).into_iter().chain(limbs(ck.rng.1)).collect()).expect("non-empty"),
        ),
    ];
    for (name, t) in ck.params.iter() {
        out.push((format!("param/{name}"), t.clone()));
    }
    let specs = ck.params.layout().specs();
    for (tag, st) in [("gen", &ck.adam_gen), ("disc", &ck.adam_disc)] {
        out.push((format!("meta/adam.{tag}.step"), Tensor::vector(limbs(st.step).to_vec()).expect("non-empty")));
        for (k, &i) in st.indices.iter().enumerate() {
            out.push((format!("adam.{tag}.m/{}", specs[i].name), st.m[k].clone()));
            out.push((format!("adam.{tag}.v/{}", specs[i].name), st.v[k].clone()));
        }
    }
    out
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let entries = entries(ck);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in &entries {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Corrupt("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 && MAGIC.starts_with(bytes) {
        return Err(Error::Corrupt("file too short".into()));
    }
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format(format!("not a checkpoint: expected magic {:?}", std::str::from_utf8(MAGIC).unwrap())));
    }
    if bytes.len() < 16 {
        return Err(Error::Corrupt("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let mut cur = Cursor { buf: body, pos: 4 };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let count = cur.u32()? as usize;
    let mut tensors = std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(cur.take(len)?).map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = cur.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("{name}: {e}")))?;
        if tensors.insert(name.to_string(), t).is_some() {
            return Err(Error::Corrupt(format!("duplicate tensor {name}")));
        }
    }
    if cur.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes after tensors".into()));
    }
    let mut take = |name: &str| tensors.remove(name).ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")));

    let config = config_from(take("meta/net")?.data())?;
    let iteration = from_limbs(take("meta/iteration")?.data())?;
    let rng_t = take("meta/rng")?;
    if rng_t.numel() != 8 {
        return Err(Error::Corrupt("bad rng state".into()));
    }
    let rng = (from_limbs(&rng_t.data()[..4])?, from_limbs(&rng_t.data()[4..])?);

    let layout = Arc::new(ParamLayout::new(&config).map_err(|e| Error::Corrupt(e.to_string()))?);
    let names: Vec<String> = layout.specs().iter().map(|s| s.name.clone()).collect();
    let params_t = names.iter().map(|n| take(&format!("param/{n}"))).collect::<Result<Vec<_>>>()?;
    let params = ModelParams::from_tensors(layout, params_t).map_err(|e| Error::Corrupt(e.to_string()))?;

    let mut adam = |tag: &str, disc: bool| -> Result<AdamState> {
        let mut st = AdamState::for_params(&params, |n| n.starts_with("disc.") == disc);
        st.step = from_limbs(take(&format!("meta/adam.{tag}.step"))?.data())?;
        for (k, &i) in st.indices.clone().iter().enumerate() {
            let (m, v) = (take(&format!("adam.{tag}.m/{}", names[i]))?, take(&format!("adam.{tag}.v/{}", names[i]))?);
            if m.shape() != st.m[k].shape() || v.shape() != st.v[k].shape() {
                return Err(Error::Corrupt(format!("moment shape mismatch for {}", names[i])));
            }
            st.m[k] = m;
            st.v[k] = v;
        }
        Ok(st)
    };
    let adam_gen = adam("gen", false)?;
    let adam_disc = adam("disc", true)?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Corrupt(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint { params, adam_gen, adam_disc, iteration, rng })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck);
    write_atomic(path, |w| w.write_all(&bytes).map_err(|e| Error::io(path, e)))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
