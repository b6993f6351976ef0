//! Versioned binary serialization for backends.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   7 bytes  "GLODDN1"
//! kind    u8       1 = mixture spec, 2 = toy MLP
//! payload          kind-specific, see below
//! ```
//!
//! Mixture payload: u32 h, w, c, k; then per component f64 weight, f64 var,
//! h*w*c f64 mean values (row-major, channel fastest); then u32 map length
//! and per entry a condition followed by u32 subset length and u32 indices.
//!
//! Toy payload: u32 h, w, c, num_steps, hidden; then w1, b1, w2, b2, w3, b3
//! as flat f64 runs (row-major); then u32 embedding count and per entry a
//! condition followed by `hidden` f64 values.
//!
//! Conditions encode as u8 tag (0 = null, 1 = token), and for tokens
//! u16 category, u16 attr count, u16 attrs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::error::{GlodError, Result};
use crate::grid::Grid;

use super::toy::{ToyDenoiser, TIME_FEATURES};
use super::{Condition, MixtureComponent, MixtureSpec};

const MAGIC: &[u8; 7] = b"GLODDN1";
const KIND_MIXTURE: u8 = 1;
const KIND_TOY: u8 = 2;

fn write_condition(w: &mut impl Write, c: &Condition) -> Result<()> {
    match c {
        Condition::Null => w.write_u8(0)?,
        Condition::Token { category, attrs } => {
            w.write_u8(1)?;
            w.write_u16::<LittleEndian>(*category)?;
            w.write_u16::<LittleEndian>(attrs.len() as u16)?;
            for a in attrs {
                w.write_u16::<LittleEndian>(*a)?;
            }
        }
    }
    Ok(())
}

fn read_condition(r: &mut impl Read) -> Result<Condition> {
    match r.read_u8()? {
        0 => Ok(Condition::Null),
        1 => {
            let category = r.read_u16::<LittleEndian>()?;
            let n = r.read_u16::<LittleEndian>()? as usize;
            let mut attrs = Vec::with_capacity(n);
            for _ in 0..n {
                attrs.push(r.read_u16::<LittleEndian>()?);
            }
            Ok(Condition::Token { category, attrs })
        }
        tag => Err(GlodError::Parse(format!("bad condition tag {tag}"))),
    }
}

fn write_f64s<'a>(w: &mut impl Write, vals: impl Iterator<Item = &'a f64>) -> Result<()> {
    for v in vals {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(out)
}

fn check_magic(r: &mut impl Read, expect_kind: u8) -> Result<()> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GlodError::Parse("bad magic; not a GLODDN1 file".into()));
    }
    let kind = r.read_u8()?;
    if kind != expect_kind {
        return Err(GlodError::Parse(format!(
            "wrong payload kind {kind}, expected {expect_kind}"
        )));
    }
    Ok(())
}

pub fn save_mixture(spec: &MixtureSpec, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u8(KIND_MIXTURE)?;
    let (h, wd, c) = spec.shape();
    for v in [h, wd, c, spec.components.len()] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    for comp in &spec.components {
        w.write_f64::<LittleEndian>(comp.weight)?;
        w.write_f64::<LittleEndian>(comp.var)?;
        write_f64s(&mut w, comp.mean.iter())?;
    }
    w.write_u32::<LittleEndian>(spec.condition_map.len() as u32)?;
    for (cond, subset) in &spec.condition_map {
        write_condition(&mut w, cond)?;
        w.write_u32::<LittleEndian>(subset.len() as u32)?;
        for &i in subset {
            w.write_u32::<LittleEndian>(i as u32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_mixture(path: &Path) -> Result<MixtureSpec> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, KIND_MIXTURE)?;
    let h = r.read_u32::<LittleEndian>()? as usize;
    let w = r.read_u32::<LittleEndian>()? as usize;
    let c = r.read_u32::<LittleEndian>()? as usize;
    let k = r.read_u32::<LittleEndian>()? as usize;
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let weight = r.read_f64::<LittleEndian>()?;
        let var = r.read_f64::<LittleEndian>()?;
        let mean = Grid::from_shape_vec((h, w, c), read_f64s(&mut r, h * w * c)?)
            .map_err(|e| GlodError::Parse(e.to_string()))?;
        components.push(MixtureComponent { weight, mean, var });
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut map = BTreeMap::new();
    for _ in 0..n {
        let cond = read_condition(&mut r)?;
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut subset = Vec::with_capacity(len);
        for _ in 0..len {
            subset.push(r.read_u32::<LittleEndian>()? as usize);
        }
        map.insert(cond, subset);
    }
    MixtureSpec::new(components, map)
}

pub fn save_toy(net: &ToyDenoiser, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u8(KIND_TOY)?;
    let (h, wd, c) = net.shape();
    let hidden = net.b1.len();
    for v in [h, wd, c, net.num_steps, hidden] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    for arr in [&net.w1, &net.w2, &net.w3] {
        write_f64s(&mut w, arr.iter())?;
    }
    for arr in [&net.b1, &net.b2, &net.b3] {
        write_f64s(&mut w, arr.iter())?;
    }
    w.write_u32::<LittleEndian>(net.embeddings.len() as u32)?;
    for (cond, e) in &net.embeddings {
        write_condition(&mut w, cond)?;
        write_f64s(&mut w, e.iter())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_toy(path: &Path) -> Result<ToyDenoiser> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, KIND_TOY)?;
    let h = r.read_u32::<LittleEndian>()? as usize;
    let w = r.read_u32::<LittleEndian>()? as usize;
    let c = r.read_u32::<LittleEndian>()? as usize;
    let num_steps = r.read_u32::<LittleEndian>()? as usize;
    let hidden = r.read_u32::<LittleEndian>()? as usize;
    let din = h * w * c + TIME_FEATURES;
    let dout = h * w * c;
    let shape_err = |e: ndarray::ShapeError| GlodError::Parse(e.to_string());
    let w1 = Array2::from_shape_vec((hidden, din), read_f64s(&mut r, hidden * din)?)
        .map_err(shape_err)?;
    let w2 = Array2::from_shape_vec((hidden, hidden), read_f64s(&mut r, hidden * hidden)?)
        .map_err(shape_err)?;
    let w3 = Array2::from_shape_vec((dout, hidden), read_f64s(&mut r, dout * hidden)?)
        .map_err(shape_err)?;
    let b1 = Array1::from_vec(read_f64s(&mut r, hidden)?);
    let b2 = Array1::from_vec(read_f64s(&mut r, hidden)?);
    let b3 = Array1::from_vec(read_f64s(&mut r, dout)?);
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut embeddings = BTreeMap::new();
    for _ in 0..n {
        let cond = read_condition(&mut r)?;
        embeddings.insert(cond, Array1::from_vec(read_f64s(&mut r, hidden)?));
    }
    Ok(ToyDenoiser {
        height: h,
        width: w,
        channels: c,
        num_steps,
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        embeddings,
    })
}
