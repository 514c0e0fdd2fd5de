//! Binary checkpoint for [`GrModel`].
//!
//! Layout (little-endian): `"SIDG"`, version `u32`, `L: u32`, `K_l: u32` × L,
//! width, heads, layers, feed-forward width and max history as `u32`, then
//! every parameter tensor as `f64` in declaration order.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{GrModel, GrShape};
use super::vocab::SidVocabulary;
use crate::error::{Error, Result};
use crate::numerics::Params;

pub const MAGIC: &[u8; 4] = b"SIDG";
pub const VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 20;

fn bad(msg: impl Into<String>) -> Error {
    Error::Data(format!("invalid GR checkpoint: {}", msg.into()))
}

pub fn write_model<W: Write>(w: &mut W, model: &GrModel) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    let shape = model.vocab().shape();
    w.write_u32::<LE>(shape.len() as u32)?;
    for &k in shape {
        w.write_u32::<LE>(k as u32)?;
    }
    let s = model.shape();
    for v in [s.width, s.heads, s.layers, s.ffn_width, s.max_history] {
        w.write_u32::<LE>(v as u32)?;
    }
    for t in model.tensors() {
        for &x in t {
            w.write_f64::<LE>(x)?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<GrModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut dim = || -> Result<usize> {
        let v = r.read_u32::<LE>()?;
        if v > MAX_DIM {
            return Err(bad(format!("dimension {v} out of range")));
        }
        Ok(v as usize)
    };
    let levels = dim()?;
    let sizes = (0..levels).map(|_| dim()).collect::<Result<Vec<_>>>()?;
    let shape = GrShape {
        width: dim()?,
        heads: dim()?,
        layers: dim()?,
        ffn_width: dim()?,
        max_history: dim()?,
    };
    let vocab = SidVocabulary::new(&sizes).map_err(|e| bad(e.to_string()))?;
    // Parameters are overwritten below; the seed only fixes the allocation.
    let mut model = GrModel::new(vocab, shape, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| bad(e.to_string()))?;
    for t in model.tensors_mut() {
        r.read_f64_into::<LE>(t)?;
    }
    if !model.all_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &GrModel) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GrModel> {
    read_model(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
