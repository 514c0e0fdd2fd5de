//! Self-describing binary checkpoint for tokenizers.
//!
//! Layout (little-endian): `"SIDF"`, version `u32`, kind `u8`
//! (0 = RQ-VAE, 1 = residual K-means), rule tag `u8`, flags `u32`
//! (bit 0 = STE), beta `f64`, codebook weight `f64`, `n: u32`, `L: u32`,
//! `K_l: u32` × L, modality count `u32`, then per modality its name
//! (`u32` length + UTF-8), input dim `u32`, reconstruction weight `f64` and,
//! for RQ-VAE, the encoder and decoder layer tables (`u32` count, then
//! `in: u32, out: u32, activation: u8` per layer). All `f64` tensors follow
//! in declaration order: per modality the encoder then decoder weights and
//! biases, then the codebooks.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::codebook::{AssignmentRule, Codebook};
use super::model::TokenizerModel;
use super::{RqKmeansModel, Tokenizer};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, ModalitySpec};
use crate::numerics::{Activation, Dense, Matrix, MlpParams};

pub const MAGIC: &[u8; 4] = b"SIDF";
pub const VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 24;

fn write_layers<W: Write>(w: &mut W, mlp: &MlpParams) -> Result<()> {
    w.write_u32::<LE>(mlp.layers().len() as u32)?;
    for l in mlp.layers() {
        w.write_u32::<LE>(l.in_dim() as u32)?;
        w.write_u32::<LE>(l.out_dim() as u32)?;
        w.write_u8(l.activation.tag())?;
    }
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn write_mlp_tensors<W: Write>(w: &mut W, mlp: &MlpParams) -> Result<()> {
    for l in mlp.layers() {
        write_f64s(w, l.weight.data())?;
        write_f64s(w, &l.bias)?;
    }
    Ok(())
}

pub fn write_tokenizer<W: Write>(w: &mut W, tok: &Tokenizer) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    let (kind, rule, flags, beta, cw) = match tok {
        Tokenizer::RqVae(m) => (0u8, m.rule, m.ste as u32, m.beta, m.codebook_weight),
        Tokenizer::RqKmeans(_) => (1u8, AssignmentRule::L2, 0, 0.0, 0.0),
    };
    w.write_u8(kind)?;
    w.write_u8(rule.tag())?;
    w.write_u32::<LE>(flags)?;
    w.write_f64::<LE>(beta)?;
    w.write_f64::<LE>(cw)?;
    let books = tok.codebooks();
    w.write_u32::<LE>(books[0].dim() as u32)?;
    w.write_u32::<LE>(books.len() as u32)?;
    for b in books {
        w.write_u32::<LE>(b.size() as u32)?;
    }
    match tok {
        Tokenizer::RqVae(m) => {
            let specs = m.fusion.modalities();
            w.write_u32::<LE>(specs.len() as u32)?;
            for (spec, weight) in specs.iter().zip(m.fusion.weights()) {
                w.write_u32::<LE>(spec.name.len() as u32)?;
                w.write_all(spec.name.as_bytes())?;
                w.write_u32::<LE>(spec.input_dim as u32)?;
                w.write_f64::<LE>(*weight)?;
                write_layers(w, &spec.encoder)?;
                write_layers(w, &spec.decoder)?;
            }
            for spec in specs {
                write_mlp_tensors(w, &spec.encoder)?;
                write_mlp_tensors(w, &spec.decoder)?;
            }
        }
        Tokenizer::RqKmeans(m) => {
            w.write_u32::<LE>(m.modalities.len() as u32)?;
            for (name, d) in &m.modalities {
                w.write_u32::<LE>(name.len() as u32)?;
                w.write_all(name.as_bytes())?;
                w.write_u32::<LE>(*d as u32)?;
                w.write_f64::<LE>(1.0)?;
            }
        }
    }
    for b in books {
        write_f64s(w, b.centroids().data())?;
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Data(format!("invalid tokenizer checkpoint: {}", msg.into()))
}

fn read_dim<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = r.read_u32::<LE>()?;
    if v == 0 || v > MAX_DIM {
        return Err(bad(format!("{what} = {v} out of range")));
    }
    Ok(v as usize)
}

fn read_layer_table<R: Read>(r: &mut R) -> Result<Vec<(usize, usize, Activation)>> {
    let count = read_dim(r, "layer count")?;
    (0..count)
        .map(|_| {
            let i = read_dim(r, "layer in")?;
            let o = read_dim(r, "layer out")?;
            let act = Activation::from_tag(r.read_u8()?).ok_or_else(|| bad("unknown activation tag"))?;
            Ok((i, o, act))
        })
        .collect()
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

fn read_mlp<R: Read>(r: &mut R, table: &[(usize, usize, Activation)]) -> Result<MlpParams> {
    let layers = table
        .iter()
        .map(|&(i, o, act)| {
            Ok(Dense {
                weight: Matrix::from_vec(i, o, read_f64s(r, i * o)?)?,
                bias: read_f64s(r, o)?,
                activation: act,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MlpParams::new(layers)
}

pub fn read_tokenizer<R: Read>(r: &mut R) -> Result<Tokenizer> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = r.read_u8()?;
    let rule = AssignmentRule::from_tag(r.read_u8()?).ok_or_else(|| bad("unknown rule tag"))?;
    let flags = r.read_u32::<LE>()?;
    let beta = r.read_f64::<LE>()?;
    let cw = r.read_f64::<LE>()?;
    let n = read_dim(r, "n")?;
    let levels = read_dim(r, "L")?;
    let sizes: Vec<usize> = (0..levels).map(|_| read_dim(r, "K")).collect::<Result<_>>()?;
    let m = read_dim(r, "modality count")?;
    let mut heads = Vec::with_capacity(m);
    for _ in 0..m {
        let len = read_dim(r, "name length")?;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let name = String::from_utf8(buf).map_err(|_| bad("modality name is not UTF-8"))?;
        let d = read_dim(r, "modality dim")?;
        let weight = r.read_f64::<LE>()?;
        let tables = if kind == 0 {
            Some((read_layer_table(r)?, read_layer_table(r)?))
        } else {
            None
        };
        heads.push((name, d, weight, tables));
    }
    let tok = match kind {
        0 => {
            let mut specs = Vec::with_capacity(m);
            let mut weights = Vec::with_capacity(m);
            for (name, d, weight, tables) in heads {
                let (enc_t, dec_t) = tables.expect("RQ-VAE heads carry layer tables");
                let encoder = read_mlp(r, &enc_t)?;
                let decoder = read_mlp(r, &dec_t)?;
                specs.push(ModalitySpec {
                    name,
                    input_dim: d,
                    encoder,
                    decoder,
                });
                weights.push(weight);
            }
            let fusion = FusionConfig::new(specs, Some(weights))?;
            let codebooks = read_codebooks(r, &sizes, n)?;
            let mut model = TokenizerModel::new(fusion, codebooks, rule, flags & 1 == 1, beta)?;
            model.codebook_weight = cw;
            Tokenizer::RqVae(model)
        }
        1 => Tokenizer::RqKmeans(RqKmeansModel {
            modalities: heads.into_iter().map(|(name, d, _, _)| (name, d)).collect(),
            codebooks: read_codebooks(r, &sizes, n)?,
        }),
        other => return Err(bad(format!("unknown tokenizer kind {other}"))),
    };
    Ok(tok)
}

fn read_codebooks<R: Read>(r: &mut R, sizes: &[usize], n: usize) -> Result<Vec<Codebook>> {
    sizes
        .iter()
        .enumerate()
        .map(|(l, &k)| Codebook::new(l, Matrix::from_vec(k, n, read_f64s(r, k * n)?)?))
        .collect()
}

pub fn save(path: &Path, tok: &Tokenizer) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tokenizer(&mut w, tok)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tokenizer> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tokenizer(&mut r)
}
