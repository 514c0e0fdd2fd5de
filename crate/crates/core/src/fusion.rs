//! Multi-source input fusion: per-modality encoders summed into one
//! representation, and per-modality decoders reading the shared quantized
//! code.

use std::collections::HashSet;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::numerics::{MlpParams, Params};
use crate::parallel::Exec;
use crate::sid::SemanticId;
use crate::tokenizer::Codebook;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySpec {
    pub name: String,
    pub input_dim: usize,
    pub encoder: MlpParams,
    pub decoder: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    modalities: Vec<ModalitySpec>,
    weights: Vec<f64>,
    /// Indices into `modalities` sorted by name; sums run in this order so the
    /// fused vector does not depend on declaration order.
    sum_order: Vec<usize>,
}

impl FusionConfig {
    /// `weights` defaults to 1.0 per modality when `None`.
    pub fn new(modalities: Vec<ModalitySpec>, weights: Option<Vec<f64>>) -> Result<Self> {
        let first = modalities
            .first()
            .ok_or_else(|| Error::Config("fusion needs at least one modality".into()))?;
        let n = first.encoder.output_dim();
        let mut names = HashSet::new();
        for m in &modalities {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate modality `{}`", m.name)));
            }
            if m.encoder.input_dim() != m.input_dim {
                return Err(Error::shape("encoder input dim", m.input_dim, m.encoder.input_dim()));
            }
            if m.encoder.output_dim() != n {
                return Err(Error::shape("encoder output dim", n, m.encoder.output_dim()));
            }
            if m.decoder.input_dim() != n {
                return Err(Error::shape("decoder input dim", n, m.decoder.input_dim()));
            }
            if m.decoder.output_dim() != m.input_dim {
                return Err(Error::shape("decoder output dim", m.input_dim, m.decoder.output_dim()));
            }
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; modalities.len()]);
        if weights.len() != modalities.len() {
            return Err(Error::shape("fusion weights", modalities.len(), weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("reconstruction weights must be finite and non-negative".into()));
        }
        let mut sum_order: Vec<usize> = (0..modalities.len()).collect();
        sum_order.sort_by(|&a, &b| modalities[a].name.cmp(&modalities[b].name));
        Ok(FusionConfig {
            modalities,
            weights,
            sum_order,
        })
    }

    pub fn modalities(&self) -> &[ModalitySpec] {
        &self.modalities
    }

    pub fn modalities_mut(&mut self) -> &mut [ModalitySpec] {
        &mut self.modalities
    }

    pub fn names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.name.clone()).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn hidden_dim(&self) -> usize {
        self.modalities[0].encoder.output_dim()
    }

    pub(crate) fn sum_order(&self) -> &[usize] {
        &self.sum_order
    }

    fn check_inputs(&self, inputs: &[&[f64]]) -> Result<()> {
        if inputs.len() != self.modalities.len() {
            let missing = self
                .modalities
                .get(inputs.len())
                .map_or_else(|| "<extra input>".to_string(), |m| m.name.clone());
            return Err(Error::MissingModality(missing));
        }
        for (m, x) in self.modalities.iter().zip(inputs) {
            if x.len() != m.input_dim {
                return Err(Error::shape("modality input dim", m.input_dim, x.len()));
            }
        }
        Ok(())
    }
}

impl Params for FusionConfig {
    fn tensors(&self) -> Vec<&[f64]> {
        self.modalities
            .iter()
            .flat_map(|m| {
                let mut t = m.encoder.tensors();
                t.extend(m.decoder.tensors());
                t
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.modalities
            .iter_mut()
            .flat_map(|m| {
                let mut t = m.encoder.tensors_mut();
                t.extend(m.decoder.tensors_mut());
                t
            })
            .collect()
    }
}

/// Sum of per-modality encoder outputs. `inputs` follows the config's
/// declaration order.
pub fn fuse_encode(config: &FusionConfig, inputs: &[&[f64]]) -> Result<Vec<f64>> {
    config.check_inputs(inputs)?;
    let mut h = vec![0.0; config.hidden_dim()];
    for &m in config.sum_order() {
        let out = config.modalities[m].encoder.forward(inputs[m])?;
        for (a, b) in h.iter_mut().zip(&out) {
            *a += b;
        }
    }
    Ok(h)
}

/// Like `fuse_encode` but with inputs looked up by modality name.
pub fn fuse_encode_named(config: &FusionConfig, inputs: &[(&str, &[f64])]) -> Result<Vec<f64>> {
    let ordered: Vec<&[f64]> = config
        .modalities
        .iter()
        .map(|m| {
            inputs
                .iter()
                .find(|(n, _)| *n == m.name)
                .map(|(_, x)| *x)
                .ok_or_else(|| Error::MissingModality(m.name.clone()))
        })
        .collect::<Result<_>>()?;
    fuse_encode(config, &ordered)
}

/// Σ_l C_l[sid_l], summed from level 0 upwards.
pub fn quantized_sum(sid: &SemanticId, codebooks: &[Codebook]) -> Result<Vec<f64>> {
    let shape: Vec<usize> = codebooks.iter().map(|c| c.size()).collect();
    sid.validate(&shape)?;
    let n = codebooks.first().map_or(0, |c| c.dim());
    let mut z = vec![0.0; n];
    for (cb, &code) in codebooks.iter().zip(&sid.codes) {
        for (a, b) in z.iter_mut().zip(cb.centroid(code as usize)) {
            *a += b;
        }
    }
    Ok(z)
}

/// One reconstruction per modality, all decoded from the same quantized sum.
pub fn multi_decode(config: &FusionConfig, sid: &SemanticId, codebooks: &[Codebook]) -> Result<Vec<Vec<f64>>> {
    let z = quantized_sum(sid, codebooks)?;
    config
        .modalities
        .iter()
        .map(|m| m.decoder.forward(&z))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStats {
    pub name: String,
    /// Per-dimension sample variance (n − 1 denominator).
    pub per_dim: Vec<f64>,
    /// Trace of the sample covariance, i.e. the sum of `per_dim`.
    pub trace: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub modalities: Vec<VarianceStats>,
    pub fused: VarianceStats,
}

fn variance_stats(name: &str, rows: &[Vec<f64>]) -> VarianceStats {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n - 1.0);
    VarianceStats {
        name: name.to_string(),
        trace: var.iter().sum(),
        per_dim: var,
    }
}

/// Variance of each encoder output over the corpus and of their fused sum.
pub fn input_variance_report(corpus: &Corpus, config: &FusionConfig, exec: Exec) -> Result<VarianceReport> {
    if corpus.len() < 2 {
        return Err(Error::UndefinedMetric("variance needs at least two items"));
    }
    let names = config.names();
    let encoded: Vec<Result<Vec<Vec<f64>>>> = exec.map(corpus.records(), |r| {
        let inputs = corpus.inputs(r, &names)?;
        config
            .modalities
            .iter()
            .zip(&inputs)
            .map(|(m, x)| m.encoder.forward(x))
            .collect()
    });
    let encoded: Vec<Vec<Vec<f64>>> = encoded.into_iter().collect::<Result<_>>()?;

    let modalities = config
        .modalities
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let rows: Vec<Vec<f64>> = encoded.iter().map(|e| e[mi].clone()).collect();
            variance_stats(&m.name, &rows)
        })
        .collect();
    let fused_rows: Vec<Vec<f64>> = encoded
        .iter()
        .map(|e| {
            let mut h = vec![0.0; config.hidden_dim()];
            for &m in config.sum_order() {
                for (a, b) in h.iter_mut().zip(&e[m]) {
                    *a += b;
                }
            }
            h
        })
        .collect();
    Ok(VarianceReport {
        modalities,
        fused: variance_stats("fused", &fused_rows),
    })
}
