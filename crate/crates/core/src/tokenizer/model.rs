//! The RQ-VAE tokenizer: fused encoders, residual codebooks and per-modality
//! decoders, with the reconstruction + commitment objective and its exact
//! backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codebook::{AssignmentRule, Codebook};
use super::kmeans::residual_kmeans;
use super::quantize::{assign_codes, quantize, soft_sum, QuantizationTrace};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionConfig, ModalitySpec};
use crate::numerics::matrix::{axpy, cosine, dot, norm, sq_dist};
use crate::numerics::{Activation, Matrix, MlpParams, MlpTape, Params};
use crate::parallel::Exec;
use crate::sid::SemanticId;

/// Per-item inputs, one slice per model modality in declaration order.
pub type ItemInputs<'a> = Vec<&'a [f64]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RqVaeShape {
    /// Codes per level; its length is the number of levels `L`.
    pub codebook_sizes: Vec<usize>,
    /// Quantization dimension `n`.
    pub hidden_dim: usize,
    /// Encoder hidden widths; decoders mirror them.
    pub encoder_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for RqVaeShape {
    fn default() -> Self {
        RqVaeShape {
            codebook_sizes: vec![64, 64, 64],
            hidden_dim: 32,
            encoder_hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    pub fusion: FusionConfig,
    pub codebooks: Vec<Codebook>,
    pub rule: AssignmentRule,
    pub ste: bool,
    /// Weight of the encoder-side commitment term `‖h − sg[C]‖²`.
    pub beta: f64,
    /// Weight of the codebook-side term `‖sg[h] − C‖²`.
    pub codebook_weight: f64,
}

impl Params for TokenizerModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.fusion.tensors();
        t.extend(self.codebooks.iter().map(|c| c.centroids().data()));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.fusion.tensors_mut();
        t.extend(self.codebooks.iter_mut().map(|c| c.centroids_mut().data_mut()));
        t
    }
}

/// Values held constant while differentiating: the code assignment and
/// everything under a stop-gradient, all taken at the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenItem {
    pub codes: Vec<u32>,
    residual_sg: Vec<Vec<f64>>,
    centroid_sg: Vec<Vec<f64>>,
    soft_sg: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub commit: f64,
    /// Unweighted mean reconstruction error per modality.
    pub recon_per_modality: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct LossSums {
    recon_m: Vec<f64>,
    commit: f64,
}

impl LossSums {
    fn add(&mut self, other: LossSums) {
        if self.recon_m.is_empty() {
            self.recon_m = vec![0.0; other.recon_m.len()];
        }
        for (a, b) in self.recon_m.iter_mut().zip(&other.recon_m) {
            *a += b;
        }
        self.commit += other.commit;
    }

    fn finish(self, weights: &[f64], n_items: usize, levels: usize) -> LossParts {
        let n = n_items as f64;
        let recon_per_modality: Vec<f64> = self.recon_m.iter().map(|s| s / n).collect();
        let m = weights.len() as f64;
        let recon = recon_per_modality.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>() / m;
        let commit = self.commit / (n * levels as f64);
        LossParts {
            total: recon + commit,
            recon,
            commit,
            recon_per_modality,
        }
    }
}

impl TokenizerModel {
    pub fn new(
        fusion: FusionConfig,
        codebooks: Vec<Codebook>,
        rule: AssignmentRule,
        ste: bool,
        beta: f64,
    ) -> Result<Self> {
        let model = TokenizerModel {
            fusion,
            codebooks,
            rule,
            ste,
            beta,
            codebook_weight: 1.0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebooks.is_empty() {
            return Err(Error::Config("tokenizer needs at least one codebook".into()));
        }
        let n = self.fusion.hidden_dim();
        for (l, cb) in self.codebooks.iter().enumerate() {
            if cb.level() != l {
                return Err(Error::Config(format!("codebook {l} is tagged with level {}", cb.level())));
            }
            if cb.dim() != n {
                return Err(Error::shape("codebook dim", n, cb.dim()));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config("commitment beta must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Fresh encoders/decoders for the given `(name, dim)` modalities, with
    /// zero placeholder codebooks (seed them with `init_codebooks`).
    pub fn random<R: Rng + ?Sized>(
        modalities: &[(String, usize)],
        shape: &RqVaeShape,
        rule: AssignmentRule,
        ste: bool,
        beta: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let specs = modalities
            .iter()
            .map(|(name, d)| {
                let mut enc_dims = vec![*d];
                enc_dims.extend(&shape.encoder_hidden);
                enc_dims.push(shape.hidden_dim);
                let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
                Ok(ModalitySpec {
                    name: name.clone(),
                    input_dim: *d,
                    encoder: MlpParams::random(&enc_dims, shape.activation, Activation::Identity, rng)?,
                    decoder: MlpParams::random(&dec_dims, shape.activation, Activation::Identity, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fusion = FusionConfig::new(specs, None)?;
        let codebooks = shape
            .codebook_sizes
            .iter()
            .enumerate()
            .map(|(l, &k)| Codebook::new(l, Matrix::zeros(k, shape.hidden_dim)))
            .collect::<Result<Vec<_>>>()?;
        TokenizerModel::new(fusion, codebooks, rule, ste, beta)
    }

    pub fn levels(&self) -> usize {
        self.codebooks.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.codebooks.iter().map(|c| c.size()).collect()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fusion.hidden_dim()
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.fusion.names()
    }

    pub fn encode(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        fusion::fuse_encode(&self.fusion, inputs)
    }

    pub fn quantize(&self, h0: &[f64]) -> Result<(SemanticId, QuantizationTrace)> {
        quantize(&self.codebooks, self.rule, h0)
    }

    pub fn tokenize(&self, inputs: &[&[f64]]) -> Result<SemanticId> {
        let h0 = self.encode(inputs)?;
        Ok(SemanticId::new(assign_codes(&self.codebooks, self.rule, &h0)?.0))
    }

    /// `Dec_m(Σ_l C_l[sid_l])` for every modality.
    pub fn decode(&self, sid: &SemanticId) -> Result<Vec<Vec<f64>>> {
        fusion::multi_decode(&self.fusion, sid, &self.codebooks)
    }

    /// Seeds every codebook with residual K-means over the encoded warmup
    /// items.
    pub fn init_codebooks(&mut self, warmup: &[ItemInputs], seed: u64, iters: usize, exec: Exec) -> Result<()> {
        let k_max = self.shape().into_iter().max().unwrap_or(0);
        if warmup.len() < k_max {
            return Err(Error::Data(format!(
                "warmup batch has {} rows, need at least {k_max}",
                warmup.len()
            )));
        }
        let encoded = exec.map(warmup, |x| self.encode(x));
        let rows = encoded.into_iter().collect::<Result<Vec<_>>>()?;
        let data = Matrix::from_rows(&rows)?;
        let sizes = self.shape();
        let nonzero = self.rule != AssignmentRule::L2;
        self.codebooks = residual_kmeans(&data, &sizes, iters, seed, nonzero, exec)?;
        Ok(())
    }

    pub fn freeze(&self, inputs: &ItemInputs) -> Result<FrozenItem> {
        let h0 = self.encode(inputs)?;
        let (codes, _) = assign_codes(&self.codebooks, self.rule, &h0)?;
        let mut r = h0;
        let mut residual_sg = Vec::with_capacity(self.levels());
        let mut centroid_sg = Vec::with_capacity(self.levels());
        let mut soft_sg = Vec::new();
        for (cb, &code) in self.codebooks.iter().zip(&codes) {
            let c = cb.centroid(code as usize);
            if self.ste {
                let sims: Vec<f64> = (0..cb.size()).map(|k| cosine(&r, cb.centroid(k))).collect();
                soft_sg.push(soft_sum(cb, &sims));
            }
            centroid_sg.push(c.to_vec());
            let next: Vec<f64> = r.iter().zip(c).map(|(a, b)| a - b).collect();
            residual_sg.push(std::mem::replace(&mut r, next));
        }
        Ok(FrozenItem {
            codes,
            residual_sg,
            centroid_sg,
            soft_sg,
        })
    }

    /// One item's loss terms; with `grads`, also accumulates that item's
    /// gradient contribution (already divided by the batch normalisers).
    fn item_pass(
        &self,
        x: &ItemInputs,
        frozen: Option<&FrozenItem>,
        n_items: usize,
        grads: Option<&mut TokenizerModel>,
    ) -> Result<LossSums> {
        let specs = self.fusion.modalities();
        let n = self.hidden_dim();
        let levels = self.levels();
        if x.len() != specs.len() {
            let name = specs.get(x.len()).map_or("<extra>", |m| m.name.as_str());
            return Err(Error::MissingModality(name.to_string()));
        }

        let tapes: Vec<MlpTape> = specs
            .iter()
            .zip(x)
            .map(|(m, xi)| m.encoder.forward_tape(xi))
            .collect::<Result<_>>()?;
        let mut h0 = vec![0.0; n];
        for &m in self.fusion.sum_order() {
            for (a, b) in h0.iter_mut().zip(tapes[m].output()) {
                *a += b;
            }
        }

        let codes = match frozen {
            Some(f) => f.codes.clone(),
            None => assign_codes(&self.codebooks, self.rule, &h0)?.0,
        };
        let mut residuals = Vec::with_capacity(levels);
        let mut r = h0;
        for (cb, &code) in self.codebooks.iter().zip(&codes) {
            let next: Vec<f64> = r.iter().zip(cb.centroid(code as usize)).map(|(a, b)| a - b).collect();
            residuals.push(std::mem::replace(&mut r, next));
        }

        let mut z = vec![0.0; n];
        for (cb, &code) in self.codebooks.iter().zip(&codes) {
            for (a, b) in z.iter_mut().zip(cb.centroid(code as usize)) {
                *a += b;
            }
        }
        let mut sims: Vec<Vec<f64>> = Vec::new();
        if self.ste {
            for (l, cb) in self.codebooks.iter().enumerate() {
                let s: Vec<f64> = (0..cb.size()).map(|k| cosine(&residuals[l], cb.centroid(k))).collect();
                if let Some(f) = frozen {
                    let soft = soft_sum(cb, &s);
                    for ((a, t), t0) in z.iter_mut().zip(&soft).zip(&f.soft_sg[l]) {
                        *a += t - t0;
                    }
                }
                sims.push(s);
            }
        }

        let dec_tapes: Vec<MlpTape> = specs.iter().map(|m| m.decoder.forward_tape(&z)).collect::<Result<_>>()?;
        let recon_m: Vec<f64> = dec_tapes.iter().zip(x).map(|(t, xi)| sq_dist(t.output(), xi)).collect();

        let mut commit = 0.0;
        for l in 0..levels {
            let c = self.codebooks[l].centroid(codes[l] as usize);
            let (r_sg, c_sg) = match frozen {
                Some(f) => (f.residual_sg[l].as_slice(), f.centroid_sg[l].as_slice()),
                None => (residuals[l].as_slice(), c),
            };
            commit += self.codebook_weight * sq_dist(r_sg, c) + self.beta * sq_dist(&residuals[l], c_sg);
        }

        let sums = LossSums { recon_m, commit };
        if !(sums.commit.is_finite() && sums.recon_m.iter().all(|v| v.is_finite())) {
            return Err(Error::Numerical("non-finite RQ-VAE loss term".into()));
        }

        let Some(grads) = grads else {
            return Ok(sums);
        };

        let recon_scale = 1.0 / (n_items * specs.len()) as f64;
        let commit_scale = 1.0 / (n_items * levels) as f64;

        let mut dz = vec![0.0; n];
        for (m, spec) in specs.iter().enumerate() {
            let w = self.fusion.weights()[m] * recon_scale * 2.0;
            let dy: Vec<f64> = dec_tapes[m].output().iter().zip(x[m]).map(|(y, xi)| w * (y - xi)).collect();
            let g = &mut grads.fusion.modalities_mut()[m].decoder;
            let dzm = spec.decoder.backward(&dec_tapes[m], &dy, g);
            for (a, b) in dz.iter_mut().zip(&dzm) {
                *a += b;
            }
        }

        let mut dres = vec![vec![0.0; n]; levels];
        for (l, &code) in codes.iter().enumerate() {
            axpy(1.0, &dz, grads.codebooks[l].centroid_mut(code as usize));
        }

        if self.ste {
            for (l, cb) in self.codebooks.iter().enumerate() {
                let r = &residuals[l];
                let nr = norm(r);
                for k in 0..cb.size() {
                    let c = cb.centroid(k);
                    let s = sims[l][k];
                    let nc = norm(c);
                    let gk = grads.codebooks[l].centroid_mut(k);
                    axpy(s, &dz, gk);
                    if nr == 0.0 || nc == 0.0 {
                        continue;
                    }
                    // φ = Σ_k s_k (C_k · dz); ∂s/∂c = r/(|r||c|) − s c/|c|², ∂s/∂r = c/(|r||c|) − s r/|r|²
                    let proj = dot(c, &dz);
                    axpy(proj / (nr * nc), r, gk);
                    axpy(-proj * s / (nc * nc), c, gk);
                    axpy(proj / (nr * nc), c, &mut dres[l]);
                    axpy(-proj * s / (nr * nr), r, &mut dres[l]);
                }
            }
        }

        for l in 0..levels {
            let code = codes[l] as usize;
            let c = self.codebooks[l].centroid(code).to_vec();
            let (r_sg, c_sg) = match frozen {
                Some(f) => (f.residual_sg[l].clone(), f.centroid_sg[l].clone()),
                None => (residuals[l].clone(), c.clone()),
            };
            let gc = grads.codebooks[l].centroid_mut(code);
            let a = 2.0 * self.codebook_weight * commit_scale;
            for ((g, ci), ri) in gc.iter_mut().zip(&c).zip(&r_sg) {
                *g += a * (ci - ri);
            }
            let b = 2.0 * self.beta * commit_scale;
            for ((d, ri), ci) in dres[l].iter_mut().zip(&residuals[l]).zip(&c_sg) {
                *d += b * (ri - ci);
            }
        }

        // r_l = h0 − Σ_{k<l} C_k[code_k]
        let mut suffix = vec![0.0; n];
        for k in (0..levels).rev() {
            axpy(-1.0, &suffix, grads.codebooks[k].centroid_mut(codes[k] as usize));
            axpy(1.0, &dres[k], &mut suffix);
        }
        for (m, spec) in specs.iter().enumerate() {
            let g = &mut grads.fusion.modalities_mut()[m].encoder;
            spec.encoder.backward(&tapes[m], &suffix, g);
        }
        Ok(sums)
    }

    fn check_batch(&self, batch: &[ItemInputs]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Data("RQ-VAE loss on an empty batch".into()));
        }
        Ok(())
    }

    fn tag_item<T>(res: Result<T>, index: usize) -> Result<T> {
        res.map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("item {index}: {msg}")),
            other => other,
        })
    }

    /// Loss with assignments and stop-gradient values held at `frozen`.
    /// Equal to `rqvae_loss` when `frozen` was taken at the current parameters.
    pub fn surrogate_loss(&self, batch: &[ItemInputs], frozen: &[FrozenItem]) -> Result<LossParts> {
        self.check_batch(batch)?;
        if frozen.len() != batch.len() {
            return Err(Error::shape("frozen state", batch.len(), frozen.len()));
        }
        let mut sums = LossSums::default();
        for (i, (x, f)) in batch.iter().zip(frozen).enumerate() {
            sums.add(Self::tag_item(self.item_pass(x, Some(f), batch.len(), None), i)?);
        }
        Ok(sums.finish(self.fusion.weights(), batch.len(), self.levels()))
    }

    pub fn rqvae_loss(&self, batch: &[ItemInputs]) -> Result<LossParts> {
        self.check_batch(batch)?;
        let mut sums = LossSums::default();
        for (i, x) in batch.iter().enumerate() {
            sums.add(Self::tag_item(self.item_pass(x, None, batch.len(), None), i)?);
        }
        Ok(sums.finish(self.fusion.weights(), batch.len(), self.levels()))
    }

    /// Loss and its gradient. Items are processed in fixed chunks and the
    /// partial gradients summed in chunk order, so the result does not
    /// depend on `exec`.
    pub fn loss_and_grad(&self, batch: &[ItemInputs], exec: Exec) -> Result<(LossParts, TokenizerModel)> {
        self.check_batch(batch)?;
        let n_items = batch.len();
        let indexed: Vec<(usize, &ItemInputs)> = batch.iter().enumerate().collect();
        let reduced = exec.chunked_reduce(
            &indexed,
            |chunk| -> Result<(LossSums, TokenizerModel)> {
                let mut g = self.zeros_like();
                let mut sums = LossSums::default();
                for (i, x) in chunk {
                    sums.add(Self::tag_item(self.item_pass(x, None, n_items, Some(&mut g)), *i)?);
                }
                Ok((sums, g))
            },
            |acc, part| {
                if let (Ok((s, g)), Ok((ps, pg))) = (acc.as_mut(), &part) {
                    s.add(ps.clone());
                    g.accumulate(pg);
                }
                if acc.is_ok() {
                    if let Err(e) = part {
                        *acc = Err(e);
                    }
                }
            },
        );
        let (sums, grads) = reduced.expect("batch is non-empty")?;
        Ok((sums.finish(self.fusion.weights(), n_items, self.levels()), grads))
    }

    /// Gradient of the frozen surrogate; identical to `loss_and_grad` when
    /// `frozen` matches the current parameters.
    pub fn surrogate_grad(&self, batch: &[ItemInputs], frozen: &[FrozenItem]) -> Result<(LossParts, TokenizerModel)> {
        self.check_batch(batch)?;
        let mut g = self.zeros_like();
        let mut sums = LossSums::default();
        for (i, (x, f)) in batch.iter().zip(frozen).enumerate() {
            sums.add(Self::tag_item(self.item_pass(x, Some(f), batch.len(), Some(&mut g)), i)?);
        }
        Ok((sums.finish(self.fusion.weights(), batch.len(), self.levels()), g))
    }
}
