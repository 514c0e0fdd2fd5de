//! Attention-over-history decoder for next-SID generation.
//!
//! Each history item is embedded as the sum of its code-token embeddings plus
//! a recency embedding. Generating level `t` starts from the begin token, a
//! step embedding and the tokens already generated, then passes through
//! `layers` blocks of multi-head attention over the history items followed by
//! a ReLU feed-forward layer, both residual. A per-level head scores the
//! codes of level `t`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::SidVocabulary;
use super::Example;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Params};
use crate::parallel::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrShape {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_width: usize,
    /// History items visible to the model.
    pub max_history: usize,
}

impl Default for GrShape {
    fn default() -> Self {
        GrShape {
            width: 128,
            heads: 4,
            layers: 2,
            ffn_width: 256,
            max_history: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrModel {
    shape: GrShape,
    vocab: SidVocabulary,
    embed: Matrix,
    recency: Matrix,
    step: Matrix,
    blocks: Vec<Block>,
    heads_out: Vec<(Matrix, Vec<f64>)>,
}

impl Params for GrModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = vec![self.embed.data(), self.recency.data(), self.step.data()];
        for b in &self.blocks {
            t.extend([b.wq.data(), b.wk.data(), b.wv.data(), b.wo.data(), b.w1.data()]);
            t.extend([b.b1.as_slice(), b.w2.data(), b.b2.as_slice()]);
        }
        for (w, bias) in &self.heads_out {
            t.push(w.data());
            t.push(bias);
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = vec![self.embed.data_mut(), self.recency.data_mut(), self.step.data_mut()];
        for b in &mut self.blocks {
            t.push(b.wq.data_mut());
            t.push(b.wk.data_mut());
            t.push(b.wv.data_mut());
            t.push(b.wo.data_mut());
            t.push(b.w1.data_mut());
            t.push(&mut b.b1);
            t.push(b.w2.data_mut());
            t.push(&mut b.b2);
        }
        for (w, bias) in &mut self.heads_out {
            t.push(w.data_mut());
            t.push(bias);
        }
        t
    }
}

/// `x · W` for a row vector `x`.
fn vm(x: &[f64], w: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wij;
        }
    }
    out
}

/// `W · dy`, the input gradient of `vm`.
fn mv(w: &Matrix, dy: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|i| w.row(i).iter().zip(dy).map(|(a, b)| a * b).sum()).collect()
}

/// `dW += x ⊗ dy`.
fn outer_acc(dw: &mut Matrix, x: &[f64], dy: &[f64]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (g, d) in dw.row_mut(i).iter_mut().zip(dy) {
            *g += xi * d;
        }
    }
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|v| v - z).collect()
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// History memory shared by every decoding step of one example.
pub struct GrContext<'a> {
    model: &'a GrModel,
    /// Token ids of each visible history item, oldest first.
    items: Vec<Vec<usize>>,
    memory: Matrix,
    keys: Vec<Matrix>,
    values: Vec<Matrix>,
}

struct BlockCache {
    x: Vec<f64>,
    q: Vec<f64>,
    attn: Vec<Vec<f64>>,
    o: Vec<f64>,
    x1: Vec<f64>,
    hpre: Vec<f64>,
}

struct StepCache {
    blocks: Vec<BlockCache>,
    out: Vec<f64>,
}

impl GrModel {
    pub fn new<R: Rng + ?Sized>(vocab: SidVocabulary, shape: GrShape, rng: &mut R) -> Result<Self> {
        let d = shape.width;
        if d == 0 || shape.heads == 0 || !d.is_multiple_of(shape.heads) {
            return Err(Error::Config(format!(
                "width {d} must be a positive multiple of heads {}",
                shape.heads
            )));
        }
        if shape.max_history == 0 || shape.ffn_width == 0 {
            return Err(Error::Config("max_history and ffn_width must be positive".into()));
        }
        let mut mat = |r: usize, c: usize, std: f64| {
            let n = Normal::new(0.0, std).unwrap();
            Matrix::from_vec(r, c, (0..r * c).map(|_| n.sample(rng)).collect()).unwrap()
        };
        let s = 1.0 / (d as f64).sqrt();
        let embed = mat(vocab.size(), d, 0.3);
        let recency = mat(shape.max_history, d, 0.3);
        let step = mat(vocab.levels(), d, 0.3);
        let blocks = (0..shape.layers)
            .map(|_| Block {
                wq: mat(d, d, s),
                wk: mat(d, d, s),
                wv: mat(d, d, s),
                wo: mat(d, d, 0.5 * s),
                w1: mat(d, shape.ffn_width, s),
                b1: vec![0.0; shape.ffn_width],
                w2: mat(shape.ffn_width, d, 0.5 / (shape.ffn_width as f64).sqrt()),
                b2: vec![0.0; d],
            })
            .collect();
        let heads_out = (0..vocab.levels())
            .map(|l| (mat(d, vocab.level_size(l), s), vec![0.0; vocab.level_size(l)]))
            .collect();
        Ok(GrModel {
            shape,
            vocab,
            embed,
            recency,
            step,
            blocks,
            heads_out,
        })
    }

    pub fn shape(&self) -> &GrShape {
        &self.shape
    }

    pub fn vocab(&self) -> &SidVocabulary {
        &self.vocab
    }

    pub fn max_history(&self) -> usize {
        self.shape.max_history
    }

    pub fn context(&self, history: &[Vec<u32>]) -> Result<GrContext<'_>> {
        let h = &history[history.len().saturating_sub(self.shape.max_history)..];
        let d = self.shape.width;
        let items: Vec<Vec<usize>> = h
            .iter()
            .map(|codes| {
                if codes.len() != self.vocab.levels() {
                    return Err(Error::shape("history SID levels", self.vocab.levels(), codes.len()));
                }
                codes.iter().enumerate().map(|(l, &c)| self.vocab.token(l, c)).collect()
            })
            .collect::<Result<_>>()?;
        let t = items.len();
        let mut memory = Matrix::zeros(t, d);
        for (j, toks) in items.iter().enumerate() {
            let row = memory.row_mut(j);
            for &tok in toks {
                add_to(row, self.embed.row(tok));
            }
            add_to(row, self.recency.row(t - 1 - j));
        }
        let project = |w: &Matrix| {
            let mut m = Matrix::zeros(t, d);
            for j in 0..t {
                m.row_mut(j).copy_from_slice(&vm(memory.row(j), w));
            }
            m
        };
        let keys = self.blocks.iter().map(|b| project(&b.wk)).collect();
        let values = self.blocks.iter().map(|b| project(&b.wv)).collect();
        Ok(GrContext {
            model: self,
            items,
            memory,
            keys,
            values,
        })
    }

    fn step_input(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        let t = prefix.len();
        let mut x = self.embed.row(self.vocab.bos()).to_vec();
        add_to(&mut x, self.step.row(t));
        for (l, &c) in prefix.iter().enumerate() {
            add_to(&mut x, self.embed.row(self.vocab.token(l, c)?));
        }
        Ok(x)
    }

    /// Mean per-token cross-entropy over `examples`.
    pub fn loss(&self, examples: &[Example], exec: Exec) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::Data("loss over no examples".into()));
        }
        let parts = exec.map(examples, |e| self.example_loss(e, None, 1.0));
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total / (examples.len() * self.vocab.levels()) as f64)
    }

    /// Loss and gradient, reduced in fixed chunks so the result does not
    /// depend on `exec`.
    pub fn loss_and_grad(&self, examples: &[Example], exec: Exec) -> Result<(f64, GrModel)> {
        if examples.is_empty() {
            return Err(Error::Data("gradient over no examples".into()));
        }
        let scale = 1.0 / (examples.len() * self.vocab.levels()) as f64;
        let reduced = exec.chunked_reduce(
            examples,
            |chunk| -> Result<(f64, GrModel)> {
                let mut g = self.zeros_like();
                let mut loss = 0.0;
                for e in chunk {
                    loss += self.example_loss(e, Some(&mut g), scale)?;
                }
                Ok((loss, g))
            },
            |acc, part| match part {
                Err(e) => {
                    if acc.is_ok() {
                        *acc = Err(e);
                    }
                }
                Ok((pl, pg)) => {
                    if let Ok((l, g)) = acc {
                        *l += pl;
                        g.accumulate(&pg);
                    }
                }
            },
        );
        let (loss, g) = reduced.expect("non-empty")?;
        Ok((loss * scale, g))
    }

    /// Summed cross-entropy of one example's target tokens; with `grads`,
    /// accumulates `scale ×` its gradient.
    fn example_loss(&self, ex: &Example, grads: Option<&mut GrModel>, scale: f64) -> Result<f64> {
        if ex.target.len() != self.vocab.levels() {
            return Err(Error::shape("target SID levels", self.vocab.levels(), ex.target.len()));
        }
        let ctx = self.context(&ex.history)?;
        let mut loss = 0.0;
        let mut caches = Vec::with_capacity(ex.target.len());
        let mut probs = Vec::with_capacity(ex.target.len());
        for t in 0..ex.target.len() {
            let (logits, cache) = ctx.forward(&ex.target[..t])?;
            let lp = log_softmax(&logits);
            let code = ex.target[t] as usize;
            if code >= lp.len() {
                return Err(Error::CodeOutOfRange {
                    level: t,
                    code,
                    cardinality: lp.len(),
                });
            }
            loss -= lp[code];
            probs.push(lp.into_iter().map(f64::exp).collect::<Vec<f64>>());
            caches.push(cache);
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite GR loss for user {}", ex.user_id)));
        }
        if let Some(g) = grads {
            ctx.backward(&ex.target, &caches, &probs, scale, g)?;
        }
        Ok(loss)
    }
}

impl GrContext<'_> {
    pub fn history_len(&self) -> usize {
        self.items.len()
    }

    /// Unnormalised scores over the codes of level `prefix.len()`.
    pub fn next_logits(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(self.forward(prefix)?.0)
    }

    fn forward(&self, prefix: &[u32]) -> Result<(Vec<f64>, StepCache)> {
        let m = self.model;
        let t = prefix.len();
        if t >= m.vocab.levels() {
            return Err(Error::shape("decode step", m.vocab.levels() - 1, t));
        }
        let d = m.shape.width;
        let dh = d / m.shape.heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let mut x = m.step_input(prefix)?;
        let mut blocks = Vec::with_capacity(m.blocks.len());
        for (b, blk) in m.blocks.iter().enumerate() {
            let q = vm(&x, &blk.wq);
            let mut o = vec![0.0; d];
            let mut attn = Vec::with_capacity(m.shape.heads);
            for h in 0..m.shape.heads {
                let r = h * dh..(h + 1) * dh;
                let mut a: Vec<f64> = (0..self.items.len())
                    .map(|j| inv * q[r.clone()].iter().zip(&self.keys[b].row(j)[r.clone()]).map(|(p, k)| p * k).sum::<f64>())
                    .collect();
                if !a.is_empty() {
                    softmax_in_place(&mut a);
                }
                for (j, &aj) in a.iter().enumerate() {
                    for (oi, vi) in o[r.clone()].iter_mut().zip(&self.values[b].row(j)[r.clone()]) {
                        *oi += aj * vi;
                    }
                }
                attn.push(a);
            }
            let mut x1 = x.clone();
            add_to(&mut x1, &vm(&o, &blk.wo));
            let mut hpre = vm(&x1, &blk.w1);
            add_to(&mut hpre, &blk.b1);
            let hact: Vec<f64> = hpre.iter().map(|v| v.max(0.0)).collect();
            let mut x2 = x1.clone();
            add_to(&mut x2, &vm(&hact, &blk.w2));
            add_to(&mut x2, &blk.b2);
            blocks.push(BlockCache {
                x: std::mem::replace(&mut x, x2),
                q,
                attn,
                o,
                x1,
                hpre,
            });
        }
        let (w, bias) = &m.heads_out[t];
        let mut logits = vm(&x, w);
        add_to(&mut logits, bias);
        Ok((logits, StepCache { blocks, out: x }))
    }

    fn backward(&self, target: &[u32], caches: &[StepCache], probs: &[Vec<f64>], scale: f64, g: &mut GrModel) -> Result<()> {
        let m = self.model;
        let d = m.shape.width;
        let dh = d / m.shape.heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let tlen = self.items.len();
        let mut dkeys: Vec<Matrix> = (0..m.blocks.len()).map(|_| Matrix::zeros(tlen, d)).collect();
        let mut dvalues: Vec<Matrix> = (0..m.blocks.len()).map(|_| Matrix::zeros(tlen, d)).collect();

        for (t, cache) in caches.iter().enumerate() {
            let mut dlogits: Vec<f64> = probs[t].iter().map(|p| scale * p).collect();
            dlogits[target[t] as usize] -= scale;
            let (w, _) = &m.heads_out[t];
            outer_acc(&mut g.heads_out[t].0, &cache.out, &dlogits);
            add_to(&mut g.heads_out[t].1, &dlogits);
            let mut dx = mv(w, &dlogits);

            for (b, blk) in m.blocks.iter().enumerate().rev() {
                let c = &cache.blocks[b];
                let gb = &mut g.blocks[b];
                // x2 = x1 + relu(x1·W1 + b1)·W2 + b2
                let hact: Vec<f64> = c.hpre.iter().map(|v| v.max(0.0)).collect();
                add_to(&mut gb.b2, &dx);
                outer_acc(&mut gb.w2, &hact, &dx);
                let dhact = mv(&blk.w2, &dx);
                let dhpre: Vec<f64> = dhact.iter().zip(&c.hpre).map(|(g, h)| if *h > 0.0 { *g } else { 0.0 }).collect();
                outer_acc(&mut gb.w1, &c.x1, &dhpre);
                add_to(&mut gb.b1, &dhpre);
                let mut dx1 = dx;
                add_to(&mut dx1, &mv(&blk.w1, &dhpre));
                // x1 = x + o·Wo
                outer_acc(&mut gb.wo, &c.o, &dx1);
                let d_o = mv(&blk.wo, &dx1);
                let mut dq = vec![0.0; d];
                for h in 0..m.shape.heads {
                    let r = h * dh..(h + 1) * dh;
                    let a = &c.attn[h];
                    let da: Vec<f64> = (0..tlen)
                        .map(|j| d_o[r.clone()].iter().zip(&self.values[b].row(j)[r.clone()]).map(|(p, v)| p * v).sum())
                        .collect();
                    let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                    for j in 0..tlen {
                        let dvj = &mut dvalues[b].row_mut(j)[r.clone()];
                        for (dv, go) in dvj.iter_mut().zip(&d_o[r.clone()]) {
                            *dv += a[j] * go;
                        }
                        let ds = a[j] * (da[j] - mean) * inv;
                        let krow = &self.keys[b].row(j)[r.clone()];
                        for (dqi, k) in dq[r.clone()].iter_mut().zip(krow) {
                            *dqi += ds * k;
                        }
                        let dkj = &mut dkeys[b].row_mut(j)[r.clone()];
                        for (dk, qi) in dkj.iter_mut().zip(&c.q[r.clone()]) {
                            *dk += ds * qi;
                        }
                    }
                }
                outer_acc(&mut gb.wq, &c.x, &dq);
                dx = dx1;
                add_to(&mut dx, &mv(&blk.wq, &dq));
            }

            add_to(g.embed.row_mut(m.vocab.bos()), &dx);
            add_to(g.step.row_mut(t), &dx);
            for (l, &code) in target[..t].iter().enumerate() {
                add_to(g.embed.row_mut(m.vocab.token(l, code)?), &dx);
            }
        }

        let mut dmem = Matrix::zeros(tlen, d);
        for (b, blk) in m.blocks.iter().enumerate() {
            for j in 0..tlen {
                let u = self.memory.row(j);
                outer_acc(&mut g.blocks[b].wk, u, dkeys[b].row(j));
                outer_acc(&mut g.blocks[b].wv, u, dvalues[b].row(j));
                let mut du = mv(&blk.wk, dkeys[b].row(j));
                add_to(&mut du, &mv(&blk.wv, dvalues[b].row(j)));
                add_to(dmem.row_mut(j), &du);
            }
        }
        for (j, toks) in self.items.iter().enumerate() {
            for &tok in toks {
                add_to(g.embed.row_mut(tok), dmem.row(j));
            }
            add_to(g.recency.row_mut(tlen - 1 - j), dmem.row(j));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> GrModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vocab = SidVocabulary::new(&[4, 3, 2]).unwrap();
        let shape = GrShape {
            width: 8,
            heads: 2,
            layers: 2,
            ffn_width: 6,
            max_history: 5,
        };
        GrModel::new(vocab, shape, &mut rng).unwrap()
    }

    fn examples() -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sid = || vec![rng.random_range(0..4), rng.random_range(0..3), rng.random_range(0..2)];
        (0..6)
            .map(|i| Example {
                user_id: i,
                position: 1,
                history: (0..(i as usize % 7)).map(|_| sid()).collect(),
                target: sid(),
                target_item: 0,
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let model = tiny();
        let ex = examples();
        let (_, grad) = model.loss_and_grad(&ex, Exec::Sequential).unwrap();
        let report = grad_check(|p: &GrModel| p.loss(&ex, Exec::Sequential), &model, &grad, 1e-6, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn loss_matches_gradient_pass_and_is_exec_independent() {
        let model = tiny();
        let ex = examples();
        let l = model.loss(&ex, Exec::Sequential).unwrap();
        let (lg, g1) = model.loss_and_grad(&ex, Exec::Sequential).unwrap();
        let (_, g2) = model.loss_and_grad(&ex, Exec::Parallel).unwrap();
        assert!((l - lg).abs() < 1e-12);
        assert_eq!(g1, g2);
    }

    #[test]
    fn history_beyond_window_is_ignored() {
        let model = tiny();
        let mut long = examples()[5].clone();
        let short_ctx = model.context(&long.history).unwrap().next_logits(&[]).unwrap();
        long.history.insert(0, vec![3, 2, 1]);
        let long_ctx = model.context(&long.history).unwrap().next_logits(&[]).unwrap();
        assert_eq!(short_ctx, long_ctx);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vocab = SidVocabulary::new(&[4]).unwrap();
        let shape = GrShape {
            width: 6,
            heads: 4,
            ..GrShape::default()
        };
        assert!(GrModel::new(vocab, shape, &mut rng).is_err());
        let model = tiny();
        assert!(model.context(&[vec![0, 0]]).is_err());
    }
}
