//! Greedy residual quantization over a stack of codebooks.

use super::codebook::{AssignmentRule, Codebook};
use crate::error::{Error, Result};
use crate::numerics::matrix::{cosine, dot, norm, sq_dist};
use crate::sid::SemanticId;

/// Forward values of one residual quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationTrace {
    /// `h⁰ … h^L`; `residuals[l + 1] = residuals[l] - C_l[codes[l]]`.
    pub residuals: Vec<Vec<f64>>,
    pub codes: Vec<u32>,
    /// Cosine similarity of each level's residual to every row of that
    /// level's codebook.
    pub sims: Vec<Vec<f64>>,
    /// Set when a zero residual met the cosine rule and code 0 was forced.
    pub degenerate: bool,
}

impl QuantizationTrace {
    pub fn final_residual(&self) -> &[f64] {
        self.residuals.last().expect("trace always holds h0")
    }
}

/// Best code for `residual` under `rule`; the lowest index wins ties.
/// Returns `(code, degenerate)`.
pub fn assign_level(codebook: &Codebook, rule: AssignmentRule, residual: &[f64]) -> (usize, bool) {
    let k = codebook.size();
    match rule {
        AssignmentRule::L2 => {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(residual, codebook.centroid(c));
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            (best, false)
        }
        AssignmentRule::Cosine => {
            let nr = norm(residual);
            if nr == 0.0 {
                return (0, true);
            }
            argmax(k, |c| {
                let row = codebook.centroid(c);
                let nc = norm(row);
                if nc == 0.0 {
                    0.0
                } else {
                    dot(residual, row) / (nr * nc)
                }
            })
        }
        AssignmentRule::Dot => argmax(k, |c| dot(residual, codebook.centroid(c))),
        AssignmentRule::AbsDot => argmax(k, |c| dot(residual, codebook.centroid(c)).abs()),
    }
}

fn argmax(k: usize, score: impl Fn(usize) -> f64) -> (usize, bool) {
    let mut best = 0;
    let mut best_s = f64::NEG_INFINITY;
    for c in 0..k {
        let s = score(c);
        if s > best_s {
            best = c;
            best_s = s;
        }
    }
    (best, false)
}

fn check_dim(codebooks: &[Codebook], h0: &[f64]) -> Result<()> {
    let n = codebooks.first().map_or(h0.len(), |c| c.dim());
    if h0.len() != n {
        return Err(Error::shape("quantize input", n, h0.len()));
    }
    Ok(())
}

/// Codes only, without recording the trace. Returns `(codes, degenerate)`.
pub fn assign_codes(codebooks: &[Codebook], rule: AssignmentRule, h0: &[f64]) -> Result<(Vec<u32>, bool)> {
    check_dim(codebooks, h0)?;
    let mut r = h0.to_vec();
    let mut codes = Vec::with_capacity(codebooks.len());
    let mut degenerate = false;
    for cb in codebooks {
        let (c, deg) = assign_level(cb, rule, &r);
        degenerate |= deg;
        for (ri, ci) in r.iter_mut().zip(cb.centroid(c)) {
            *ri -= ci;
        }
        codes.push(c as u32);
    }
    Ok((codes, degenerate))
}

pub fn quantize(codebooks: &[Codebook], rule: AssignmentRule, h0: &[f64]) -> Result<(SemanticId, QuantizationTrace)> {
    check_dim(codebooks, h0)?;
    let mut residuals = Vec::with_capacity(codebooks.len() + 1);
    let mut codes = Vec::with_capacity(codebooks.len());
    let mut sims = Vec::with_capacity(codebooks.len());
    let mut degenerate = false;
    let mut r = h0.to_vec();
    for cb in codebooks {
        let (c, deg) = assign_level(cb, rule, &r);
        degenerate |= deg;
        sims.push((0..cb.size()).map(|k| cosine(&r, cb.centroid(k))).collect());
        let next: Vec<f64> = r.iter().zip(cb.centroid(c)).map(|(a, b)| a - b).collect();
        residuals.push(std::mem::replace(&mut r, next));
        codes.push(c as u32);
    }
    residuals.push(r);
    Ok((
        SemanticId::new(codes.clone()),
        QuantizationTrace {
            residuals,
            codes,
            sims,
            degenerate,
        },
    ))
}

/// Decoder input with the straight-through terms added per level:
/// `Σ_l C_l[sid_l] + (sim_l · C_l − sg[sim_l · C_l])`. The correction terms
/// cancel exactly in value; only their gradient path matters.
pub fn ste_decode_forward(codebooks: &[Codebook], trace: &QuantizationTrace) -> Result<Vec<f64>> {
    if trace.codes.len() != codebooks.len() || trace.sims.len() != codebooks.len() {
        return Err(Error::shape("STE trace levels", codebooks.len(), trace.codes.len()));
    }
    let n = codebooks.first().map_or(0, |c| c.dim());
    let mut z = vec![0.0; n];
    for (cb, &code) in codebooks.iter().zip(&trace.codes) {
        if code as usize >= cb.size() {
            return Err(Error::CodeOutOfRange {
                level: cb.level(),
                code: code as usize,
                cardinality: cb.size(),
            });
        }
        for (a, b) in z.iter_mut().zip(cb.centroid(code as usize)) {
            *a += b;
        }
    }
    for (cb, sim) in codebooks.iter().zip(&trace.sims) {
        if sim.len() != cb.size() {
            return Err(Error::shape("STE similarity vector", cb.size(), sim.len()));
        }
        let soft = soft_sum(cb, sim);
        let stopped = soft.clone();
        for ((a, s), t) in z.iter_mut().zip(&soft).zip(&stopped) {
            *a += s - t;
        }
    }
    Ok(z)
}

/// `Σ_c sim[c] · C[c]`.
pub(crate) fn soft_sum(cb: &Codebook, sim: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; cb.dim()];
    for (c, &s) in sim.iter().enumerate() {
        crate::numerics::matrix::axpy(s, cb.centroid(c), &mut t);
    }
    t
}
