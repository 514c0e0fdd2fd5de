//! Lloyd's K-means with k-means++ seeding, and the residual stacking used to
//! seed codebooks and to fit the RQ-K-means tokenizer.

use std::collections::HashSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::codebook::Codebook;
use crate::error::{Error, Result};
use crate::numerics::matrix::{norm, sq_dist};
use crate::numerics::Matrix;
use crate::parallel::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutput {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
    /// Number of empty-cluster re-seeds performed.
    pub reseeded: usize,
    /// True when the data had fewer distinct rows than `k`.
    pub degenerate: bool,
}

/// Nearest centroid by squared distance, lowest index on ties.
pub fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..centroids.rows() {
        let d = sq_dist(x, centroids.row(c));
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

fn distinct_rows(data: &Matrix) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..data.rows())
        .filter(|&r| seen.insert(data.row(r).iter().map(|v| v.to_bits()).collect::<Vec<u64>>()))
        .collect()
}

fn rms(data: &Matrix) -> f64 {
    if data.data().is_empty() {
        return 0.0;
    }
    (data.data().iter().map(|v| v * v).sum::<f64>() / data.data().len() as f64).sqrt()
}

fn kmeans_pp<R: Rng + ?Sized>(data: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = data.rows();
    let mut centroids = Matrix::zeros(k, data.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(data.row(first));
    let mut d2: Vec<f64> = (0..n).map(|r| sq_dist(data.row(r), data.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding walking past the last positive weight
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(data.row(pick));
        for (r, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(r), data.row(pick)));
        }
    }
    centroids
}

/// Centroids for data with fewer distinct rows than `k`: every distinct row
/// once, then jittered copies.
fn jittered_fallback<R: Rng + ?Sized>(data: &Matrix, distinct: &[usize], k: usize, rng: &mut R) -> Matrix {
    let scale = rms(data).max(1.0) * 1e-3;
    let normal = Normal::new(0.0, scale).unwrap();
    let mut centroids = Matrix::zeros(k, data.cols());
    for c in 0..k {
        let src = data.row(distinct[c % distinct.len()]);
        let row = centroids.row_mut(c);
        row.copy_from_slice(src);
        if c >= distinct.len() {
            row.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
    }
    centroids
}

pub fn kmeans<R: Rng + ?Sized>(
    data: &Matrix,
    k: usize,
    max_iters: usize,
    rng: &mut R,
    exec: Exec,
) -> Result<KMeansOutput> {
    let n = data.rows();
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    if n == 0 {
        return Err(Error::Data("k-means on empty data".into()));
    }
    let distinct = distinct_rows(data);
    let degenerate = distinct.len() < k;
    let mut centroids = if degenerate {
        warn!(
            "k-means: {} distinct rows for k = {k}; seeding with jittered copies",
            distinct.len()
        );
        jittered_fallback(data, &distinct, k, rng)
    } else {
        kmeans_pp(data, k, rng)
    };

    let rows: Vec<usize> = (0..n).collect();
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    let mut reseeded = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let nearest_all = exec.map(&rows, |&r| nearest(&centroids, data.row(r)));
        let mut changed = false;
        for (a, (c, _)) in assignments.iter_mut().zip(&nearest_all) {
            if *a != *c {
                *a = *c;
                changed = true;
            }
        }
        if !changed {
            break;
        }

        let mut sums = Matrix::zeros(k, data.cols());
        let mut counts = vec![0usize; k];
        for (r, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(data.row(r)) {
                *s += v;
            }
        }
        let mut taken = HashSet::new();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else if !degenerate {
                // re-seed from the point farthest from its current centroid
                let far = nearest_all
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| !taken.contains(r))
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                    .map(|(r, _)| r);
                if let Some(r) = far {
                    taken.insert(r);
                    centroids.row_mut(c).copy_from_slice(data.row(r));
                    reseeded += 1;
                }
            }
        }
    }

    let inertia = rows
        .iter()
        .map(|&r| sq_dist(data.row(r), centroids.row(assignments[r])))
        .sum();
    Ok(KMeansOutput {
        centroids,
        assignments,
        inertia,
        iterations,
        reseeded,
        degenerate,
    })
}

/// Fits one codebook per level on successive residuals: level 0 on `data`,
/// level `l` on what remains after subtracting the nearest level-`l-1`
/// centroid. With `nonzero_rows`, any all-zero centroid is replaced by a
/// small random direction so cosine assignment stays defined.
pub fn residual_kmeans(
    data: &Matrix,
    sizes: &[usize],
    max_iters: usize,
    seed: u64,
    nonzero_rows: bool,
    exec: Exec,
) -> Result<Vec<Codebook>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residuals = data.clone();
    let mut books = Vec::with_capacity(sizes.len());
    for (level, &k) in sizes.iter().enumerate() {
        if k < 2 {
            return Err(Error::Config(format!("level {level} needs at least 2 codes")));
        }
        let out = kmeans(&residuals, k, max_iters, &mut rng, exec)?;
        let mut centroids = out.centroids;
        if nonzero_rows {
            let scale = rms(&residuals).max(1e-6) * 1e-3;
            let normal = Normal::new(0.0, scale).unwrap();
            for c in 0..k {
                if norm(centroids.row(c)) == 0.0 {
                    centroids.row_mut(c).iter_mut().for_each(|v| *v = normal.sample(&mut rng));
                }
            }
        }
        for r in 0..residuals.rows() {
            let a = out.assignments[r];
            let src = centroids.row(a).to_vec();
            for (x, c) in residuals.row_mut(r).iter_mut().zip(&src) {
                *x -= c;
            }
        }
        books.push(Codebook::new(level, centroids)?);
    }
    Ok(books)
}
