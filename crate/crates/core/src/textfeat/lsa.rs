//! Truncated SVD of a sparse document-term matrix.
//!
//! Block subspace iteration finds the dominant row space; each iteration
//! finishes with a Rayleigh-Ritz step that takes the exact SVD of the small
//! projected matrix with one-sided (Hestenes) Jacobi rotations. When the
//! block is as wide as the smaller matrix dimension the first Ritz step is
//! already exact. Narrow vocabularies skip the iteration and take the
//! eigendecomposition of the dense Gram matrix directly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{SparseVector, TextError};
use crate::codec;

const OVERSAMPLE: usize = 10;
const MAX_ITERS: usize = 300;
const CONVERGED_REL: f64 = 1e-14;
/// Vocabularies up to this size use the exact Gram-matrix path.
const EXACT_DIM: usize = 512;

/// Top-k right singular subspace of a document-term matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsaProjection {
    dim: usize,
    /// One unit-norm vector of length `dim` per component.
    components: Vec<Vec<f64>>,
    singular_values: Vec<f64>,
    rank_deficiency: Option<RankDeficiency>,
}

/// Set when fewer than `requested` nonzero singular values exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankDeficiency {
    pub requested: usize,
    pub available: usize,
}

const LSA_MAGIC: [u8; 4] = *b"ATLS";

impl LsaProjection {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank_deficiency(&self) -> Option<RankDeficiency> {
        self.rank_deficiency
    }

    /// Coordinates of `v` along each component.
    pub fn project(&self, v: &SparseVector) -> Result<Vec<f64>, TextError> {
        if v.dim() != self.dim {
            return Err(TextError::DimensionMismatch { expected: self.dim, found: v.dim() });
        }
        Ok(self.components.iter().map(|c| v.dot_dense(c)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        Ok(codec::write_file(path, LSA_MAGIC, 1, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Ok(codec::read_file(path, LSA_MAGIC, 1)?)
    }
}

// Dense column-major block: `cols[j]` is column j.
type Block = Vec<Vec<f64>>;

fn a_times(rows: &[SparseVector], block: &Block) -> Block {
    block
        .iter()
        .map(|col| rows.iter().map(|r| r.dot_dense(col)).collect())
        .collect()
}

fn at_times(rows: &[SparseVector], dim: usize, block: &Block) -> Block {
    block
        .iter()
        .map(|col| {
            let mut out = vec![0.0; dim];
            for (r, &c) in rows.iter().zip(col) {
                if c != 0.0 {
                    for (t, w) in r.iter() {
                        out[t] += w * c;
                    }
                }
            }
            out
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Columns that
/// collapse numerically are dropped.
fn orthonormalize(block: Block) -> Block {
    let scale = block.iter().map(|c| dot(c, c).sqrt()).fold(0.0, f64::max);
    let mut out: Block = Vec::with_capacity(block.len());
    if scale == 0.0 {
        return out;
    }
    for mut col in block {
        for _ in 0..2 {
            for q in &out {
                let proj = dot(q, &col);
                for (c, qv) in col.iter_mut().zip(q) {
                    *c -= proj * qv;
                }
            }
        }
        let norm = dot(&col, &col).sqrt();
        if norm > 1e-10 * scale {
            col.iter_mut().for_each(|c| *c /= norm);
            out.push(col);
        }
    }
    out
}

/// One-sided Jacobi SVD of a tall block (columns `m`). Returns singular
/// values (descending) and the matching left singular vectors.
fn jacobi_svd(mut cols: Block) -> (Vec<f64>, Block) {
    let n = cols.len();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = cols
        .into_iter()
        .map(|mut c| {
            let s = dot(&c, &c).sqrt();
            if s > 0.0 {
                c.iter_mut().for_each(|x| *x /= s);
            }
            (s, c)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.into_iter().unzip()
}

/// Eigenpairs of AᵀA, returned as singular values of A and right singular
/// vectors, plus the cutoff below which a value counts as zero.
fn gram_svd(rows: &[SparseVector], dim: usize) -> (Vec<f64>, Block, f64) {
    let mut gram: Block = vec![vec![0.0; dim]; dim];
    for r in rows {
        let entries: Vec<(usize, f64)> = r.iter().collect();
        for &(i, wi) in &entries {
            let col = &mut gram[i];
            for &(j, wj) in &entries {
                col[j] += wi * wj;
            }
        }
    }
    let (lambda, vectors) = jacobi_svd(gram);
    let lambda_max = lambda.first().copied().unwrap_or(0.0);
    let tol = (lambda_max * rows.len().max(dim) as f64 * f64::EPSILON).sqrt();
    (lambda.into_iter().map(f64::sqrt).collect(), vectors, tol)
}

/// Randomized block subspace iteration with Rayleigh-Ritz steps.
fn subspace_svd(rows: &[SparseVector], dim: usize, k: usize, seed: u64) -> (Vec<f64>, Block, f64) {
    let full = rows.len().min(dim);
    let width = (k + OVERSAMPLE).min(full);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega: Block = (0..width).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let mut q = orthonormalize(a_times(rows, &omega));

    let mut previous: Vec<f64> = Vec::new();
    let mut sigma = Vec::new();
    let mut vectors = Vec::new();
    for iter in 0..MAX_ITERS {
        if q.is_empty() {
            break;
        }
        // Columns of Aᵀ Q span the candidate row space; its SVD is the
        // Rayleigh-Ritz approximation of A's SVD.
        let z = at_times(rows, dim, &q);
        let (s, u) = jacobi_svd(z.clone());
        sigma = s;
        vectors = u;
        let top = &sigma[..sigma.len().min(k)];
        let converged = width == full
            || (iter > 0
                && previous.len() == top.len()
                && top.iter().zip(&previous).all(|(a, b)| (a - b).abs() <= CONVERGED_REL * top[0].max(f64::MIN_POSITIVE)));
        if converged {
            break;
        }
        previous = top.to_vec();
        q = orthonormalize(a_times(rows, &orthonormalize(z)));
    }

    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let tol = sigma_max * rows.len().max(dim) as f64 * f64::EPSILON;
    (sigma, vectors, tol)
}

fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Fits a `k`-component projection. Rows must share one dimension and there
/// must be at least `k` of them.
pub fn fit_lsa(rows: &[SparseVector], k: usize, seed: u64) -> Result<LsaProjection, TextError> {
    if rows.len() < k.max(1) {
        return Err(TextError::TooFewRows { rows: rows.len(), k });
    }
    let dim = rows[0].dim();
    if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
        return Err(TextError::DimensionMismatch { expected: dim, found: bad.dim() });
    }
    let (sigma, vectors, tol) = if dim <= EXACT_DIM { gram_svd(rows, dim) } else { subspace_svd(rows, dim, k, seed) };

    let mut components = Vec::new();
    let mut singular_values = Vec::new();
    for (s, mut v) in sigma.into_iter().zip(vectors).take(k) {
        if s <= tol || s == 0.0 {
            break;
        }
        canonical_sign(&mut v);
        components.push(v);
        singular_values.push(s);
    }
    let rank_deficiency = (components.len() < k).then_some(RankDeficiency { requested: k, available: components.len() });
    Ok(LsaProjection { dim, components, singular_values, rank_deficiency })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_rows_have_unit_singular_values() {
        let rows: Vec<SparseVector> = (0..10)
            .map(|i| {
                let mut v = vec![0.0; 10];
                v[i] = 1.0;
                SparseVector::from_dense(&v)
            })
            .collect();
        let p = fit_lsa(&rows, 10, 1).unwrap();
        assert_eq!(p.k(), 10);
        for s in p.singular_values() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(p.rank_deficiency().is_none());
    }

    #[test]
    fn rank_two_matrix_is_flagged() {
        let a = [1.0, 0.0, 2.0, 0.0, 1.0, 3.0];
        let b = [0.0, 1.0, -1.0, 1.0, 0.0, 0.5];
        let rows: Vec<SparseVector> = (0..12)
            .map(|i| {
                let (x, y) = ((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos());
                SparseVector::from_dense(&a.iter().zip(&b).map(|(p, q)| x * p + y * q).collect::<Vec<_>>())
            })
            .collect();
        let p = fit_lsa(&rows, 10, 3).unwrap();
        assert_eq!(p.k(), 2);
        assert_eq!(p.rank_deficiency(), Some(RankDeficiency { requested: 10, available: 2 }));
    }

    #[test]
    fn too_few_rows_and_dimension_checks() {
        let rows = vec![SparseVector::from_dense(&[1.0, 2.0])];
        assert!(matches!(fit_lsa(&rows, 10, 0), Err(TextError::TooFewRows { rows: 1, k: 10 })));
        let rows = vec![SparseVector::from_dense(&[1.0, 2.0]), SparseVector::from_dense(&[1.0])];
        assert!(matches!(fit_lsa(&rows, 1, 0), Err(TextError::DimensionMismatch { .. })));
    }

    #[test]
    fn projecting_a_component_gives_a_basis_vector() {
        let rows: Vec<SparseVector> = (0..30)
            .map(|i| SparseVector::from_dense(&(0..15).map(|j| ((i * 7 + j * 3) % 11) as f64 - 5.0).collect::<Vec<_>>()))
            .collect();
        let p = fit_lsa(&rows, 5, 9).unwrap();
        let first = SparseVector::from_dense(&p.components()[0]);
        let coords = p.project(&first).unwrap();
        assert!((coords[0] - 1.0).abs() < 1e-8);
        for c in &coords[1..] {
            assert!(c.abs() < 1e-8);
        }
        assert!(p.project(&SparseVector::zeros(15)).unwrap().iter().all(|c| *c == 0.0));
        assert!(p.project(&SparseVector::zeros(3)).is_err());
        let max = p.components()[0].iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        assert!(max > 0.0, "sign canonicalized");
    }

    #[test]
    fn subspace_and_gram_paths_agree() {
        let rows: Vec<SparseVector> = (0..40)
            .map(|i| SparseVector::from_dense(&(0..25).map(|j| (((i * 13 + j * 5) % 17) as f64 - 8.0) * (1.0 + j as f64 / 5.0)).collect::<Vec<_>>()))
            .collect();
        let (a, _, _) = gram_svd(&rows, 25);
        let (b, _, _) = subspace_svd(&rows, 25, 5, 4);
        for (x, y) in a.iter().zip(&b).take(5) {
            assert!((x - y).abs() <= 1e-8 * a[0], "{x} vs {y}");
        }
    }
}
