//! RBF kernel numerics and squared RKHS distances between (weighted) kernel
//! mean embeddings and a single query point.
//!
//! Every score here has the same shape,
//!
//! ```text
//! ‖ Σᵢ cᵢ k(xᵢ, ·) − k(z, ·) ‖² = Σᵢⱼ cᵢ cⱼ k(xᵢ, xⱼ) − 2 Σᵢ cᵢ k(xᵢ, z) + k(z, z)
//! ```
//!
//! and differs only in the coefficients `cᵢ = wᵢ/N`. The plain mean embedding
//! has `wᵢ = 1`; the prompt-weighted score uses `wᵢ = cos(qᵢ, q)`. Smaller is
//! a better match.
//!
//! The pieces ([`Gram`], [`cross_kernel`], [`assemble_score`]) are public.
//! Assembling them from a cached Gram matrix is bit-identical to the one-shot
//! functions.

use serde::{Deserialize, Serialize};

use crate::embedding::{common_dim, Embedding};
use crate::error::{Error, Result};

/// Bandwidth used throughout unless configured otherwise.
pub const DEFAULT_GAMMA: f64 = 0.02;

/// Bandwidth grid the default was tuned over.
pub const GAMMA_GRID: [f64; 10] = [0.005, 0.006, 0.007, 0.008, 0.009, 0.01, 0.02, 0.03, 0.04, 0.05];

/// Parameters of `k(x, y) = exp(−γ‖x − y‖²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelParams")]
pub struct KernelParams {
    gamma: f64,
}

#[derive(Deserialize)]
struct RawKernelParams {
    gamma: f64,
}

impl TryFrom<RawKernelParams> for KernelParams {
    type Error = Error;

    fn try_from(raw: RawKernelParams) -> Result<Self> {
        KernelParams::new(raw.gamma)
    }
}

impl KernelParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(KernelParams { gamma })
        } else {
            Err(Error::InvalidGamma(gamma))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Kernel value for a precomputed squared distance.
    #[inline]
    pub fn eval_sq_dist(&self, sq_dist: f64) -> f64 {
        (-self.gamma * sq_dist).exp()
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { gamma: DEFAULT_GAMMA }
    }
}

#[inline]
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub fn rbf_kernel(x: &Embedding, y: &Embedding, params: KernelParams) -> Result<f64> {
    check_dims(x.dim(), y.dim())?;
    Ok(params.eval_sq_dist(squared_distance(x, y)))
}

/// Inner-product cosine. Zero-norm inputs are an error.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `wᵢ = cos(promptsᵢ, query)`, unclipped.
pub fn cosine_weights(prompts: &[Embedding], query: &Embedding) -> Result<Vec<f64>> {
    prompts.iter().map(|p| cosine_similarity(p, query)).collect()
}

/// Symmetric matrix of pairwise squared Euclidean distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredDistances {
    n: usize,
    values: Vec<f64>,
}

impl SquaredDistances {
    pub fn new<P: AsRef<[f64]>>(points: &[P]) -> Self {
        let n = points.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = squared_distance(points[i].as_ref(), points[j].as_ref());
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        SquaredDistances { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Elementwise sum `self + scale² · other`, used for concatenated spaces.
    pub fn add_scaled(&self, other: &SquaredDistances, scale: f64) -> SquaredDistances {
        assert_eq!(self.n, other.n);
        let s2 = scale * scale;
        SquaredDistances {
            n: self.n,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + s2 * b).collect(),
        }
    }
}

/// Kernel Gram matrix `K[i][j] = k(xᵢ, xⱼ)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    n: usize,
    values: Vec<f64>,
}

impl Gram {
    pub fn from_sq_dists(sq: &SquaredDistances, params: KernelParams) -> Self {
        Gram { n: sq.n, values: sq.values.iter().map(|&d| params.eval_sq_dist(d)).collect() }
    }

    pub fn build<P: AsRef<[f64]>>(points: &[P], params: KernelParams) -> Self {
        Self::from_sq_dists(&SquaredDistances::new(points), params)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// `Σᵢ cᵢ Σⱼ cⱼ K[i][j]`, summed row by row.
    pub fn quadratic_form(&self, coefs: &[f64]) -> f64 {
        debug_assert_eq!(coefs.len(), self.n);
        (0..self.n)
            .map(|i| {
                let inner: f64 = self.row(i).iter().zip(coefs).map(|(k, c)| c * k).sum();
                coefs[i] * inner
            })
            .sum()
    }

    /// `Σᵢ Σⱼ K[i][j]`, summed in the same order as [`Gram::quadratic_form`].
    pub fn total(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).iter().sum::<f64>()).sum()
    }
}

/// `[k(xᵢ, query)]ᵢ`.
pub fn cross_kernel<P: AsRef<[f64]>>(points: &[P], query: &[f64], params: KernelParams) -> Vec<f64> {
    points.iter().map(|p| params.eval_sq_dist(squared_distance(p.as_ref(), query))).collect()
}

/// Combines the three Gram blocks: `self_term − cross_term + query_self`.
///
/// `self_term` is the already-normalised `Σᵢⱼ cᵢcⱼ K[i][j]` and `cross_term`
/// the already-normalised `2 Σᵢ cᵢ k(xᵢ, z)`.
#[inline]
pub fn assemble_score(self_term: f64, cross_term: f64, query_self: f64) -> f64 {
    self_term - cross_term + query_self
}

/// Normalised self term of the uniform mean embedding, `(1/N²) Σᵢⱼ K[i][j]`.
pub fn uniform_self_term(gram: &Gram) -> f64 {
    let n = gram.len() as f64;
    gram.total() / (n * n)
}

/// Normalised cross term of the uniform mean embedding, `(2/N) Σᵢ k(xᵢ, z)`.
pub fn uniform_cross_term(cross: &[f64]) -> f64 {
    let n = cross.len() as f64;
    2.0 * cross.iter().sum::<f64>() / n
}

/// Normalised self term `(1/N²) Σᵢⱼ wᵢwⱼ K[i][j]`.
pub fn weighted_self_term(gram: &Gram, weights: &[f64]) -> f64 {
    let n = gram.len() as f64;
    gram.quadratic_form(weights) / (n * n)
}

/// Normalised cross term `(2/N) Σᵢ wᵢ k(xᵢ, z)`.
pub fn weighted_cross_term(cross: &[f64], weights: &[f64]) -> f64 {
    let n = cross.len() as f64;
    2.0 * cross.iter().zip(weights).map(|(k, w)| w * k).sum::<f64>() / n
}

/// `k(z, z)`, which is 1 for the RBF kernel.
pub fn query_self_term(query: &[f64], params: KernelParams) -> f64 {
    params.eval_sq_dist(squared_distance(query, query))
}

fn check_points(points: &[Embedding], query: &Embedding) -> Result<()> {
    let dim = common_dim(points, "specification points")?;
    check_dims(dim, query.dim())
}

/// `‖(1/N) Σᵢ k(xᵢ, ·) − k(z, ·)‖²`.
pub fn uniform_mmd_sq(points: &[Embedding], query: &Embedding, params: KernelParams) -> Result<f64> {
    check_points(points, query)?;
    let gram = Gram::build(points, params);
    let cross = cross_kernel(points, query, params);
    Ok(assemble_score(uniform_self_term(&gram), uniform_cross_term(&cross), query_self_term(query, params)))
}

/// `‖(1/N) Σᵢ wᵢ k(xᵢ, ·) − k(z, ·)‖²` for arbitrary finite weights.
pub fn weighted_mmd_sq(
    points: &[Embedding],
    weights: &[f64],
    query: &Embedding,
    params: KernelParams,
) -> Result<f64> {
    check_points(points, query)?;
    if weights.len() != points.len() {
        return Err(Error::LengthMismatch {
            what: "weights vs points",
            left: weights.len(),
            right: points.len(),
        });
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let gram = Gram::build(points, params);
    let cross = cross_kernel(points, query, params);
    Ok(assemble_score(
        weighted_self_term(&gram, weights),
        weighted_cross_term(&cross, weights),
        query_self_term(query, params),
    ))
}

/// Weighted score whose weights are the cosine similarities between each
/// specification prompt and the query prompt.
pub fn prompt_weighted_score(
    spec_images: &[Embedding],
    spec_prompts: &[Embedding],
    query_image: &Embedding,
    query_prompt: &Embedding,
    params: KernelParams,
) -> Result<f64> {
    if spec_images.len() != spec_prompts.len() {
        return Err(Error::LengthMismatch {
            what: "images vs prompts",
            left: spec_images.len(),
            right: spec_prompts.len(),
        });
    }
    let prompt_dim = common_dim(spec_prompts, "specification prompts")?;
    check_dims(prompt_dim, query_prompt.dim())?;
    let weights = cosine_weights(spec_prompts, query_prompt)?;
    weighted_mmd_sq(spec_images, &weights, query_image, params)
}

/// `‖Σᵢ cᵢ k(xᵢ, ·) − k(z, ·)‖²` with raw (unnormalised) coefficients, as
/// used when scoring against a reduced set with fitted coefficients.
pub fn coefficient_mmd_sq(
    points: &[Embedding],
    coefs: &[f64],
    query: &Embedding,
    params: KernelParams,
) -> Result<f64> {
    check_points(points, query)?;
    if coefs.len() != points.len() {
        return Err(Error::LengthMismatch {
            what: "coefficients vs points",
            left: coefs.len(),
            right: points.len(),
        });
    }
    let gram = Gram::build(points, params);
    let cross = cross_kernel(points, query, params);
    Ok(coefficient_score(&gram, coefs, &cross, query_self_term(query, params)))
}

pub(crate) fn coefficient_score(gram: &Gram, coefs: &[f64], cross: &[f64], query_self: f64) -> f64 {
    let cross_term = 2.0 * cross.iter().zip(coefs).map(|(k, c)| c * k).sum::<f64>();
    assemble_score(gram.quadratic_form(coefs), cross_term, query_self)
}

/// Biased (V-statistic) two-sample estimate of the squared MMD.
pub fn mmd_sq_two_sample(x: &[Embedding], y: &[Embedding], params: KernelParams) -> Result<f64> {
    let dx = common_dim(x, "first sample")?;
    let dy = common_dim(y, "second sample")?;
    check_dims(dx, dy)?;
    let kxx = uniform_self_term(&Gram::build(x, params));
    let kyy = uniform_self_term(&Gram::build(y, params));
    let mut kxy = 0.0;
    for a in x {
        kxy += y.iter().map(|b| params.eval_sq_dist(squared_distance(a, b))).sum::<f64>();
    }
    kxy /= (x.len() * y.len()) as f64;
    Ok(kxx + kyy - 2.0 * kxy)
}
