//! Reduced-set compression of an empirical kernel mean embedding.
//!
//! Given samples `x₁..x_N`, find `m` points `z_j` and coefficients `β_j`
//! minimising `‖(1/N) Σᵢ k(xᵢ,·) − Σⱼ βⱼ k(zⱼ,·)‖²`. The objective is
//! minimised by alternating a regularised closed-form solve for `β` with
//! backtracking gradient descent on the points, from k-means++ seeds, keeping
//! the best of several restarts.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{common_dim, Embedding};
use crate::error::{Error, Result};
use crate::kernel::{squared_distance, Gram, KernelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReduceOptions {
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
    /// Relative improvement of the reduction error below which iteration stops.
    pub tolerance: f64,
    /// Ridge `λ` in `(K_zz + λI) β = K_zx 1/N`.
    pub beta_regularization: f64,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions { seed: 0, restarts: 3, max_iters: 200, tolerance: 1e-6, beta_regularization: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSet {
    pub points: Vec<Embedding>,
    pub betas: Vec<f64>,
    pub kernel: KernelParams,
    /// False when the iteration budget ran out before the tolerance was met.
    pub converged: bool,
    pub iterations: usize,
    /// Reduction error after each outer iteration of the winning restart.
    pub error_trace: Vec<f64>,
}

impl ReducedSet {
    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }
}

/// Squared RKHS distance between the samples' mean embedding and the reduced set.
pub fn reduction_error(samples: &[Embedding], rs: &ReducedSet) -> Result<f64> {
    let dim = common_dim(samples, "samples")?;
    let zdim = common_dim(&rs.points, "reduced points")?;
    if dim != zdim {
        return Err(Error::DimensionMismatch { expected: dim, found: zdim });
    }
    if rs.betas.len() != rs.points.len() {
        return Err(Error::LengthMismatch {
            what: "betas vs reduced points",
            left: rs.betas.len(),
            right: rs.points.len(),
        });
    }
    let p = rs.kernel;
    let n = samples.len() as f64;
    let kxx = Gram::build(samples, p).total() / (n * n);
    let kzz = Gram::build(&rs.points, p).quadratic_form(&rs.betas);
    let kzx: f64 = rs
        .points
        .iter()
        .zip(&rs.betas)
        .map(|(z, b)| b * samples.iter().map(|x| p.eval_sq_dist(squared_distance(z, x))).sum::<f64>())
        .sum::<f64>()
        / n;
    Ok(kxx - 2.0 * kzx + kzz)
}

/// Closed-form coefficients for fixed points: `(K_zz + λI) β = K_zx · 1/N`.
pub fn solve_betas(
    samples: &[Embedding],
    points: &[Embedding],
    params: KernelParams,
    regularization: f64,
) -> Result<Vec<f64>> {
    common_dim(samples, "samples")?;
    common_dim(points, "reduced points")?;
    let target = Target::uniform(samples);
    let pts: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    Ok(target
        .solve_betas(&pts, params, regularization)
        .unwrap_or_else(|| vec![1.0 / points.len() as f64; points.len()]))
}

pub fn reduce(
    samples: &[Embedding],
    size: usize,
    params: KernelParams,
    opts: &ReduceOptions,
) -> Result<ReducedSet> {
    common_dim(samples, "samples")?;
    if size == 0 || size > samples.len() {
        return Err(Error::InvalidReducedSize { size, samples: samples.len() });
    }
    if size == samples.len() {
        return Ok(exact(samples.to_vec(), vec![1.0 / size as f64; size], params));
    }

    let target = Target::dedup(samples);
    if size >= target.points.len() {
        let mut points: Vec<Embedding> =
            target.points.iter().map(|p| Embedding::from_trusted(p.clone())).collect();
        let mut betas = target.weights.clone();
        while points.len() < size {
            points.push(points[0].clone());
            betas.push(0.0);
        }
        return Ok(exact(points, betas, params));
    }

    let mut best: Option<Candidate> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(
            opts.seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let init = target.kmeanspp(size, &mut rng);
        let cand = target.optimise(init, params, opts);
        if best.as_ref().is_none_or(|b| cand.error < b.error) {
            best = Some(cand);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ReducedSet {
        points: best.points.into_iter().map(Embedding::from_trusted).collect(),
        betas: best.betas,
        kernel: params,
        converged: best.converged,
        iterations: best.iterations,
        error_trace: best.trace,
    })
}

fn exact(points: Vec<Embedding>, betas: Vec<f64>, kernel: KernelParams) -> ReducedSet {
    ReducedSet { points, betas, kernel, converged: true, iterations: 0, error_trace: Vec::new() }
}

struct Candidate {
    points: Vec<Vec<f64>>,
    betas: Vec<f64>,
    error: f64,
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
}

/// Empirical measure as distinct points with probability weights.
struct Target {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

const ARMIJO: f64 = 1e-4;
const INNER_STEPS: usize = 20;
const MAX_HALVINGS: usize = 50;

impl Target {
    fn uniform(samples: &[Embedding]) -> Self {
        let n = samples.len() as f64;
        Target { points: samples.iter().map(|s| s.to_vec()).collect(), weights: vec![1.0 / n; samples.len()] }
    }

    /// Merges bit-identical samples, keeping first-occurrence order.
    fn dedup(samples: &[Embedding]) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut points = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for s in samples {
            let key: Vec<u64> = s.iter().map(|v| (v + 0.0).to_bits()).collect();
            match index.get(&key) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(key, points.len());
                    points.push(s.to_vec());
                    counts.push(1);
                }
            }
        }
        let n = samples.len() as f64;
        Target { points, weights: counts.into_iter().map(|c| c as f64 / n).collect() }
    }

    fn self_term(&self, params: KernelParams) -> f64 {
        Gram::build(&self.points, params).quadratic_form(&self.weights)
    }

    /// `b_j = Σᵤ aᵤ k(z_j, xᵤ)`.
    fn cross(&self, z: &[f64], params: KernelParams) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, a)| a * params.eval_sq_dist(squared_distance(z, x)))
            .sum()
    }

    fn objective(&self, constant: f64, z: &[Vec<f64>], betas: &[f64], params: KernelParams) -> f64 {
        let kzz = Gram::build(z, params).quadratic_form(betas);
        let kzx: f64 = z.iter().zip(betas).map(|(p, b)| b * self.cross(p, params)).sum();
        constant - 2.0 * kzx + kzz
    }

    fn solve_betas(&self, z: &[Vec<f64>], params: KernelParams, lambda: f64) -> Option<Vec<f64>> {
        let m = z.len();
        let gram = Gram::build(z, params);
        let a = DMatrix::from_fn(m, m, |i, j| gram.get(i, j) + if i == j { lambda } else { 0.0 });
        let b = DVector::from_iterator(m, z.iter().map(|p| self.cross(p, params)));
        let sol = match a.clone().cholesky() {
            Some(ch) => Some(ch.solve(&b)),
            None => a.lu().solve(&b),
        }?;
        sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
    }

    fn gradient(&self, z: &[Vec<f64>], betas: &[f64], params: KernelParams) -> Vec<Vec<f64>> {
        let g = params.gamma();
        z.iter()
            .enumerate()
            .map(|(j, zj)| {
                let mut acc = vec![0.0; zj.len()];
                for (x, a) in self.points.iter().zip(&self.weights) {
                    let c = a * params.eval_sq_dist(squared_distance(zj, x));
                    for (d, (zc, xc)) in acc.iter_mut().zip(zj.iter().zip(x)) {
                        *d += c * (zc - xc);
                    }
                }
                for (m, zm) in z.iter().enumerate() {
                    if m == j {
                        continue;
                    }
                    let c = betas[m] * params.eval_sq_dist(squared_distance(zj, zm));
                    for (d, (zc, mc)) in acc.iter_mut().zip(zj.iter().zip(zm)) {
                        *d -= c * (zc - mc);
                    }
                }
                let scale = 4.0 * g * betas[j];
                acc.iter_mut().for_each(|d| *d *= scale);
                acc
            })
            .collect()
    }

    /// k-means++ seeding over the weighted distinct points.
    fn kmeanspp(&self, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let mut chosen = vec![pick(&self.weights, rng)];
        let mut d2: Vec<f64> =
            self.points.iter().map(|p| squared_distance(p, &self.points[chosen[0]])).collect();
        while chosen.len() < size {
            let w: Vec<f64> = d2.iter().zip(&self.weights).map(|(d, a)| d * a).collect();
            let next = if w.iter().sum::<f64>() > 0.0 {
                pick(&w, rng)
            } else {
                rng.random_range(0..self.points.len())
            };
            chosen.push(next);
            for (d, p) in d2.iter_mut().zip(&self.points) {
                *d = d.min(squared_distance(p, &self.points[next]));
            }
        }
        chosen.into_iter().map(|i| self.points[i].clone()).collect()
    }

    fn optimise(&self, mut z: Vec<Vec<f64>>, params: KernelParams, opts: &ReduceOptions) -> Candidate {
        let constant = self.self_term(params);
        let lambda = opts.beta_regularization;
        let m = z.len();
        let mut betas = self.solve_betas(&z, params, lambda).unwrap_or_else(|| vec![1.0 / m as f64; m]);
        let mut error = self.objective(constant, &z, &betas, params);
        let mut trace = vec![error];
        let mut converged = false;
        let mut iterations = 0;
        let mut step = initial_step(params, &betas);

        while iterations < opts.max_iters {
            iterations += 1;
            let before = error;

            // points, betas frozen
            let (nz, nerr, nstep) = self.descend(constant, z, &betas, error, step, params);
            z = nz;
            error = nerr;
            step = nstep;

            // betas, points frozen; only accepted when they do not regress
            if let Some(nb) = self.solve_betas(&z, params, lambda) {
                let e = self.objective(constant, &z, &nb, params);
                if e <= error {
                    betas = nb;
                    error = e;
                }
            }
            trace.push(error);

            let improvement = before - error;
            if improvement <= opts.tolerance * before.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }

        Candidate { points: z, betas, error, converged, iterations, trace }
    }

    /// Up to `INNER_STEPS` Armijo-backtracking gradient steps with
    /// Barzilai-Borwein trial step lengths.
    fn descend(
        &self,
        constant: f64,
        mut z: Vec<Vec<f64>>,
        betas: &[f64],
        mut error: f64,
        mut step: f64,
        params: KernelParams,
    ) -> (Vec<Vec<f64>>, f64, f64) {
        let mut grad = self.gradient(&z, betas, params);
        for _ in 0..INNER_STEPS {
            let gnorm2: f64 = grad.iter().flatten().map(|g| g * g).sum();
            if gnorm2 == 0.0 || !gnorm2.is_finite() {
                break;
            }
            let mut accepted = None;
            let mut trial = step;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<Vec<f64>> = z
                    .iter()
                    .zip(&grad)
                    .map(|(p, g)| p.iter().zip(g).map(|(a, b)| a - trial * b).collect())
                    .collect();
                let e = self.objective(constant, &cand, betas, params);
                if e <= error - ARMIJO * trial * gnorm2 {
                    accepted = Some((cand, e));
                    break;
                }
                trial *= 0.5;
            }
            let Some((cand, e)) = accepted else { break };
            let new_grad = self.gradient(&cand, betas, params);
            let (mut sy, mut ss) = (0.0, 0.0);
            for ((pn, po), (gn, go)) in cand.iter().zip(&z).zip(new_grad.iter().zip(&grad)) {
                for ((a, b), (c, d)) in pn.iter().zip(po).zip(gn.iter().zip(go)) {
                    let s = a - b;
                    sy += s * (c - d);
                    ss += s * s;
                }
            }
            step = if sy > 0.0 { ss / sy } else { trial * 2.0 };
            let gain = error - e;
            z = cand;
            grad = new_grad;
            error = e;
            if gain <= 1e-12 * error.abs() {
                break;
            }
        }
        (z, error, step)
    }
}

fn initial_step(params: KernelParams, betas: &[f64]) -> f64 {
    let bmax = betas.iter().fold(0.0f64, |m, b| m.max(b.abs())).max(1e-12);
    let bsum: f64 = betas.iter().map(|b| b.abs()).sum::<f64>().max(1.0);
    1.0 / (4.0 * params.gamma() * bmax * bsum)
}

fn pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}
