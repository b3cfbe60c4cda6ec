//! Brute-force reference computations. Nothing here calls into the library
//! except to unwrap `Embedding` into plain slices.
#![allow(dead_code)]

pub fn rbf(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let d = x[i] - y[i];
        s += d * d;
    }
    (-gamma * s).exp()
}

/// `‖Σ cᵢ φ(pᵢ)‖²` evaluated as a full double sum.
pub fn norm_sq(points: &[Vec<f64>], coefs: &[f64], gamma: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..points.len() {
        for j in 0..points.len() {
            s += coefs[i] * coefs[j] * rbf(&points[i], &points[j], gamma);
        }
    }
    s
}

/// `‖(1/N) Σ wᵢ φ(xᵢ) − φ(z)‖²`, built as one quadratic form over `[x₁ … x_N, z]`.
pub fn weighted(points: &[Vec<f64>], weights: &[f64], query: &[f64], gamma: f64) -> f64 {
    let n = points.len() as f64;
    let mut all = points.to_vec();
    all.push(query.to_vec());
    let mut coefs: Vec<f64> = weights.iter().map(|w| w / n).collect();
    coefs.push(-1.0);
    norm_sq(&all, &coefs, gamma)
}

pub fn uniform(points: &[Vec<f64>], query: &[f64], gamma: f64) -> f64 {
    weighted(points, &vec![1.0; points.len()], query, gamma)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn prompt_weighted(
    images: &[Vec<f64>],
    prompts: &[Vec<f64>],
    query_image: &[f64],
    query_prompt: &[f64],
    gamma: f64,
) -> f64 {
    let w: Vec<f64> = prompts.iter().map(|q| cosine(q, query_prompt)).collect();
    weighted(images, &w, query_image, gamma)
}

/// `‖(1/N) Σ φ(xᵢ) − Σ βⱼ φ(zⱼ)‖²`.
pub fn reduction(samples: &[Vec<f64>], points: &[Vec<f64>], betas: &[f64], gamma: f64) -> f64 {
    let n = samples.len() as f64;
    let mut all = samples.to_vec();
    all.extend_from_slice(points);
    let mut coefs = vec![1.0 / n; samples.len()];
    coefs.extend(betas.iter().map(|b| -b));
    norm_sq(&all, &coefs, gamma)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

/// Exhaustive search over a `steps × steps` grid spanning the samples'
/// bounding box for the single point minimising the size-1 reduction error.
pub fn grid_argmin(samples: &[Vec<f64>], steps: usize, gamma: f64) -> (Vec<f64>, f64) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for s in samples {
        for d in 0..2 {
            lo[d] = lo[d].min(s[d]);
            hi[d] = hi[d].max(s[d]);
        }
    }
    let n = samples.len() as f64;
    let kxx = norm_sq(samples, &vec![1.0 / n; samples.len()], gamma);
    let mut best = (vec![0.0; 2], f64::INFINITY);
    for i in 0..steps {
        for j in 0..steps {
            let p = vec![
                lo[0] + (hi[0] - lo[0]) * i as f64 / (steps - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (steps - 1) as f64,
            ];
            // For one point the best coefficient is its mean kernel value m,
            // leaving an error of kxx - m².
            let m: f64 = samples.iter().map(|s| rbf(s, &p, gamma)).sum::<f64>() / n;
            let err = kxx - m * m;
            if err < best.1 {
                best = (p, err);
            }
        }
    }
    best
}
