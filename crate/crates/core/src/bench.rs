//! Synthetic identification benchmark.
//!
//! Generators draw points on circles: prompt `p ∈ (−1, 1)` maps to angle `pπ`,
//! and the two members of a pair trace the same circle in opposite
//! directions (`(cos pπ, sin pπ)` versus `(sin pπ, cos pπ)`). Under uniform
//! prompts both members share one image distribution, so only scores that
//! look at the prompt/image relation can tell them apart. Pairs sit at
//! different seeded centres in a seeded random 2-plane of the image space.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::identify::{Identifier, ScoredRanking, ScoringStrategy, StrategyKind};
use crate::kernel::KernelParams;
use crate::requirement::{build_requirement, PromptProvenance, Requirement};
use crate::spec::{build_spec, Metadata, ModelSpec, PromptRecord};

/// Prompt range of the user-side conditional in the two-circle example.
pub const EXAMPLE1_USER_PROMPTS: (f64, f64) = (0.0, 0.5);

/// Synthetic prompt encoder: `p ↦ (1, cos pπ, sin pπ)/√2`, so the cosine
/// between two prompts is `cos²(π(p − p′)/2)`.
pub fn prompt_embedding(p: f64) -> Embedding {
    let a = p * std::f64::consts::PI;
    let c = std::f64::consts::FRAC_1_SQRT_2;
    Embedding::from_trusted(vec![c, c * a.cos(), c * a.sin()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGenerator {
    pub id: String,
    center: Vec<f64>,
    axis_u: Vec<f64>,
    axis_v: Vec<f64>,
    radius: f64,
    swapped: bool,
    pub noise_sigma: f64,
}

impl SyntheticGenerator {
    /// A circle generator in the plane spanned by orthonormal `axis_u`, `axis_v`.
    pub fn circle(
        id: impl Into<String>,
        center: Vec<f64>,
        axis_u: Vec<f64>,
        axis_v: Vec<f64>,
        radius: f64,
        swapped: bool,
        noise_sigma: f64,
    ) -> Self {
        assert_eq!(center.len(), axis_u.len());
        assert_eq!(center.len(), axis_v.len());
        SyntheticGenerator { id: id.into(), center, axis_u, axis_v, radius, swapped, noise_sigma }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Noise-free image embedding for prompt `p`.
    pub fn mean(&self, p: f64) -> Vec<f64> {
        let (s, c) = (p * std::f64::consts::PI).sin_cos();
        let (a, b) = if self.swapped { (s, c) } else { (c, s) };
        self.center
            .iter()
            .zip(self.axis_u.iter().zip(&self.axis_v))
            .map(|(m, (u, v))| m + self.radius * (a * u + b * v))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Embedding {
        let mut x = self.mean(p);
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("valid sigma");
            x.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
        Embedding::from_trusted(x)
    }

    /// Index-aligned specification from the given prompts.
    pub fn specification<R: Rng + ?Sized>(
        &self,
        prompts: &[f64],
        download_count: u64,
        rng: &mut R,
    ) -> Result<ModelSpec> {
        let images = prompts.iter().map(|&p| self.sample(p, rng)).collect();
        let records = prompts.iter().map(|&p| PromptRecord::from(prompt_embedding(p))).collect();
        build_spec(self.id.clone(), images, records, Metadata::new(), download_count)
    }
}

/// The unit-circle pair `f1 = (cos pπ, sin pπ)`, `f2 = (sin pπ, cos pπ)`.
pub fn example1_models() -> (SyntheticGenerator, SyntheticGenerator) {
    let u = vec![1.0, 0.0];
    let v = vec![0.0, 1.0];
    (
        SyntheticGenerator::circle("f1", vec![0.0, 0.0], u.clone(), v.clone(), 1.0, false, 0.0),
        SyntheticGenerator::circle("f2", vec![0.0, 0.0], u, v, 1.0, true, 0.0),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub models: usize,
    pub platform_prompts: usize,
    pub eval_prompts: usize,
    pub seeds: usize,
    pub image_dim: usize,
    pub radius: f64,
    /// Standard deviation of each pair centre's coordinates.
    pub center_spread: f64,
    /// Per-coordinate image noise.
    pub noise_sigma: f64,
    /// Per-coordinate noise on query prompt embeddings, emulating an interrogator.
    pub prompt_noise: f64,
    pub master_seed: u64,
    pub gamma: f64,
    pub reduced_size: usize,
    pub strategies: Vec<StrategyKind>,
    pub gamma_grid: Vec<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            models: 16,
            platform_prompts: 55,
            eval_prompts: 18,
            seeds: 10,
            image_dim: 16,
            radius: 3.0,
            center_spread: 3.0,
            noise_sigma: 0.3,
            prompt_noise: 0.05,
            master_seed: 20240101,
            gamma: crate::kernel::DEFAULT_GAMMA,
            reduced_size: 1,
            strategies: StrategyKind::ALL.to_vec(),
            gamma_grid: crate::kernel::GAMMA_GRID.to_vec(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.models == 0 || self.platform_prompts == 0 || self.eval_prompts == 0 || self.seeds == 0 {
            return bad("models, platform_prompts, eval_prompts and seeds must be positive");
        }
        if self.image_dim < 2 {
            return bad("image_dim must be at least 2");
        }
        for (name, v) in [
            ("radius", self.radius),
            ("center_spread", self.center_spread),
            ("noise_sigma", self.noise_sigma),
            ("prompt_noise", self.prompt_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative")));
            }
        }
        KernelParams::new(self.gamma)?;
        for &g in &self.gamma_grid {
            KernelParams::new(g)?;
        }
        if self.reduced_size == 0 || self.reduced_size > self.platform_prompts {
            return bad("reduced_size must be in 1..=platform_prompts");
        }
        Ok(())
    }

    pub fn task_count(&self) -> usize {
        self.models * self.eval_prompts * self.seeds
    }

    pub fn strategy(&self, kind: StrategyKind) -> Result<ScoringStrategy> {
        let mut s = ScoringStrategy::new(kind).with_kernel(KernelParams::new(self.gamma)?);
        s.reduced_size = Some(self.reduced_size);
        s.reduce.seed = self.master_seed;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTask {
    pub query: Requirement,
    pub true_model_id: String,
    pub eval_prompt_index: usize,
    pub seed: u64,
}

impl BenchmarkTask {
    pub fn query_image(&self) -> &Embedding {
        self.query.image_embedding()
    }

    pub fn query_prompt(&self) -> &Embedding {
        self.query.prompt_embedding()
    }
}

/// Registered specifications plus the generators and prompts behind them.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub generators: Vec<SyntheticGenerator>,
    pub specs: Vec<ModelSpec>,
    pub platform_prompts: Vec<f64>,
    pub eval_prompts: Vec<f64>,
}

// Independent RNG streams derived from the master seed.
fn stream(master: u64, tag: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let mut h = master ^ 0x243F_6A88_85A3_08D3;
    for x in [tag, a, b, c] {
        h = (h ^ x).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn random_plane(dim: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let mut u: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu < 1e-8 {
            continue;
        }
        u.iter_mut().for_each(|x| *x /= nu);
        let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&u).for_each(|(x, a)| *x -= proj * a);
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        return (u, v);
    }
}

fn draw_prompts(n: usize, avoid: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(n);
    while out.len() < n {
        let p = rng.random_range(-1.0..1.0);
        if avoid.iter().chain(&out).all(|q| (p - q).abs() > 1e-9) {
            out.push(p);
        }
    }
    out
}

fn noisy_prompt(p: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Embedding {
    let mut q = prompt_embedding(p).into_inner();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).unwrap();
        q.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    Embedding::from_trusted(q)
}

fn provenance(prompt_noise: f64) -> PromptProvenance {
    if prompt_noise > 0.0 {
        PromptProvenance::Pseudo
    } else {
        PromptProvenance::User
    }
}

/// Builds the specifications and the `models × eval_prompts × seeds` task grid.
pub fn build_benchmark(config: &BenchConfig) -> Result<(Fixture, Vec<BenchmarkTask>)> {
    config.validate()?;
    let m = config.models;
    let d = config.image_dim;
    let master = config.master_seed;

    let mut geo = stream(master, 1, 0, 0, 0);
    let center_dist = Normal::new(0.0, config.center_spread.max(f64::MIN_POSITIVE)).unwrap();
    let mut generators = Vec::with_capacity(m);
    for _ in 0..m.div_ceil(2) {
        let center: Vec<f64> = (0..d)
            .map(|_| if config.center_spread > 0.0 { center_dist.sample(&mut geo) } else { 0.0 })
            .collect();
        let (u, v) = random_plane(d, &mut geo);
        for swapped in [false, true] {
            let idx = generators.len();
            if idx == m {
                break;
            }
            generators.push(SyntheticGenerator::circle(
                format!("gen-{:02}", idx),
                center.clone(),
                u.clone(),
                v.clone(),
                config.radius,
                swapped,
                config.noise_sigma,
            ));
        }
    }

    let mut prompt_rng = stream(master, 2, 0, 0, 0);
    let platform_prompts = draw_prompts(config.platform_prompts, &[], &mut prompt_rng);
    let eval_prompts = draw_prompts(config.eval_prompts, &platform_prompts, &mut prompt_rng);

    let mut downloads: Vec<u64> = (1..=m as u64).map(|i| i * 100).collect();
    let mut dl_rng = stream(master, 3, 0, 0, 0);
    downloads.shuffle(&mut dl_rng);

    let specs = generators
        .iter()
        .enumerate()
        .map(|(i, g)| {
            g.specification(&platform_prompts, downloads[i], &mut stream(master, 4, i as u64, 0, 0))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tasks = Vec::with_capacity(config.task_count());
    for (t, g) in generators.iter().enumerate() {
        for (e, &p) in eval_prompts.iter().enumerate() {
            for seed in 0..config.seeds as u64 {
                let mut rng = stream(master, 5, t as u64, e as u64, seed);
                let image = g.sample(p, &mut rng);
                let prompt = noisy_prompt(p, config.prompt_noise, &mut rng);
                tasks.push(BenchmarkTask {
                    query: build_requirement(image, prompt, provenance(config.prompt_noise), None)?,
                    true_model_id: g.id.clone(),
                    eval_prompt_index: e,
                    seed,
                });
            }
        }
    }

    Ok((Fixture { generators, specs, platform_prompts, eval_prompts }, tasks))
}

/// The two-circle example: both models specified on one shared stratified
/// set of `platform_samples` prompts from U(−1, 1), and `queries` tasks whose
/// prompts come from U(0, 0.5), alternating between the two models.
pub fn build_example1(
    platform_samples: usize,
    queries: usize,
    prompt_noise: f64,
    seed: u64,
) -> Result<(Fixture, Vec<BenchmarkTask>)> {
    if platform_samples == 0 || queries == 0 {
        return Err(Error::InvalidConfig("sample and query counts must be positive".into()));
    }
    let (f1, f2) = example1_models();
    let mut rng = stream(seed, 10, 0, 0, 0);
    let platform_prompts = draw_prompts(platform_samples, &[], &mut rng);
    let generators = vec![f1, f2];
    let specs = generators
        .iter()
        .enumerate()
        .map(|(i, g)| g.specification(&platform_prompts, 0, &mut stream(seed, 11, i as u64, 0, 0)))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = EXAMPLE1_USER_PROMPTS;
    let mut qrng = stream(seed, 12, 0, 0, 0);
    let mut eval_prompts = Vec::with_capacity(queries);
    let mut tasks = Vec::with_capacity(queries);
    for i in 0..queries {
        let g = &generators[i % 2];
        let p = qrng.random_range(lo..hi);
        let image = g.sample(p, &mut qrng);
        let prompt = noisy_prompt(p, prompt_noise, &mut qrng);
        eval_prompts.push(p);
        tasks.push(BenchmarkTask {
            query: build_requirement(image, prompt, provenance(prompt_noise), None)?,
            true_model_id: g.id.clone(),
            eval_prompt_index: i,
            seed,
        });
    }
    Ok((Fixture { generators, specs, platform_prompts, eval_prompts }, tasks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub gamma: f64,
    pub task_count: usize,
    /// `top_k[k − 1]` is the top-k accuracy.
    pub top_k: Vec<f64>,
    /// Mean tie-averaged rank of the true model.
    pub mean_rank: f64,
}

impl MetricsReport {
    pub fn top(&self, k: usize) -> f64 {
        self.top_k[k - 1]
    }
}

/// One task's outcome: the true model's position and tie-averaged rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskOutcome {
    pub position: usize,
    pub tie_rank: f64,
}

impl TaskOutcome {
    pub fn from_ranking(ranking: &ScoredRanking, true_model_id: &str) -> Result<Self> {
        let position =
            ranking.position(true_model_id).ok_or_else(|| Error::UnknownModel(true_model_id.to_string()))?;
        Ok(TaskOutcome { position, tie_rank: ranking.tie_averaged_rank(true_model_id)? })
    }
}

/// Aggregates outcomes in order; `models` bounds k.
pub fn summarize(strategy: &str, gamma: f64, models: usize, outcomes: &[TaskOutcome]) -> MetricsReport {
    let n = outcomes.len();
    let mut hits = vec![0usize; models];
    let mut rank_sum = 0.0;
    for o in outcomes {
        for h in hits.iter_mut().skip(o.position - 1) {
            *h += 1;
        }
        rank_sum += o.tie_rank;
    }
    MetricsReport {
        strategy: strategy.to_string(),
        gamma,
        task_count: n,
        top_k: hits.iter().map(|&h| h as f64 / n as f64).collect(),
        mean_rank: rank_sum / n as f64,
    }
}

/// Identifies every task under every strategy and reports accuracy and rank.
pub fn run_benchmark(
    identifier: &Identifier,
    tasks: &[BenchmarkTask],
    strategies: &[ScoringStrategy],
    gamma: f64,
) -> Result<Vec<MetricsReport>> {
    let kernel = KernelParams::new(gamma)?;
    if tasks.is_empty() {
        return Err(Error::Empty("benchmark tasks"));
    }
    let models = identifier.models().len();
    strategies
        .iter()
        .map(|s| {
            let strat = ScoringStrategy { kernel, ..*s };
            identifier.warm(&strat)?;
            let outcomes = tasks
                .par_iter()
                .map(|t| TaskOutcome::from_ranking(&identifier.identify(&t.query, &strat)?, &t.true_model_id))
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(strat.kind.name(), gamma, models, &outcomes))
        })
        .collect()
}

/// Runs one strategy at each bandwidth in `gammas`.
pub fn gamma_sweep(
    identifier: &Identifier,
    tasks: &[BenchmarkTask],
    strategy: &ScoringStrategy,
    gammas: &[f64],
) -> Result<Vec<(f64, MetricsReport)>> {
    if gammas.is_empty() {
        return Err(Error::Empty("gamma grid"));
    }
    for &g in gammas {
        KernelParams::new(g)?;
    }
    gammas
        .iter()
        .map(|&g| {
            let mut r = run_benchmark(identifier, tasks, std::slice::from_ref(strategy), g)?;
            Ok((g, r.remove(0)))
        })
        .collect()
}

impl Fixture {
    pub fn identifier(&self) -> Identifier {
        Identifier::from_specs(self.specs.iter().cloned())
    }
}
