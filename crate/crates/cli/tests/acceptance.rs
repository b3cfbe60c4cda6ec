//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::sync::Arc;
use std::time::{Duration, Instant};

use gmi_core::bench::{
    build_benchmark, build_example1, gamma_sweep, run_benchmark, BenchConfig, BenchmarkTask, Fixture,
};
use gmi_core::*;
use gmi_registry::{IdentifyRequest, IdentifyResponse, Registry, SubmitMode};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn vecs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

fn emb(v: &[Vec<f64>]) -> Vec<Embedding> {
    v.iter().map(|x| Embedding::new(x.clone()).unwrap()).collect()
}

fn e(v: &[f64]) -> Embedding {
    Embedding::new(v.to_vec()).unwrap()
}

fn score_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let instances = 1000;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(1..=16);
        let d = rng.random_range(1..=32);
        let qd = rng.random_range(1..=32);
        let gamma = *GAMMA_GRID.choose(&mut rng).unwrap();
        let p = KernelParams::new(gamma).unwrap();
        let pts = vecs(&mut rng, n, d);
        let prompts = vecs(&mut rng, n, qd);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = vecs(&mut rng, 1, d).remove(0);
        let q = vecs(&mut rng, 1, qd).remove(0);
        let m = rng.random_range(1..=n);
        let rpts = vecs(&mut rng, m, d);
        let betas: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rs = ReducedSet {
            points: emb(&rpts),
            betas: betas.clone(),
            kernel: p,
            converged: true,
            iterations: 0,
            error_trace: vec![],
        };
        let pairs = [
            (uniform_mmd_sq(&emb(&pts), &e(&z), p).unwrap(), oracle::uniform(&pts, &z, gamma)),
            (weighted_mmd_sq(&emb(&pts), &w, &e(&z), p).unwrap(), oracle::weighted(&pts, &w, &z, gamma)),
            (
                prompt_weighted_score(&emb(&pts), &emb(&prompts), &e(&z), &e(&q), p).unwrap(),
                oracle::prompt_weighted(&pts, &prompts, &z, &q, gamma),
            ),
            (reduction_error(&emb(&pts), &rs).unwrap(), oracle::reduction(&pts, &rpts, &betas, gamma)),
        ];
        for (got, want) in pairs {
            worst = worst.max(oracle::rel_err(got, want));
        }
    }
    check(worst <= 1e-9, format!("{instances} instances x 4 scores, worst rel err {worst:.2e} (tol 1e-9)"))
}

fn degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=16);
        let d = rng.random_range(1..=32);
        let pts = emb(&vecs(&mut rng, n, d));
        let z = e(&vecs(&mut rng, 1, d)[0]);
        let p = KernelParams::new(*GAMMA_GRID.choose(&mut rng).unwrap()).unwrap();
        let u = uniform_mmd_sq(&pts, &z, p).unwrap();
        let w = weighted_mmd_sq(&pts, &vec![1.0; n], &z, p).unwrap();
        worst = worst.max((u - w).abs());
    }
    check(worst <= 1e-12, format!("100 instances, worst abs diff {worst:.2e} (tol 1e-12)"))
}

fn default_benchmark() -> (Fixture, Vec<BenchmarkTask>) {
    build_benchmark(&BenchConfig::default()).unwrap()
}

fn download_exactness() -> Outcome {
    let (fixture, tasks) = default_benchmark();
    let r = run_benchmark(
        &fixture.identifier(),
        &tasks,
        &[ScoringStrategy::new(StrategyKind::Download)],
        DEFAULT_GAMMA,
    )
    .unwrap()
    .remove(0);
    let exact = (1..=4).all(|k| r.top(k) == k as f64 / 16.0) && r.mean_rank == 8.5;
    check(
        exact && r.task_count == 2880,
        format!("top-1..4 = {:?}, mean rank {} over {} tasks", &r.top_k[..4], r.mean_rank, r.task_count),
    )
}

fn example1() -> Outcome {
    let (fixture, tasks) = build_example1(2000, 200, 0.0, 7).unwrap();
    let id = fixture.identifier();
    let baselines = [
        ScoringStrategy::new(StrategyKind::RkmeEmbed),
        ScoringStrategy::new(StrategyKind::RkmeBasic),
        ScoringStrategy::new(StrategyKind::RkmeEmbed).with_reduced_size(None),
    ];
    let wp = ScoringStrategy::new(StrategyKind::WeightedProposal);
    let mut max_gap: f64 = 0.0;
    let mut hits = 0;
    for task in &tasks {
        for s in &baselines {
            let r = id.identify(&task.query, s).unwrap();
            max_gap = max_gap.max((r.entries[0].distance - r.entries[1].distance).abs());
        }
        if id.identify(&task.query, &wp).unwrap().entries[0].model_id == task.true_model_id {
            hits += 1;
        }
    }
    let acc = hits as f64 / tasks.len() as f64;
    check(
        max_gap <= 0.02 && acc >= 0.95,
        format!("baseline max |d(f1)-d(f2)| = {max_gap:.2e} (<= 0.02), weighted top-1 = {acc:.3} (>= 0.95)"),
    )
}

fn synthetic_ordering() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let cfg = BenchConfig::default();
        let (fixture, tasks) = build_benchmark(&cfg).unwrap();
        let id = fixture.identifier().parallel(false);
        let strategies = [
            cfg.strategy(StrategyKind::WeightedProposal).unwrap(),
            cfg.strategy(StrategyKind::RkmeEmbed).unwrap(),
        ];
        let r = run_benchmark(&id, &tasks, &strategies, cfg.gamma).unwrap();
        let (wp, rk) = (&r[0], &r[1]);
        let chance = 1.0 / cfg.models as f64;
        let ok = wp.top(1) > rk.top(1)
            && rk.top(1) > chance
            && wp.mean_rank < rk.mean_rank
            && rk.mean_rank < 8.5
            && wp.top(4) >= 0.80;
        check(
            ok,
            format!(
                "top-1 weighted {:.3} > rkme-embed {:.3} > {chance:.4}; rank {:.3} < {:.3} < 8.5; weighted top-4 {:.3} (>= 0.80); {} tasks",
                wp.top(1),
                rk.top(1),
                wp.mean_rank,
                rk.mean_rank,
                wp.top(4),
                wp.task_count
            ),
        )
    })
}

fn reduced_set_quality() -> Outcome {
    let p = KernelParams::new(0.02).unwrap();
    let opts = ReduceOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let unit = Normal::new(0.0, 1.0).unwrap();

    let mut violations = 0;
    let mut max_full: f64 = 0.0;
    for _ in 0..20 {
        let comps = rng.random_range(2..=4);
        let centers = vecs(&mut rng, comps, 3)
            .into_iter()
            .map(|c| c.iter().map(|v| v * 3.0).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        let samples: Vec<Embedding> = (0..60)
            .map(|i| e(&centers[i % comps].iter().map(|c| c + unit.sample(&mut rng)).collect::<Vec<_>>()))
            .collect();
        let errs: Vec<f64> = [1, 2, 4, 8]
            .iter()
            .map(|&m| reduction_error(&samples, &reduce(&samples, m, p, &opts).unwrap()).unwrap())
            .collect();
        violations += errs.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
        let full = reduce(&samples, samples.len(), p, &opts).unwrap();
        max_full = max_full.max(reduction_error(&samples, &full).unwrap());
    }

    let samples: Vec<Vec<f64>> = (0..200).map(|_| (0..2).map(|_| unit.sample(&mut rng)).collect()).collect();
    let rs = reduce(&emb(&samples), 1, p, &opts).unwrap();
    let (grid, _) = oracle::grid_argmin(&samples, 200, 0.02);
    let dist = rs.points[0].iter().zip(&grid).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    check(
        violations == 0 && dist <= 0.05 && max_full <= 1e-8,
        format!(
            "budget violations {violations}/60, size-1 vs grid {dist:.4} (<= 0.05), size=N error {max_full:.2e} (<= 1e-8)"
        ),
    )
}

fn gamma_robustness() -> Outcome {
    let cfg = BenchConfig::default();
    let (fixture, tasks) = build_benchmark(&cfg).unwrap();
    let id = fixture.identifier();
    let wp = cfg.strategy(StrategyKind::WeightedProposal).unwrap();
    let sweep = gamma_sweep(&id, &tasks, &wp, &GAMMA_GRID).unwrap();
    let in_band: Vec<f64> =
        sweep.iter().filter(|(g, _)| (0.01..=0.05).contains(g)).map(|(_, r)| r.top(1)).collect();
    let lo = in_band.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = in_band.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let all: Vec<String> = sweep.iter().map(|(g, r)| format!("{g}:{:.3}", r.top(1))).collect();
    check(
        in_band.len() == 5 && hi - lo <= 0.10,
        format!(
            "weighted top-1 spread {:.3} over gamma in [0.01, 0.05] (<= 0.10); grid {}",
            hi - lo,
            all.join(" ")
        ),
    )
}

fn service_equivalence() -> Outcome {
    let cfg = BenchConfig { eval_prompts: 3, seeds: 2, ..Default::default() };
    let (fixture, tasks) = build_benchmark(&cfg).unwrap();
    let queries: Vec<&Requirement> = tasks.iter().step_by(7).map(|t| &t.query).collect();
    let dir = tempfile::tempdir().unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let client = reqwest::Client::new();

    let query_all = |base: &str| -> Vec<Vec<(String, u64)>> {
        rt.block_on(async {
            let mut out = Vec::new();
            for kind in StrategyKind::ALL {
                for q in &queries {
                    let ask = IdentifyRequest {
                        requirement: (*q).clone(),
                        strategy: kind.name().into(),
                        gamma: None,
                        k: None,
                    };
                    let resp: IdentifyResponse = client
                        .post(format!("{base}/v1/identify"))
                        .json(&ask)
                        .send()
                        .await
                        .unwrap()
                        .json()
                        .await
                        .unwrap();
                    out.push(resp.entries.into_iter().map(|e| (e.model_id, e.distance.to_bits())).collect());
                }
            }
            out
        })
    };
    let start = |registry: Arc<Registry>| {
        rt.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            let base = format!("http://{}", listener.local_addr().unwrap());
            let (tx, rx) = tokio::sync::oneshot::channel::<()>();
            let task = tokio::spawn(gmi_registry::serve(registry, listener, async {
                let _ = rx.await;
            }));
            (base, tx, task)
        })
    };

    let mut library = Vec::new();
    for kind in StrategyKind::ALL {
        for q in &queries {
            let r = identify(&fixture.specs, q, &ScoringStrategy::new(kind)).unwrap();
            library
                .push(r.entries.into_iter().map(|e| (e.model_id, e.distance.to_bits())).collect::<Vec<_>>());
        }
    }

    let registry = Arc::new(Registry::open(dir.path()).unwrap());
    for spec in &fixture.specs {
        registry.submit(spec.clone(), SubmitMode::New).unwrap();
    }
    let (base, stop, task) = start(registry);
    let before = query_all(&base);
    let _ = stop.send(());
    rt.block_on(task).unwrap().unwrap();

    let reopened = Arc::new(Registry::open(dir.path()).unwrap());
    let models = reopened.len();
    let (base, stop, task) = start(reopened);
    let after = query_all(&base);
    let _ = stop.send(());
    rt.block_on(task).unwrap().unwrap();

    let n = library.len();
    let http_eq = before == library;
    let durable = after == before;
    check(
        http_eq && durable && models == 16,
        format!("{models} models, {n} rankings: http==library bitwise {http_eq}, after restart {durable}"),
    )
}

fn main() {
    let criteria = [
        Criterion { name: "score-oracle equivalence", budget: Duration::from_secs(10), run: score_oracle },
        Criterion { name: "unit-weight degeneracy", budget: Duration::from_secs(1), run: degeneracy },
        Criterion {
            name: "download baseline exactness",
            budget: Duration::from_secs(1),
            run: download_exactness,
        },
        Criterion { name: "two-circle example", budget: Duration::from_secs(60), run: example1 },
        Criterion {
            name: "synthetic benchmark ordering",
            budget: Duration::from_secs(600),
            run: synthetic_ordering,
        },
        Criterion { name: "reduced-set quality", budget: Duration::from_secs(60), run: reduced_set_quality },
        Criterion { name: "gamma robustness", budget: Duration::from_secs(1800), run: gamma_robustness },
        Criterion {
            name: "service equivalence and durability",
            budget: Duration::from_secs(30),
            run: service_equivalence,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > c.budget => Err(format!("{d}; over time budget {:?}", c.budget)),
            o => o,
        };
        match outcome {
            Ok(d) => println!("PASS  {:<36} {d} [{:.2?}]", c.name, elapsed),
            Err(d) => {
                failed += 1;
                println!("FAIL  {:<36} {d} [{:.2?}]", c.name, elapsed);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
