use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use gmi_core::bench::{build_benchmark, gamma_sweep, run_benchmark, BenchConfig, MetricsReport};
use gmi_core::{deserialize_requirement, deserialize_spec_any, ScoringStrategy, StrategyKind, DEFAULT_GAMMA};
use gmi_registry::{IdentifyResponse, Registry, RegistryError, SubmitMode};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gmi", version, about = "Identify generative models from an example image and prompt")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "GMI_ROOT")]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
    },
    /// Register a specification file (JSON document or JSON lines).
    Submit {
        #[arg(long, env = "GMI_ROOT")]
        root: PathBuf,
        spec: PathBuf,
        /// Store as a new revision if the id already exists.
        #[arg(long)]
        replace: bool,
    },
    /// Rank registered models against a requirement file.
    Identify {
        #[arg(long, env = "GMI_ROOT")]
        root: PathBuf,
        requirement: PathBuf,
        #[arg(long, default_value = "weighted")]
        strategy: String,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long)]
        k: Option<usize>,
        /// Print the ranking as JSON.
        #[arg(long)]
        json: bool,
    },
    /// List registered models in insertion order.
    List {
        #[arg(long, env = "GMI_ROOT")]
        root: PathBuf,
    },
    /// Remove a model.
    Remove {
        #[arg(long, env = "GMI_ROOT")]
        root: PathBuf,
        model_id: String,
    },
    /// Run the synthetic identification benchmark.
    Bench {
        /// TOML benchmark configuration; defaults apply to omitted keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated strategy names, overriding the config.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
        /// Also sweep the configured gamma grid.
        #[arg(long)]
        gamma_sweep: bool,
    },
}

enum Failure {
    NotFound(String),
    Invalid(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::NotFound(_) => 3,
            Failure::Invalid(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::NotFound(m) | Failure::Invalid(m) | Failure::Other(m) => m,
        }
    }
}

impl From<RegistryError> for Failure {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::NotFound(_) => Failure::NotFound(e.to_string()),
            e if e.is_client_error() => Failure::Invalid(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

impl From<gmi_core::Error> for Failure {
    fn from(e: gmi_core::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Failure::NotFound(format!("{}: no such file", path.display())),
        _ => Failure::Other(format!("{}: {e}", path.display())),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Serve { root, listen } => serve(root, &listen),
        Command::Submit { root, spec, replace } => {
            let spec = deserialize_spec_any(&read(&spec)?)?;
            let mode = if replace { SubmitMode::Replace } else { SubmitMode::New };
            let done = Registry::open(root)?.submit(spec, mode)?;
            println!("{} r{}", done.model_id, done.revision);
            Ok(())
        }
        Command::Identify { root, requirement, strategy, gamma, k, json } => {
            let req = deserialize_requirement(&read(&requirement)?)?;
            let strategy = ScoringStrategy::parse(&strategy, gamma)?;
            let ranking = Registry::open(root)?.identify(&req, &strategy, k)?;
            if json {
                let resp = IdentifyResponse {
                    strategy: strategy.kind.name().to_string(),
                    gamma,
                    entries: ranking.entries,
                };
                println!("{}", serde_json::to_string_pretty(&resp).expect("ranking serializes"));
            } else {
                println!("{:>4}  {:<24} {:>14}", "rank", "model", "distance");
                for e in &ranking.entries {
                    println!("{:>4}  {:<24} {:>14.6e}", e.rank, e.model_id, e.distance);
                }
            }
            Ok(())
        }
        Command::List { root } => {
            for m in Registry::open(root)?.list() {
                println!("{}\t{}\t{}", m.model_id, m.n_samples, m.download_count);
            }
            Ok(())
        }
        Command::Remove { root, model_id } => {
            Registry::open(root)?.remove(&model_id)?;
            Ok(())
        }
        Command::Bench { config, out, strategies, gamma_sweep } => {
            bench(config.as_deref(), &out, strategies, gamma_sweep)
        }
    }
}

fn serve(root: PathBuf, listen: &str) -> Result<(), Failure> {
    let registry = Arc::new(Registry::open(root)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Other(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| Failure::Invalid(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Failure::Other(e.to_string()))?;
        println!("listening on http://{addr}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        gmi_registry::serve(registry, listener, shutdown).await.map_err(|e| Failure::Other(e.to_string()))
    })
}

#[derive(Serialize)]
struct BenchReport {
    config: BenchConfig,
    reports: Vec<MetricsReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    gamma_sweep: Vec<MetricsReport>,
}

fn bench(config: Option<&Path>, out: &Path, names: Option<Vec<String>>, sweep: bool) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(path) => {
            let text = String::from_utf8(read(path)?)
                .map_err(|_| Failure::Invalid(format!("{}: not UTF-8", path.display())))?;
            BenchConfig::from_toml_str(&text)?
        }
        None => BenchConfig::default(),
    };
    if let Some(names) = names {
        cfg.strategies = names.iter().map(|n| n.parse::<StrategyKind>()).collect::<Result<_, _>>()?;
    }
    let (fixture, tasks) = build_benchmark(&cfg)?;
    let identifier = fixture.identifier();
    let strategies = cfg.strategies.iter().map(|k| cfg.strategy(*k)).collect::<Result<Vec<_>, _>>()?;
    let reports = run_benchmark(&identifier, &tasks, &strategies, cfg.gamma)?;
    print!("{}", table(&reports, cfg.models));

    let mut swept = Vec::new();
    if sweep {
        for s in strategies.iter().filter(|s| s.kind != StrategyKind::Download) {
            swept.extend(gamma_sweep(&identifier, &tasks, s, &cfg.gamma_grid)?.into_iter().map(|(_, r)| r));
        }
        let tsv = out.with_extension("gamma.tsv");
        write(&tsv, sweep_tsv(&swept).as_bytes())?;
        println!("gamma sweep written to {}", tsv.display());
    }

    let report = BenchReport { config: cfg, reports, gamma_sweep: swept };
    write(out, &serde_json::to_vec_pretty(&report).expect("report serializes"))?;
    println!("report written to {}", out.display());
    Ok(())
}

fn table(reports: &[MetricsReport], models: usize) -> String {
    let ks = models.min(4);
    let mut s = format!("{:<12}", "strategy");
    for k in 1..=ks {
        let _ = write!(s, " {:>7}", format!("top-{k}"));
    }
    let _ = writeln!(s, " {:>7}", "rank");
    for r in reports {
        let _ = write!(s, "{:<12}", r.strategy);
        for k in 1..=ks {
            let _ = write!(s, " {:>7.3}", r.top(k));
        }
        let _ = writeln!(s, " {:>7.3}", r.mean_rank);
    }
    if reports.iter().any(|r| r.strategy == StrategyKind::RkmeBasic.name()) {
        s.push_str("note: rkme-basic and rkme-embed share one point space on synthetic data\n");
    }
    s
}

fn sweep_tsv(reports: &[MetricsReport]) -> String {
    let mut s = String::from("strategy\tgamma\ttop1\ttop2\ttop3\ttop4\tmean_rank\n");
    for r in reports {
        let _ = write!(s, "{}\t{}", r.strategy, r.gamma);
        for k in 0..4 {
            let cell = r.top_k.get(k).map(|v| v.to_string()).unwrap_or_default();
            let _ = write!(s, "\t{cell}");
        }
        let _ = writeln!(s, "\t{}", r.mean_rank);
    }
    s
}
