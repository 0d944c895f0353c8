use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use insight::bench::{load_suite, run_benchmark, run_ksweep, BenchError, BenchStrategy};
use insight::config::{build_embedder, BackendConfig, ServiceConfig};
use insight::dataset::{build_fixture_db, read_json, DatasetDir, DB_FILE, FAMILIES_FILE, SCHEMA_FILE};
use insight::engine::QueryEngine;
use insight::pipeline::{Pipeline, QueryDefaults, QueryError, QueryRequest};
use insight::remote::HttpBackendConfig;
use insight::service::{serve, AppState};
use insight::{local_pipeline, onboard_dir, OnboardDirError};
use insight_core::gateway::{Generator, SimulatedModelConfig};
use insight_core::prompt::{SchemaDescriptor, Strategy};

#[derive(Parser)]
#[command(name = "insight", version, about = "Natural-language questions over SQL datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and index a dataset directory.
    Onboard {
        dir: PathBuf,
        /// Replace the directory's examples.jsonl.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Persist the index and registry here (merged with what is there).
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Answer one question and print the SQL and result table.
    Query {
        question: String,
        /// A dataset directory, or a dataset id when --state is given.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, default_value = "CFS")]
        strategy: Strategy,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Score prompting strategies over a question suite.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "ZS,FS,CFS")]
        strategies: Vec<BenchStrategy>,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
    /// Contextual few-shot accuracy as a function of k.
    Ksweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long = "k", value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8")]
        ks: Vec<usize>,
    },
    /// Run the REST service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build fixture.db from the directory's CSV files and schema.json.
    BuildFixture { dir: PathBuf },
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Comma-separated: sim, http.
    #[arg(long, value_delimiter = ',', default_value = "sim")]
    backend: Vec<String>,
    #[arg(long, default_value_t = 0.9)]
    competence: f64,
    #[arg(long, default_value_t = 0.1)]
    zs_hit_rate: f64,
    /// Family catalog for the simulated model; defaults to the dataset's families.json.
    #[arg(long)]
    families: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

enum Failure {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::User(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Onboard { dir, pool, state } => cmd_onboard(&dir, pool.as_deref(), state.as_deref()),
        Command::Query { question, dataset, state, strategy, k, n, seed, backend } => {
            cmd_query(&question, &dataset, state.as_deref(), strategy, k, n, seed, &backend)
        }
        Command::Bench { run, strategies, k, n } => cmd_bench(&run, &strategies, k, n),
        Command::Ksweep { run, ks } => cmd_ksweep(&run, &ks),
        Command::Serve { config } => cmd_serve(&config),
        Command::BuildFixture { dir } => cmd_build_fixture(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn backends(args: &BackendArgs, dataset_dir: Option<&Path>) -> anyhow::Result<Vec<Arc<dyn Generator>>> {
    let base = Path::new(".");
    args.backend
        .iter()
        .map(|name| {
            let config = match name.as_str() {
                "sim" => BackendConfig::Sim {
                    families: args.families.clone().or_else(|| {
                        dataset_dir.map(|d| d.join(FAMILIES_FILE)).filter(|p| p.is_file())
                    }),
                    model: SimulatedModelConfig {
                        competence: args.competence,
                        zs_hit_rate: args.zs_hit_rate,
                        ..Default::default()
                    },
                },
                "http" => BackendConfig::Http(HttpBackendConfig {
                    endpoint: args.endpoint.clone().ok_or_else(|| anyhow!("--backend http needs --endpoint"))?,
                    model: args.model.clone().ok_or_else(|| anyhow!("--backend http needs --model"))?,
                    timeout_ms: 30_000,
                    api_key_env: insight::remote::API_KEY_ENV.into(),
                }),
                other => return Err(anyhow!("unknown backend `{other}` (expected sim or http)")),
            };
            config.build(base)
        })
        .collect()
}

fn cmd_onboard(dir: &Path, pool: Option<&Path>, state: Option<&Path>) -> CliResult {
    let pipeline = local_pipeline(backends(&BackendArgs::default_sim(), None)?.remove(0), QueryDefaults::default());
    if let Some(s) = state.filter(|s| s.join(insight::pipeline::INDEX_FILE).is_file()) {
        pipeline.load_state(s).with_context(|| format!("loading state from {}", s.display()))?;
    }
    let summary = onboard_dir(&pipeline, dir, pool).map_err(|e| Failure::User(describe_onboard(e)))?;
    println!("{}: {} entries added", summary.dataset_id, summary.entries_added);
    if let Some(s) = state {
        pipeline.save_state(s).map_err(|e| Failure::Internal(e.into()))?;
        println!("state written to {}", s.display());
    }
    Ok(())
}

fn describe_onboard(e: OnboardDirError) -> anyhow::Error {
    match e {
        OnboardDirError::Onboard(insight::pipeline::OnboardError::Examples(diags)) => {
            let lines: Vec<String> = diags
                .iter()
                .map(|d| format!("  example {} ({:?}): {}", d.index + 1, d.question, d.problem))
                .collect();
            anyhow!("{} example(s) failed validation:\n{}", diags.len(), lines.join("\n"))
        }
        other => other.into(),
    }
}

impl BackendArgs {
    fn default_sim() -> Self {
        Self {
            backend: vec!["sim".into()],
            competence: 0.9,
            zs_hit_rate: 0.1,
            families: None,
            endpoint: None,
            model: None,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_query(question: &str, dataset: &str, state: Option<&Path>, strategy: Strategy, k: usize, n: usize, seed: u64, backend: &BackendArgs) -> CliResult {
    let dir = Path::new(dataset);
    let in_process = state.is_none() && dir.is_dir();
    let generator = backends(backend, in_process.then_some(dir))?.remove(0);
    let pipeline = local_pipeline(generator, QueryDefaults::default());
    let dataset_id = if in_process {
        onboard_dir(&pipeline, dir, None).map_err(|e| Failure::User(describe_onboard(e)))?.dataset_id
    } else {
        let s = state.ok_or_else(|| anyhow!("`{dataset}` is not a dataset directory; pass --state to query a saved dataset"))?;
        pipeline.load_state(s).with_context(|| format!("loading state from {}", s.display()))?;
        dataset.to_string()
    };
    let req = QueryRequest { dataset_id, question: question.into(), strategy: Some(strategy), k: Some(k), n: Some(n), seed: Some(seed) };
    match pipeline.answer(&req) {
        Ok(resp) => {
            for w in &resp.warnings {
                println!("warning: {w}");
            }
            println!("SQL: {}", resp.sql);
            println!("sanitizer: allowed");
            print!("{}", resp.table.to_text());
            Ok(())
        }
        Err(QueryError::Rejected { sql, verdict, .. }) => {
            println!("SQL: {sql}");
            for v in &verdict.violations {
                println!("sanitizer: {:?} at {}: {}", v.rule, v.offset, v.detail);
            }
            Err(anyhow!("generated SQL was rejected; nothing executed").into())
        }
        Err(e) => Err(anyhow::Error::from(e).into()),
    }
}

type BenchSetup = (Pipeline, Vec<Arc<dyn Generator>>, Vec<insight::bench::SuiteItem>);

fn bench_setup(run: &RunArgs) -> Result<BenchSetup, Failure> {
    let suite = load_suite(&run.suite).map_err(|e| Failure::User(e.into()))?;
    let gens = backends(&run.backend, Some(&run.dataset))?;
    let pipeline = local_pipeline(gens[0].clone(), QueryDefaults::default());
    onboard_dir(&pipeline, &run.dataset, run.pool.as_deref()).map_err(|e| Failure::User(describe_onboard(e)))?;
    Ok((pipeline, gens, suite))
}

fn bench_failure(e: BenchError) -> Failure {
    Failure::User(e.into())
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Internal(e.into()))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Internal(anyhow!("{}: {e}", path.display())))?;
    Ok(path)
}

fn cmd_bench(run: &RunArgs, strategies: &[BenchStrategy], k: usize, n: usize) -> CliResult {
    let (pipeline, gens, suite) = bench_setup(run)?;
    let refs: Vec<&dyn Generator> = gens.iter().map(|g| g.as_ref()).collect();
    let result = run_benchmark(&pipeline, &suite, strategies, &refs, k, n, run.seed).map_err(bench_failure)?;
    let text = result.report.to_text(Some(result.wall_time_s));
    print!("{text}");
    if let Some(out) = &run.out {
        let json = write_out(out, "report.json", &result.report.to_json())?;
        write_out(out, "report.txt", &text)?;
        println!("report written to {}", json.display());
    }
    if pipeline.engine().write_count() != 0 {
        return Err(Failure::Internal(anyhow!("engine reported {} writes", pipeline.engine().write_count())));
    }
    Ok(())
}

fn cmd_ksweep(run: &RunArgs, ks: &[usize]) -> CliResult {
    let (pipeline, gens, suite) = bench_setup(run)?;
    let sweep = run_ksweep(&pipeline, &suite, ks, gens[0].as_ref(), run.seed).map_err(bench_failure)?;
    let csv = sweep.to_csv();
    print!("{csv}");
    println!("accuracy by k: {}", sweep.sparkline());
    if let Some(out) = &run.out {
        let path = write_out(out, "ksweep.csv", &csv)?;
        println!("sweep written to {}", path.display());
    }
    Ok(())
}

fn cmd_serve(config_path: &Path) -> CliResult {
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let config = ServiceConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let engine = QueryEngine::new(config.guard(base)?, config.exec_options());
    let pipeline = Pipeline::new(build_embedder(&config.embedder)?, config.backend.build(base)?, engine, config.defaults);
    for dir in &config.datasets {
        let summary = onboard_dir(&pipeline, &base.join(dir), None).map_err(|e| Failure::User(describe_onboard(e)))?;
        tracing::info!("onboarded {} ({} entries)", summary.dataset_id, summary.entries_added);
    }
    let state = Arc::new(AppState::new(Arc::new(pipeline), &config));
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.into()))?;
    rt.block_on(serve(state, &config.listen)).map_err(Failure::Internal)
}

fn cmd_build_fixture(dir: &Path) -> CliResult {
    let schema: SchemaDescriptor = read_json(&dir.join(SCHEMA_FILE)).map_err(anyhow::Error::from)?;
    let out = dir.join(DB_FILE);
    let rows = build_fixture_db(dir, &schema, &out).map_err(anyhow::Error::from)?;
    // make sure the result loads as a dataset directory
    DatasetDir::load(dir).map_err(anyhow::Error::from)?;
    println!("{}: {} rows in {} tables", out.display(), rows, schema.tables.len());
    Ok(())
}
