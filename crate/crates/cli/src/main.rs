//! Command-line runner: single episodes, policy training, benchmarks, and
//! exports over the bundled desk world or external spec files.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use swiftsage::controller::{run_episode, run_llm_every_step_episode, ControllerConfig, EpisodeResult};
use swiftsage::eval::{
    emit_plot_data, export_trajectories, import_trajectories, oracle_stub_script, run_benchmark,
    BenchmarkConfig, BenchmarkOutcome, LlmBackend, Strategy,
};
use swiftsage::llm::{HttpClient, HttpConfig, LlmClient, StubClient};
use swiftsage::oracle;
use swiftsage::swift::{build_dataset, dataset_to_jsonl, BalanceConfig, FastPolicy, RetrievalPolicy};
use swiftsage::world::{desk_families, desk_world, load_family, load_world, TaskFamily, WorldSpec};

#[derive(Parser)]
#[command(name = "swiftsage", version, about = "Dual-process agent for scored text-world tasks")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode and print its event log.
    Run(RunArgs),
    /// Build the imitation dataset, fit the fast policy, and persist it.
    TrainSwift(TrainArgs),
    /// Run the benchmark suite and write metrics plus exports.
    Bench(BenchArgs),
    /// Convert saved episodes into trajectory JSONL and plot data.
    Export(ExportArgs),
}

#[derive(Args)]
struct WorldArgs {
    /// World spec file (TOML). The bundled desk world when omitted.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Task family files (TOML). The bundled families when omitted.
    #[arg(long)]
    tasks: Vec<PathBuf>,
}

impl WorldArgs {
    fn load(&self) -> Result<(WorldSpec, Vec<TaskFamily>)> {
        let world = match &self.world {
            Some(path) => load_world(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
            None => desk_world().clone(),
        };
        let families = if self.tasks.is_empty() {
            desk_families().to_vec()
        } else {
            let mut families = Vec::new();
            for path in &self.tasks {
                let doc = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                families.push(load_family(&doc)?);
            }
            families
        };
        Ok((world, families))
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    /// Scripted stub generated from the oracle's gold path.
    Stub,
    /// Chat-completion endpoint over HTTP.
    Http,
    /// No model at all.
    None,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "stub")]
    backend: BackendArg,
    /// Chat-completions URL for the http backend.
    #[arg(long, default_value = "http://localhost:8080/v1/chat/completions")]
    endpoint: String,
    #[arg(long, default_value = "default")]
    model: String,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "LLM_API_KEY")]
    api_key_env: String,
}

impl BackendArgs {
    fn to_backend(&self) -> LlmBackend {
        match self.backend {
            BackendArg::Stub => LlmBackend::OracleStub,
            BackendArg::Http => LlmBackend::Http(HttpConfig {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                api_key_env: self.api_key_env.clone(),
                ..Default::default()
            }),
            BackendArg::None => LlmBackend::None,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Swiftsage,
    SwiftOnly,
    LlmEveryStep,
    Oracle,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Swiftsage => Strategy::Swiftsage,
            StrategyArg::SwiftOnly => Strategy::SwiftOnly,
            StrategyArg::LlmEveryStep => Strategy::LlmEveryStep,
            StrategyArg::Oracle => Strategy::Oracle,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Task family name.
    #[arg(long)]
    family: String,
    /// Variation index within the family.
    #[arg(long, default_value_t = 0)]
    variation: usize,
    #[arg(long, value_enum, default_value = "swiftsage")]
    strategy: StrategyArg,
    /// Previously trained policy file; trains on the fly when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Variation indices used for on-the-fly training.
    #[arg(long, value_delimiter = ',', default_values_t = (0..8).collect::<Vec<usize>>())]
    train_variations: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the episode's trajectory JSONL here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    world: WorldArgs,
    /// Where to write the fitted policy (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional imitation-dataset JSONL export.
    #[arg(long)]
    dataset_out: Option<PathBuf>,
    /// Variation indices per family to train on.
    #[arg(long, value_delimiter = ',', default_values_t = (0..8).collect::<Vec<usize>>())]
    train_variations: Vec<usize>,
    /// Balance config file (TOML); identity balancing when omitted.
    #[arg(long)]
    balance: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Benchmark config file (TOML); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// First N variations per family.
    #[arg(long)]
    variations: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Episode parallelism; 1 forces sequential execution.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Output directory for metrics, episodes, trajectories, and plots.
    #[arg(long, default_value = "bench-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Episodes file written by `bench` (episodes.json).
    #[arg(long)]
    episodes: PathBuf,
    /// Trajectory JSONL destination.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// Plot-data directory destination.
    #[arg(long)]
    plot_dir: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::TrainSwift(args) => cmd_train(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Export(args) => cmd_export(args),
    }
}

fn train_policy(
    world: &WorldSpec,
    families: &[TaskFamily],
    indices: &[usize],
    balance: &BalanceConfig,
) -> Result<RetrievalPolicy> {
    let mut trajectories = Vec::new();
    for family in families {
        for &index in indices {
            if index < family.variation_count() {
                let variation = family.variation(index)?;
                trajectories.push(oracle::solve(world, &variation)?);
            }
        }
    }
    let examples = build_dataset(&trajectories, balance)?;
    Ok(RetrievalPolicy::fit(world.grammar.clone(), examples))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (world, families) = args.world.load()?;
    let family = families
        .iter()
        .find(|f| f.name() == args.family)
        .with_context(|| format!("unknown family `{}`", args.family))?;
    let variation = family.variation(args.variation)?;
    let strategy: Strategy = args.strategy.into();
    let mut config = ControllerConfig::default();
    config.seed = args.seed;
    config.model = args.backend.model.clone();

    let result: EpisodeResult = match strategy {
        Strategy::Oracle => {
            let gold = oracle::solve(&world, &variation)?;
            swiftsage::controller::episode_from_trajectory(gold, args.seed)
        }
        _ => {
            let policy = match &args.policy {
                Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
                None => train_policy(
                    &world,
                    &families,
                    &args.train_variations,
                    &BalanceConfig::default(),
                )?,
            };
            let stub_client;
            let http_client;
            let llm: Option<&dyn LlmClient> = if strategy.needs_llm() {
                match args.backend.to_backend() {
                    LlmBackend::OracleStub => {
                        let gold = oracle::solve(&world, &variation)?;
                        stub_client = StubClient::new(oracle_stub_script(&world, &variation, &gold));
                        Some(&stub_client)
                    }
                    LlmBackend::Http(http_config) => {
                        http_client = HttpClient::new(http_config)?;
                        Some(&http_client)
                    }
                    LlmBackend::None => bail!("strategy `{}` needs a backend", strategy.as_str()),
                }
            } else {
                None
            };
            match strategy {
                Strategy::SwiftOnly => run_episode(&world, &variation, &policy, None, &config)?,
                Strategy::Swiftsage => run_episode(&world, &variation, &policy, llm, &config)?,
                Strategy::LlmEveryStep => run_llm_every_step_episode(
                    &world,
                    &variation,
                    llm.expect("checked above"),
                    &config,
                )?,
                Strategy::Oracle => unreachable!(),
            }
        }
    };

    println!("variation : {}", variation.id);
    println!("task      : {}", variation.description);
    println!("strategy  : {}", strategy.as_str());
    println!();
    for (i, (t, m)) in result
        .trajectory
        .transitions
        .iter()
        .zip(&result.mode_log)
        .enumerate()
    {
        let condition = m
            .condition
            .map(|c| format!(" <{c:?}>"))
            .unwrap_or_default();
        println!(
            "{i:3} [{:?}{condition}] {:<36} valid={} r={:+} s={} | {}",
            m.mode, t.action.surface, t.valid, t.reward, t.score, t.observation
        );
    }
    println!();
    println!(
        "finished  : {:?} | score {} | last>=0 {} | actions {} | sage calls {} | tokens {}",
        result.terminated,
        result.final_score,
        result.last_nonnegative_score,
        result.action_count(),
        result.sage_invocations,
        result.total_tokens(),
    );
    for (i, call) in result.llm_calls.iter().enumerate() {
        println!(
            "llm call {i}: stage={} prompt_tokens={} completion_tokens={}",
            call.stage, call.prompt_tokens, call.completion_tokens
        );
    }
    if let Some(path) = args.out {
        let mut buffer = Vec::new();
        export_trajectories(std::slice::from_ref(&result), &mut buffer)?;
        fs::write(&path, buffer)?;
        println!("trajectory written to {}", path.display());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (world, families) = args.world.load()?;
    let balance = match &args.balance {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)?,
        None => BalanceConfig::default(),
    };
    let policy = train_policy(&world, &families, &args.train_variations, &balance)?;
    if let Some(path) = &args.dataset_out {
        fs::write(path, dataset_to_jsonl(policy.examples()))?;
        println!("dataset written to {}", path.display());
    }
    fs::write(&args.out, serde_json::to_string(&policy)?)?;
    let meta = policy.metadata();
    println!("policy written to {}", args.out.display());
    println!("examples    : {}", policy.examples().len());
    println!("fingerprint : {}", meta.fingerprint);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let (world, families) = args.world.load()?;
    let mut config: BenchmarkConfig = match &args.config {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => BenchmarkConfig::default(),
    };
    if let Some(strategy) = args.strategy {
        config.strategy = strategy.into();
    }
    if let Some(n) = args.variations {
        config.variations_per_family = n;
    }
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    if args.parallelism.is_some() {
        config.parallelism = args.parallelism;
    }
    if args.config.is_none() {
        config.backend = args.backend.to_backend();
    }

    let outcome = run_benchmark(&world, &families, &config)?;
    let table = outcome.report.render_table();
    print!("{table}");

    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("metrics.txt"), &table)?;
    fs::write(
        args.out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&outcome.report)?,
    )?;
    fs::write(
        args.out_dir.join("episodes.json"),
        serde_json::to_string(&outcome)?,
    )?;
    let mut buffer = Vec::new();
    export_trajectories(&outcome.episodes, &mut buffer)?;
    fs::write(args.out_dir.join("trajectories.jsonl"), buffer)?;
    emit_plot_data(&outcome.episodes, &args.out_dir.join("plots"))?;
    println!("outputs written to {}", args.out_dir.display());
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let outcome: BenchmarkOutcome = serde_json::from_str(&fs::read_to_string(&args.episodes)?)?;
    if let Some(path) = &args.trajectories {
        let mut buffer = Vec::new();
        export_trajectories(&outcome.episodes, &mut buffer)?;
        fs::write(path, buffer)?;
        println!("trajectories written to {}", path.display());
        // Round-trip sanity: the export must load back to the same steps.
        let restored = import_trajectories(BufReader::new(fs::File::open(path)?))?;
        anyhow::ensure!(
            restored.len() == outcome.episodes.len(),
            "export round-trip lost episodes"
        );
    }
    if let Some(dir) = &args.plot_dir {
        emit_plot_data(&outcome.episodes, Path::new(dir))?;
        println!("plot data written to {}", dir.display());
    }
    Ok(())
}
