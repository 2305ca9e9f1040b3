//! Command-line front end: scenario validation, simulation runs, forecaster
//! training and figure-ready CSV emission.
//!
//! Exit codes: 0 success, 1 invalid scenario or arguments, 2 runtime failure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};

use swarmdiff::diffusion::{diffusion_probability, permeability_prefactor, FragmentId};
use swarmdiff::engine::{run_with_options, RunOptions, Scenario, SimState};
use swarmdiff::forecast::{
    build_input_matrix, predict, train, wavelet_decompose, RecurrentPredictor, SeriesKind,
    SwarmSeries, TrainConfig,
};
use swarmdiff::metric::NodeId;
use swarmdiff::scheduler::urgency;

#[derive(Parser)]
#[command(
    name = "swarmdiff",
    about = "Discrete-time P2P swarm simulator with diffusion-model scheduling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and emit per-step urgency heatmaps, availability
    /// curves and the transfer ledger.
    Run(RunArgs),
    /// Check a scenario file and list every violation.
    Validate(ValidateArgs),
    /// Train the recurrent forecaster on a series CSV and write a checkpoint.
    TrainForecast(TrainForecastArgs),
    /// Emit the urgency decay trace for peers requesting one fragment.
    DecayTrace(DecayTraceArgs),
    /// Generate a scenario file.
    GenScenario(GenScenarioArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file to load.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Parameter override, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Disable the forecaster regardless of the scenario setting.
    #[arg(long)]
    no_forecast: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory for the emitted CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Fan per-node scheduling out to worker threads (bit-identical output).
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Args)]
struct TrainForecastArgs {
    /// Input series as CSV lines of `step,value`.
    #[arg(long)]
    series: PathBuf,
    /// Output directory for checkpoint and loss curve.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Wavelet decomposition depth.
    #[arg(long, default_value_t = 4)]
    levels: usize,
    /// Hidden state width.
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    /// Forecast horizon in samples.
    #[arg(long, default_value_t = 6)]
    horizon: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DecayTraceArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Fragment whose requesting peers are traced.
    #[arg(long, default_value_t = 3)]
    fragment: usize,
}

#[derive(Args)]
struct GenScenarioArgs {
    /// Output scenario file.
    #[arg(long, default_value = "scenario.toml")]
    out: PathBuf,
    /// Named preset; `fig2` builds the 11-peer, 5-fragment experiment.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    fragments: Option<usize>,
    /// Comma-separated holder count per fragment, e.g. `3,0,2`.
    #[arg(long)]
    rarity: Option<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Failures carrying their process exit code.
enum Failure {
    /// Invalid scenario, file or arguments.
    Invalid(String),
    /// The scenario was fine but execution failed.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(msg) | Failure::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

struct EnvLogger {
    level: LevelFilter,
}

impl log::Log for EnvLogger {
    fn enabled(&self, metadata: &log::Metadata<'_>) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &log::Record<'_>) {
        if self.enabled(record.metadata()) {
            eprintln!("[{}] {}", record.level().to_string().to_lowercase(), record.args());
        }
    }

    fn flush(&self) {}
}

fn init_logger() {
    let level = match std::env::var("SWARM_LOG_LEVEL").ok().as_deref() {
        Some("error") => LevelFilter::Error,
        Some("warn") | None => LevelFilter::Warn,
        Some("info") => LevelFilter::Info,
        Some("debug") => LevelFilter::Debug,
        Some(other) => {
            eprintln!("unknown SWARM_LOG_LEVEL {other:?}, using warn");
            LevelFilter::Warn
        }
    };
    let _ = log::set_boxed_logger(Box::new(EnvLogger { level }));
    log::set_max_level(level);
}

fn main() -> ExitCode {
    init_logger();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate(args) => cmd_validate(args),
        Command::TrainForecast(args) => cmd_train_forecast(args),
        Command::DecayTrace(args) => cmd_decay_trace(args),
        Command::GenScenario(args) => cmd_gen_scenario(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, Failure> {
    if !args.scenario.exists() {
        return Err(Failure::Invalid(format!(
            "scenario file {} does not exist",
            args.scenario.display()
        )));
    }
    let mut scenario = Scenario::load(&args.scenario)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", args.scenario.display())))?;
    for pair in &args.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Failure::Invalid(format!("override {pair:?} is not of the form key=value"))
        })?;
        scenario
            .apply_override(key, value)
            .map_err(|e| Failure::Invalid(e.to_string()))?;
    }
    if let Some(seed) = args.seed {
        scenario.params.seed = seed;
    }
    if let Some(steps) = args.steps {
        scenario.params.steps = steps;
    }
    if args.no_forecast {
        scenario.params.forecast_enabled = false;
    }
    scenario
        .validate()
        .map_err(|e| Failure::Invalid(e.to_string()))?;
    Ok(scenario)
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    std::fs::write(path, content)
        .map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("creating {}: {e}", dir.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&args.scenario)?;
    ensure_dir(&args.out)?;
    let options = RunOptions {
        parallel_scheduling: args.parallel,
        ..RunOptions::default()
    };
    let log = run_with_options(&scenario, options)
        .map_err(|e| Failure::Runtime(e.to_string()))?;

    for step in 0..log.steps_logged() {
        let csv = log
            .chi_csv(step, true)
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        write_file(&args.out.join(format!("chi_step_{step:04}.csv")), &csv)?;
    }
    write_file(&args.out.join("availability.csv"), &log.availability_csv())?;
    write_file(&args.out.join("transfers.csv"), &log.transfers_csv())?;
    info!(
        "simulated {} steps, {} ledger entries, output in {}",
        log.steps_logged(),
        log.transfers().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    if !args.scenario.exists() {
        return Err(Failure::Invalid(format!(
            "scenario file {} does not exist",
            args.scenario.display()
        )));
    }
    let scenario = Scenario::load(&args.scenario)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", args.scenario.display())))?;
    let violations = scenario.violations();
    if violations.is_empty() {
        println!("{}: valid", args.scenario.display());
        Ok(())
    } else {
        Err(Failure::Invalid(format!(
            "{}: {} violation(s)\n{}",
            args.scenario.display(),
            violations.len(),
            violations.join("\n")
        )))
    }
}

fn parse_series_csv(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Invalid(format!("reading {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value_field = line.split(',').nth(1).ok_or_else(|| {
            Failure::Invalid(format!(
                "{}:{}: expected `step,value`, got {line:?}",
                path.display(),
                number + 1
            ))
        })?;
        match value_field.trim().parse::<f64>() {
            Ok(value) => values.push(value),
            // A single non-numeric first row is tolerated as a header.
            Err(_) if number == 0 => continue,
            Err(e) => {
                return Err(Failure::Invalid(format!(
                    "{}:{}: {e}",
                    path.display(),
                    number + 1
                )))
            }
        }
    }
    if values.is_empty() {
        return Err(Failure::Invalid(format!(
            "{} holds no samples",
            path.display()
        )));
    }
    Ok(values)
}

fn cmd_train_forecast(args: TrainForecastArgs) -> Result<(), Failure> {
    let samples = parse_series_csv(&args.series)?;
    if args.levels == 0 || args.levels > 16 || args.horizon == 0 {
        return Err(Failure::Invalid(
            "levels must be in 1..=16 and horizon at least 1".to_string(),
        ));
    }
    if samples.len() < (1usize << args.levels).max(args.horizon + 2) {
        return Err(Failure::Invalid(format!(
            "series of {} samples is too short for {} levels and horizon {}",
            samples.len(),
            args.levels,
            args.horizon
        )));
    }
    ensure_dir(&args.out)?;

    // Training happens in standardised space; a consumer of the checkpoint
    // must standardise its inputs the same way.
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / samples.len() as f64;
    let std = var.sqrt().max(1e-12);
    let normalized: Vec<f64> = samples.iter().map(|x| (x - mean) / std).collect();

    let series = SwarmSeries::new(SeriesKind::Requests, normalized.clone());
    let decomp =
        wavelet_decompose(&series, args.levels).map_err(|e| Failure::Invalid(e.to_string()))?;
    let matrix = build_input_matrix(&decomp);
    let rows = normalized.len() - args.horizon;
    let train_matrix = swarmdiff::forecast::WaveletInputMatrix::from_rows(
        matrix.rows()[..rows].to_vec(),
    );
    let targets: Vec<f64> = (0..rows).map(|tau| normalized[tau + args.horizon]).collect();

    let mut net = RecurrentPredictor::new(args.levels + 1, args.hidden, 1, args.horizon);
    let report = train(
        &mut net,
        &train_matrix,
        &targets,
        &TrainConfig::new(args.epochs, args.learning_rate, args.seed),
    )
    .map_err(|e| Failure::Runtime(e.to_string()))?;

    let checkpoint = args.out.join("checkpoint.json");
    net.save_checkpoint(&checkpoint)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut curve = String::from("epoch,loss\n");
    for (epoch, loss) in report.losses.iter().enumerate() {
        curve.push_str(&format!("{epoch},{loss}\n"));
    }
    write_file(&args.out.join("loss_curve.csv"), &curve)?;

    // In-sample forecast quality against the persistence baseline, both in
    // the standardised space.
    net.reset();
    let mut model_se = 0.0;
    for tau in 0..rows {
        let forecast = predict(&mut net, matrix.row(tau)).map_err(|e| Failure::Runtime(e.to_string()))?;
        let err = forecast - normalized[tau + args.horizon];
        model_se += err * err;
    }
    let persistence: f64 = (0..rows)
        .map(|tau| {
            let err = normalized[tau + args.horizon] - normalized[tau];
            err * err
        })
        .sum::<f64>()
        / rows as f64;
    println!(
        "final loss {:.6}; forecast mse {:.6} vs persistence {:.6}; checkpoint {}",
        report.final_loss,
        model_se / rows as f64,
        persistence,
        checkpoint.display()
    );
    Ok(())
}

fn cmd_decay_trace(args: DecayTraceArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&args.scenario)?;
    if args.fragment >= scenario.fragment_count {
        return Err(Failure::Invalid(format!(
            "fragment {} out of range (scenario has {})",
            args.fragment, scenario.fragment_count
        )));
    }
    ensure_dir(&args.out)?;

    let state = SimState::new(&scenario).map_err(|e| Failure::Runtime(e.to_string()))?;
    let fragment = FragmentId(args.fragment);
    let observer = NodeId(0);
    let queue = state.queue(fragment);
    let peers: Vec<NodeId> = queue.iter().copied().filter(|p| *p != observer).collect();
    if peers.is_empty() {
        return Err(Failure::Invalid(format!(
            "no peers request fragment {}; nothing to trace",
            args.fragment
        )));
    }

    let stats = state.swarm_stats();
    let permeability = swarmdiff::scheduler::fragment_permeabilities(&stats);
    let Some(&d) = permeability.get(&fragment) else {
        return Err(Failure::Invalid(format!(
            "fragment {} has no swarm; nothing to trace",
            args.fragment
        )));
    };
    let view = state.view(observer);
    let floor = view
        .min_peer_delta()
        .ok_or_else(|| Failure::Runtime("observer view is empty".to_string()))?;
    let prefactor =
        permeability_prefactor(d, floor).map_err(|e| Failure::Runtime(e.to_string()))?;

    // chi(tau) per peer with P frozen at the initial measurement; the decay
    // shows how staleness gradually unbinds the choice from the distances.
    let c = scenario.params.c;
    let mut columns = Vec::new();
    for &peer in &peers {
        let delta = view.delta(peer).map_err(|e| Failure::Runtime(e.to_string()))?;
        let p = diffusion_probability(prefactor, delta)
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        let chis: Vec<f64> = (0..=scenario.params.steps)
            .map(|age| urgency(p, delta, age, c).value())
            .collect();
        columns.push(chis);
    }
    let max = columns
        .iter()
        .flat_map(|c| c.iter().copied())
        .fold(0.0f64, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };

    let mut out = String::from("tau");
    for peer in &peers {
        out.push_str(&format!(",peer_{}", peer.index()));
    }
    out.push('\n');
    for age in 0..=scenario.params.steps as usize {
        out.push_str(&age.to_string());
        for column in &columns {
            out.push_str(&format!(",{}", column[age] / scale));
        }
        out.push('\n');
    }
    write_file(&args.out.join("decay_trace.csv"), &out)?;
    info!(
        "traced {} peers over {} ages for fragment {}",
        peers.len(),
        scenario.params.steps + 1,
        args.fragment
    );
    Ok(())
}

fn cmd_gen_scenario(args: GenScenarioArgs) -> Result<(), Failure> {
    let scenario = match args.preset.as_deref() {
        Some("fig2") => Scenario::fig2(args.seed),
        Some(other) => {
            return Err(Failure::Invalid(format!(
                "unknown preset {other:?} (available: fig2)"
            )))
        }
        None => {
            let nodes = args.nodes.ok_or_else(|| {
                Failure::Invalid("--nodes is required without --preset".to_string())
            })?;
            let fragments = args.fragments.ok_or_else(|| {
                Failure::Invalid("--fragments is required without --preset".to_string())
            })?;
            let rarity = match &args.rarity {
                Some(text) => Some(
                    text.split(',')
                        .map(|part| {
                            part.trim().parse::<usize>().map_err(|e| {
                                Failure::Invalid(format!("rarity entry {part:?}: {e}"))
                            })
                        })
                        .collect::<Result<Vec<usize>, Failure>>()?,
                ),
                None => None,
            };
            Scenario::generate(nodes, fragments, rarity.as_deref(), args.seed)
                .map_err(|e| Failure::Invalid(e.to_string()))?
        }
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    scenario
        .save(&args.out)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("wrote {}", args.out.display());
    Ok(())
}
