use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use dcc_core::eval::{
    aggregate, cases_csv, compare_modes, evaluate, generate_suite, plot_data, Report, Suite,
    SuiteSpec,
};
use dcc_core::model::ScopeMode;
use dcc_core::selftest::{run_all, Budget};
use dcc_core::training::{
    checkpoint_config, load_model, train, TrainConfig, TrainOptions, ENGINE_VERSION,
};
use dcc_core::Error;

/// Exit code for configuration, usage and input errors.
const EXIT_USAGE: u8 = 2;
/// Exit code for a non-finite training loss.
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dcc",
    version,
    about = "Multi-agent path finding with decision causal communication"
)]
struct Cli {
    /// Default root for run, suite and report directories.
    #[arg(long, global = true, env = "DCC_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing checkpoints and a training log.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint on a suite.
    Evaluate(EvaluateArgs),
    /// Side-by-side table of a dcc and an rr-n2 report on the same suite.
    Compare(CompareArgs),
    /// Generate a test suite directory.
    Suite(SuiteArgs),
    /// Reshape a report into long-format CSV for plotting.
    Plotdata(PlotArgs),
    /// Run the oracle and invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: <output-root>/train].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Learner step budget.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runners: Option<usize>,
    /// Wall-clock limit in seconds, 0 for none.
    #[arg(long)]
    time_limit: Option<u64>,
    /// Continue from <out>/latest.ckpt.
    #[arg(long)]
    resume: bool,
    /// Print every n-th log line to stderr, 0 to stay quiet.
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, default_value = "dcc")]
    mode: ScopeMode,
    /// Output directory [default: <output-root>/eval].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Print every step's communication scopes to stderr.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    dcc: PathBuf,
    #[arg(long)]
    rr_n2: PathBuf,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    /// Output directory [default: <output-root>/suite].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    cases: usize,
    #[arg(long, default_value_t = 0.3)]
    density: f64,
    /// Map sizes; with --agents, every combination becomes a cell.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    agents: Vec<usize>,
}

#[derive(Args)]
struct PlotArgs {
    report: PathBuf,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Run the full acceptance-sized fixture counts.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Command failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
            Error::Io(io) if io.kind() != std::io::ErrorKind::NotFound => 1,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, &cli.output_root),
        Command::Evaluate(a) => cmd_evaluate(a, &cli.output_root),
        Command::Compare(a) => cmd_compare(a),
        Command::Suite(a) => cmd_suite(a, &cli.output_root),
        Command::Plotdata(a) => cmd_plotdata(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, root: &Path) -> Result<(), Failure> {
    let out_dir = a.out.unwrap_or_else(|| root.join("train"));
    let mut cfg = match &a.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None if a.resume => {
            // resuming without a file keeps the config the run started with
            let (_, _, ckpt) = load_model(&out_dir.join(dcc_core::training::LATEST))?;
            checkpoint_config(&ckpt)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.steps {
        cfg.run.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.run.seed = v;
    }
    if let Some(v) = a.runners {
        cfg.run.runners = v;
    }
    if let Some(v) = a.time_limit {
        cfg.run.time_limit_secs = v;
    }
    cfg.validate()?;
    let opts = TrainOptions {
        out_dir: out_dir.clone(),
        resume: a.resume,
    };
    let every = a.log_every;
    let summary = train(&cfg, &opts, |line| {
        if every > 0 && line.step % every == 0 {
            eprintln!("{}", line.render());
        }
        ControlFlow::Continue(())
    })?;
    let rates: Vec<String> = summary
        .success
        .iter()
        .map(|p| format!("{}={:.3}", p.task, p.success_rate))
        .collect();
    println!(
        "steps={} episodes={} transitions={} elapsed={:.1}s checkpoint={} success=[{}]",
        summary.steps,
        summary.episodes,
        summary.transitions,
        summary.elapsed,
        summary.checkpoint.display(),
        rates.join(" ")
    );
    Ok(())
}

fn file_sha256(path: &Path) -> Result<String, Failure> {
    Ok(format!("{:x}", Sha256::digest(fs::read(path)?)))
}

fn cmd_evaluate(a: EvaluateArgs, root: &Path) -> Result<(), Failure> {
    // everything is loaded and checked before any output is written
    if !a.checkpoint.is_file() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            a.checkpoint.display()
        )));
    }
    if !a.suite.join(dcc_core::eval::MANIFEST).is_file() {
        return Err(usage(format!(
            "{} is not a suite directory",
            a.suite.display()
        )));
    }
    let (model, store, ckpt) = load_model(&a.checkpoint)?;
    let suite = Suite::load(&a.suite)?;
    if let Some(c) = suite.cases.iter().find(|c| c.step_limit == 0) {
        return Err(usage(format!("case {} has a zero step limit", c.id)));
    }
    let out_dir = a.out.unwrap_or_else(|| root.join("eval"));
    let metrics = evaluate(&model, &store, &suite, a.mode, a.workers, a.trace)?;
    if a.trace {
        for m in &metrics {
            for (t, scopes) in m.scopes.iter().flatten().enumerate() {
                eprintln!("{} step={t} scopes={scopes:?}", m.case_id);
            }
        }
    }
    let spec = toml::to_string(&suite.spec).map_err(|e| usage(e.to_string()))?;
    let mut meta = vec![
        ("engine_version".to_string(), ENGINE_VERSION.to_string()),
        ("mode".to_string(), a.mode.to_string()),
        ("suite_hash".to_string(), suite.hash()),
        ("checkpoint_sha256".to_string(), file_sha256(&a.checkpoint)?),
        ("checkpoint_step".to_string(), ckpt.step.to_string()),
    ];
    meta.extend(
        spec.lines()
            .filter(|l| !l.is_empty())
            .map(|l| ("suite".to_string(), l.to_string())),
    );
    if let Some(config) = ckpt.meta("config") {
        meta.extend(
            config
                .lines()
                .filter(|l| !l.is_empty())
                .map(|l| ("config".to_string(), l.to_string())),
        );
    }
    let report = Report {
        meta,
        rows: aggregate(&metrics, a.mode),
    };
    fs::create_dir_all(&out_dir)?;
    let report_path = out_dir.join(format!("report-{}.csv", a.mode));
    fs::write(&report_path, report.to_csv())?;
    fs::write(
        out_dir.join(format!("cases-{}.csv", a.mode)),
        cases_csv(&metrics),
    )?;
    for row in &report.rows {
        println!(
            "{}x{} agents={} cases={} success={:.3} steps={:.2} comm_pairs={:.2}",
            row.size,
            row.size,
            row.agents,
            row.cases,
            row.success_rate,
            row.mean_steps,
            row.mean_comm_pairs
        );
    }
    println!("report={}", report_path.display());
    Ok(())
}

fn read_report(path: &Path) -> Result<Report, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(Report::from_csv(&text, &path.display().to_string())?)
}

fn cmd_compare(a: CompareArgs) -> Result<(), Failure> {
    let dcc = read_report(&a.dcc)?;
    let rr = read_report(&a.rr_n2)?;
    let table = compare_modes(&dcc, &rr)?;
    write_output(a.out.as_deref(), &table)
}

fn cmd_suite(a: SuiteArgs, root: &Path) -> Result<(), Failure> {
    let spec = match (a.sizes.is_empty(), a.agents.is_empty()) {
        (true, true) => SuiteSpec {
            density: a.density,
            ..SuiteSpec::desk(a.seed, a.cases)
        },
        (false, false) => SuiteSpec::grid(a.seed, a.density, a.cases, &a.sizes, &a.agents),
        _ => return Err(usage("--sizes and --agents go together")),
    };
    if !(0.0..1.0).contains(&spec.density) {
        return Err(usage(format!("density {} outside [0, 1)", spec.density)));
    }
    let out = a.out.unwrap_or_else(|| root.join("suite"));
    let suite = generate_suite(&spec);
    suite.write(&out)?;
    for s in &suite.skipped {
        eprintln!(
            "skipped {}x{} with {} agents: {}",
            s.size, s.size, s.agents, s.reason
        );
    }
    println!(
        "cases={} skipped_cells={} hash={} dir={}",
        suite.cases.len(),
        suite.skipped.len(),
        suite.hash(),
        out.display()
    );
    Ok(())
}

fn cmd_plotdata(a: PlotArgs) -> Result<(), Failure> {
    let report = read_report(&a.report)?;
    write_output(a.out.as_deref(), &plot_data(&report))
}

fn cmd_selftest(a: SelftestArgs) -> Result<(), Failure> {
    let budget = if a.full {
        Budget::full()
    } else {
        Budget::quick()
    };
    let results = run_all(budget, a.seed);
    for r in &results {
        println!(
            "{} {}: {} ({:.1}s)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail,
            r.seconds
        );
    }
    match results.iter().filter(|r| !r.passed).count() {
        0 => Ok(()),
        n => Err(Failure {
            code: 1,
            message: format!("{n} check(s) failed"),
        }),
    }
}
