//! Command-line interface behind the `collab-assure` binary.
//!
//! Subcommands: `assess` (the three-model comparison), `lemma-check` (the
//! random-labeling harness), `gen-data` (synthetic CSV generation) and the
//! networked roles `p1`/`p2`. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 protocol abort, 4 noise-budget validation failure.
//!
//! The environment variable `COLLAB_ASSURE_SEED` overrides `--seed` in every
//! subcommand.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    gen_iris_like, gen_synthetic_binary_separated, load_csv, split, write_csv, LabeledDataset,
    SplitPlan, DEFAULT_SEPARATION,
};
use crate::experiment::{
    check_lemma2, run_value_assessment, AssessOptions, ExperimentError, Hyperparams,
    SessionTransport,
};
use crate::protocol::{
    run_party_one, run_party_two, NoiseBudget, ProtocolError, SessionConfig, TcpTransport,
    VerdictDetail,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_NOISE_BUDGET: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "collab-assure",
    version,
    about = "Assess whether another party's encrypted-label dataset would improve your model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare the baseline, joint-plaintext and protocol models across privacy budgets
    Assess(AssessArgs),
    /// Check that feature-independent labels cannot beat the baseline
    LemmaCheck(LemmaArgs),
    /// Generate a synthetic CSV dataset
    GenData(GenDataArgs),
    /// Run the assessing party (holds its own data and the holdout set)
    P1(RoleArgs),
    /// Run the data-owner party (holds the candidate data and the key)
    P2(RoleArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// CSV dataset with a header row
    #[arg(long)]
    dataset: PathBuf,
    /// Name of the label column
    #[arg(long, default_value = "label")]
    label_col: String,
    /// Number of classes
    #[arg(long)]
    classes: usize,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Training epochs
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Batch size
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Learning rate
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Hidden layer widths, comma separated
    #[arg(long, default_value = "8", value_delimiter = ',')]
    hidden: Vec<usize>,
}

#[derive(Args, Debug, Clone)]
struct SplitArgs {
    /// Fraction of rows held out for evaluation
    #[arg(long, default_value_t = 0.30)]
    holdout_frac: f64,
    /// Fraction of rows forming party one's share
    #[arg(long, default_value_t = 0.10)]
    d1_frac: f64,
    /// Fraction of rows forming party two's share
    #[arg(long, default_value_t = 0.60)]
    d2_frac: f64,
    /// Exact per-class counts for party one's share, colon separated (e.g. 96:864)
    #[arg(long)]
    skew: Option<String>,
}

impl SplitArgs {
    fn plan(&self, seed: u64) -> Result<SplitPlan, String> {
        let skew = match &self.skew {
            None => None,
            Some(text) => Some(
                text.split(':')
                    .map(|part| part.trim().parse::<usize>().map_err(|_| {
                        format!("invalid --skew entry {part:?}; expected counts like 96:864")
                    }))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        Ok(SplitPlan {
            holdout_fraction: self.holdout_frac,
            d1_fraction: self.d1_frac,
            d2_fraction: self.d2_frac,
            skew,
            seed,
        })
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum TransportKind {
    Inproc,
    Tcp,
}

#[derive(Args, Debug)]
struct AssessArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Overall privacy budget; repeat for several regimes
    #[arg(long = "epsilon", required = true)]
    epsilon: Vec<f64>,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Repetitions per budget
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transport carrying the protocol sessions
    #[arg(long, value_enum, default_value_t = TransportKind::Inproc)]
    transport: TransportKind,
    /// Encrypt noise as non-negative pairs
    #[arg(long)]
    compat_nonneg: bool,
    /// Write the JSON-lines report here
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct LemmaArgs {
    /// Seeds per labeling probability
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Training rows per trial
    #[arg(long, default_value_t = 400)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DataKind {
    Binary,
    IrisLike,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = DataKind::Binary)]
    kind: DataKind,
    #[arg(long, default_value_t = 10_000)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    features: usize,
    /// Fraction of rows labelled 1 (binary kind)
    #[arg(long, default_value_t = 0.5)]
    balance: f64,
    /// Distance between the class centroids (binary kind)
    #[arg(long, default_value_t = DEFAULT_SEPARATION)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RoleArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Overall privacy budget
    #[arg(long, default_value_t = 10.0)]
    epsilon: f64,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Listen for the peer on this address (host:port)
    #[arg(long, conflicts_with = "connect")]
    listen: Option<String>,
    /// Connect to the peer at this address (host:port)
    #[arg(long)]
    connect: Option<String>,
    /// Encrypt noise as non-negative pairs
    #[arg(long)]
    compat_nonneg: bool,
    /// Write a JSON report of the outcome here
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

/// Entry point used by the binary; takes the arguments after the program
/// name and returns the process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let mut full: Vec<OsString> = vec!["collab-assure".into()];
    full.extend(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(full) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn exit_code_for(err: &CliError) -> i32 {
    match err {
        CliError::Usage(_) => EXIT_USAGE,
        CliError::Data(_) => EXIT_DATA,
        CliError::Io(_) => EXIT_DATA,
        CliError::Protocol(ProtocolError::NoiseBudgetRejected { .. })
        | CliError::Experiment(ExperimentError::Protocol(
            ProtocolError::NoiseBudgetRejected { .. },
        )) => EXIT_NOISE_BUDGET,
        CliError::Experiment(ExperimentError::Data(_)) => EXIT_DATA,
        CliError::Experiment(ExperimentError::Io(_)) => EXIT_DATA,
        CliError::Experiment(_) | CliError::Protocol(_) => EXIT_PROTOCOL,
    }
}

fn seed_override(seed: u64) -> u64 {
    match std::env::var("COLLAB_ASSURE_SEED") {
        Ok(text) => text.trim().parse().unwrap_or(seed),
        Err(_) => seed,
    }
}

fn hyperparams(train: &TrainArgs) -> Hyperparams {
    Hyperparams {
        hidden: train.hidden.clone(),
        epochs: train.epochs,
        batch_size: train.batch_size,
        learning_rate: train.lr,
        l2: 0.01,
    }
}

fn load_dataset(data: &DataArgs) -> Result<LabeledDataset, CliError> {
    Ok(load_csv(&data.dataset, &data.label_col, data.classes)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Assess(args) => run_assess(args),
        Command::LemmaCheck(args) => run_lemma_check(args),
        Command::GenData(args) => run_gen_data(args),
        Command::P1(args) => run_role(args, true),
        Command::P2(args) => run_role(args, false),
    }
}

fn run_assess(args: AssessArgs) -> Result<(), CliError> {
    let seed = seed_override(args.seed);
    let dataset = load_dataset(&args.data)?;
    let plan = args.split.plan(seed).map_err(CliError::Usage)?;
    let hyper = hyperparams(&args.train);
    let opts = AssessOptions {
        repetitions: args.reps,
        seed,
        compat_nonneg: args.compat_nonneg,
        transport: match args.transport {
            TransportKind::Inproc => SessionTransport::InProcess,
            TransportKind::Tcp => SessionTransport::LoopbackTcp,
        },
        ..AssessOptions::default()
    };
    let mut file = args.report.as_ref().map(File::create).transpose()?;
    let report = run_value_assessment(
        &dataset,
        &plan,
        &args.epsilon,
        &hyper,
        &opts,
        file.as_mut().map(|f| f as &mut dyn Write),
    )?;
    if args.verbose {
        for row in &report.rows {
            println!(
                "epsilon {:>8?} {:<12} seed {:<4} accuracy {:.4} ({:.3}s)",
                row.epsilon, row.model, row.seed, row.accuracy, row.time_s
            );
        }
    }
    println!("{}", dataset);
    for agg in &report.aggregates {
        println!(
            "epsilon {:>8} {:<12} mean accuracy {:.4} over {} runs ({:.3}s avg)",
            agg.epsilon.map_or("-".into(), |e| format!("{e}")),
            agg.model,
            agg.mean_accuracy,
            agg.runs,
            agg.mean_time_s
        );
    }
    Ok(())
}

fn run_lemma_check(args: LemmaArgs) -> Result<(), CliError> {
    let seed = seed_override(args.seed);
    let report = check_lemma2(args.seeds, args.size, seed)?;
    for (p, acc) in &report.balanced {
        println!("balanced holdout, labeling probability {p}: mean accuracy {acc:.4}");
    }
    println!(
        "imbalanced holdout (q = {}): constant-label accuracy {:.4} (error {:.4} = 1 - q)",
        report.imbalanced_q,
        report.imbalanced_accuracy,
        1.0 - report.imbalanced_accuracy
    );
    println!(
        "uniform holdout balance over {} trials: grand mean accuracy {:.4}",
        report.uniform_q_trials, report.uniform_q_grand_mean
    );
    if let Some(path) = args.report {
        std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(())
}

fn run_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let seed = seed_override(args.seed);
    let dataset = match args.kind {
        DataKind::Binary => gen_synthetic_binary_separated(
            args.rows,
            args.features,
            args.balance,
            args.separation,
            seed,
        ),
        DataKind::IrisLike => gen_iris_like(seed),
    };
    write_csv(&dataset, &args.out)?;
    println!("wrote {} to {}", dataset, args.out.display());
    Ok(())
}

/// Both networked roles derive their share from the same dataset, plan and
/// seed; party one keeps its share plus the holdout, party two its own.
fn run_role(args: RoleArgs, is_party_one: bool) -> Result<(), CliError> {
    let seed = seed_override(args.seed);
    let dataset = load_dataset(&args.data)?;
    let plan = args.split.plan(seed).map_err(CliError::Usage)?;
    let (d1, d2, d_hold) = split(&dataset, &plan)?;

    let hyper = hyperparams(&args.train);
    let spec = hyper
        .layer_spec(dataset.dim(), dataset.classes)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut config = SessionConfig::new(
        spec,
        NoiseBudget::Total(args.epsilon),
        hyper.epochs,
        hyper.batch_size,
        seed,
    );
    config.learning_rate = hyper.learning_rate;
    config.compat_nonneg = args.compat_nonneg;
    config.verdict_detail = VerdictDetail::WithAccuracies;
    config.auto_z_max(1.25);

    let stream = match (&args.listen, &args.connect) {
        (Some(addr), None) => {
            let listener = TcpListener::bind(addr).map_err(CliError::Io)?;
            if args.verbose {
                println!("listening on {}", listener.local_addr()?);
            }
            listener.accept().map_err(CliError::Io)?.0
        }
        (None, Some(addr)) => TcpStream::connect(addr).map_err(CliError::Io)?,
        _ => {
            return Err(CliError::Usage(
                "exactly one of --listen or --connect is required".into(),
            ))
        }
    };
    let mut transport = TcpTransport::new(stream);

    let verdict = if is_party_one {
        let out = run_party_one(&mut transport, &config, &d1, &d_hold)?;
        if args.verbose {
            println!(
                "baseline accuracy {:.4}, joint accuracy {:.4}, {} exchanges",
                out.baseline_accuracy, out.joint_accuracy, out.exchanges
            );
        }
        out.verdict
    } else {
        let out = run_party_two(&mut transport, &config, &d2)?;
        if args.verbose {
            println!("served {} exchanges", out.exchanges);
        }
        out.verdict
    };

    println!(
        "verdict: collaboration {} the baseline{}",
        if verdict.improved { "improves on" } else { "does not improve on" },
        match verdict.accuracies {
            Some((base, joint)) => format!(" (baseline {base:.4}, joint {joint:.4})"),
            None => String::new(),
        }
    );
    if let Some(path) = args.report {
        let json = serde_json::json!({
            "role": if is_party_one { "p1" } else { "p2" },
            "improved": verdict.improved,
            "accuracies": verdict.accuracies.map(|(a, b)| vec![a, b]),
            "seed": seed,
            "epsilon": args.epsilon,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&json).expect("json"))?;
    }
    Ok(())
}
