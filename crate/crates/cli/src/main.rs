//! Benchmark harness for the mixemu library: split accuracy reports, GEMM
//! accuracy/operation-count studies, and training runs, all emitted as
//! stable CSV.
//!
//! Exit codes: 0 success, 1 usage error, 2 numerical divergence, 3 I/O
//! failure. Output files are written atomically (temp file + rename).

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixemu::fmtnum::g17;
use mixemu::gemm::{gemm_report, GemmMode, UnknownMode};
use mixemu::matrix::MatrixF32;
use mixemu::net::{make_blobs, DenseNet, NetObjective};
use mixemu::sgd::{
    make_least_squares, sgd_hogwild, sgd_param_server, sgd_sync, Objective, TrainConfig,
    TrainError, TrainTrace,
};
use mixemu::split::{split_error, split_matrix};
use mixemu::spmx;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

// Fixed shapes of the built-in training problems.
const LSQ_SAMPLES: usize = 1000;
const LSQ_DIM: usize = 20;
const LSQ_NOISE: f64 = 0.1;
const BLOBS_SAMPLES: usize = 600;
const BLOBS_CLASSES: usize = 3;
const BLOBS_DIM: usize = 2;
const BLOBS_SEPARATION: f64 = 6.0;
const BLOBS_HIDDEN: usize = 16;

#[derive(Parser)]
#[command(
    name = "mixemu",
    version,
    about = "Mixed-precision GEMM emulation studies and SGD training runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split seeded random matrices into their two-term fp16 form and
    /// report reconstruction error per seed.
    SplitReport(SplitReportArgs),
    /// Multiply seeded random matrix pairs under the requested modes and
    /// report fp16-product counts and error against the f64 oracle.
    GemmAccuracy(GemmAccuracyArgs),
    /// Train a built-in problem with one of the SGD engines and write the
    /// loss trace plus a checkpoint.
    Train(TrainArgs),
}

#[derive(Args)]
struct SplitReportArgs {
    /// Matrix dimension (matrices are n x n).
    #[arg(long)]
    n: usize,
    /// Number of seeded matrices, seeds 0..k.
    #[arg(long)]
    seeds: u64,
    /// Entries are uniform in [-scale, scale]; 0 gives the zero matrix.
    #[arg(long, default_value_t = 1.0)]
    scale: f32,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GemmAccuracyArgs {
    /// Matrix dimension (operands are n x n).
    #[arg(long)]
    n: usize,
    /// Number of seeded operand pairs, seeds 0..k.
    #[arg(long)]
    seeds: u64,
    /// Comma-separated list of modes: exact32, oracle64, naive16,
    /// fourterm, threeterm.
    #[arg(long)]
    modes: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Engine {
    Sync,
    Hogwild,
    Pserver,
}

#[derive(Copy, Clone, ValueEnum)]
enum Problem {
    /// Seeded least-squares regression (1000 samples, 20 dims).
    Lsq,
    /// Gaussian blob classification through a small dense net.
    Blobs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    engine: Engine,
    #[arg(long, value_enum)]
    problem: Problem,
    /// Loss trace CSV path; the checkpoint lands beside it.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (hogwild engine).
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Update lag for the pserver engine; required there, invalid elsewhere.
    #[arg(long)]
    staleness: Option<usize>,
    /// Matrix multiplication mode for the blobs net.
    #[arg(long, default_value = "exact32", value_parser = parse_mode)]
    gemm: GemmMode,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f32,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_mode(s: &str) -> Result<GemmMode, UnknownMode> {
    s.parse()
}

enum CliError {
    Usage(String),
    Diverged(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Diverged(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Diverged(m) | CliError::Io(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Diverged(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::SplitReport(args) => cmd_split_report(&args),
        Command::GemmAccuracy(args) => cmd_gemm_accuracy(&args),
        Command::Train(args) => cmd_train(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Write through a temp file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("output");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io_err(e)
    })
}

fn emit(csv: String, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => write_atomic(path, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_split_report(args: &SplitReportArgs) -> Result<(), CliError> {
    let mut csv = String::from("seed,n,scale,a1,a2,max_rel_err,frob_rel_err\n");
    for seed in 0..args.seeds {
        let a = MatrixF32::random_uniform(args.n, args.n, args.scale, seed);
        let s = split_matrix(&a).map_err(|e| CliError::Usage(e.to_string()))?;
        let report = split_error(&a, &s).map_err(|e| CliError::Usage(e.to_string()))?;
        let _ = writeln!(
            csv,
            "{seed},{},{},{},{},{},{}",
            args.n,
            g17(args.scale as f64),
            g17(s.a1() as f64),
            g17(s.a2() as f64),
            g17(report.max_rel),
            g17(report.frobenius_rel)
        );
    }
    emit(csv, args.out.as_deref())
}

fn cmd_gemm_accuracy(args: &GemmAccuracyArgs) -> Result<(), CliError> {
    let modes = args
        .modes
        .split(',')
        .map(|s| s.trim().parse::<GemmMode>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if modes.is_empty() {
        return Err(CliError::Usage("at least one mode is required".into()));
    }

    let mut csv = String::from("seed,n,mode,half_products,frob_rel_err\n");
    for seed in 0..args.seeds {
        let a = MatrixF32::random_uniform(args.n, args.n, 1.0, seed);
        let b = MatrixF32::random_uniform(args.n, args.n, 1.0, seed ^ 0x9E37_79B9_7F4A_7C15);
        for &mode in &modes {
            let report = gemm_report(&a, &b, mode).map_err(|e| CliError::Usage(e.to_string()))?;
            let _ = writeln!(
                csv,
                "{seed},{},{mode},{},{}",
                args.n,
                report.half_product_count,
                g17(report.frobenius_rel_error)
            );
        }
    }
    emit(csv, args.out.as_deref())
}

fn run_engine<O: Objective + ?Sized>(
    engine: Engine,
    obj: &O,
    cfg: &TrainConfig,
) -> Result<TrainTrace, CliError> {
    let trace = match engine {
        Engine::Sync => sgd_sync(obj, cfg)?,
        Engine::Hogwild => sgd_hogwild(obj, cfg)?,
        Engine::Pserver => sgd_param_server(obj, cfg)?,
    };
    Ok(trace)
}

fn trace_csv(trace: &TrainTrace) -> String {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii csv")
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let staleness = match (args.engine, args.staleness) {
        (Engine::Pserver, Some(tau)) => tau,
        (Engine::Pserver, None) => {
            return Err(CliError::Usage(
                "--engine pserver requires --staleness".into(),
            ))
        }
        (_, Some(_)) => {
            return Err(CliError::Usage(
                "--staleness is only valid with --engine pserver".into(),
            ))
        }
        (_, None) => 0,
    };
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        workers: args.workers,
        seed: args.seed,
        staleness,
    };

    match args.problem {
        Problem::Lsq => {
            let obj = make_least_squares(LSQ_SAMPLES, LSQ_DIM, LSQ_NOISE, args.seed)?;
            let trace = run_engine(args.engine, &obj, &cfg)?;
            emit(trace_csv(&trace), Some(&args.out))?;

            let params = MatrixF32::from_vec(1, LSQ_DIM, trace.final_params)
                .expect("trace params are problem-sized");
            let mut buf = Vec::new();
            spmx::write_f32(&mut buf, &params).expect("writing to memory");
            write_atomic(&args.out.with_extension("params.spmx"), &buf)
        }
        Problem::Blobs => {
            let (train, test) = make_blobs(
                BLOBS_SAMPLES,
                BLOBS_CLASSES,
                BLOBS_DIM,
                BLOBS_SEPARATION,
                args.seed,
            )
            .map_err(|e| CliError::Usage(e.to_string()))?;
            let net = DenseNet::new(
                &[BLOBS_DIM, BLOBS_HIDDEN, BLOBS_CLASSES],
                args.gemm,
                args.seed,
            )
            .map_err(|e| CliError::Usage(e.to_string()))?;
            let obj = NetObjective::new(net, train).map_err(|e| CliError::Usage(e.to_string()))?;
            let trace = run_engine(args.engine, &obj, &cfg)?;

            let trained = obj
                .net_with_params(&trace.final_params)
                .map_err(|e| CliError::Diverged(e.to_string()))?;
            let accuracy = trained
                .accuracy(&test)
                .map_err(|e| CliError::Diverged(e.to_string()))?;

            let mut csv = trace_csv(&trace);
            let _ = writeln!(csv, "# test_accuracy={}", g17(accuracy));
            emit(csv, Some(&args.out))?;

            let mut buf = Vec::new();
            trained
                .save_checkpoint(&mut buf)
                .expect("writing to memory");
            write_atomic(&args.out.with_extension("ckpt"), &buf)
        }
    }
}
