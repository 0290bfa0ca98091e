//! `zskl` command-line interface.
//!
//! Subcommands: `gen-synth`, `train`, `eval`, `cv`, `diagnose`. Exit codes:
//! 0 on success, 2 on usage errors, 1 on runtime errors (a structured JSON
//! line goes to stderr). Commands never mutate their input files, and all
//! randomness flows from `--seed` (default 0, never wall-clock).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde_json::json;

use crate::data;
use crate::error::Error;
use crate::eval;
use crate::kernels::KernelSpec;
use crate::modelselect::{self, CvContext, HyperGrid, KernelFamily};
use crate::objective::{ObjectiveSpec, Variant};
use crate::optimizer::{self, InitStrategy, ProbeSet, Projection, TrainConfig, TrainSet};

#[derive(Parser)]
#[command(
    name = "zskl",
    version,
    about = "Zero-shot kernel learning: train a kernel-aligned projection and evaluate it"
)]
struct Cli {
    /// Worker threads; 1 is the bit-exact reference mode. The ZSKL_THREADS
    /// environment variable overrides this flag.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset directory
    GenSynth(GenSynthArgs),
    /// Train a projection on a dataset directory
    Train(TrainArgs),
    /// Evaluate a trained model under a zero-shot protocol
    Eval(EvalArgs),
    /// Grid-search hyperparameters on the validation classes
    Cv(CvArgs),
    /// Emit incoherence diagnostics for a trained model
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Gaussian,
    Cauchy,
    Polynomial,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Ort,
    Plain,
    Poly,
}

impl VariantArg {
    fn to_variant(self) -> Variant {
        match self {
            VariantArg::Ort => Variant::RbfOrt,
            VariantArg::Plain => Variant::RbfPlain,
            VariantArg::Poly => Variant::PolyPenalized,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Gauss,
    Lsq,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Standard,
    Generalized,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    attr_dim: usize,
    #[arg(long)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of classes assigned to training
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    /// Fraction of classes assigned to validation
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    /// Per-class fraction of seen samples held out for the generalized protocol
    #[arg(long, default_value_t = 0.2)]
    seen_test_frac: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    kernel: KernelArg,
    #[arg(long, value_enum)]
    variant: VariantArg,
    /// Kernel radius (required for gaussian/cauchy)
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[arg(long, default_value_t = 1.0)]
    bias: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    beta0: f64,
    #[arg(long, default_value_t = 1e-4)]
    decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::Gauss)]
    init: InitArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write the training trace as CSV
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write the report as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    /// Hyperparameter grid JSON; defaults are used when omitted
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_enum)]
    kernel: KernelArg,
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    beta0: f64,
    #[arg(long, default_value_t = 1e-4)]
    decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::Gauss)]
    init: InitArg,
    #[arg(long)]
    out: PathBuf,
    /// Refit on train+val with the selected point and write the model here
    #[arg(long)]
    refit: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parse `argv`, dispatch, and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };

    let threads = match resolve_threads(cli.threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("{msg}");
            return 2;
        }
    };

    let outcome = with_threads(threads, || dispatch(cli.command));
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            let payload = json!({ "error": e.to_string(), "kind": e.kind() });
            eprintln!("{payload}");
            1
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    let from_env = match std::env::var("ZSKL_THREADS") {
        Ok(s) => Some(
            s.parse::<usize>()
                .map_err(|_| format!("ZSKL_THREADS must be a positive integer, got {s:?}"))?,
        ),
        Err(_) => None,
    };
    let threads = from_env.or(flag);
    if threads == Some(0) {
        return Err("--threads must be >= 1".into());
    }
    Ok(threads)
}

#[cfg(feature = "parallel")]
fn with_threads<R>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R>(threads: Option<usize>, f: impl FnOnce() -> R) -> R {
    if let Some(n) = threads {
        if n > 1 {
            eprintln!("note: built without the `parallel` feature; running sequentially");
        }
    }
    f()
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::GenSynth(args) => gen_synth(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Cv(args) => cv_cmd(args),
        Command::Diagnose(args) => diagnose_cmd(args),
    }
}

fn gen_synth(args: GenSynthArgs) -> CmdResult {
    data::generate_synthetic_to_dir(
        &args.out,
        args.classes,
        args.per_class,
        args.dim,
        args.attr_dim,
        args.noise,
        args.seed,
        args.train_frac,
        args.val_frac,
        args.seen_test_frac,
    )?;
    println!(
        "wrote {} samples ({} classes, d={}, d'={}) to {}",
        args.classes * args.per_class,
        args.classes,
        args.dim,
        args.attr_dim,
        args.out.display()
    );
    Ok(())
}

fn build_kernel(kernel: KernelArg, sigma: Option<f64>, degree: u32, bias: f64) -> std::result::Result<KernelSpec, Failure> {
    match kernel {
        KernelArg::Gaussian => {
            let sigma =
                sigma.ok_or_else(|| Failure::Usage("--sigma is required for gaussian".into()))?;
            Ok(KernelSpec::gaussian(sigma)?)
        }
        KernelArg::Cauchy => {
            let sigma =
                sigma.ok_or_else(|| Failure::Usage("--sigma is required for cauchy".into()))?;
            Ok(KernelSpec::cauchy(sigma)?)
        }
        KernelArg::Polynomial => Ok(KernelSpec::polynomial(degree, bias)?),
    }
}

fn check_kernel_variant(kernel: KernelArg, variant: VariantArg) -> CmdResult {
    let compatible = matches!(
        (kernel, variant),
        (KernelArg::Gaussian | KernelArg::Cauchy, VariantArg::Ort | VariantArg::Plain)
            | (KernelArg::Polynomial, VariantArg::Poly)
    );
    if compatible {
        Ok(())
    } else {
        Err(Failure::Usage(
            "--variant ort/plain requires --kernel gaussian|cauchy; --variant poly requires --kernel polynomial".into(),
        ))
    }
}

struct Prepared {
    ds: data::Dataset,
    partition: data::SplitPartition,
    stats: data::PreprocessStats,
}

/// Load, preprocess on the train classes, and partition.
fn prepare(data_dir: &Path) -> std::result::Result<Prepared, Failure> {
    let ds = data::load_dataset(data_dir)?;
    let split = data::load_split(data_dir)?;
    let (pre, stats) = data::preprocess(&ds, &split.train_classes)?;
    let partition = data::apply_split(&pre, &split)?;
    Ok(Prepared {
        ds: pre,
        partition,
        stats,
    })
}

fn train_config(
    epochs: usize,
    batch: usize,
    gamma: f64,
    beta0: f64,
    decay: f64,
    seed: u64,
    init: InitArg,
) -> TrainConfig {
    TrainConfig {
        batch_size: batch,
        gamma,
        epochs,
        beta0,
        decay,
        epsilon: 1e-8,
        seed,
        init: match init {
            InitArg::Gauss => InitStrategy::GaussianScaled,
            InitArg::Lsq => InitStrategy::LeastSquares,
        },
        trace_every: 1,
        true_class_counts: false,
    }
}

fn train_cmd(args: TrainArgs) -> CmdResult {
    check_kernel_variant(args.kernel, args.variant)?;
    let kernel = build_kernel(args.kernel, args.sigma, args.degree, args.bias)?;
    let variant = args.variant.to_variant();
    let ospec = ObjectiveSpec::new(
        variant,
        kernel,
        args.lambda,
        if variant == Variant::PolyPenalized {
            args.alpha
        } else {
            0.0
        },
        ObjectiveSpec::default_transform(variant),
    )?;
    let cfg = train_config(
        args.epochs,
        args.batch,
        args.gamma,
        args.beta0,
        args.decay,
        args.seed,
        args.init,
    );
    let prepared = prepare(&args.data)?;
    let set = TrainSet::from_dataset(&prepared.ds, &prepared.partition.train)?;
    let probe = if prepared.partition.val.is_empty() {
        None
    } else {
        Some(ProbeSet::from_dataset(&prepared.ds, &prepared.partition.val)?)
    };
    let (projection, trace) = optimizer::train(&set, &ospec, &cfg, probe.as_ref(), &prepared.stats)?;
    projection.save(&args.out)?;
    if let Some(trace_path) = &args.trace {
        trace.write_csv(trace_path)?;
    }
    let summary = &projection.train_meta.summary;
    match (summary.final_epoch_mean_objective, summary.final_val_acc) {
        (Some(obj), Some(acc)) => println!(
            "trained {} iterations; final epoch objective {obj:.6}; val top-1 {:.1}%",
            summary.iterations,
            acc * 100.0
        ),
        (Some(obj), None) => println!(
            "trained {} iterations; final epoch objective {obj:.6}",
            summary.iterations
        ),
        _ => println!("trained {} iterations", summary.iterations),
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> CmdResult {
    let model = Projection::load(&args.model)?;
    let ds = data::load_dataset(&args.data)?;
    let split = data::load_split(&args.data)?;
    let pre = data::apply_stats(&ds, &model.preprocess)?;
    let partition = data::apply_split(&pre, &split)?;

    let report = match args.protocol {
        ProtocolArg::Standard => {
            let (x_test, truths) = pre.gather_features(&partition.unseen_test);
            let mut classes = split.unseen_classes.clone();
            classes.sort_unstable();
            let candidates = pre.class_attribute_columns(&classes);
            eval::evaluate_standard(&model, x_test.view(), &truths, candidates.view(), &classes)?
        }
        ProtocolArg::Generalized => {
            let (x_seen, seen_truths) = pre.gather_features(&partition.seen_test);
            let (x_unseen, unseen_truths) = pre.gather_features(&partition.unseen_test);
            let mut classes: Vec<usize> = split
                .train_classes
                .iter()
                .chain(split.unseen_classes.iter())
                .copied()
                .collect();
            classes.sort_unstable();
            let candidates = pre.class_attribute_columns(&classes);
            eval::evaluate_generalized(
                &model,
                x_seen.view(),
                &seen_truths,
                x_unseen.view(),
                &unseen_truths,
                candidates.view(),
                &classes,
            )?
        }
    };
    report.save_json(&args.out)?;
    if let Some(csv) = &args.csv {
        report.save_csv(csv)?;
    }
    println!("top-1 mean: {:.1}%", report.top1_mean * 100.0);
    if let (Some(s), Some(u), Some(h)) = (report.acc_seen, report.acc_unseen, report.harmonic_h) {
        println!(
            "seen: {:.1}%  unseen: {:.1}%  H: {:.1}%",
            s * 100.0,
            u * 100.0,
            h * 100.0
        );
    }
    println!("incoherence: {:.4}", report.incoherence);
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cv_cmd(args: CvArgs) -> CmdResult {
    check_kernel_variant(args.kernel, args.variant)?;
    let family = match args.kernel {
        KernelArg::Gaussian => KernelFamily::Gaussian,
        KernelArg::Cauchy => KernelFamily::Cauchy,
        KernelArg::Polynomial => KernelFamily::Polynomial,
    };
    let variant = args.variant.to_variant();
    let grid = match &args.grid {
        Some(path) => HyperGrid::load(path)?,
        None => HyperGrid::default(),
    };
    let cfg = train_config(
        args.epochs,
        args.batch,
        args.gamma,
        args.beta0,
        args.decay,
        args.seed,
        args.init,
    );
    let prepared = prepare(&args.data)?;
    let ctx = CvContext {
        ds: &prepared.ds,
        partition: &prepared.partition,
        stats: &prepared.stats,
    };
    let result = modelselect::grid_search(&ctx, family, variant, &grid, &cfg)?;
    result.save_json(&args.out)?;
    result.save_csv(&args.out.with_extension("csv"))?;
    let best_row = result
        .table
        .iter()
        .find(|r| r.point == result.best)
        .expect("best row present");
    println!(
        "evaluated {} grid points; best {:?} with val top-1 {:.1}%",
        result.table.len(),
        result.best,
        best_row.val_top1 * 100.0
    );
    if let Some(refit_path) = &args.refit {
        let proj = modelselect::refit_best(&ctx, family, variant, &result.best, &cfg)?;
        proj.save(refit_path)?;
        println!("refit model written to {}", refit_path.display());
    }
    Ok(())
}

fn diagnose_cmd(args: DiagnoseArgs) -> CmdResult {
    let model = Projection::load(&args.model)?;
    fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.clone(),
        source,
    })?;

    let normalized = eval::normalize_columns(&model.w)?;
    let wtw: Array2<f64> = normalized.t().dot(&normalized);
    data::write_matrix_csv(&args.out_dir.join("wtw.csv"), &wtw)?;

    let score = eval::incoherence(&model.w)?;
    let norms: Vec<f64> = (0..model.w.ncols())
        .map(|j| {
            let col = model.w.column(j);
            col.dot(&col).sqrt()
        })
        .collect();
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let diag = json!({
        "incoherence": score,
        "column_norms": { "min": min, "max": max, "mean": mean },
    });
    let diag_path = args.out_dir.join("diag.json");
    fs::write(&diag_path, serde_json::to_string_pretty(&diag).expect("serializable"))
        .map_err(|source| Error::Io {
            path: diag_path,
            source,
        })?;
    println!(
        "incoherence: {score:.4}; diagnostics written to {}",
        args.out_dir.display()
    );
    Ok(())
}
