use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparseforge::data_io::model_file::{load_model, save_checkpoint, save_sparse, Checkpoint, ModelArtifact};
use sparseforge::data_io::{load_mnist, Dataset};
use sparseforge::export::{Evaluation, Provenance};
use sparseforge::gradcheck;
use sparseforge::network::{init_weights, Network, NetworkSpec};
use sparseforge::training::{
    self, band_fraction, histogram_csv, weight_histogram, FitOptions, OptimizerKind, TrainConfig,
};
use sparseforge::{prune, Error, SparseModel};

mod config;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "sparseforge",
    version,
    about = "Train, prune and evaluate networks with learnable pruning thresholds",
    after_help = "Every subcommand also accepts --config <file> with `key = value` lines \
                  (keys are long flag names); flags on the command line take precedence.\n\
                  Exit codes: 0 ok, 1 usage, 2 data or file error, 3 divergence, 4 verification failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network with learnable thresholds (or a dense baseline) and export it.
    Train(TrainArgs),
    /// Re-cut a trained checkpoint at a new gamma.
    Prune(PruneArgs),
    /// Test-set accuracy of a model, optionally against a baseline.
    Eval(EvalArgs),
    /// Per-layer pruning statistics.
    Report(ReportArgs),
    /// Finite-difference checks of every analytic derivative.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Lenet300,
    Lenet5s,
}

impl Arch {
    fn spec(self) -> NetworkSpec {
        match self {
            Arch::Lenet300 => NetworkSpec::lenet300(),
            Arch::Lenet5s => NetworkSpec::lenet5_small(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "lenet300")]
    arch: Arch,
    /// Directory with the four MNIST IDX files.
    #[arg(long, env = "SPARSEFORGE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Output directory for checkpoints, models and reports.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Train the unwrapped network without thresholds.
    #[arg(long)]
    dense: bool,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Sharpness of the pruning function.
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    /// Fraction of weights initially below each threshold.
    #[arg(long, default_value_t = 0.1)]
    p_init: f64,
    /// Threshold learning-rate factor.
    #[arg(long, default_value_t = 0.01)]
    rho: f64,
    /// Weight of the mapped L1 term (thresholds only).
    #[arg(long, default_value_t = 0.01)]
    lambda_t: f64,
    /// Weight decay.
    #[arg(long, default_value_t = 1e-4)]
    lambda_wd: f64,
    /// Export cutoff on mapped weight magnitude.
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data-parallel workers per batch.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct PruneArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
    /// Where to write the sparse model.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    report_format: ReportFormat,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct EvalArgs {
    /// Checkpoint or sparse model.
    #[arg(long)]
    model: PathBuf,
    /// Reference checkpoint or sparse model for the error delta.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, env = "SPARSEFORGE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Cutoff used when a checkpoint with thresholds is evaluated.
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct ReportArgs {
    /// Checkpoint or sparse model.
    #[arg(long)]
    model: PathBuf,
    /// Cutoff used when a checkpoint is given.
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
    #[arg(long, value_enum, default_value = "text")]
    report_format: ReportFormat,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct GradcheckArgs {
    /// Random points for the pruning-function checks.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Verify(_) => EXIT_VERIFY,
            Failure::Core(Error::Divergence { .. } | Error::NonFinite { .. }) => EXIT_DIVERGENCE,
            Failure::Core(e) if e.is_data_error() => EXIT_DATA,
            Failure::Core(_) => EXIT_USAGE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Verify(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect()) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn data_dir(dir: Option<PathBuf>) -> Result<PathBuf, Failure> {
    dir.ok_or_else(|| Failure::Usage("no data directory: pass --data-dir or set SPARSEFORGE_DATA_DIR".into()))
}

fn write(path: &Path, contents: &[u8]) -> Outcome {
    fs::write(path, contents).map_err(|e| {
        Failure::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let cfg = TrainConfig {
        alpha: a.alpha,
        p_init: a.p_init,
        rho: a.rho,
        lambda_t: a.lambda_t,
        lambda_wd: a.lambda_wd,
        gamma: a.gamma,
        optimizer: OptimizerKind::adam(a.lr),
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        threads: a.threads,
    };
    cfg.validate()?;
    let spec = a.arch.spec();
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let provenance = Provenance {
        config_digest: cfg.digest(),
        seed: cfg.seed,
    };
    let params = init_weights(&spec, cfg.seed);
    let mut net = if a.dense {
        Network::new(spec.clone(), params)?
    } else {
        Network::sibling(spec.clone(), params, cfg.alpha, cfg.p_init)?
    };

    let mut test: Option<Dataset> = None;
    if cfg.epochs > 0 {
        let (train, test_split) = load_mnist(data_dir(a.data_dir)?)?;
        eprintln!(
            "training {} ({}) on {} images for {} epochs",
            spec.arch,
            if a.dense { "dense" } else { "learnable thresholds" },
            train.len(),
            cfg.epochs
        );
        let started = Instant::now();
        let options = FitOptions {
            eval: None,
            on_epoch: Some(Box::new(move |r: &training::EpochRecord| {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  ce {:.4}  acc {}  mean t {:.4}  live {:?}  [{:.0}s]",
                    r.epoch,
                    r.loss,
                    r.cross_entropy,
                    pct(r.train_accuracy),
                    r.mean_threshold(),
                    r.live_fraction.iter().map(|f| format!("{:.3}", f)).collect::<Vec<_>>(),
                    started.elapsed().as_secs_f64()
                );
            })),
        };
        let report = training::fit(&mut net, &train, &cfg, options)?;
        let mut log = Vec::new();
        report
            .write_jsonl(&mut log)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        write(&a.out.join("report.jsonl"), &log)?;
        test = Some(test_split);
    }

    let ckpt = Checkpoint {
        network: net,
        provenance,
    };
    save_checkpoint(&ckpt, a.out.join("checkpoint.spfg"))?;
    println!("wrote {}", a.out.join("checkpoint.spfg").display());

    let thresholds = ckpt.network.thresholds();
    for ((_, layer), (p, t)) in spec.param_layers().zip(ckpt.network.layers().iter().zip(&thresholds)) {
        let weights: Vec<f64> = p.weight.value.data().iter().map(|&w| w as f64).collect();
        let csv = histogram_csv(&weight_histogram(&weights, 100));
        write(&a.out.join(format!("hist_{}.csv", layer.name)), csv.as_bytes())?;
        if !t.is_empty() {
            println!(
                "{}: surviving mass in [t, 2t] = {:.4}",
                layer.name,
                band_fraction(&weights, t, ckpt.network.alpha(), cfg.gamma)
            );
        }
    }

    let model = prune(&ckpt.network, cfg.gamma)?.with_provenance(provenance);
    if !a.dense {
        save_sparse(&model, a.out.join("pruned.spfg"))?;
        println!("wrote {}", a.out.join("pruned.spfg").display());
    }
    let stats = model.stats();
    write(&a.out.join("stats.txt"), stats.to_text().as_bytes())?;
    print!("{}", stats.to_text());
    if let Some(test) = test {
        if a.dense {
            println!(
                "test accuracy: {}",
                pct(training::accuracy(&ckpt.network, &test, 1000)?)
            );
        } else {
            println!("test accuracy (pruned): {}", pct(model.accuracy(&test, 1000)?));
            println!(
                "test accuracy (sibling): {}",
                pct(training::accuracy(&ckpt.network, &test, 1000)?)
            );
        }
    }
    Ok(())
}

fn load_checkpoint_for_prune(path: &Path) -> Result<Checkpoint, Failure> {
    match load_model(path)? {
        ModelArtifact::Checkpoint(c) => Ok(c),
        ModelArtifact::Sparse(_) => Err(Failure::Usage(format!(
            "{} is already a sparse model; prune needs a checkpoint",
            path.display()
        ))),
    }
}

fn print_stats(model: &SparseModel, format: ReportFormat) {
    let stats = model.stats();
    let text = match format {
        ReportFormat::Text => stats.to_text(),
        ReportFormat::Csv => stats.to_csv(),
    };
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

fn cmd_prune(a: PruneArgs) -> Outcome {
    let ckpt = load_checkpoint_for_prune(&a.model)?;
    let model = prune(&ckpt.network, a.gamma)?.with_provenance(ckpt.provenance);
    save_sparse(&model, &a.out)?;
    print_stats(&model, a.report_format);
    Ok(())
}

/// Sparse model for an artifact, cutting checkpoints at `gamma`.
fn as_sparse(artifact: ModelArtifact, gamma: f64) -> Result<(SparseModel, Option<Network<f32>>), Failure> {
    Ok(match artifact {
        ModelArtifact::Sparse(m) => (m, None),
        ModelArtifact::Checkpoint(c) => {
            let model = prune(&c.network, gamma)?.with_provenance(c.provenance);
            let sibling = c.network.is_sibling().then_some(c.network);
            (model, sibling)
        }
    })
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let (model, sibling) = as_sparse(load_model(&a.model)?, a.gamma)?;
    let baseline = match &a.baseline {
        Some(path) => Some(load_model(path)?),
        None => None,
    };
    let (_, test) = load_mnist(data_dir(a.data_dir)?)?;
    if model.spec.input_len() != test.images().len() / test.len() {
        return Err(Failure::Usage("model input does not match the dataset".into()));
    }
    let accuracy = model.accuracy(&test, 1000)?;
    // Baseline checkpoints are scored as stored, without a cut.
    let base_accuracy = match &baseline {
        Some(ModelArtifact::Sparse(m)) => Some(m.accuracy(&test, 1000)?),
        Some(ModelArtifact::Checkpoint(c)) => Some(training::accuracy(&c.network, &test, 1000)?),
        None => None,
    };
    let eval = Evaluation::new(accuracy, base_accuracy);
    println!("accuracy: {} (error {:.2}%)", pct(eval.accuracy), eval.error_pct);
    if let Some(net) = sibling {
        println!("sibling accuracy: {}", pct(training::accuracy(&net, &test, 1000)?));
    }
    if let (Some(base), Some(delta)) = (base_accuracy, eval.delta_pct) {
        println!("baseline accuracy: {}", pct(base));
        println!("top-1 error delta: {delta:+.2}%");
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Outcome {
    let (model, _) = as_sparse(load_model(&a.model)?, a.gamma)?;
    print_stats(&model, a.report_format);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Outcome {
    let report = gradcheck::full_suite(a.samples, a.seed)?;
    print!("{report}");
    if report.passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(())
    } else {
        Err(Failure::Verify(format!(
            "{} of {} checks failed",
            report.failures().count(),
            report.checks.len()
        )))
    }
}
