//! `densemetric` command-line tool.
//!
//! Training settings come from three layers, later ones winning: built-in
//! defaults, the `--config` file (`key = value` lines), then flags. `--set
//! key=value` accepts any config key; the dedicated flags are shorthands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use densemetric::data::{save_features_binary, SynthConfig};
use densemetric::eval::DEFAULT_KS;
use densemetric::gradcheck::{check, Component, GradCheckOptions};
use densemetric::{
    evaluate, load_checkpoint, load_features, save_checkpoint, save_features, synthesize, Dataset, Error, LossKind,
    Split, TrainConfig, Trainer,
};

#[derive(Parser)]
#[command(name = "densemetric", version, args_override_self = true)]
#[command(about = "Deep metric learning with a density-adaptive regularizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/test split of Gaussian class clusters.
    Synth(SynthArgs),
    /// Train an embedding network (or resume from a checkpoint).
    Train(Box<TrainArgs>),
    /// Recall@K, NMI and per-class density on a test split.
    Eval(EvalArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Write embeddings of a feature file in the feature-file format.
    Embed(EmbedArgs),
    /// Print the configuration and iteration stored in a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    classes: usize,
    #[arg(long, default_value_t = 30)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.25)]
    sigma: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory; receives train and test feature files.
    #[arg(long)]
    out: PathBuf,
    /// Write the binary feature format instead of text.
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training feature file.
    #[arg(long)]
    train: PathBuf,
    /// Where to write the final checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Continue from this checkpoint; its stored config is the base layer.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Log file of key=value records (default: checkpoint path + ".log").
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    alpha_init: Option<f64>,
    /// Classes per batch.
    #[arg(short = 'P', long = "classes-per-batch")]
    classes_per_batch: Option<usize>,
    /// Samples per class in a batch.
    #[arg(short = 'K', long = "samples-per-class")]
    samples_per_class: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Any config key, e.g. `--set hidden=128,64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS.to_vec())]
    ks: Vec<usize>,
    /// Seed for k-means.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as key=value records here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Only check this component.
    #[arg(long, value_parser = parse_component)]
    component: Option<Component>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adds a constant to every analytic gradient; used to test the harness.
    #[arg(long, default_value_t = 0.0, hide = true)]
    perturb: f64,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    binary: bool,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_component(s: &str) -> Result<Component, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failed command with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 3,
            Error::Config(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_context(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

type CmdResult = Result<(), Failure>;

fn write_dataset(ds: &Dataset, path: &Path, binary: bool) -> CmdResult {
    if binary {
        save_features_binary(ds, path)
    } else {
        save_features(ds, path)
    }
    .map_err(io_context(path))
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        num_classes: a.classes,
        samples_per_class: a.per_class,
        input_dim: a.dim,
        sigma: a.sigma,
        seed: a.seed,
    };
    let (train, test) = synthesize(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| io_context(&a.out)(e.into()))?;
    let ext = if a.binary { "bin" } else { "txt" };
    for (ds, name) in [(&train, "train"), (&test, "test")] {
        let path = a.out.join(format!("{name}.{ext}"));
        write_dataset(ds, &path, a.binary)?;
        println!("wrote {} ({} rows, {} classes)", path.display(), ds.len(), ds.num_classes());
    }
    Ok(())
}

fn effective_config(a: &TrainArgs, base: TrainConfig) -> Result<TrainConfig, Failure> {
    let mut cfg = base;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| io_context(path)(e.into()))?;
        cfg.apply_kv(&text).map_err(|e| Failure {
            code: 2,
            message: format!("{}: {e}", path.display()),
        })?;
    }
    let usage = |e: Error| Failure { code: 2, message: e.to_string() };
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure {
            code: 2,
            message: format!("--set expects KEY=VALUE, got {kv:?}"),
        })?;
        cfg.set(k, v).map_err(usage)?;
    }
    macro_rules! flag {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    flag!(
        loss,
        lambda,
        eta,
        margin,
        alpha_init,
        classes_per_batch,
        samples_per_class,
        learning_rate,
        iterations,
        seed,
        embedding_dim
    );
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let train = load_features(&a.train, Split::Train).map_err(io_context(&a.train))?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut t = load_checkpoint(path).map_err(io_context(path))?;
            let cfg = effective_config(&a, t.config.clone())?;
            // only the budget and logging may change mid-run
            let mut expected = t.config.clone();
            expected.iterations = cfg.iterations;
            expected.log_every = cfg.log_every;
            if expected != cfg {
                return Err(Failure {
                    code: 2,
                    message: "resume may only change iterations and log_every".into(),
                });
            }
            t.config = cfg;
            t
        }
        None => Trainer::new(effective_config(&a, TrainConfig::default())?, &train)?,
    };
    if trainer.net.input_dim() != train.dim() {
        return Err(Error::DimMismatch {
            expected: trainer.net.input_dim(),
            found: train.dim(),
        }
        .into());
    }

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.checkpoint.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut log = String::new();
    let result = trainer.run(&train, |r| {
        let _ = writeln!(log, "{r}");
        eprintln!("{r}");
    });
    fs::write(&log_path, &log).map_err(|e| io_context(&log_path)(e.into()))?;
    result?;
    save_checkpoint(&trainer, &a.checkpoint).map_err(io_context(&a.checkpoint))?;
    println!(
        "trained {} iterations; checkpoint {}",
        trainer.iteration,
        a.checkpoint.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let trainer = load_checkpoint(&a.checkpoint).map_err(io_context(&a.checkpoint))?;
    let test = load_features(&a.test, Split::Test).map_err(io_context(&a.test))?;
    let emb = trainer.embed(test.features())?;
    let report = evaluate(&emb, test.labels(), test.class_names(), &a.ks, a.seed)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        fs::write(out, report.to_records()).map_err(|e| io_context(out)(e.into()))?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let opts = GradCheckOptions {
        seed: a.seed,
        perturb: a.perturb,
        ..GradCheckOptions::default()
    };
    let components = match a.component {
        Some(c) => vec![c],
        None => Component::ALL.to_vec(),
    };
    let mut failed = Vec::new();
    for c in components {
        let report = check(c, &opts)?;
        println!("{report}");
        if !report.passed {
            failed.push(c.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("gradient check failed: {}", failed.join(", ")),
        })
    }
}

fn cmd_embed(a: EmbedArgs) -> CmdResult {
    let trainer = load_checkpoint(&a.checkpoint).map_err(io_context(&a.checkpoint))?;
    let ds = load_features(&a.features, Split::Test).map_err(io_context(&a.features))?;
    let emb = trainer.embed(ds.features())?;
    write_dataset(&ds.with_features(emb)?, &a.out, a.binary)
}

fn cmd_inspect(path: &Path) -> CmdResult {
    let t = load_checkpoint(path).map_err(io_context(path))?;
    println!("# iteration = {}", t.iteration);
    print!("{}", t.config.to_kv());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(*a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
