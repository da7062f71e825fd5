//! Trains with and without the regularizer over several seeds on the
//! synthetic benchmark and prints mean Recall@1 and density.

use std::time::Instant;

use clap::Parser;
use densemetric::eval::density_report;
use densemetric::{recall_at_k, synthesize, train, LossKind, TrainConfig};
use densemetric_bench::benchmark_data;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "contrastive")]
    loss: LossKind,
    #[arg(long, value_delimiter = ',', default_value = "0,10")]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1000)]
    iterations: u64,
    /// Extra config settings, e.g. `--set base_normalization=units`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args = Args::parse();
    for &lambda in &args.lambdas {
        let start = Instant::now();
        let (mut train_r1, mut test_r1, mut density) = (0.0, 0.0, 0.0);
        for seed in 0..args.seeds {
            let (tr, te) = synthesize(&benchmark_data(seed))?;
            let mut cfg = TrainConfig {
                loss: args.loss,
                lambda,
                seed,
                iterations: args.iterations,
                ..TrainConfig::default()
            };
            for kv in &args.overrides {
                let (k, v) = kv.split_once('=').ok_or("--set expects KEY=VALUE")?;
                cfg.set(k, v)?;
            }
            let (trainer, _) = train(cfg, &tr)?;
            let e_tr = trainer.embed(tr.features())?;
            let e_te = trainer.embed(te.features())?;
            let a = recall_at_k(&e_tr, tr.labels(), &[1])?[&1];
            let b = recall_at_k(&e_te, te.labels(), &[1])?[&1];
            let dens = density_report(&e_tr, tr.labels())?;
            let d = dens.values().sum::<f64>() / dens.len() as f64;
            println!("  lambda={lambda} seed={seed} train_r1={a:.4} test_r1={b:.4} density={d:.4}");
            train_r1 += a;
            test_r1 += b;
            density += d;
        }
        let n = args.seeds as f64;
        println!(
            "{} lambda={lambda}: train_r1={:.4} test_r1={:.4} gap={:.4} density={:.4} ({:.1}s)",
            args.loss,
            train_r1 / n,
            test_r1 / n,
            (train_r1 - test_r1) / n,
            density / n,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
