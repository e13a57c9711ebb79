//! Trains the dual-branch ABMIL model on the default synthetic benchmark and
//! reports bag and instance metrics on a held-out split.
//!
//! ```text
//! cargo run --release --example train_dual_branch -- [bag_epochs] [seed] [aggregator]
//! ```

use std::time::Instant;

use dualmil::data::{gen_synthetic, SyntheticConfig};
use dualmil::metrics::evaluate_model;
use dualmil::nn::Aggregator;
use dualmil::trainer::{train, TrainConfig};

fn main() -> dualmil::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(300, |s| s.parse().expect("bag epochs"));
    let seed = args.get(1).map_or(0, |s| s.parse().expect("seed"));
    let aggregator: Aggregator = args.get(2).map_or(Aggregator::Abmil, |s| s.parse().expect("aggregator"));

    let train_ds = gen_synthetic(&SyntheticConfig::default())?;
    let test_ds = gen_synthetic(&SyntheticConfig {
        seed: 1,
        n_bags: 200,
        id_prefix: "test".into(),
        ..SyntheticConfig::default()
    })?;
    let cfg = TrainConfig {
        aggregator,
        max_epochs: epochs,
        seed,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (state, log) = train(&train_ds, None, &cfg)?;
    let report = evaluate_model(&state, &test_ds, &cfg.eval_options())?;
    println!("trained {epochs} bag epochs in {:.1}s", t0.elapsed().as_secs_f64());
    if let Some(last) = log.records.last() {
        println!("last epoch: {} loss {:.4}", last.phase, last.loss);
    }
    print!("{}", report.to_text());
    Ok(())
}
