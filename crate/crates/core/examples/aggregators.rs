//! Trains the dual-branch framework on top of each attention aggregator and
//! prints test metrics side by side.
//!
//! ```text
//! cargo run --release --example aggregators -- [bag_epochs]
//! ```

use dualmil::data::{gen_synthetic, SyntheticConfig};
use dualmil::metrics::evaluate_model;
use dualmil::nn::Aggregator;
use dualmil::trainer::{train, TrainConfig};

fn main() -> dualmil::Result<()> {
    let epochs = std::env::args().nth(1).map_or(30, |s| s.parse().expect("bag epochs"));
    let train_ds = gen_synthetic(&SyntheticConfig { n_bags: 400, ..SyntheticConfig::default() })?;
    let test_ds = gen_synthetic(&SyntheticConfig {
        seed: 1,
        n_bags: 200,
        id_prefix: "test".into(),
        ..SyntheticConfig::default()
    })?;
    println!("aggregator\tbag_auc\tinst_auc");
    for aggregator in [Aggregator::Abmil, Aggregator::Dsmil, Aggregator::ClamSb, Aggregator::ClamMb] {
        let cfg = TrainConfig { aggregator, max_epochs: epochs, ..TrainConfig::default() };
        let (state, _) = train(&train_ds, None, &cfg)?;
        let r = evaluate_model(&state, &test_ds, &cfg.eval_options())?;
        let inst = r.inst_auc.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        println!("{aggregator}\t{:.4}\t{inst}", r.bag_auc);
    }
    Ok(())
}
