//! Compares the dual-branch ABMIL model against max- and mean-pooling
//! baselines trained with the same budget, seed and bag order.
//!
//! ```text
//! cargo run --release --example pooling_baselines -- [bag_epochs]
//! ```

use dualmil::baselines::pooling_baselines;
use dualmil::data::{gen_synthetic, SyntheticConfig};
use dualmil::metrics::evaluate_model;
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
    let cfg = TrainConfig { max_epochs: epochs, ..TrainConfig::default() };

    let (state, _) = train(&train_ds, None, &cfg)?;
    let ours = evaluate_model(&state, &test_ds, &cfg.eval_options())?;
    println!("model\tbag_auc\tbag_acc\tinst_auc");
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
    println!("{}+dual\t{:.4}\t{:.4}\t{}", cfg.aggregator, ours.bag_auc, ours.bag_acc, na(ours.inst_auc));
    for (kind, r) in pooling_baselines(&train_ds, &test_ds, &cfg)? {
        println!("{kind}\t{:.4}\t{:.4}\t{}", r.bag_auc, r.bag_acc, na(r.inst_auc));
    }
    Ok(())
}
