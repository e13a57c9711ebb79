//! Trains the full model and one variant per removed component with the same
//! seed, then prints the metric table with differences from the full model.
//!
//! ```text
//! cargo run --release --example ablation -- [bag_epochs] [variant,...]
//! ```

use dualmil::data::{gen_synthetic, SyntheticConfig};
use dualmil::trainer::{run_ablation, Ablation, TrainConfig};

fn main() -> dualmil::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(30, |s| s.parse().expect("bag epochs"));
    let variants: Vec<Ablation> = match args.get(1) {
        Some(list) => list.split(',').map(|s| s.parse().expect("ablation name")).collect(),
        None => Ablation::ALL.to_vec(),
    };

    let train_ds = gen_synthetic(&SyntheticConfig { n_bags: 400, ..SyntheticConfig::default() })?;
    let test_ds = gen_synthetic(&SyntheticConfig {
        seed: 1,
        n_bags: 200,
        id_prefix: "test".into(),
        ..SyntheticConfig::default()
    })?;
    let cfg = TrainConfig { max_epochs: epochs, ..TrainConfig::default() };
    let report = run_ablation(&train_ds, &test_ds, &cfg, &variants)?;
    print!("{}", report.to_tsv());
    Ok(())
}
