//! Trains a short run, saves the model to a checkpoint, loads it back and
//! checks that evaluation of the restored model is unchanged.
//!
//! ```text
//! cargo run --release --example evaluate_checkpoint -- [bag_epochs]
//! ```

use dualmil::checkpoint::{load_checkpoint, save_checkpoint};
use dualmil::data::{gen_synthetic, SyntheticConfig};
use dualmil::metrics::evaluate_model;
use dualmil::trainer::{train, TrainConfig};

fn main() -> dualmil::Result<()> {
    let epochs = std::env::args().nth(1).map_or(20, |s| s.parse().expect("bag epochs"));
    let train_ds = gen_synthetic(&SyntheticConfig { n_bags: 200, ..SyntheticConfig::default() })?;
    let test_ds = gen_synthetic(&SyntheticConfig {
        seed: 1,
        n_bags: 100,
        id_prefix: "test".into(),
        ..SyntheticConfig::default()
    })?;
    let cfg = TrainConfig { max_epochs: epochs, ..TrainConfig::default() };
    let (state, _) = train(&train_ds, None, &cfg)?;

    let path = std::env::temp_dir().join("dualmil-example.ckpt");
    save_checkpoint(&state, &path)?;
    let restored = load_checkpoint(&path)?;
    println!("checkpoint: {} ({} values)", path.display(), restored.n_values());

    let before = evaluate_model(&state, &test_ds, &cfg.eval_options())?;
    let after = evaluate_model(&restored, &test_ds, &cfg.eval_options())?;
    assert_eq!(before, after, "restored model evaluates differently");
    print!("{}", after.to_text());
    Ok(())
}
