//! Trains briefly, then writes instance-probability heatmaps (CSV and PGM)
//! for the positive test bag with the most witnesses.
//!
//! Synthetic bags have no spatial layout, so the instances are laid out row
//! by row on the smallest square grid that holds them.
//!
//! ```text
//! cargo run --release --example heatmap -- [bag_epochs] [out_dir]
//! ```

use std::path::PathBuf;

use dualmil::data::{gen_synthetic, SyntheticConfig};
use dualmil::metrics::{heatmap_export, instance_probs, score_bag};
use dualmil::trainer::{train, TrainConfig};

fn main() -> dualmil::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(20, |s| s.parse().expect("bag epochs"));
    let out = args
        .get(1)
        .map_or_else(|| std::env::temp_dir().join("dualmil-heatmap"), PathBuf::from);

    let train_ds = gen_synthetic(&SyntheticConfig { n_bags: 200, ..SyntheticConfig::default() })?;
    let test_ds = gen_synthetic(&SyntheticConfig {
        seed: 1,
        n_bags: 50,
        id_prefix: "test".into(),
        ..SyntheticConfig::default()
    })?;
    let cfg = TrainConfig { max_epochs: epochs, ..TrainConfig::default() };
    let (state, _) = train(&train_ds, None, &cfg)?;

    let bag = test_ds
        .bags
        .iter()
        .filter(|b| b.label == 1)
        .max_by_key(|b| b.instance_labels.as_ref().map_or(0, |l| l.iter().filter(|&&y| y == 1).count()))
        .expect("a positive bag");
    let scores = score_bag(&state, bag)?;
    let (probs, source) = instance_probs(&state, &scores, scores.bag_prob > 0.5);
    let side = (bag.n as f64).sqrt().ceil() as usize;
    let mut padded = probs.clone();
    padded.resize(side * side, 0.0);

    let (csv, pgm) = heatmap_export(&padded, Some((side, side)), &out.join(&bag.id))?;
    println!("bag {} (p = {:.3}, {source} scores)", bag.id, scores.bag_prob);
    if let Some(labels) = &bag.instance_labels {
        for (j, (&p, &y)) in probs.iter().zip(labels).enumerate().filter(|(_, (_, &y))| y == 1) {
            println!("  witness {j}: p = {p:.3} (label {y})");
        }
    }
    println!("wrote {} and {}", csv.display(), pgm.display());
    Ok(())
}
