//! Generates the synthetic witness and subtype benchmarks, writes them to
//! disk in the binary bag format and reads them back.
//!
//! ```text
//! cargo run --release --example generate_dataset -- [out_dir]
//! ```

use std::path::PathBuf;

use dualmil::data::{gen_synthetic, load_dataset, save_dataset, BagDataset, SynthMode, SyntheticConfig};

fn summary(name: &str, ds: &BagDataset) {
    let positives = ds.bags.iter().filter(|b| b.label == 1).count();
    let witnesses: usize = ds
        .bags
        .iter()
        .filter_map(|b| b.instance_labels.as_ref())
        .map(|l| l.iter().filter(|&&y| y == 1).count())
        .sum();
    println!(
        "{name}: {} bags ({positives} positive), {} instances ({witnesses} positive), width {}",
        ds.len(),
        ds.n_instances(),
        ds.d_in
    );
}

fn main() -> dualmil::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("dualmil-synthetic"), PathBuf::from);

    for mode in [SynthMode::Witness, SynthMode::Subtype] {
        let cfg = SyntheticConfig {
            mode,
            n_bags: 200,
            ..SyntheticConfig::default()
        };
        let ds = gen_synthetic(&cfg)?;
        let dir = out.join(mode.to_string());
        save_dataset(&ds, &dir)?;
        let back = load_dataset(&dir)?;
        assert_eq!(back, ds, "round trip changed the dataset");
        summary(&mode.to_string(), &back);
        println!("  written to {}", dir.display());
    }
    Ok(())
}
