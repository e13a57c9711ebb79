//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 data or format error, 3 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::baselines::pooling_baselines;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::KvFile;
use crate::data::{gen_synthetic, load_dataset, save_dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, heatmap_export, instance_probs, parse_grid, score_bag, EvalOptions};
use crate::trainer::{run_ablation, train, TrainConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dualmil", version, about = "Dual-level multiple instance learning on bag datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bag dataset.
    Gen {
        /// Synthetic-data config (`key = value`); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a dual-branch model; writes model.ckpt, runlog.csv, metrics.txt and scores.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Validation split for model selection; the final report is computed on it.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint; writes metrics.txt and scores.csv.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score instances at 0.5 instead of the Youden threshold.
        #[arg(long)]
        half_threshold: bool,
    },
    /// Train the full model and each configured ablation; writes ablation.tsv.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Evaluation split; the training data when omitted.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export one bag's instance probabilities as CSV and PGM.
    Heatmap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bag: String,
        /// Grid layout `RxC`; one row when omitted.
        #[arg(long)]
        grid: Option<String>,
        /// Output stem; `.csv` and `.pgm` are appended.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate max- and mean-pooling baselines.
    Baselines {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_USAGE,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_config(path: Option<&Path>) -> Result<TrainConfig> {
    path.map_or_else(|| Ok(TrainConfig::default()), TrainConfig::read)
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Gen { config, out } => {
            let cfg = match config {
                Some(p) => SyntheticConfig::from_kv(&KvFile::read(p)?)?,
                None => SyntheticConfig::default(),
            };
            let ds = gen_synthetic(&cfg)?;
            save_dataset(&ds, out)?;
            write(&out.join("synthetic.conf"), &cfg.to_kv())?;
            log::info!("wrote {} bags to {}", ds.len(), out.display());
        }
        Command::Train { config, data, val, out } => {
            let cfg = train_config(config.as_deref())?;
            let ds = load_dataset(data)?;
            let val_ds = val.as_deref().map(load_dataset).transpose()?;
            let (state, log) = train(&ds, val_ds.as_ref(), &cfg)?;
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            save_checkpoint(&state, &out.join("model.ckpt"))?;
            write(&out.join("runlog.csv"), &log.to_csv())?;
            write(&out.join("train.conf"), &cfg.to_kv())?;
            let report = evaluate_model(&state, val_ds.as_ref().unwrap_or(&ds), &cfg.eval_options())?;
            report.write(out)?;
            print!("{}", report.to_text());
        }
        Command::Eval { model, data, out, half_threshold } => {
            let state = load_checkpoint(model)?;
            let ds = load_dataset(data)?;
            let opts = EvalOptions { instance_threshold_half: *half_threshold };
            let report = evaluate_model(&state, &ds, &opts)?;
            report.write(out)?;
            print!("{}", report.to_text());
        }
        Command::Ablate { config, data, test, out } => {
            let cfg = train_config(config.as_deref())?;
            let ds = load_dataset(data)?;
            let test_ds = test.as_deref().map(load_dataset).transpose()?;
            let report = run_ablation(&ds, test_ds.as_ref().unwrap_or(&ds), &cfg, &cfg.ablations)?;
            let table = report.to_tsv();
            write(&out.join("ablation.tsv"), &table)?;
            print!("{table}");
        }
        Command::Heatmap { model, data, bag, grid, out } => {
            let state = load_checkpoint(model)?;
            let ds = load_dataset(data)?;
            let b = ds
                .find(bag)
                .ok_or_else(|| Error::Validation(format!("no bag `{bag}` in {}", data.display())))?;
            let grid = grid
                .as_deref()
                .map(|g| parse_grid(g).ok_or_else(|| Error::config(format!("bad grid `{g}`, expected RxC"))))
                .transpose()?;
            let scores = score_bag(&state, b)?;
            let (probs, _) = instance_probs(&state, &scores, scores.bag_prob > 0.5);
            let (csv, pgm) = heatmap_export(&probs, grid, out)?;
            println!("{}\n{}", csv.display(), pgm.display());
        }
        Command::Baselines { config, data, test, out } => {
            let cfg = train_config(config.as_deref())?;
            let ds = load_dataset(data)?;
            let test_ds = test.as_deref().map(load_dataset).transpose()?;
            let reports = pooling_baselines(&ds, test_ds.as_ref().unwrap_or(&ds), &cfg)?;
            let mut table = String::from("model\tbag_auc\tbag_acc\tinst_auc\tinst_acc\n");
            for (kind, r) in &reports {
                r.write(&out.join(kind.name()))?;
                let f = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
                table.push_str(&format!(
                    "{kind}\t{:.4}\t{:.4}\t{}\t{}\n",
                    r.bag_auc,
                    r.bag_acc,
                    f(r.inst_auc),
                    f(r.inst_acc)
                ));
            }
            write(&out.join("baselines.tsv"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["dualmil", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["dualmil"]), EXIT_USAGE);
        assert_eq!(run(["dualmil", "--help"]), 0);
    }

    #[test]
    fn missing_data_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let out = dir.path().join("out");
        let code = run([
            "dualmil".as_ref(),
            "eval".as_ref(),
            "--model".as_ref(),
            missing.as_os_str(),
            "--data".as_ref(),
            missing.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ] as [&std::ffi::OsStr; 8]);
        assert_eq!(code, EXIT_DATA);
    }
}
