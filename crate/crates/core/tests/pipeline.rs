use std::path::Path;
use std::process::Command;

use dualmil::checkpoint::{encode_checkpoint, load_checkpoint, save_checkpoint};
use dualmil::data::{gen_synthetic, load_dataset, save_dataset, BagDataset, SyntheticConfig};
use dualmil::metrics::{evaluate_model, EvalOptions};
use dualmil::nn::Aggregator;
use dualmil::trainer::{run_ablation, train, train_observed, Ablation, Phase, TrainConfig};

fn small_data(seed: u64, n: usize, prefix: &str) -> BagDataset {
    gen_synthetic(&SyntheticConfig {
        seed,
        n_bags: n,
        bag_size_min: 4,
        bag_size_max: 9,
        d_in: 6,
        witness_rate: 0.25,
        id_prefix: prefix.into(),
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        hidden: 12,
        d: 8,
        l: 6,
        kappa: 2,
        max_epochs: 4,
        lr: 1e-3,
        instance_batch: 32,
        ..TrainConfig::default()
    }
}

#[test]
fn operation_trace_follows_the_schedule() {
    let ds = small_data(0, 2, "t");
    let cfg = TrainConfig { kappa: 1, max_epochs: 2, ..small_cfg() };
    let init = dualmil::nn::ModelState::init(cfg.model_spec(ds.d_in), cfg.seed).unwrap();
    let mut prev = init.params.clone();
    let mut trace = Vec::new();
    let (state, _) = train_observed(&ds, None, &cfg, &mut |e, s| {
        let changed: Vec<usize> = (0..s.params.len()).filter(|&i| s.params[i].data() != prev[i].data()).collect();
        assert!(changed.iter().all(|i| e.members.contains(i)), "{:?} step touched {changed:?}", e.phase);
        trace.push((e.phase, e.epoch, e.step, e.group));
        prev = s.params.clone();
    })
    .unwrap();
    use Phase::*;
    assert_eq!(
        trace,
        vec![
            (Bag, 0, 0, 0),
            (Bag, 0, 1, 0),
            (Instance, 0, 0, 1),
            (Bag, 1, 0, 0),
            (Bag, 1, 1, 0),
            (Instance, 1, 0, 1),
        ]
    );
    let inst = state.instance_group();
    assert_eq!(inst.len(), 6);
    assert!(state.bag_group(true).iter().all(|i| !inst.contains(i) || *i < 6));
    let names: Vec<&str> = inst.iter().map(|&i| state.names[i].as_str()).collect();
    assert_eq!(
        names,
        ["encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2", "instance_head.w", "instance_head.b"]
    );
}

#[test]
fn frozen_instance_head_is_untouched_by_bag_steps() {
    let ds = small_data(1, 4, "f");
    let cfg = TrainConfig { freeze_instance_head: true, instance_phase: false, ..small_cfg() };
    let init = dualmil::nn::ModelState::init(cfg.model_spec(ds.d_in), cfg.seed).unwrap();
    let (state, _) = train(&ds, None, &cfg).unwrap();
    for name in ["instance_head.w", "instance_head.b"] {
        assert_eq!(state.param(name).unwrap().data(), init.param(name).unwrap().data());
    }
    assert_ne!(state.param("bag_head.w").unwrap().data(), init.param("bag_head.w").unwrap().data());
}

#[test]
fn runs_are_bitwise_reproducible() {
    let ds = small_data(2, 12, "d");
    let val = small_data(3, 6, "v");
    for agg in [Aggregator::Abmil, Aggregator::Dsmil, Aggregator::ClamSb, Aggregator::ClamMb] {
        let cfg = TrainConfig { aggregator: agg, ..small_cfg() };
        let (a, la) = train(&ds, Some(&val), &cfg).unwrap();
        let (b, lb) = train(&ds, Some(&val), &cfg).unwrap();
        let (va, vb) = (la.metric_values(), lb.metric_values());
        assert_eq!(va.len(), vb.len());
        assert!(va.iter().zip(&vb).all(|(x, y)| x.to_bits() == y.to_bits()), "{agg}");
        assert_eq!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&b).unwrap());
    }
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let ds = small_data(4, 10, "c");
    let (state, _) = train(&ds, None, &small_cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let opts = EvalOptions::default();
    assert_eq!(evaluate_model(&state, &ds, &opts).unwrap(), evaluate_model(&back, &ds, &opts).unwrap());
}

#[test]
fn ablation_report_has_a_row_per_variant() {
    let ds = small_data(5, 8, "a");
    let cfg = TrainConfig { max_epochs: 2, ..small_cfg() };
    let report = run_ablation(&ds, &ds, &cfg, &Ablation::ALL).unwrap();
    assert_eq!(report.rows.len(), Ablation::ALL.len() + 1);
    assert_eq!(report.to_tsv().lines().count(), Ablation::ALL.len() + 2);

    // Ablating a term that is already off reproduces the baseline exactly.
    let mut off = cfg.clone();
    off.weights.use_attn = false;
    let twin = run_ablation(&ds, &ds, &off, &[Ablation::NoAttn]).unwrap();
    assert_eq!(twin.rows[0].report, twin.rows[1].report);
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let ds = small_data(6, 6, "z");
    let cfg = TrainConfig { lr: 0.0, ..small_cfg() };
    let (state, _) = train(&ds, None, &cfg).unwrap();
    let init = dualmil::nn::ModelState::init(cfg.model_spec(ds.d_in), cfg.seed).unwrap();
    assert_eq!(encode_checkpoint(&state).unwrap(), encode_checkpoint(&init).unwrap());
}

fn dualmil_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dualmil"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_metrics(path: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

#[test]
fn cli_pipeline_emits_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("gen.conf"),
        "n_bags = 24\nbag_size_min = 4\nbag_size_max = 8\nd_in = 6\nwitness_rate = 0.25\n",
    )
    .unwrap();
    std::fs::write(root.join("gen_test.conf"), "seed = 9\nn_bags = 10\nbag_size_min = 4\nbag_size_max = 8\nd_in = 6\nid_prefix = test\n").unwrap();
    std::fs::write(
        root.join("train.conf"),
        "hidden = 10\nd = 8\nl = 4\nkappa = 2\nmax_epochs = 4\ninstance_batch = 64\nlr = 0.001\nablations = no_self\n",
    )
    .unwrap();
    let (data, test, run, ev) = (root.join("data"), root.join("test"), root.join("run"), root.join("eval"));

    let out = dualmil_bin(&["gen", "--config", s(&root.join("gen.conf")), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = dualmil_bin(&["gen", "--config", s(&root.join("gen_test.conf")), "--out", s(&test)]);
    assert!(out.status.success());
    let before = std::fs::read(data.join("manifest.tsv")).unwrap();

    let out = dualmil_bin(&[
        "train", "--config", s(&root.join("train.conf")), "--data", s(&data), "--val", s(&test), "--out", s(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "runlog.csv", "metrics.txt", "scores.csv", "train.conf"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let out = dualmil_bin(&["eval", "--model", s(&run.join("model.ckpt")), "--data", s(&test), "--out", s(&ev)]);
    assert!(out.status.success());
    assert_eq!(read_metrics(&run.join("metrics.txt")), read_metrics(&ev.join("metrics.txt")));
    assert_eq!(
        std::fs::read(run.join("scores.csv")).unwrap(),
        std::fs::read(ev.join("scores.csv")).unwrap()
    );

    let ds = load_dataset(&test).unwrap();
    let bag = &ds.bags[0].id;
    let stem = root.join("heat");
    let out = dualmil_bin(&[
        "heatmap", "--model", s(&run.join("model.ckpt")), "--data", s(&test), "--bag", bag, "--out", s(&stem),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stem.with_extension("pgm").exists() && stem.with_extension("csv").exists());

    let out = dualmil_bin(&["ablate", "--config", s(&root.join("train.conf")), "--data", s(&data), "--test", s(&test), "--out", s(&root.join("abl"))]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(root.join("abl/ablation.tsv")).unwrap().lines().count(), 3);

    let out = dualmil_bin(&["baselines", "--config", s(&root.join("train.conf")), "--data", s(&data), "--test", s(&test), "--out", s(&root.join("base"))]);
    assert!(out.status.success());
    assert!(root.join("base/maxpool/metrics.txt").exists() && root.join("base/meanpool/scores.csv").exists());

    assert_eq!(std::fs::read(data.join("manifest.tsv")).unwrap(), before);
}

#[test]
fn cli_exit_codes() {
    let out = dualmil_bin(&["train", "--nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "beta = -1\n").unwrap();
    let out = dualmil_bin(&["train", "--config", s(&bad), "--data", s(dir.path()), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let out = dualmil_bin(&["eval", "--model", s(&dir.path().join("none")), "--data", s(dir.path()), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let ds = small_data(7, 4, "x");
    save_dataset(&ds, &dir.path().join("d")).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    std::fs::write(&ckpt, b"MILC\x01\x00").unwrap();
    let out = dualmil_bin(&["eval", "--model", s(&ckpt), "--data", s(&dir.path().join("d")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset"));
}
