//! ROC AUC, Youden-thresholded accuracy, instance-score fallbacks, model
//! evaluation and heatmap export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::baselines;
use crate::data::BagDataset;
use crate::error::{Error, Result};
use crate::model::{bag_forward, ForwardMode};
use crate::nn::ModelState;
use crate::tensor::{sigmoid_scalar, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Domain("NaN score".into()));
        }
        Ok(ScoredSet { scores, labels })
    }

    fn class_counts(&self) -> (usize, usize) {
        let p = self.labels.iter().filter(|&&y| y == 1).count();
        (p, self.labels.len() - p)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = self.class_counts();
        if p == 0 || n == 0 {
            return Err(Error::MetricUndefined(format!(
                "need both classes, got {p} positive and {n} negative"
            )));
        }
        Ok((p, n))
    }
}

/// Mann–Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counting one half. Uses mid-ranks.
pub fn auc(s: &ScoredSet) -> Result<f64> {
    let (p, n) = s.require_both_classes()?;
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| s.labels[k] == 1).count();
        rank_sum_pos += mid * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

/// Threshold maximising `TPR − FPR` and the achieved J.
///
/// Candidates are −∞, the midpoints between consecutive distinct scores, and
/// +∞; a score is predicted positive iff it exceeds the threshold. Ties in J
/// go to the larger threshold.
pub fn youden(s: &ScoredSet) -> Result<(f64, f64)> {
    let (p, n) = s.require_both_classes()?;
    let mut pairs: Vec<(f64, u8)> = s.scores.iter().copied().zip(s.labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sweeping upward: below the first candidate everything is positive.
    let (mut tp, mut fp) = (p, n);
    let j_of = |tp: usize, fp: usize| tp as f64 / p as f64 - fp as f64 / n as f64;
    let mut best = (f64::NEG_INFINITY, j_of(tp, fp));
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 == 1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        let threshold = if i < pairs.len() {
            v + (pairs[i].0 - v) / 2.0
        } else {
            f64::INFINITY
        };
        let j = j_of(tp, fp);
        if j >= best.1 {
            best = (threshold, j);
        }
    }
    Ok(best)
}

pub fn youden_threshold(s: &ScoredSet) -> Result<f64> {
    youden(s).map(|(t, _)| t)
}

/// Fraction of items where `(score > threshold) == label`.
pub fn accuracy_at(s: &ScoredSet, threshold: f64) -> f64 {
    if s.scores.is_empty() {
        return 0.0;
    }
    let correct = s
        .scores
        .iter()
        .zip(&s.labels)
        .filter(|(&x, &y)| (x > threshold) == (y == 1))
        .count();
    correct as f64 / s.scores.len() as f64
}

/// Instance probabilities for models without an instance classifier: zero in
/// bags predicted negative, otherwise sigmoid of min-max-normalised scores.
/// Constant scores give 0.5 everywhere.
pub fn fallback_instance_probs(bag_positive: bool, scores: &[f64]) -> Vec<f64> {
    if !bag_positive {
        return vec![0.0; scores.len()];
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.5; scores.len()];
    }
    scores
        .iter()
        .map(|&a| sigmoid_scalar((a - min) / (max - min)))
        .collect()
}

/// One line of the score dump. Bag-level rows have no instance index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub bag_id: String,
    pub instance: Option<usize>,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n_bags: usize,
    pub bag_auc: f64,
    pub bag_acc: f64,
    pub bag_threshold: f64,
    pub inst_auc: Option<f64>,
    pub inst_acc: Option<f64>,
    pub inst_threshold: Option<f64>,
    pub n_instances: usize,
    /// How instance scores were produced (`head`, `fallback`, or `none`).
    pub inst_source: &'static str,
    pub notice: Option<String>,
    pub dump: Vec<ScoreRow>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

impl MetricsReport {
    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_bags={}", self.n_bags);
        let _ = writeln!(s, "bag_auc={}", self.bag_auc);
        let _ = writeln!(s, "bag_acc={}", self.bag_acc);
        let _ = writeln!(s, "bag_threshold={}", self.bag_threshold);
        let _ = writeln!(s, "n_instances={}", self.n_instances);
        let _ = writeln!(s, "inst_source={}", self.inst_source);
        let _ = writeln!(s, "inst_auc={}", fmt_opt(self.inst_auc));
        let _ = writeln!(s, "inst_acc={}", fmt_opt(self.inst_acc));
        let _ = writeln!(s, "inst_threshold={}", fmt_opt(self.inst_threshold));
        if let Some(n) = &self.notice {
            let _ = writeln!(s, "notice={n}");
        }
        s
    }

    /// `bag_id,instance_index,score,label`; bag-level rows leave the index empty.
    pub fn dump_csv(&self) -> String {
        let mut s = String::from("bag_id,instance_index,score,label\n");
        for r in &self.dump {
            let idx = r.instance.map(|i| i.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{:?},{}", r.bag_id, idx, r.score, r.label);
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = dir.join("metrics.txt");
        fs::write(&report, self.to_text()).map_err(|e| Error::io(&report, e))?;
        let dump = dir.join("scores.csv");
        fs::write(&dump, self.dump_csv()).map_err(|e| Error::io(&dump, e))?;
        Ok((report, dump))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    /// Use 0.5 instead of the Youden threshold for instance accuracy.
    pub instance_threshold_half: bool,
}

/// Bag positive-class probability and per-instance scores for one bag, with
/// the mask off. Instance scores are φ logits for attention models and the
/// attention scores themselves when `raw_attention` is requested.
pub struct BagScores {
    pub bag_prob: f64,
    pub instance_logits: Vec<f64>,
    pub attention: Option<Vec<f64>>,
}

pub fn score_bag(state: &ModelState, bag: &crate::data::Bag) -> Result<BagScores> {
    let mut tape = Tape::new();
    let p = state.bind(&mut tape);
    if state.spec.aggregator.is_pooling() {
        let (prob, logits) = baselines::pooled_forward(&mut tape, state, &p, bag)?;
        return Ok(BagScores {
            bag_prob: tape.scalar(prob),
            instance_logits: tape.value(logits).to_vec(),
            attention: None,
        });
    }
    let out = bag_forward(&mut tape, state, &p, bag, 1.0, ForwardMode::Eval)?;
    Ok(BagScores {
        bag_prob: tape.scalar(out.bag_prob),
        instance_logits: tape.value(out.instance_logits).to_vec(),
        attention: Some(out.record.raw),
    })
}

/// Instance probabilities for every bag given its bag-level decision.
pub fn instance_probs(state: &ModelState, scores: &BagScores, bag_positive: bool) -> (Vec<f64>, &'static str) {
    if state.spec.aggregator.is_pooling() {
        (fallback_instance_probs(bag_positive, &scores.instance_logits), "fallback")
    } else if state.spec.instance_branch {
        (scores.instance_logits.iter().map(|&z| sigmoid_scalar(z)).collect(), "head")
    } else {
        let att = scores.attention.as_deref().unwrap_or(&[]);
        (fallback_instance_probs(bag_positive, att), "fallback")
    }
}

/// Bag and instance AUC/ACC on a dataset, thresholds tuned by Youden's J on
/// the same split.
pub fn evaluate_model(state: &ModelState, ds: &BagDataset, opts: &EvalOptions) -> Result<MetricsReport> {
    let per_bag: Vec<BagScores> = ds.bags.iter().map(|b| score_bag(state, b)).collect::<Result<_>>()?;
    let bag_set = ScoredSet::new(
        per_bag.iter().map(|s| s.bag_prob).collect(),
        ds.bags.iter().map(|b| b.label).collect(),
    )?;
    let bag_auc = auc(&bag_set)?;
    let bag_threshold = youden_threshold(&bag_set)?;
    let bag_acc = accuracy_at(&bag_set, bag_threshold);

    let mut dump = Vec::new();
    for (b, s) in ds.bags.iter().zip(&per_bag) {
        dump.push(ScoreRow {
            bag_id: b.id.clone(),
            instance: None,
            score: s.bag_prob,
            label: b.label,
        });
    }

    let mut report = MetricsReport {
        n_bags: ds.len(),
        bag_auc,
        bag_acc,
        bag_threshold,
        inst_auc: None,
        inst_acc: None,
        inst_threshold: None,
        n_instances: ds.n_instances(),
        inst_source: "none",
        notice: None,
        dump,
    };
    if !ds.has_instance_labels() {
        report.notice = Some("instance labels unavailable; bag-level evaluation only".into());
        return Ok(report);
    }
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (b, s) in ds.bags.iter().zip(&per_bag) {
        let (probs, source) = instance_probs(state, s, s.bag_prob > bag_threshold);
        report.inst_source = source;
        let truth = b.instance_labels.as_ref().expect("checked above");
        for (j, (&p, &y)) in probs.iter().zip(truth).enumerate() {
            report.dump.push(ScoreRow {
                bag_id: b.id.clone(),
                instance: Some(j),
                score: p,
                label: y,
            });
        }
        scores.extend(probs);
        labels.extend(truth.iter().copied());
    }
    let inst_set = ScoredSet::new(scores, labels)?;
    match auc(&inst_set) {
        Ok(a) => {
            let thr = if opts.instance_threshold_half {
                0.5
            } else {
                youden_threshold(&inst_set)?
            };
            report.inst_auc = Some(a);
            report.inst_threshold = Some(thr);
            report.inst_acc = Some(accuracy_at(&inst_set, thr));
        }
        Err(Error::MetricUndefined(m)) => report.notice = Some(format!("instance metrics undefined: {m}")),
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Writes instance probabilities as a CSV grid (`<path>.csv`) and an 8-bit
/// binary graymap (`<path>.pgm`, 0 for probability 0, 255 for 1). Without
/// `grid`, the layout is one row of `n` cells.
pub fn heatmap_export(probs: &[f64], grid: Option<(usize, usize)>, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let (rows, cols) = grid.unwrap_or((1, probs.len()));
    if rows * cols != probs.len() || probs.is_empty() {
        return Err(Error::Dimension(format!(
            "grid {rows}x{cols} does not hold {} instances",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Domain("heatmap probabilities must lie in [0, 1]".into()));
    }
    let csv_path = path.with_extension("csv");
    let pgm_path = path.with_extension("pgm");
    if let Some(parent) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut csv = String::new();
    for row in probs.chunks(cols) {
        let line: Vec<String> = row.iter().map(|p| format!("{p:?}")).collect();
        csv.push_str(&line.join(","));
        csv.push('\n');
    }
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let mut pgm = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    pgm.extend(probs.iter().map(|p| (p * 255.0).round() as u8));
    fs::write(&pgm_path, pgm).map_err(|e| Error::io(&pgm_path, e))?;
    Ok((csv_path, pgm_path))
}

/// Parses a `R x C` / `RxC` grid spec.
pub fn parse_grid(spec: &str) -> Option<(usize, usize)> {
    let (r, c) = spec.split_once(['x', 'X'])?;
    Some((r.trim().parse().ok()?, c.trim().parse().ok()?))
}
