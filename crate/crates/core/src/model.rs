//! Bag and instance forward passes, hard-positive mining and the attention
//! cache that feeds the instance branch its soft labels.

use std::collections::HashMap;

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::nn::{self, Aggregator, Bound, ModelState};
use crate::tensor::{sigmoid_scalar, Tape, Var};

/// Raw attention of each bag as of its latest training-mode bag pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub raw: Vec<f64>,
    pub epoch_stamp: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SoftLabelCache {
    entries: HashMap<String, CacheEntry>,
}

impl SoftLabelCache {
    pub fn insert(&mut self, id: &str, raw: Vec<f64>, epoch: usize) {
        self.entries.insert(
            id.to_string(),
            CacheEntry {
                raw,
                epoch_stamp: epoch,
            },
        );
    }

    pub fn get(&self, id: &str) -> Option<&CacheEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Smallest and largest epoch stamp over all entries.
    pub fn stamp_range(&self) -> Option<(usize, usize)> {
        let stamps = self.entries.values().map(|e| e.epoch_stamp);
        let min = stamps.clone().min()?;
        Some((min, stamps.max()?))
    }
}

/// Per-bag attention state of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    /// Raw scores `a_i` (the supervising branch for multi-branch CLAM).
    pub raw: Vec<f64>,
    /// Softmax-normalised scores `α_i`.
    pub alpha: Vec<f64>,
    /// `α̃_i` after hard-positive mining; equals `alpha` outside training.
    pub masked: Vec<f64>,
    /// `M_i`: indices with `α̃_i^j > 0`.
    pub survivors: Vec<usize>,
    pub epoch_stamp: Option<usize>,
}

/// Zeroes `α_j` wherever the instance classifier is already confident,
/// `σ(logit_j) ≥ τ`. No renormalisation. `τ ≥ 1` never masks.
pub fn hpm_mask(alpha: &[f64], instance_logits: &[f64], tau: f64) -> (Vec<f64>, Vec<usize>) {
    debug_assert_eq!(alpha.len(), instance_logits.len());
    let masked: Vec<f64> = alpha
        .iter()
        .zip(instance_logits)
        .map(|(&a, &z)| if tau < 1.0 && sigmoid_scalar(z) >= tau { 0.0 } else { a })
        .collect();
    let survivors = masked
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > 0.0)
        .map(|(j, _)| j)
        .collect();
    (masked, survivors)
}

/// Survivor with the largest raw attention, lowest index on ties. When the
/// mask removed every instance, the argmax over all instances; the flag
/// reports that fallback.
pub fn key_instance(raw: &[f64], survivors: &[usize]) -> (usize, bool) {
    let Some((&first, rest)) = survivors.split_first() else {
        return (crate::tensor::argmax(raw), true);
    };
    let mut best = first;
    for &j in rest {
        if raw[j] > raw[best] {
            best = j;
        }
    }
    (best, false)
}

/// `H_i = Σ_j α̃_j h_j` as a `[1×d]` row.
pub fn aggregate(tape: &mut Tape, weights: Var, h: Var) -> Result<Var> {
    let n = tape.shape(h)[0];
    if tape.shape(weights) != [n] {
        return Err(Error::Dimension(format!(
            "{:?} weights for {n} instances",
            tape.shape(weights)
        )));
    }
    let row = tape.reshape(weights, vec![1, n])?;
    tape.matmul(row, h)
}

/// Pseudo-target for an instance of a bag: `σ(a / temperature)` in positive
/// bags, exactly 0 in negative bags.
pub fn soft_label(a: f64, bag_label: u8, temperature: f64) -> f64 {
    if bag_label == 1 {
        sigmoid_scalar(a / temperature)
    } else {
        0.0
    }
}

pub enum ForwardMode<'a> {
    /// Applies the mask and refreshes the bag's cache entry.
    Train {
        cache: &'a mut SoftLabelCache,
        epoch: usize,
    },
    Eval,
}

impl ForwardMode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, ForwardMode::Train { .. })
    }
}

pub struct BagForward {
    pub record: AttentionRecord,
    /// Raw supervising attention `a_i` on the tape, `[n]`.
    pub raw_attention: Var,
    pub bag_logits: Var,
    /// Positive-class probability (softmax over the bag logits).
    pub bag_prob: Var,
    pub instance_logits: Var,
    /// Survivor with the largest raw attention (over all instances when the
    /// mask removed everything).
    pub k_star: usize,
    /// True when every instance was masked.
    pub empty_mask: bool,
    /// Predicted class for multi-branch CLAM, whose attention supervises.
    pub branch: usize,
}

/// Encodes every instance, scores attention with the model's aggregator,
/// applies hard-positive mining in training mode and classifies the bag.
pub fn bag_forward(
    tape: &mut Tape,
    state: &ModelState,
    p: &Bound,
    bag: &Bag,
    tau: f64,
    mode: ForwardMode<'_>,
) -> Result<BagForward> {
    let agg = state.spec.aggregator;
    if agg.is_pooling() {
        return Err(Error::Contract(format!("{agg} has no attention branch")));
    }
    if bag.d_in != state.spec.dims.d_in {
        return Err(Error::Dimension(format!(
            "bag {} has width {} but the model expects {}",
            bag.id, bag.d_in, state.spec.dims.d_in
        )));
    }
    let n = bag.n;
    let x = tape.constant(vec![n, bag.d_in], bag.features.clone())?;
    let h = nn::encode(tape, p, x)?;
    let instance_logits = nn::instance_head(tape, p, h)?;
    let inst_values = tape.value(instance_logits).to_vec();
    let training = mode.is_training();
    let mask = |alpha: &[f64]| -> (Vec<f64>, Vec<usize>) {
        if training {
            hpm_mask(alpha, &inst_values, tau)
        } else {
            (alpha.to_vec(), (0..alpha.len()).filter(|&j| alpha[j] > 0.0).collect())
        }
    };

    let (raw_attention, alpha, masked, survivors, bag_logits, branch);
    match agg {
        Aggregator::ClamMb => {
            let scores = nn::attn_clam(tape, p, h)?;
            let mut alphas = Vec::new();
            let mut masks = Vec::new();
            let mut per_class = Vec::new();
            for k in 0..nn::N_CLASSES {
                let a_k = tape.row(scores, k)?;
                let alpha_k = tape.softmax(a_k)?;
                let values = tape.value(alpha_k).to_vec();
                let (m, s) = mask(&values);
                let weights = if training {
                    let keep: Vec<f64> = m.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
                    tape.mul_const(alpha_k, keep)?
                } else {
                    alpha_k
                };
                per_class.push(aggregate(tape, weights, h)?);
                alphas.push(values);
                masks.push((m, s));
            }
            bag_logits = nn::clam_slide_scores(tape, p, &per_class)?;
            let pi = crate::tensor::argmax(tape.value(bag_logits));
            branch = pi;
            raw_attention = tape.row(scores, pi)?;
            alpha = alphas.swap_remove(pi);
            (masked, survivors) = masks.swap_remove(pi);
        }
        _ => {
            let raw = match agg {
                Aggregator::Abmil => nn::attn_abmil(tape, p, h)?,
                Aggregator::Dsmil => {
                    let critical = match nn::dsmil_scorer(tape, p, h)? {
                        Some(s) => tape.value(s).to_vec(),
                        None => inst_values.clone(),
                    };
                    nn::attn_dsmil(tape, p, h, &critical)?.0
                }
                Aggregator::ClamSb => {
                    let s = nn::attn_clam(tape, p, h)?;
                    tape.reshape(s, vec![n])?
                }
                Aggregator::ClamMb | Aggregator::MaxPool | Aggregator::MeanPool => unreachable!(),
            };
            let alpha_var = tape.softmax(raw)?;
            alpha = tape.value(alpha_var).to_vec();
            let (m, s) = mask(&alpha);
            // The mask zeroes exactly the mined instances; α_j > 0 elsewhere
            // unless softmax underflowed, which the keep-vector preserves.
            let weights = if training {
                let keep: Vec<f64> = inst_values
                    .iter()
                    .map(|&z| if tau < 1.0 && sigmoid_scalar(z) >= tau { 0.0 } else { 1.0 })
                    .collect();
                tape.mul_const(alpha_var, keep)?
            } else {
                alpha_var
            };
            let h_bag = aggregate(tape, weights, h)?;
            bag_logits = nn::bag_head(tape, p, h_bag)?;
            raw_attention = raw;
            branch = 0;
            masked = m;
            survivors = s;
        }
    }

    let raw_values = tape.value(raw_attention).to_vec();
    let (k_star, empty_mask) = key_instance(&raw_values, &survivors);
    let probs = tape.softmax(bag_logits)?;
    let bag_prob = tape.select(probs, 1)?;

    let epoch_stamp = match mode {
        ForwardMode::Train { cache, epoch } => {
            cache.insert(&bag.id, raw_values.clone(), epoch);
            Some(epoch)
        }
        ForwardMode::Eval => None,
    };
    Ok(BagForward {
        record: AttentionRecord {
            raw: raw_values,
            alpha,
            masked,
            survivors,
            epoch_stamp,
        },
        raw_attention,
        bag_logits,
        bag_prob,
        instance_logits,
        k_star,
        empty_mask,
        branch,
    })
}

/// φ(𝓔(x)) for a batch of raw feature rows `[B×d_in]`.
pub fn instance_forward(tape: &mut Tape, p: &Bound, features: Vec<f64>, d_in: usize) -> Result<Var> {
    if d_in == 0 || features.is_empty() || !features.len().is_multiple_of(d_in) {
        return Err(Error::Dimension(format!(
            "{} values do not form a non-empty batch of width {d_in}",
            features.len()
        )));
    }
    let b = features.len() / d_in;
    let x = tape.constant(vec![b, d_in], features)?;
    let h = nn::encode(tape, p, x)?;
    nn::instance_head(tape, p, h)
}
