//! Learnable components: shared encoder, attention aggregators, and the bag
//! and instance heads. Parameters live in [`ModelState`]; the functions here
//! build the forward graph on a [`Tape`] from bound parameter handles.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{argmax, Tape, Tensor, Var};

pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregator {
    Abmil,
    Dsmil,
    ClamSb,
    ClamMb,
    MaxPool,
    MeanPool,
}

impl Aggregator {
    pub fn is_pooling(self) -> bool {
        matches!(self, Aggregator::MaxPool | Aggregator::MeanPool)
    }

    /// Stable numeric tag used in checkpoints.
    pub fn tag(self) -> u8 {
        match self {
            Aggregator::Abmil => 0,
            Aggregator::Dsmil => 1,
            Aggregator::ClamSb => 2,
            Aggregator::ClamMb => 3,
            Aggregator::MaxPool => 4,
            Aggregator::MeanPool => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Aggregator::Abmil,
            1 => Aggregator::Dsmil,
            2 => Aggregator::ClamSb,
            3 => Aggregator::ClamMb,
            4 => Aggregator::MaxPool,
            5 => Aggregator::MeanPool,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Abmil => "abmil",
            Aggregator::Dsmil => "dsmil",
            Aggregator::ClamSb => "clam_sb",
            Aggregator::ClamMb => "clam_mb",
            Aggregator::MaxPool => "maxpool",
            Aggregator::MeanPool => "meanpool",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        [
            Aggregator::Abmil,
            Aggregator::Dsmil,
            Aggregator::ClamSb,
            Aggregator::ClamMb,
            Aggregator::MaxPool,
            Aggregator::MeanPool,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| format!("unknown aggregator `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_in: usize,
    pub hidden: usize,
    /// Instance embedding width shared by every downstream module.
    pub d: usize,
    /// Attention hidden width.
    pub l: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_in: 32,
            hidden: 128,
            d: 64,
            l: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub aggregator: Aggregator,
    pub dims: ModelDims,
    /// DSMIL only: select the critical instance with the instance head φ
    /// instead of a separate (untrained) scorer.
    pub tie_dsmil_scorer: bool,
    /// Whether φ is trained as an instance classifier. Without it, instance
    /// scores come from attention.
    pub instance_branch: bool,
}

impl ModelSpec {
    pub fn new(aggregator: Aggregator, dims: ModelDims) -> Self {
        ModelSpec {
            aggregator,
            dims,
            tie_dsmil_scorer: true,
            instance_branch: true,
        }
    }
}

/// Indices of the attention parameters inside [`ModelState::params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionSlots {
    Abmil { v: usize, w: usize },
    Dsmil { wq: usize, scorer: Option<(usize, usize)> },
    Clam { wa: usize, wb: usize, wc: usize },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slots {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub inst_w: usize,
    pub inst_b: usize,
    /// ψ, or the per-class slide scorers W_d for multi-branch CLAM.
    pub bag: Option<(usize, usize)>,
    pub attention: AttentionSlots,
}

/// Every learnable tensor of one model, in a fixed declared order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    pub slots: Slots,
}

/// Name and shape of each parameter, in checkpoint order.
pub fn param_layout(spec: &ModelSpec) -> Vec<(String, Vec<usize>)> {
    let ModelDims { d_in, hidden, d, l } = spec.dims;
    let mut out: Vec<(&str, Vec<usize>)> = vec![
        ("encoder.w1", vec![hidden, d_in]),
        ("encoder.b1", vec![hidden]),
        ("encoder.w2", vec![d, hidden]),
        ("encoder.b2", vec![d]),
        ("instance_head.w", vec![1, d]),
        ("instance_head.b", vec![1]),
    ];
    if !spec.aggregator.is_pooling() {
        out.push(("bag_head.w", vec![N_CLASSES, d]));
        out.push(("bag_head.b", vec![N_CLASSES]));
    }
    match spec.aggregator {
        Aggregator::Abmil => {
            out.push(("attention.v", vec![l, d]));
            out.push(("attention.w", vec![1, l]));
        }
        Aggregator::Dsmil => {
            out.push(("attention.wq", vec![l, d]));
            if !spec.tie_dsmil_scorer {
                out.push(("attention.scorer_w", vec![1, d]));
                out.push(("attention.scorer_b", vec![1]));
            }
        }
        Aggregator::ClamSb | Aggregator::ClamMb => {
            let branches = if spec.aggregator == Aggregator::ClamMb { N_CLASSES } else { 1 };
            out.push(("attention.wa", vec![l, d]));
            out.push(("attention.wb", vec![l, d]));
            out.push(("attention.wc", vec![branches, l]));
        }
        Aggregator::MaxPool | Aggregator::MeanPool => {}
    }
    out.into_iter().map(|(n, s)| (n.to_string(), s)).collect()
}

fn slots_for(spec: &ModelSpec, names: &[String]) -> Slots {
    let find = |n: &str| names.iter().position(|x| x == n);
    let get = |n: &str| find(n).expect("parameter present in layout");
    let attention = match spec.aggregator {
        Aggregator::Abmil => AttentionSlots::Abmil {
            v: get("attention.v"),
            w: get("attention.w"),
        },
        Aggregator::Dsmil => AttentionSlots::Dsmil {
            wq: get("attention.wq"),
            scorer: find("attention.scorer_w").zip(find("attention.scorer_b")),
        },
        Aggregator::ClamSb | Aggregator::ClamMb => AttentionSlots::Clam {
            wa: get("attention.wa"),
            wb: get("attention.wb"),
            wc: get("attention.wc"),
        },
        Aggregator::MaxPool | Aggregator::MeanPool => AttentionSlots::None,
    };
    Slots {
        w1: get("encoder.w1"),
        b1: get("encoder.b1"),
        w2: get("encoder.w2"),
        b2: get("encoder.b2"),
        inst_w: get("instance_head.w"),
        inst_b: get("instance_head.b"),
        bag: find("bag_head.w").zip(find("bag_head.b")),
        attention,
    }
}

impl ModelState {
    /// Weights ~ U(−1/√fan_in, 1/√fan_in) drawn in declared order from a
    /// generator seeded with `seed`; biases zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let ModelDims { d_in, hidden, d, l } = spec.dims;
        if d_in == 0 || hidden == 0 || d == 0 || l == 0 {
            return Err(Error::config(format!("model dimensions must be positive: {:?}", spec.dims)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = param_layout(&spec);
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let t = if shape.len() == 2 {
                let bound = 1.0 / (shape[1] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let n = shape[0] * shape[1];
                Tensor::new(shape, (0..n).map(|_| dist.sample(&mut rng)).collect())?
            } else {
                Tensor::zeros(shape)
            };
            names.push(name);
            params.push(t.with_grad());
        }
        Ok(Self::from_parts(spec, names, params))
    }

    pub(crate) fn from_parts(spec: ModelSpec, names: Vec<String>, params: Vec<Tensor>) -> Self {
        let slots = slots_for(&spec, &names);
        ModelState {
            spec,
            names,
            params,
            slots,
        }
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    pub fn n_values(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Parameters trained by the instance branch: shared encoder and φ.
    pub fn instance_group(&self) -> Vec<usize> {
        let s = &self.slots;
        vec![s.w1, s.b1, s.w2, s.b2, s.inst_w, s.inst_b]
    }

    /// Parameters trained by the bag branch. φ is included unless frozen.
    pub fn bag_group(&self, include_instance_head: bool) -> Vec<usize> {
        let s = &self.slots;
        (0..self.params.len())
            .filter(|&i| include_instance_head || (i != s.inst_w && i != s.inst_b))
            .collect()
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(p)).collect(),
            slots: self.slots,
        }
    }

    /// Adds the tape's parameter gradients into the gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            tape.accumulate_grad(v, p)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }
}

/// Parameter handles on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub slots: Slots,
}

impl Bound {
    fn at(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// `relu(x·W1ᵀ + b1)·W2ᵀ + b2` for a batch `x: [n×d_in]`, giving `[n×d]`.
pub fn encode(tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
    let s = p.slots;
    let z = tape.linear(x, p.at(s.w1), Some(p.at(s.b1)))?;
    let r = tape.relu(z)?;
    tape.linear(r, p.at(s.w2), Some(p.at(s.b2)))
}

/// φ: one logit per row of `h: [n×d]`, returned as a vector `[n]`.
pub fn instance_head(tape: &mut Tape, p: &Bound, h: Var) -> Result<Var> {
    let n = tape.shape(h)[0];
    let z = tape.linear(h, p.at(p.slots.inst_w), Some(p.at(p.slots.inst_b)))?;
    tape.reshape(z, vec![n])
}

/// ψ: class logits `[n_classes]` for a bag embedding `h_bag: [1×d]`.
pub fn bag_head(tape: &mut Tape, p: &Bound, h_bag: Var) -> Result<Var> {
    let (w, b) = p
        .slots
        .bag
        .ok_or_else(|| Error::Contract("pooling models have no bag head".into()))?;
    let z = tape.linear(h_bag, p.at(w), Some(p.at(b)))?;
    tape.reshape(z, vec![N_CLASSES])
}

/// ABMIL raw scores `a_j = wᵀ tanh(V h_j)`.
pub fn attn_abmil(tape: &mut Tape, p: &Bound, h: Var) -> Result<Var> {
    let AttentionSlots::Abmil { v, w } = p.slots.attention else {
        return Err(Error::Contract("model has no ABMIL attention".into()));
    };
    let n = tape.shape(h)[0];
    let hidden = tape.linear(h, p.at(v), None)?;
    let t = tape.tanh(hidden)?;
    let a = tape.linear(t, p.at(w), None)?;
    tape.reshape(a, vec![n])
}

/// DSMIL raw scores `a_j = ⟨W_q h_j, W_q h_m⟩` where `m` maximises
/// `critical_scores` (lowest index on ties).
pub fn attn_dsmil(tape: &mut Tape, p: &Bound, h: Var, critical_scores: &[f64]) -> Result<(Var, usize)> {
    let AttentionSlots::Dsmil { wq, .. } = p.slots.attention else {
        return Err(Error::Contract("model has no DSMIL attention".into()));
    };
    let n = tape.shape(h)[0];
    if critical_scores.len() != n {
        return Err(Error::Dimension(format!(
            "{} critical scores for {n} instances",
            critical_scores.len()
        )));
    }
    let m = argmax(critical_scores);
    let q = tape.linear(h, p.at(wq), None)?;
    let qm = tape.row(q, m)?;
    let l = tape.shape(qm)[0];
    let qm = tape.reshape(qm, vec![1, l])?;
    let a = tape.linear(q, qm, None)?;
    Ok((tape.reshape(a, vec![n])?, m))
}

/// Output of the separate DSMIL critical-instance scorer, when untied.
pub fn dsmil_scorer(tape: &mut Tape, p: &Bound, h: Var) -> Result<Option<Var>> {
    let AttentionSlots::Dsmil { scorer: Some((w, b)), .. } = p.slots.attention else {
        return Ok(None);
    };
    let n = tape.shape(h)[0];
    let z = tape.linear(h, p.at(w), Some(p.at(b)))?;
    Ok(Some(tape.reshape(z, vec![n])?))
}

/// CLAM gated scores `a_{k,j} = W_c^k (tanh(W_a h_j) ⊙ σ(W_b h_j))`, one row per
/// branch: `[branches×n]`.
pub fn attn_clam(tape: &mut Tape, p: &Bound, h: Var) -> Result<Var> {
    let AttentionSlots::Clam { wa, wb, wc } = p.slots.attention else {
        return Err(Error::Contract("model has no CLAM attention".into()));
    };
    let ta = tape.linear(h, p.at(wa), None)?;
    let ta = tape.tanh(ta)?;
    let sb = tape.linear(h, p.at(wb), None)?;
    let sb = tape.sigmoid(sb)?;
    let gated = tape.mul(ta, sb)?;
    let a = tape.linear(gated, p.at(wc), None)?;
    tape.transpose(a)
}

/// Multi-branch CLAM slide scores `s_k = W_d^k H_k + b_k` from the per-class
/// bag embeddings `H_k: [1×d]`.
pub fn clam_slide_scores(tape: &mut Tape, p: &Bound, per_class: &[Var]) -> Result<Var> {
    let (w, b) = p
        .slots
        .bag
        .ok_or_else(|| Error::Contract("CLAM needs slide scorers".into()))?;
    let mut scores = Vec::with_capacity(per_class.len());
    for (k, &hk) in per_class.iter().enumerate() {
        let all = tape.linear(hk, p.at(w), Some(p.at(b)))?;
        let all = tape.reshape(all, vec![N_CLASSES])?;
        scores.push(tape.select(all, k)?);
    }
    tape.concat(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(agg: Aggregator) -> ModelSpec {
        ModelSpec::new(
            agg,
            ModelDims {
                d_in: 3,
                hidden: 4,
                d: 2,
                l: 2,
            },
        )
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = ModelState::init(tiny(Aggregator::Abmil), 7).unwrap();
        let b = ModelState::init(tiny(Aggregator::Abmil), 7).unwrap();
        let c = ModelState::init(tiny(Aggregator::Abmil), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        assert!(a.param("encoder.b1").unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_weights_are_centered() {
        let spec = ModelSpec::new(
            Aggregator::MeanPool,
            ModelDims {
                d_in: 100,
                hidden: 100,
                d: 1,
                l: 1,
            },
        );
        let state = ModelState::init(spec, 3).unwrap();
        let w = state.param("encoder.w1").unwrap().data();
        assert_eq!(w.len(), 10_000);
        let bound = 0.1;
        assert!(w.iter().all(|x| x.abs() <= bound));
        // U(-b, b) has variance b²/3; the sample mean's sd is b/√(3n).
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd_mean = bound / (3.0 * w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd_mean, "mean {mean}");
    }

    #[test]
    fn layouts_per_aggregator() {
        let names = |a| -> Vec<String> { param_layout(&tiny(a)).into_iter().map(|x| x.0).collect() };
        assert!(names(Aggregator::MaxPool).iter().all(|n| !n.starts_with("bag_head")));
        assert!(names(Aggregator::Dsmil).iter().all(|n| !n.contains("scorer")));
        let mut untied = tiny(Aggregator::Dsmil);
        untied.tie_dsmil_scorer = false;
        let state = ModelState::init(untied, 0).unwrap();
        assert!(matches!(
            state.slots.attention,
            AttentionSlots::Dsmil { scorer: Some(_), .. }
        ));
        let mb = param_layout(&tiny(Aggregator::ClamMb));
        assert!(mb.contains(&("attention.wc".into(), vec![2, 2])));
    }

    #[test]
    fn aggregator_names_round_trip() {
        for tag in 0..6 {
            let a = Aggregator::from_tag(tag).unwrap();
            assert_eq!(a.name().parse::<Aggregator>().unwrap(), a);
            assert_eq!(a.tag(), tag);
        }
        assert!(Aggregator::from_tag(9).is_none());
    }
}
