//! Loss terms of both branches.
//!
//! All cross-entropies take `(prediction, target)`. Predictions are clamped
//! to `[ε, 1−ε]` before any log, so every value is finite and nonnegative;
//! targets only need to lie in `[0, 1]`.
//! Hard targets from the indicator are constants: no gradient flows through
//! them.

use crate::error::{Error, Result};
use crate::model::{soft_label, BagForward};
use crate::tensor::{Tape, Var};

pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of `L_inst`.
    pub beta: f64,
    /// Weight of `L_self`.
    pub gamma: f64,
    /// Weight of `L_attn`.
    pub delta: f64,
    /// Weight of `ℓ_self` in the instance branch.
    pub theta: f64,
    /// Bag-prediction share inside `L_label` and `L_self`.
    pub c1: f64,
    /// Key-instance share inside `L_label` and `L_self`.
    pub c2: f64,
    /// Indicator threshold for self-generated hard labels.
    pub t: f64,
    pub use_inst: bool,
    pub use_self: bool,
    pub use_attn: bool,
    pub use_inst_self: bool,
    /// Let `L_inst` also push the max-pooled instance prediction toward the
    /// bag prediction instead of treating it as a fixed target.
    pub inst_target_grad: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.5,
            gamma: 0.5,
            delta: 0.25,
            theta: 0.3,
            c1: 0.7,
            c2: 0.3,
            t: 0.5,
            use_inst: true,
            use_self: true,
            use_attn: true,
            use_inst_self: true,
            inst_target_grad: false,
        }
    }
}

/// Which of the three balance inequalities fail.
#[derive(Debug, Clone, PartialEq)]
pub struct TripartiteViolation(pub Vec<String>);

impl LossWeights {
    /// Hard errors: negative weights, `c1 + c2 = 0`, `t` outside (0, 1).
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("theta", self.theta),
            ("c1", self.c1),
            ("c2", self.c2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} = {v} must be a nonnegative number")));
            }
        }
        if self.c1 + self.c2 <= 0.0 {
            return Err(Error::config("c1 + c2 must be positive"));
        }
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(Error::config(format!("t = {} outside (0, 1)", self.t)));
        }
        Ok(())
    }

    /// With `L_label` at weight 1, no single weight among label, inst and
    /// self may exceed the sum of the other two. Only checked when all three
    /// terms are active.
    pub fn check_tripartite(&self) -> std::result::Result<(), TripartiteViolation> {
        if !(self.use_inst && self.use_self) {
            return Ok(());
        }
        let (b, g) = (self.beta, self.gamma);
        let mut failed = vec![];
        if 1.0 > b + g {
            failed.push(format!("label weight 1 exceeds beta + gamma = {}", b + g));
        }
        if b > 1.0 + g {
            failed.push(format!("beta = {b} exceeds 1 + gamma"));
        }
        if g > 1.0 + b {
            failed.push(format!("gamma = {g} exceeds 1 + beta"));
        }
        if failed.is_empty() {
            Ok(())
        } else {
            Err(TripartiteViolation(failed))
        }
    }
}

pub fn indicator(z: f64, t: f64) -> f64 {
    if z > t {
        1.0
    } else {
        0.0
    }
}

/// Binary cross-entropy on plain numbers.
pub fn bce_value(p: f64, q: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    let q = q.clamp(0.0, 1.0);
    -(q * p.ln() + (1.0 - q) * (1.0 - p).ln())
}

fn clamped_logs(tape: &mut Tape, p: Var) -> Result<(Var, Var)> {
    let pc = tape.clamp(p, EPS, 1.0 - EPS)?;
    let lp = tape.log(pc)?;
    let neg = tape.scale(pc, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let lq = tape.log(one_minus)?;
    Ok((lp, lq))
}

/// `−(q log p + (1−q) log(1−p))` for a scalar prediction and constant target.
pub fn bce(tape: &mut Tape, p: Var, q: f64) -> Result<Var> {
    let q = q.clamp(0.0, 1.0);
    let (lp, lq) = clamped_logs(tape, p)?;
    let a = tape.scale(lp, -q)?;
    let b = tape.scale(lq, -(1.0 - q))?;
    tape.add(a, b)
}

/// Elementwise cross-entropy of a prediction vector against constant targets.
pub fn bce_vec(tape: &mut Tape, p: Var, q: &[f64]) -> Result<Var> {
    let q: Vec<f64> = q.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let (lp, lq) = clamped_logs(tape, p)?;
    let a = tape.mul_const(lp, q.iter().map(|v| -v).collect())?;
    let b = tape.mul_const(lq, q.iter().map(|v| -(1.0 - v)).collect())?;
    tape.add(a, b)
}

/// Cross-entropy where the target is itself differentiable.
pub fn bce_soft(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let (lp, lq) = clamped_logs(tape, p)?;
    let qc = tape.clamp(q, 0.0, 1.0)?;
    let neg_q = tape.scale(qc, -1.0)?;
    let one_minus_q = tape.add_scalar(neg_q, 1.0)?;
    let a = tape.mul(qc, lp)?;
    let b = tape.mul(one_minus_q, lq)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// `c1·CE(Ŷ, Y) + c2·CE(ŷ_k, Y)` with `k` the top-attention survivor.
pub fn loss_label(tape: &mut Tape, bag_prob: Var, key_prob: Var, y: u8, c1: f64, c2: f64) -> Result<Var> {
    let y = f64::from(y);
    let a = bce(tape, bag_prob, y)?;
    let a = tape.scale(a, c1)?;
    let b = bce(tape, key_prob, y)?;
    let b = tape.scale(b, c2)?;
    tape.add(a, b)
}

/// `CE(Ŷ, ŷ)` with `ŷ` the max-pooled surviving instance probability, used
/// as a constant target.
pub fn loss_inst(tape: &mut Tape, bag_prob: Var, pooled_instance_prob: f64) -> Result<Var> {
    bce(tape, bag_prob, pooled_instance_prob)
}

/// `c1·CE(Ŷ, I_t(Ŷ)) + c2·mean_j CE(ŷ_j, I_t(ŷ_j))`.
pub fn loss_self_bag(
    tape: &mut Tape,
    bag_prob: Var,
    instance_probs: Var,
    c1: f64,
    c2: f64,
    t: f64,
) -> Result<Var> {
    let target = indicator(tape.scalar(bag_prob), t);
    let a = bce(tape, bag_prob, target)?;
    let a = tape.scale(a, c1)?;
    let hard: Vec<f64> = tape.value(instance_probs).iter().map(|&p| indicator(p, t)).collect();
    let per = bce_vec(tape, instance_probs, &hard)?;
    let b = tape.mean(per)?;
    let b = tape.scale(b, c2)?;
    tape.add(a, b)
}

/// `CE(σ(max_j a_j), Y)`; the gradient reaches only the top-scoring instance.
pub fn loss_attn(tape: &mut Tape, raw_attention: Var, y: u8) -> Result<Var> {
    let (top, _) = tape.reduce_max(raw_attention)?;
    let p = tape.sigmoid(top)?;
    bce(tape, p, f64::from(y))
}

/// Values of the four bag-branch terms; disabled terms are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BagLossParts {
    pub label: f64,
    pub inst: f64,
    pub self_: f64,
    pub attn: f64,
    pub total: f64,
}

/// `L_label + β·L_inst + γ·L_self + δ·L_attn` on plain values, honouring the
/// ablation flags.
pub fn loss_bag_total(label: f64, inst: f64, self_: f64, attn: f64, w: &LossWeights) -> f64 {
    let mut total = label;
    if w.use_inst {
        total += w.beta * inst;
    }
    if w.use_self {
        total += w.gamma * self_;
    }
    if w.use_attn {
        total += w.delta * attn;
    }
    total
}

/// Builds the full bag-branch loss for one forward pass. Disabled terms are
/// never placed on the tape, so they contribute nothing to any gradient.
pub fn bag_loss(tape: &mut Tape, fwd: &BagForward, y: u8, w: &LossWeights) -> Result<(Var, BagLossParts)> {
    let inst_probs = tape.sigmoid(fwd.instance_logits)?;
    let key_prob = tape.select(inst_probs, fwd.k_star)?;
    let label = loss_label(tape, fwd.bag_prob, key_prob, y, w.c1, w.c2)?;
    let mut parts = BagLossParts {
        label: tape.scalar(label),
        ..Default::default()
    };
    let mut total = label;

    if w.use_inst {
        let pool: Vec<usize> = if fwd.empty_mask {
            (0..tape.value(inst_probs).len()).collect()
        } else {
            fwd.record.survivors.clone()
        };
        let inst = if w.inst_target_grad {
            let picked: Vec<Var> = pool
                .iter()
                .map(|&j| tape.select(inst_probs, j))
                .collect::<Result<_>>()?;
            let stacked = tape.concat(&picked)?;
            let (pooled, _) = tape.reduce_max(stacked)?;
            bce_soft(tape, fwd.bag_prob, pooled)?
        } else {
            let probs = tape.value(inst_probs);
            let pooled = pool.iter().map(|&j| probs[j]).fold(f64::NEG_INFINITY, f64::max);
            loss_inst(tape, fwd.bag_prob, pooled)?
        };
        parts.inst = tape.scalar(inst);
        let scaled = tape.scale(inst, w.beta)?;
        total = tape.add(total, scaled)?;
    }
    if w.use_self {
        let s = loss_self_bag(tape, fwd.bag_prob, inst_probs, w.c1, w.c2, w.t)?;
        parts.self_ = tape.scalar(s);
        let scaled = tape.scale(s, w.gamma)?;
        total = tape.add(total, scaled)?;
    }
    if w.use_attn {
        let a = loss_attn(tape, fwd.raw_attention, y)?;
        parts.attn = tape.scalar(a);
        let scaled = tape.scale(a, w.delta)?;
        total = tape.add(total, scaled)?;
    }
    parts.total = tape.scalar(total);
    Ok((total, parts))
}

/// `ℓ_pseudo + θ·ℓ_self` for one instance on plain values.
pub fn loss_instance_branch(prob: f64, cached_attention: f64, y: u8, theta: f64, t: f64, temperature: f64) -> f64 {
    bce_value(prob, soft_label(cached_attention, y, temperature)) + theta * bce_value(prob, indicator(prob, t))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InstanceLossParts {
    pub pseudo: f64,
    pub self_: f64,
    pub total: f64,
}

/// Batch mean of `ℓ_inst` for instance logits against soft labels derived
/// from each instance's cached attention and bag label.
pub fn instance_batch_loss(
    tape: &mut Tape,
    logits: Var,
    attention: &[f64],
    bag_labels: &[u8],
    w: &LossWeights,
    temperature: f64,
) -> Result<(Var, InstanceLossParts)> {
    let probs = tape.sigmoid(logits)?;
    let targets: Vec<f64> = attention
        .iter()
        .zip(bag_labels)
        .map(|(&a, &y)| soft_label(a, y, temperature))
        .collect();
    let pseudo = bce_vec(tape, probs, &targets)?;
    let pseudo = tape.mean(pseudo)?;
    let mut parts = InstanceLossParts {
        pseudo: tape.scalar(pseudo),
        ..Default::default()
    };
    let mut total = pseudo;
    if w.use_inst_self {
        let hard: Vec<f64> = tape.value(probs).iter().map(|&p| indicator(p, w.t)).collect();
        let s = bce_vec(tape, probs, &hard)?;
        let s = tape.mean(s)?;
        parts.self_ = tape.scalar(s);
        let scaled = tape.scale(s, w.theta)?;
        total = tape.add(total, scaled)?;
    }
    parts.total = tape.scalar(total);
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn scalar_loss(f: impl FnOnce(&mut Tape, Var) -> Result<Var>, p: f64) -> f64 {
        let mut t = Tape::new();
        let v = t.variable(vec![], vec![p]).unwrap();
        let l = f(&mut t, v).unwrap();
        t.scalar(l)
    }

    #[test]
    fn bce_examples() {
        close(bce_value(0.5, 0.5), std::f64::consts::LN_2, 1e-12);
        assert!(bce_value(1.0, 1.0) <= 2e-7);
        let expected = -(0.3 * 0.8f64.ln() + 0.7 * 0.2f64.ln());
        close(bce_value(0.8, 0.3), expected, 1e-12);
        close(expected, 1.1935, 1e-4);
        close(scalar_loss(|t, p| bce(t, p, 0.3), 0.8), expected, 1e-12);
    }

    #[test]
    fn indicator_is_strict() {
        assert_eq!(indicator(0.7, 0.5), 1.0);
        assert_eq!(indicator(0.5, 0.5), 0.0);
        assert_eq!(indicator(0.49, 0.5), 0.0);
    }

    #[test]
    fn loss_bag_total_arithmetic() {
        let w = LossWeights {
            beta: 0.5,
            gamma: 0.5,
            delta: 0.25,
            ..Default::default()
        };
        close(loss_bag_total(0.2, 0.4, 0.1, 0.3, &w), 0.525, 1e-12);
        assert_eq!(loss_bag_total(0.0, 0.0, 0.0, 0.0, &w), 0.0);
        let label_only = LossWeights {
            use_inst: false,
            use_self: false,
            use_attn: false,
            ..w
        };
        assert_eq!(loss_bag_total(0.2, 0.4, 0.1, 0.3, &label_only), 0.2);
    }

    #[test]
    fn tripartite_rule() {
        assert!(LossWeights::default().check_tripartite().is_ok());
        let low = LossWeights {
            beta: 0.2,
            gamma: 0.2,
            ..Default::default()
        };
        assert!(low.check_tripartite().is_err());
        let lopsided = LossWeights {
            beta: 3.0,
            gamma: 0.5,
            ..Default::default()
        };
        assert_eq!(lopsided.check_tripartite().unwrap_err().0.len(), 1);
        let ablated = LossWeights {
            use_self: false,
            ..low
        };
        assert!(ablated.check_tripartite().is_ok());
    }

    #[test]
    fn validate_rejects_bad_weights() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { beta: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { c1: 0.0, c2: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { t: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn self_loss_gradient_pushes_away_from_threshold() {
        let t = 0.5;
        for (p, want_sign) in [(t + 0.01, -1.0), (t - 0.01, 1.0), (t, 1.0)] {
            let mut tape = Tape::new();
            let v = tape.variable(vec![], vec![p]).unwrap();
            let l = bce(&mut tape, v, indicator(p, t)).unwrap();
            tape.backward(l).unwrap();
            let g = tape.grad(v).unwrap()[0];
            assert_eq!(g.signum(), want_sign, "p = {p}");
        }
    }
}
