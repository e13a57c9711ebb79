//! Shared oracles for the integration tests and the acceptance target.
#![allow(dead_code)]

use dualmil::data::Bag;
use dualmil::metrics::ScoredSet;
use dualmil::losses::{bag_loss, instance_batch_loss, LossWeights};
use dualmil::model::{bag_forward, instance_forward, ForwardMode, SoftLabelCache};
use dualmil::nn::{Aggregator, ModelDims, ModelSpec, ModelState};
use dualmil::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Worst relative error between tape gradients of `f` and central
/// differences, over every element of every input.
pub fn check_op<F>(inputs: &[(Vec<usize>, Vec<f64>)], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> dualmil::Result<Var>,
{
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(vals)
            .map(|((shape, _), v)| tape.constant(shape.clone(), v.clone()).unwrap())
            .collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(shape, v)| tape.variable(shape.clone(), v.clone()).unwrap())
        .collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; base[i].len()]);
        for k in 0..base[i].len() {
            let mut plus = base.clone();
            plus[i][k] += FD_STEP;
            let mut minus = base.clone();
            minus[i][k] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k], numeric));
        }
    }
    worst
}

/// Reduces any tensor to a scalar with fixed pseudo-random weights, so every
/// output element contributes a distinct amount.
pub fn probe(tape: &mut Tape, x: Var, seed: u64) -> dualmil::Result<Var> {
    let n = tape.value(x).len();
    let w = uniform(&mut rng(seed), n, 0.5, 1.5);
    let flat = tape.reshape(x, vec![n])?;
    let y = tape.mul_const(flat, w)?;
    tape.sum(y)
}

pub fn toy_dims() -> ModelDims {
    ModelDims { d_in: 8, hidden: 16, d: 16, l: 8 }
}

pub fn toy_bag(seed: u64, label: u8) -> Bag {
    let mut r = rng(seed);
    let feats = uniform(&mut r, 6 * 8, -1.5, 1.5);
    Bag::new("toy", 8, feats, label, None).unwrap()
}

/// Worst relative error of parameter gradients of `loss` against central
/// differences over every parameter value of `state`.
pub fn check_model<F>(state: &ModelState, loss: F) -> f64
where
    F: Fn(&mut Tape, &ModelState, &dualmil::nn::Bound) -> dualmil::Result<Var>,
{
    check_model_against(state, &loss, &loss)
}

/// Like [`check_model`], with the analytic gradient taken from `analytic`
/// and the differences from `numeric`. The two agree in value but `numeric`
/// holds stop-gradient targets fixed at their unperturbed values.
pub fn check_model_against<F, G>(state: &ModelState, analytic: F, numeric: G) -> f64
where
    F: Fn(&mut Tape, &ModelState, &dualmil::nn::Bound) -> dualmil::Result<Var>,
    G: Fn(&mut Tape, &ModelState, &dualmil::nn::Bound) -> dualmil::Result<Var>,
{
    let mut s = state.clone();
    s.zero_grads();
    let mut tape = Tape::new();
    let p = s.bind(&mut tape);
    let out = analytic(&mut tape, &s, &p).unwrap();
    tape.backward(out).unwrap();
    s.accumulate_grads(&tape, &p).unwrap();
    let eval = |st: &ModelState| -> f64 {
        let mut tape = Tape::new();
        let p = st.bind(&mut tape);
        let out = numeric(&mut tape, st, &p).unwrap();
        tape.scalar(out)
    };
    let mut worst: f64 = 0.0;
    for i in 0..s.params.len() {
        for k in 0..s.params[i].numel() {
            let a = s.params[i].grad().unwrap()[k];
            let mut plus = state.clone();
            plus.params[i].data_mut()[k] += FD_STEP;
            let mut minus = state.clone();
            minus.params[i].data_mut()[k] -= FD_STEP;
            let n = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(a, n));
        }
    }
    worst
}

pub fn toy_model(agg: Aggregator, seed: u64) -> ModelState {
    let mut spec = ModelSpec::new(agg, toy_dims());
    spec.tie_dsmil_scorer = true;
    ModelState::init(spec, seed).unwrap()
}

/// Full bag-branch loss in training mode for one bag.
pub fn bag_branch_loss(
    tape: &mut Tape,
    state: &ModelState,
    p: &dualmil::nn::Bound,
    bag: &Bag,
    tau: f64,
    w: &LossWeights,
) -> dualmil::Result<Var> {
    let mut cache = SoftLabelCache::default();
    let fwd = bag_forward(tape, state, p, bag, tau, ForwardMode::Train { cache: &mut cache, epoch: 0 })?;
    Ok(bag_loss(tape, &fwd, bag.label, w)?.0)
}

/// Max-pooled surviving instance probability of `state` on `bag`: the
/// constant target of the instance-supervision term.
pub fn pooled_target(state: &ModelState, bag: &Bag, tau: f64) -> f64 {
    let mut tape = Tape::new();
    let p = state.bind(&mut tape);
    let mut cache = SoftLabelCache::default();
    let fwd = bag_forward(&mut tape, state, &p, bag, tau, ForwardMode::Train { cache: &mut cache, epoch: 0 }).unwrap();
    let logits = tape.value(fwd.instance_logits).to_vec();
    let pool: Vec<usize> = if fwd.empty_mask {
        (0..logits.len()).collect()
    } else {
        fwd.record.survivors.clone()
    };
    pool.iter()
        .map(|&j| dualmil::tensor::sigmoid_scalar(logits[j]))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The bag-branch loss with the instance-supervision target frozen at
/// `target`; same value as [`bag_branch_loss`] at the unperturbed state.
pub fn bag_branch_loss_frozen(
    tape: &mut Tape,
    state: &ModelState,
    p: &dualmil::nn::Bound,
    bag: &Bag,
    tau: f64,
    w: &LossWeights,
    target: f64,
) -> dualmil::Result<Var> {
    let mut cache = SoftLabelCache::default();
    let fwd = bag_forward(tape, state, p, bag, tau, ForwardMode::Train { cache: &mut cache, epoch: 0 })?;
    let rest = LossWeights { use_inst: false, ..*w };
    let (total, _) = bag_loss(tape, &fwd, bag.label, &rest)?;
    if !w.use_inst {
        return Ok(total);
    }
    let inst = dualmil::losses::loss_inst(tape, fwd.bag_prob, target)?;
    let inst = tape.scale(inst, w.beta)?;
    tape.add(total, inst)
}

/// Gradient check of the full bag-branch loss.
pub fn check_bag_branch(state: &ModelState, bag: &Bag, tau: f64, w: &LossWeights) -> f64 {
    let target = pooled_target(state, bag, tau);
    check_model_against(
        state,
        |t, s, p| bag_branch_loss(t, s, p, bag, tau, w),
        |t, s, p| bag_branch_loss_frozen(t, s, p, bag, tau, w, target),
    )
}

/// Instance-branch batch loss over the rows of `bag` with given cached
/// attention and bag labels.
pub fn instance_branch_loss(
    tape: &mut Tape,
    p: &dualmil::nn::Bound,
    bag: &Bag,
    attention: &[f64],
    labels: &[u8],
    w: &LossWeights,
) -> dualmil::Result<Var> {
    let logits = instance_forward(tape, p, bag.features.clone(), bag.d_in)?;
    Ok(instance_batch_loss(tape, logits, attention, labels, w, 1.0)?.0)
}

pub fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub type OpFn = fn(&mut Tape, &[Var]) -> dualmil::Result<Var>;
/// Name, input shapes and values, and the op under test.
pub type OpCase = (&'static str, Vec<(Vec<usize>, Vec<f64>)>, OpFn);

pub fn ops() -> Vec<OpCase> {
    let mut r = rng(5);
    let m = |r: &mut _, rows: usize, cols: usize| (vec![rows, cols], uniform(r, rows * cols, -1.0, 1.0));
    let v = |r: &mut _, n: usize| (vec![n], uniform(r, n, -1.0, 1.0));
    let pos = |r: &mut _, n: usize| (vec![n], uniform(r, n, 0.2, 2.0));
    // Values kept away from every kink (relu at 0, clamp bounds, max ties).
    let away = |r: &mut _, n: usize| {
        let mut x = uniform(r, n, 0.1, 1.0);
        for (i, xi) in x.iter_mut().enumerate() {
            if i % 2 == 1 {
                *xi = -*xi;
            }
            *xi += i as f64 * 1e-3;
        }
        (vec![n], x)
    };
    vec![
        ("matmul", vec![m(&mut r, 3, 4), m(&mut r, 4, 2)], |t, x| {
            let y = t.matmul(x[0], x[1])?;
            probe(t, y, 1)
        }),
        ("linear", vec![m(&mut r, 3, 4), m(&mut r, 5, 4), v(&mut r, 5)], |t, x| {
            let y = t.linear(x[0], x[1], Some(x[2]))?;
            probe(t, y, 2)
        }),
        ("linear_nobias", vec![m(&mut r, 3, 4), m(&mut r, 2, 4)], |t, x| {
            let y = t.linear(x[0], x[1], None)?;
            probe(t, y, 3)
        }),
        ("transpose", vec![m(&mut r, 2, 3)], |t, x| {
            let y = t.transpose(x[0])?;
            probe(t, y, 4)
        }),
        ("reshape", vec![m(&mut r, 2, 3)], |t, x| {
            let y = t.reshape(x[0], vec![3, 2])?;
            probe(t, y, 5)
        }),
        ("add", vec![v(&mut r, 4), v(&mut r, 4)], |t, x| {
            let y = t.add(x[0], x[1])?;
            probe(t, y, 6)
        }),
        ("sub", vec![v(&mut r, 4), v(&mut r, 4)], |t, x| {
            let y = t.sub(x[0], x[1])?;
            probe(t, y, 7)
        }),
        ("mul", vec![v(&mut r, 4), v(&mut r, 4)], |t, x| {
            let y = t.mul(x[0], x[1])?;
            probe(t, y, 8)
        }),
        ("mul_const", vec![v(&mut r, 4)], |t, x| {
            let y = t.mul_const(x[0], vec![0.5, -2.0, 0.0, 3.0])?;
            probe(t, y, 9)
        }),
        ("scale", vec![v(&mut r, 3)], |t, x| {
            let y = t.scale(x[0], -1.7)?;
            probe(t, y, 10)
        }),
        ("add_scalar", vec![v(&mut r, 3)], |t, x| {
            let y = t.add_scalar(x[0], 0.4)?;
            let y = t.mul(y, y)?;
            probe(t, y, 11)
        }),
        ("tanh", vec![v(&mut r, 5)], |t, x| {
            let y = t.tanh(x[0])?;
            probe(t, y, 12)
        }),
        ("sigmoid", vec![v(&mut r, 5)], |t, x| {
            let y = t.sigmoid(x[0])?;
            probe(t, y, 13)
        }),
        ("relu", vec![away(&mut r, 6)], |t, x| {
            let y = t.relu(x[0])?;
            probe(t, y, 14)
        }),
        ("exp", vec![v(&mut r, 4)], |t, x| {
            let y = t.exp(x[0])?;
            probe(t, y, 15)
        }),
        ("log", vec![pos(&mut r, 4)], |t, x| {
            let y = t.log(x[0])?;
            probe(t, y, 16)
        }),
        ("clamp", vec![away(&mut r, 6)], |t, x| {
            let y = t.clamp(x[0], -0.5, 0.5)?;
            probe(t, y, 17)
        }),
        ("softmax", vec![v(&mut r, 5)], |t, x| {
            let y = t.softmax(x[0])?;
            probe(t, y, 18)
        }),
        ("reduce_max", vec![away(&mut r, 5)], |t, x| {
            let (y, _) = t.reduce_max(x[0])?;
            let y = t.mul(y, y)?;
            probe(t, y, 19)
        }),
        ("select", vec![v(&mut r, 4)], |t, x| {
            let y = t.select(x[0], 2)?;
            let y = t.tanh(y)?;
            probe(t, y, 20)
        }),
        ("row", vec![m(&mut r, 3, 2)], |t, x| {
            let y = t.row(x[0], 1)?;
            probe(t, y, 21)
        }),
        ("concat", vec![v(&mut r, 2), v(&mut r, 3)], |t, x| {
            let y = t.concat(&[x[0], x[1], x[0]])?;
            probe(t, y, 22)
        }),
        ("sum", vec![m(&mut r, 2, 2)], |t, x| {
            let y = t.sum(x[0])?;
            t.mul(y, y)
        }),
        ("mean", vec![v(&mut r, 5)], |t, x| {
            let y = t.mean(x[0])?;
            t.exp(y)
        }),
    ]
}

/// O(P·N) pairwise probability that a positive outscores a negative.
pub fn brute_auc(s: &ScoredSet) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in s.labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in s.labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1.0;
            if s.scores[i] > s.scores[j] {
                wins += 1.0;
            } else if s.scores[i] == s.scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Best J over every threshold that splits the sorted scores differently.
pub fn brute_youden(s: &ScoredSet) -> f64 {
    let p = s.labels.iter().filter(|&&y| y == 1).count() as f64;
    let n = s.labels.len() as f64 - p;
    let mut cands: Vec<f64> = s.scores.clone();
    cands.push(f64::NEG_INFINITY);
    cands
        .iter()
        .map(|&thr| {
            let tp = s.scores.iter().zip(&s.labels).filter(|(&x, &y)| x > thr && y == 1).count();
            let fp = s.scores.iter().zip(&s.labels).filter(|(&x, &y)| x > thr && y == 0).count();
            tp as f64 / p - fp as f64 / n
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

