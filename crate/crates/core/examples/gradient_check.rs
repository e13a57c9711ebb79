//! Checks reverse-mode gradients of the bag-branch loss on a small ABMIL
//! model against central finite differences.
//!
//! The pooled instance target is made differentiable here so that the loss
//! is an ordinary function of the parameters.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use dualmil::data::Bag;
use dualmil::losses::{bag_loss, LossWeights};
use dualmil::model::{bag_forward, ForwardMode, SoftLabelCache};
use dualmil::nn::{Aggregator, ModelDims, ModelSpec, ModelState};
use dualmil::tensor::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn loss(state: &ModelState, bag: &Bag, w: &LossWeights, keep_grads: bool) -> dualmil::Result<(f64, ModelState)> {
    let mut s = state.clone();
    let mut tape = Tape::new();
    let p = s.bind(&mut tape);
    let mut cache = SoftLabelCache::default();
    let fwd = bag_forward(&mut tape, &s, &p, bag, 0.5, ForwardMode::Train { cache: &mut cache, epoch: 0 })?;
    let (total, _) = bag_loss(&mut tape, &fwd, bag.label, w)?;
    if keep_grads {
        tape.backward(total)?;
        s.zero_grads();
        s.accumulate_grads(&tape, &p)?;
    }
    Ok((tape.scalar(total), s))
}

fn main() -> dualmil::Result<()> {
    let dims = ModelDims { d_in: 8, hidden: 16, d: 16, l: 8 };
    let state = ModelState::init(ModelSpec::new(Aggregator::Abmil, dims), 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let features: Vec<f64> = (0..6 * 8).map(|_| rng.random_range(-1.5..1.5)).collect();
    let bag = Bag::new("toy", 8, features, 1, None)?;
    let w = LossWeights { inst_target_grad: true, ..LossWeights::default() };

    let (value, with_grads) = loss(&state, &bag, &w, true)?;
    println!("loss {value:.6}");
    let mut worst: f64 = 0.0;
    for i in 0..state.params.len() {
        let mut layer: f64 = 0.0;
        for k in 0..state.params[i].numel() {
            let mut plus = state.clone();
            plus.params[i].data_mut()[k] += H;
            let mut minus = state.clone();
            minus.params[i].data_mut()[k] -= H;
            let numeric = (loss(&plus, &bag, &w, false)?.0 - loss(&minus, &bag, &w, false)?.0) / (2.0 * H);
            let analytic = with_grads.params[i].grad().expect("gradient")[k];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            layer = layer.max(err);
        }
        println!("param {i:>2} ({} values): max relative error {layer:.2e}", state.params[i].numel());
        worst = worst.max(layer);
    }
    println!("worst {worst:.2e}");
    Ok(())
}
