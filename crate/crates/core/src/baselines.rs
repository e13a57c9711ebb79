//! Max- and mean-pooling MIL baselines: the shared encoder and instance head
//! score every instance, and the bag probability is the max or mean of the
//! instance sigmoids.

use std::time::Instant;

use crate::data::{bag_sampler, Bag, BagDataset};
use crate::error::{Error, Result};
use crate::losses::bce;
use crate::metrics::{evaluate_model, MetricsReport};
use crate::nn::{self, Aggregator, Bound, ModelSpec, ModelState};
use crate::tensor::optim::Adam;
use crate::tensor::{Tape, Var};
use crate::trainer::{EpochRecord, Phase, RunLog, TrainConfig, BAG_GROUP};

/// Bag probability and instance logits `[n]` for a pooling model.
pub fn pooled_forward(tape: &mut Tape, state: &ModelState, p: &Bound, bag: &Bag) -> Result<(Var, Var)> {
    if bag.d_in != state.spec.dims.d_in {
        return Err(Error::Dimension(format!(
            "bag {} has width {} but the model expects {}",
            bag.id, bag.d_in, state.spec.dims.d_in
        )));
    }
    let x = tape.constant(vec![bag.n, bag.d_in], bag.features.clone())?;
    let h = nn::encode(tape, p, x)?;
    let logits = nn::instance_head(tape, p, h)?;
    let probs = tape.sigmoid(logits)?;
    let prob = match state.spec.aggregator {
        Aggregator::MaxPool => tape.reduce_max(probs)?.0,
        Aggregator::MeanPool => tape.mean(probs)?,
        other => return Err(Error::Contract(format!("{other} is not a pooling aggregator"))),
    };
    Ok((prob, logits))
}

/// Trains a pooling model for `cfg.max_epochs` bag epochs with the same
/// optimizer settings, seed and bag order as the dual-branch trainer.
pub fn train_pooling(ds: &BagDataset, cfg: &TrainConfig, kind: Aggregator) -> Result<(ModelState, RunLog)> {
    if !kind.is_pooling() {
        return Err(Error::config(format!("{kind} is not a pooling aggregator")));
    }
    if ds.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    let spec = ModelSpec {
        instance_branch: false,
        ..ModelSpec::new(kind, cfg.dims(ds.d_in))
    };
    let mut state = ModelState::init(spec, cfg.seed)?;
    let mut opt = Adam::new(cfg.adam(), &state.params, 1);
    let members: Vec<usize> = (0..state.params.len()).collect();
    let mut log = RunLog::default();
    for epoch in 0..cfg.max_epochs {
        let t0 = Instant::now();
        let mut loss_sum = 0.0;
        for bi in bag_sampler(ds.len(), cfg.seed, epoch as u64) {
            let bag = &ds.bags[bi];
            let mut tape = Tape::new();
            let p = state.bind(&mut tape);
            let (prob, _) = pooled_forward(&mut tape, &state, &p, bag)?;
            let loss = bce(&mut tape, prob, f64::from(bag.label))?;
            loss_sum += tape.scalar(loss);
            tape.backward(loss)?;
            state.accumulate_grads(&tape, &p)?;
            opt.step(&mut state.params, BAG_GROUP, &members);
            state.zero_grads();
        }
        let loss = loss_sum / ds.len() as f64;
        log.records.push(EpochRecord {
            phase: Phase::Bag,
            cycle: epoch / cfg.kappa,
            epoch,
            steps: ds.len(),
            loss,
            loss_label: loss,
            loss_inst: 0.0,
            loss_self: 0.0,
            loss_attn: 0.0,
            loss_pseudo: 0.0,
            mask_keep: 1.0,
            empty_masks: 0,
            cache_stamps: None,
            val_bag_auc: None,
            val_inst_auc: None,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    log.best_epoch = Some(cfg.max_epochs - 1);
    Ok((state, log))
}

/// Trains and evaluates max pooling, then mean pooling.
pub fn pooling_baselines(train: &BagDataset, test: &BagDataset, cfg: &TrainConfig) -> Result<[(Aggregator, MetricsReport); 2]> {
    let run = |kind| -> Result<(Aggregator, MetricsReport)> {
        let (state, _) = train_pooling(train, cfg, kind)?;
        Ok((kind, evaluate_model(&state, test, &cfg.eval_options())?))
    };
    Ok([run(Aggregator::MaxPool)?, run(Aggregator::MeanPool)?])
}
