mod common;

use common::*;
use dualmil::losses::LossWeights;
use dualmil::nn::Aggregator;

#[test]
fn every_op_matches_central_differences() {
    for (name, inputs, f) in ops() {
        let err = check_op(&inputs, f);
        assert!(err <= FD_TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn bag_loss_gradients_for_every_aggregator() {
    let w = LossWeights::default();
    for agg in [Aggregator::Abmil, Aggregator::Dsmil, Aggregator::ClamSb, Aggregator::ClamMb] {
        for label in [0, 1] {
            let state = toy_model(agg, 3);
            let bag = toy_bag(4, label);
            // A mask threshold near the middle of the initial instance
            // probabilities so some instances are mined.
            let err = check_bag_branch(&state, &bag, 0.5, &w);
            assert!(err <= FD_TOL, "{agg} label {label}: relative error {err:e}");
        }
    }
}

#[test]
fn instance_loss_gradients() {
    let w = LossWeights::default();
    let state = toy_model(Aggregator::Abmil, 8);
    let bag = toy_bag(9, 1);
    let attention = [0.3, -1.2, 2.0, 0.0, 0.7, -0.4];
    let labels = [1, 0, 1, 1, 0, 1];
    let err = check_model(&state, |t, _, p| instance_branch_loss(t, p, &bag, &attention, &labels, &w));
    assert!(err <= FD_TOL, "relative error {err:e}");
}

#[test]
fn pooling_gradients() {
    for agg in [Aggregator::MaxPool, Aggregator::MeanPool] {
        let state = toy_model(agg, 12);
        let bag = toy_bag(13, 1);
        let err = check_model(&state, |t, s, p| {
            let (prob, _) = dualmil::baselines::pooled_forward(t, s, p, &bag)?;
            dualmil::losses::bce(t, prob, 1.0)
        });
        assert!(err <= FD_TOL, "{agg}: relative error {err:e}");
    }
}

#[test]
fn differentiable_pooled_target_gradients() {
    let w = LossWeights { inst_target_grad: true, ..LossWeights::default() };
    let state = toy_model(Aggregator::Abmil, 5);
    let bag = toy_bag(6, 1);
    let err = check_model(&state, |t, s, p| bag_branch_loss(t, s, p, &bag, 0.5, &w));
    assert!(err <= FD_TOL, "relative error {err:e}");
}
