use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trainer::mix;
use super::{check_finite, LabeledExample, TrainError};
use crate::mctsnet::MctsNet;
use crate::nn::{Graph, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub entropy_coeff: f64,
    pub seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.01,
            entropy_coeff: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorReport {
    /// Mean cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
    pub accuracy: f64,
}

/// Fraction of examples whose label is the prior's most probable action.
pub fn prior_accuracy(net: &MctsNet, store: &ParamStore, dataset: &[LabeledExample]) -> Result<f64, TrainError> {
    let mut hits = 0;
    for ex in dataset {
        let mut g = Graph::new(store);
        let lp = net.prior_log_probs(&mut g, &ex.state)?;
        hits += usize::from(g.value(lp).argmax() == ex.label.index());
    }
    Ok(hits as f64 / dataset.len().max(1) as f64)
}

/// Supervised training of the policy prior alone, one example per step,
/// with an entropy bonus. The store's step counter is left unchanged.
pub fn train_policy_prior(
    net: &MctsNet,
    store: &mut ParamStore,
    dataset: &[LabeledExample],
    config: &PriorConfig,
) -> Result<PriorReport, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::Dataset("dataset is empty".into()));
    }
    let start_step = store.step();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, 0x9e1)));
        let mut total = 0.0;
        for &i in &order {
            let ex = &dataset[i];
            let grads = {
                let mut g = Graph::new(store);
                let lp = net.prior_log_probs(&mut g, &ex.state)?;
                let picked = g.pick(lp, ex.label.index())?;
                let mut loss = g.scale(picked, -1.0);
                total += g.scalar(loss);
                if config.entropy_coeff > 0.0 {
                    let p = g.exp(lp);
                    let plogp = g.mul(p, lp)?;
                    let neg_h = g.sum(plogp);
                    let term = g.scale(neg_h, config.entropy_coeff);
                    loss = g.add(loss, term)?;
                }
                g.backward(loss)?
            };
            check_finite(store, &grads)?;
            store.zero_grads();
            store.accumulate(&grads);
            store.sgd_step(config.learning_rate)?;
        }
        epoch_losses.push(total / dataset.len() as f64);
    }
    store.set_step(start_step);
    Ok(PriorReport {
        epoch_losses,
        accuracy: prior_accuracy(net, store, dataset)?,
    })
}
