//! Supervised training of the search network: oracle-labelled datasets, the
//! per-simulation losses, score-function gradient estimators with telescoping
//! credit assignment, policy-prior distillation and the training loop.

mod dataset;
mod metrics;
mod prior;
mod trainer;

use std::str::FromStr;

use crate::mctsnet::{ActionSampler, MctsNet, SearchOutput};
use crate::nn::{Gradients, Graph, NnError, NodeId, ParamStore};
use crate::sokoban::{GridState, Model, SokobanError};

pub use dataset::{generate_dataset, label_level, load_dataset, read_dataset, write_example, DatasetStats, LabeledExample};
pub use metrics::{MetricsWriter, StepMetrics};
pub use prior::{prior_accuracy, train_policy_prior, PriorConfig, PriorReport};
pub use trainer::{gradient_step, train_loop, Evaluator, TrainConfig, TrainSummary};
pub(crate) use trainer::mix;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sokoban(#[from] SokobanError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("non-finite gradient in subnetwork {} (first parameter `{param}`)", subnetworks.join(", "))]
    NonFinite { subnetworks: Vec<String>, param: String },
    #[error("usage error: {0}")]
    Usage(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Every sampled decision is weighted by the final loss.
    Basic,
    /// Decisions of simulation m are weighted by the discounted sum of
    /// later loss decreases.
    Anytime,
}

impl FromStr for Estimator {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "basic" => Ok(Estimator::Basic),
            "anytime" => Ok(Estimator::Anytime),
            other => Err(TrainError::Usage(format!("unknown estimator `{other}` (expected basic or anytime)"))),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Basic => "basic",
            Estimator::Anytime => "anytime",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CreditConfig {
    pub gamma: f64,
    pub entropy_coeff: f64,
    pub estimator: Estimator,
    /// Decay of an optional moving-average baseline for the basic estimator.
    pub baseline_decay: Option<f64>,
}

impl Default for CreditConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            entropy_coeff: 0.01,
            estimator: Estimator::Anytime,
            baseline_decay: None,
        }
    }
}

impl CreditConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(TrainError::Usage(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.entropy_coeff >= 0.0 && self.entropy_coeff.is_finite()) {
            return Err(TrainError::Usage(format!("entropy coefficient must be non-negative, got {}", self.entropy_coeff)));
        }
        if let Some(d) = self.baseline_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(TrainError::Usage(format!("baseline decay must lie in [0, 1), got {d}")));
            }
        }
        Ok(())
    }
}

/// `r_m = ℓ_{m-1} − ℓ_m` with `ℓ_0 = 0`.
pub fn telescoping_rewards(losses: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    losses
        .iter()
        .map(|&l| {
            let r = prev - l;
            prev = l;
            r
        })
        .collect()
}

/// `R_m = r_m + γ R_{m+1}`, `R_{M+1} = 0`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (m, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[m] = acc;
    }
    out
}

/// Search output plus the cross-entropy losses of every intermediate readout.
pub struct LossTrace {
    pub search: SearchOutput,
    /// `−log p(a* | s, z)` of the final readout, on the graph.
    pub loss: NodeId,
    /// `ℓ_1 .. ℓ_M`.
    pub per_sim_losses: Vec<f64>,
}

/// Runs the search on `example.state` and scores every readout against the label.
pub fn loss_and_traces<M: Model<State = GridState>>(
    net: &MctsNet,
    g: &mut Graph,
    example: &LabeledExample,
    simulations: usize,
    model: &M,
    sampler: &mut dyn ActionSampler,
) -> Result<LossTrace, TrainError> {
    let (search, _) = net.search_from(g, &example.state, simulations, model, sampler)?;
    let label = example.label.index();
    let per_sim_losses = search.per_sim_log_probs.iter().map(|&lp| -g.value(lp).data()[label]).collect();
    let picked = g.pick(search.log_probs, label)?;
    let loss = g.scale(picked, -1.0);
    Ok(LossTrace {
        search,
        loss,
        per_sim_losses,
    })
}

/// Weight multiplying `∇ log π(z_m)` for each simulation in the loss gradient.
pub fn score_weights(per_sim_losses: &[f64], credit: &CreditConfig, baseline: f64) -> Vec<f64> {
    let final_loss = *per_sim_losses.last().expect("at least one simulation");
    match credit.estimator {
        Estimator::Basic => vec![final_loss - baseline; per_sim_losses.len()],
        Estimator::Anytime => discounted_returns(&telescoping_rewards(per_sim_losses), credit.gamma)
            .into_iter()
            .map(|r| -r)
            .collect(),
    }
}

/// Gradient of one example and what was observed along the way.
pub struct ExampleOutcome {
    pub grads: Gradients,
    pub loss: f64,
    pub per_sim_losses: Vec<f64>,
    /// Mean simulation-policy entropy over decision points, if any.
    pub entropy: Option<f64>,
    pub score_weights: Vec<f64>,
}

/// One-sample estimate of the loss gradient: the differentiable path through
/// the final loss, plus score-function terms for the sampled decisions, plus
/// the entropy regulariser.
pub fn example_gradient<M: Model<State = GridState>>(
    net: &MctsNet,
    store: &ParamStore,
    example: &LabeledExample,
    simulations: usize,
    model: &M,
    credit: &CreditConfig,
    baseline: f64,
    sampler: &mut dyn ActionSampler,
) -> Result<ExampleOutcome, TrainError> {
    let mut g = Graph::new(store);
    let trace = loss_and_traces(net, &mut g, example, simulations, model, sampler)?;
    let weights = score_weights(&trace.per_sim_losses, credit, baseline);
    let mut total = trace.loss;
    for (sim, &w) in trace.search.traces.iter().zip(&weights) {
        if sim.log_probs.is_empty() || w == 0.0 {
            continue;
        }
        let joined = g.concat(&sim.log_probs)?;
        let sum = g.sum(joined);
        let term = g.scale(sum, w);
        total = g.add(total, term)?;
    }
    let policies: Vec<NodeId> = trace.search.traces.iter().flat_map(|t| t.policies.iter().copied()).collect();
    let mut entropy_sum = 0.0;
    let mut neg_entropy_terms = Vec::with_capacity(policies.len());
    for &lp in &policies {
        let p = g.exp(lp);
        let plogp = g.mul(p, lp)?;
        let neg_h = g.sum(plogp);
        entropy_sum -= g.scalar(neg_h);
        neg_entropy_terms.push(neg_h);
    }
    if credit.entropy_coeff > 0.0 && !neg_entropy_terms.is_empty() {
        let joined = g.concat(&neg_entropy_terms)?;
        let sum = g.sum(joined);
        let term = g.scale(sum, credit.entropy_coeff);
        total = g.add(total, term)?;
    }
    let loss = g.scalar(trace.loss);
    let grads = g.backward(total)?;
    Ok(ExampleOutcome {
        grads,
        loss,
        per_sim_losses: trace.per_sim_losses,
        entropy: (!policies.is_empty()).then(|| entropy_sum / policies.len() as f64),
        score_weights: weights,
    })
}

/// Fails with the offending subnetwork if any gradient entry is not finite.
pub fn check_finite(store: &ParamStore, grads: &Gradients) -> Result<(), TrainError> {
    let mut bad: Vec<&str> = store
        .indexed_names()
        .filter(|&(i, _)| grads.get(i).is_some_and(|t| !t.is_finite()))
        .map(|(_, name)| name)
        .collect();
    if bad.is_empty() {
        return Ok(());
    }
    bad.sort_unstable();
    let mut subnetworks: Vec<String> = bad.iter().map(|n| n.split('.').next().unwrap_or(n).to_string()).collect();
    subnetworks.dedup();
    Err(TrainError::NonFinite {
        subnetworks,
        param: bad[0].to_string(),
    })
}

#[cfg(test)]
mod tests;
