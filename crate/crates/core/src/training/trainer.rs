use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_finite, example_gradient, CreditConfig, Estimator, ExampleOutcome, LabeledExample, MetricsWriter, StepMetrics, TrainError};
use crate::mctsnet::{MctsNet, RngSampler};
use crate::nn::{checkpoint, Gradients, ParamStore};
use crate::sokoban::{GridState, Model};

const PRIOR_PREFIX: &str = "prior.";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub simulations: usize,
    /// When set, each example draws its simulation count uniformly from
    /// `simulations..=max_simulations`.
    pub max_simulations: Option<usize>,
    /// Number of optimisation steps to run (in addition to any already taken).
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub credit: CreditConfig,
    pub workers: usize,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: Option<u64>,
    pub eval_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Keeps the distilled policy prior fixed during search training.
    pub freeze_prior: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            simulations: 5,
            max_simulations: None,
            steps: 1000,
            batch_size: 1,
            learning_rate: 5e-4,
            credit: CreditConfig::default(),
            workers: 1,
            seed: 0,
            log_every: 1,
            checkpoint_every: None,
            eval_every: Some(2000),
            checkpoint_dir: None,
            freeze_prior: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.credit.validate()?;
        if self.simulations < 1 {
            return Err(TrainError::Usage("simulations must be at least 1".into()));
        }
        if let Some(hi) = self.max_simulations {
            if hi < self.simulations {
                return Err(TrainError::Usage(format!(
                    "max simulations {hi} below minimum {}",
                    self.simulations
                )));
            }
        }
        if self.batch_size < 1 || self.workers < 1 || self.log_every < 1 {
            return Err(TrainError::Usage("batch size, workers and log interval must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Usage(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.checkpoint_every == Some(0) || self.eval_every == Some(0) {
            return Err(TrainError::Usage("intervals must be positive".into()));
        }
        Ok(())
    }

    pub fn max_sims(&self) -> usize {
        self.max_simulations.unwrap_or(self.simulations)
    }
}

/// Periodic evaluation hook returning a success ratio.
pub trait Evaluator {
    fn evaluate(&mut self, store: &ParamStore, step: u64) -> Result<f64, TrainError>;
}

impl<F: FnMut(&ParamStore, u64) -> Result<f64, TrainError>> Evaluator for F {
    fn evaluate(&mut self, store: &ParamStore, step: u64) -> Result<f64, TrainError> {
        self(store, step)
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub first_step: u64,
    pub last_step: u64,
    /// Final loss of every step, in order.
    pub losses: Vec<f64>,
    pub last_success_ratio: Option<f64>,
}

impl TrainSummary {
    /// Mean final loss over the last `window` steps.
    pub fn recent_loss(&self, window: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(window)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Example order: a fresh seeded permutation per epoch, so the stream depends
/// only on the seed and the global position.
struct Schedule {
    seed: u64,
    len: usize,
    epoch: Option<u64>,
    perm: Vec<usize>,
}

impl Schedule {
    fn index(&mut self, k: u64) -> usize {
        let epoch = k / self.len as u64;
        if self.epoch != Some(epoch) {
            self.perm = (0..self.len).collect();
            self.perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.seed, epoch, 0x5eed)));
            self.epoch = Some(epoch);
        }
        self.perm[(k % self.len as u64) as usize]
    }
}

/// One job of a step: which example, how many simulations, which sampler seed.
#[derive(Clone, Copy)]
struct Job<'a> {
    example: &'a LabeledExample,
    simulations: usize,
    seed: u64,
}

fn run_jobs<M: Model<State = GridState> + Sync>(
    net: &MctsNet,
    store: &ParamStore,
    jobs: &[Job<'_>],
    model: &M,
    credit: &CreditConfig,
    baseline: f64,
    workers: usize,
) -> Result<Vec<ExampleOutcome>, TrainError> {
    let one = |job: &Job<'_>| {
        let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
        example_gradient(net, store, job.example, job.simulations, model, credit, baseline, &mut RngSampler(&mut rng))
    };
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(one).collect();
    }
    let chunk = jobs.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(one).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(jobs.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Averages per-example gradients, checks them and applies one SGD step.
fn apply(store: &mut ParamStore, outcomes: &[ExampleOutcome], lr: f64, freeze_prior: bool) -> Result<f64, TrainError> {
    let mut total = Gradients::empty();
    let scale = 1.0 / outcomes.len() as f64;
    for o in outcomes {
        total.add_scaled(&o.grads, scale);
    }
    if freeze_prior {
        total.retain(store, |name| !name.starts_with(PRIOR_PREFIX));
    }
    check_finite(store, &total)?;
    let norm = total.norm();
    store.zero_grads();
    store.accumulate(&total);
    store.sgd_step(lr)?;
    Ok(norm)
}

fn summarize(step: u64, outcomes: &[ExampleOutcome], grad_norm: f64) -> StepMetrics {
    let n = outcomes.len() as f64;
    let longest = outcomes.iter().map(|o| o.per_sim_losses.len()).max().unwrap_or(0);
    let per_sim_losses = (0..longest)
        .map(|m| {
            let vals: Vec<f64> = outcomes.iter().filter_map(|o| o.per_sim_losses.get(m).copied()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let entropies: Vec<f64> = outcomes.iter().filter_map(|o| o.entropy).collect();
    StepMetrics {
        step,
        loss: outcomes.iter().map(|o| o.loss).sum::<f64>() / n,
        per_sim_losses,
        success_ratio: None,
        grad_norm,
        entropy: (!entropies.is_empty()).then(|| entropies.iter().sum::<f64>() / entropies.len() as f64),
        score_weight_sq: outcomes
            .iter()
            .map(|o| o.score_weights.iter().map(|w| w * w).sum::<f64>())
            .sum::<f64>()
            / n,
    }
}

/// Runs one optimisation step on `batch` with the given per-example seeds.
#[allow(clippy::too_many_arguments)]
pub fn gradient_step<M: Model<State = GridState> + Sync>(
    net: &MctsNet,
    store: &mut ParamStore,
    batch: &[&LabeledExample],
    simulations: usize,
    model: &M,
    credit: &CreditConfig,
    learning_rate: f64,
    seed: u64,
    freeze_prior: bool,
) -> Result<StepMetrics, TrainError> {
    let jobs: Vec<Job<'_>> = batch
        .iter()
        .enumerate()
        .map(|(i, &example)| Job {
            example,
            simulations,
            seed: mix(seed, store.step(), i as u64),
        })
        .collect();
    let outcomes = run_jobs(net, store, &jobs, model, credit, 0.0, 1)?;
    let norm = apply(store, &outcomes, learning_rate, freeze_prior)?;
    Ok(summarize(store.step(), &outcomes, norm))
}

/// Trains for `config.steps` steps, continuing the step numbering of `store`.
/// Writes one metrics row every `log_every` steps and on every evaluation step.
pub fn train_loop<M, W>(
    net: &MctsNet,
    store: &mut ParamStore,
    dataset: &[LabeledExample],
    model: &M,
    config: &TrainConfig,
    metrics: &mut MetricsWriter<W>,
    mut evaluator: Option<&mut dyn Evaluator>,
) -> Result<TrainSummary, TrainError>
where
    M: Model<State = GridState> + Sync,
    W: Write,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Dataset("dataset is empty".into()));
    }
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut schedule = Schedule {
        seed: config.seed,
        len: dataset.len(),
        epoch: None,
        perm: Vec::new(),
    };
    let mut baseline = 0.0;
    let first_step = store.step();
    let mut losses = Vec::with_capacity(config.steps as usize);
    let mut last_success_ratio = None;
    for _ in 0..config.steps {
        let t = store.step();
        let jobs: Vec<Job<'_>> = (0..config.batch_size as u64)
            .map(|b| {
                let k = t * config.batch_size as u64 + b;
                let example = &dataset[schedule.index(k)];
                let simulations = match config.max_simulations {
                    Some(hi) => ChaCha8Rng::seed_from_u64(mix(config.seed, k, 1)).gen_range(config.simulations..=hi),
                    None => config.simulations,
                };
                Job {
                    example,
                    simulations,
                    seed: mix(config.seed, k, 2),
                }
            })
            .collect();
        let outcomes = run_jobs(net, store, &jobs, model, &config.credit, baseline, config.workers)?;
        let norm = apply(store, &outcomes, config.learning_rate, config.freeze_prior)?;
        let step = store.step();
        let mut m = summarize(step, &outcomes, norm);
        if let (Estimator::Basic, Some(decay)) = (config.credit.estimator, config.credit.baseline_decay) {
            baseline = decay * baseline + (1.0 - decay) * m.loss;
        }
        losses.push(m.loss);

        let evaluate_now = config.eval_every.is_some_and(|e| step.is_multiple_of(e));
        if evaluate_now {
            if let Some(ev) = evaluator.as_deref_mut() {
                let ratio = ev.evaluate(store, step)?;
                m.success_ratio = Some(ratio);
                last_success_ratio = Some(ratio);
            }
        }
        if step.is_multiple_of(config.log_every) || m.success_ratio.is_some() {
            metrics.write(&m)?;
        }
        if let (Some(every), Some(dir)) = (config.checkpoint_every, &config.checkpoint_dir) {
            if step.is_multiple_of(every) {
                checkpoint::save(store, &dir.join(format!("step-{step:08}.ckpt")))?;
            }
        }
    }
    if let Some(dir) = &config.checkpoint_dir {
        checkpoint::save(store, &dir.join("last.ckpt"))?;
    }
    metrics.flush()?;
    Ok(TrainSummary {
        first_step,
        last_step: store.step(),
        losses,
        last_success_ratio,
    })
}
