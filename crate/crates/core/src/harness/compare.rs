use std::io::BufWriter;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelKind, RunConfig};
use super::eval::{eval_levels, evaluate, BaselineAgent, BaselineRule, EvalResult, MctsNetAgent, RandomAgent};
use super::stats::{mean, std_err};
use super::HarnessError;
use crate::mcts::{run_search, SearchConfig, Selection, ToyState, ToyTree};
use crate::mctsnet::{BackupKind, MctsNet, PolicyKind};
use crate::nn::ParamStore;
use crate::sokoban::GridState;
use crate::training::{mix, train_loop, train_policy_prior, LabeledExample, MetricsWriter, TrainError};

const EVAL_TAG: u64 = 0xe7a1_0000;
const VALIDATION_TAG: u64 = 0x7a11_0000;
const RUN_TAG: u64 = 0x5eed_0000;
const BANDIT_TAG: u64 = 0xba4d_0000;

/// What a comparison cell runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    /// Train a search network, then evaluate it as an agent.
    Net,
    Uct,
    /// PUCT guided by a policy prior trained on the dataset.
    Puct,
    Random,
    /// UCT on random depth-limited toy trees; success is picking the optimal
    /// root action.
    Bandit,
}

/// Resolves a variant name against the base configuration.
///
/// Names: `real`/`gated`, `sham`, `mlp`, `uniform`, `distilled`,
/// `unstructured`, `modulated`, `m=<k>`, `uct`, `uct=<k>`, `puct`,
/// `puct=<k>`, `random`, `uct-bandit`.
pub fn variant_config(base: &RunConfig, name: &str) -> Result<(CellKind, RunConfig), HarnessError> {
    let mut c = base.clone();
    let sims = |v: &str| -> Result<usize, HarnessError> {
        v.parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| HarnessError::Usage(format!("bad simulation count in variant `{name}`")))
    };
    let kind = match name.split_once('=') {
        Some(("m", k)) => {
            c.simulations = sims(k)?;
            c.max_simulations = None;
            CellKind::Net
        }
        Some(("uct", k)) => {
            c.simulations = sims(k)?;
            CellKind::Uct
        }
        Some(("puct", k)) => {
            c.simulations = sims(k)?;
            CellKind::Puct
        }
        Some(_) => return Err(HarnessError::Usage(format!("unknown variant `{name}`"))),
        None => match name {
            "real" | "gated" => CellKind::Net,
            "sham" => {
                c.model = ModelKind::Sham;
                CellKind::Net
            }
            "mlp" => {
                c.backup = BackupKind::Mlp;
                CellKind::Net
            }
            "uniform" => {
                c.policy = PolicyKind::Uniform;
                CellKind::Net
            }
            "distilled" => {
                c.policy = PolicyKind::Distilled;
                CellKind::Net
            }
            "unstructured" => {
                c.policy = PolicyKind::Unstructured;
                CellKind::Net
            }
            "modulated" => {
                c.policy = PolicyKind::Modulated;
                CellKind::Net
            }
            "uct" => CellKind::Uct,
            "puct" => CellKind::Puct,
            "random" => CellKind::Random,
            "uct-bandit" => CellKind::Bandit,
            other => return Err(HarnessError::Usage(format!("unknown variant `{other}`"))),
        },
    };
    Ok((kind, c))
}

fn uses_prior(policy: PolicyKind) -> bool {
    matches!(policy, PolicyKind::Modulated | PolicyKind::Distilled)
}

/// Seed of run `k` of every cell; shared across variants so that runs with the
/// same index start from the same initialisation and face the same levels.
pub fn run_seed(base_seed: u64, k: usize) -> u64 {
    mix(base_seed, k as u64, RUN_TAG)
}

/// Builds a network and its parameters, distilling the policy prior first
/// when the simulation policy reads it.
pub fn init_network(config: &RunConfig, dataset: &[LabeledExample]) -> Result<(MctsNet, ParamStore), HarnessError> {
    let net = MctsNet::new(config.net_config())?;
    let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(config.seed));
    if uses_prior(config.policy) && config.prior_epochs > 0 {
        train_policy_prior(&net, &mut store, dataset, &config.prior_config())?;
    }
    Ok((net, store))
}

/// Success ratio of the network as an agent on `levels`.
pub fn evaluate_network(
    net: &MctsNet,
    store: &ParamStore,
    config: &RunConfig,
    levels: &[GridState],
    seed: u64,
) -> Result<EvalResult, HarnessError> {
    let model = config.model.env();
    evaluate(levels, config.max_episode_steps, config.workers, |i| {
        Box::new(MctsNetAgent::new(net, store, model.clone(), config.simulations, mix(seed, i as u64, EVAL_TAG)).replanning(config.replan))
    })
}

/// Trains a network per `config` on `dataset`, writing metrics (and
/// checkpoints, if configured) under `run_dir`. Periodic evaluation uses
/// `config.train_eval_episodes` validation levels.
pub fn train_network(
    config: &RunConfig,
    dataset: &[LabeledExample],
    net: &MctsNet,
    store: &mut ParamStore,
    run_dir: Option<&Path>,
    resume_metrics: bool,
) -> Result<crate::training::TrainSummary, HarnessError> {
    let mut train = config.train_config();
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir)?;
        if config.checkpoint_every.is_some() {
            train.checkpoint_dir = Some(dir.join("checkpoints"));
        }
    }
    let validation = eval_levels(&config.level_config(), mix(config.seed, 0, VALIDATION_TAG), config.train_eval_episodes)?;
    let mut evaluator = |s: &ParamStore, step: u64| -> Result<f64, TrainError> {
        evaluate_network(net, s, config, &validation, mix(config.seed, step, VALIDATION_TAG))
            .map(|r| r.success_ratio)
            .map_err(|e| TrainError::Usage(e.to_string()))
    };
    let evaluator: Option<&mut dyn crate::training::Evaluator> = if config.train_eval_episodes > 0 { Some(&mut evaluator) } else { None };
    let max_sims = train.max_sims();
    let summary = match run_dir {
        Some(dir) => {
            let path = dir.join("metrics.csv");
            let append = resume_metrics && path.exists();
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(append)
                .write(true)
                .truncate(!append)
                .open(&path)?;
            let out = BufWriter::new(file);
            let mut writer = if append { MetricsWriter::resume(out, max_sims) } else { MetricsWriter::new(out, max_sims)? };
            train_loop(net, store, dataset, &config.model.env(), &train, &mut writer, evaluator)?
        }
        None => {
            let mut writer = MetricsWriter::resume(std::io::sink(), max_sims);
            train_loop(net, store, dataset, &config.model.env(), &train, &mut writer, evaluator)?
        }
    };
    Ok(summary)
}

/// Result of one (variant, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub eval: EvalResult,
    /// Mean training loss over the last steps, for trained cells.
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub variant: String,
    pub seed: usize,
    pub outcome: Result<CellOutcome, String>,
}

fn bandit_cell(config: &RunConfig) -> Result<CellOutcome, HarnessError> {
    let search = SearchConfig {
        simulations: config.bandit_simulations,
        gamma: 1.0,
    };
    let rule = Selection::Uct { c: config.c_uct };
    let mut hits = 0;
    for r in 0..config.bandit_runs {
        let tree = ToyTree::random(config.bandit_depth, &mut ChaCha8Rng::seed_from_u64(mix(config.seed, r as u64, BANDIT_TAG)));
        let (a, _) = run_search(tree.root(), &tree, &|_: &ToyState| 0.0, &search, &rule)?;
        hits += usize::from(a == tree.optimal_action(1.0));
    }
    let episodes: Vec<_> = (0..config.bandit_runs)
        .map(|i| super::eval::Episode {
            solved: i < hits,
            steps: 1,
        })
        .collect();
    Ok(CellOutcome {
        eval: EvalResult::from_episodes(&episodes),
        final_loss: None,
    })
}

/// Runs one cell for seed index `k`.
pub fn run_cell(
    kind: CellKind,
    variant_cfg: &RunConfig,
    base_seed: u64,
    k: usize,
    dataset: &[LabeledExample],
    run_dir: Option<&Path>,
) -> Result<CellOutcome, HarnessError> {
    let mut config = variant_cfg.clone();
    config.seed = run_seed(base_seed, k);
    config.workers = 1;
    let levels = || eval_levels(&config.level_config(), mix(config.seed, 0, EVAL_TAG), config.episodes);
    let search = SearchConfig {
        simulations: config.simulations,
        gamma: config.search_gamma,
    };
    let model = config.model.env();
    let steps = config.max_episode_steps;
    match kind {
        CellKind::Bandit => bandit_cell(&config),
        CellKind::Random => {
            let eval = evaluate(&levels()?, steps, 1, |i| Box::new(RandomAgent(ChaCha8Rng::seed_from_u64(mix(config.seed, i as u64, EVAL_TAG)))))?;
            Ok(CellOutcome { eval, final_loss: None })
        }
        CellKind::Uct => {
            let rule = BaselineRule::Uct { c: config.c_uct };
            let eval = evaluate(&levels()?, steps, 1, |_| Box::new(BaselineAgent::new(&rule, model.clone(), search)))?;
            Ok(CellOutcome { eval, final_loss: None })
        }
        CellKind::Puct => {
            let net = MctsNet::new(config.net_config())?;
            let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(config.seed));
            train_policy_prior(&net, &mut store, dataset, &config.prior_config())?;
            let rule = BaselineRule::Puct {
                c_puct: config.c_puct,
                net,
                store,
            };
            let eval = evaluate(&levels()?, steps, 1, |_| Box::new(BaselineAgent::new(&rule, model.clone(), search)))?;
            Ok(CellOutcome { eval, final_loss: None })
        }
        CellKind::Net => {
            let (net, mut store) = init_network(&config, dataset)?;
            let summary = train_network(&config, dataset, &net, &mut store, run_dir, false)?;
            let eval = evaluate_network(&net, &store, &config, &levels()?, config.seed)?;
            Ok(CellOutcome {
                eval,
                final_loss: Some(summary.recent_loss(1000)),
            })
        }
    }
}

/// Every (variant, seed) run of a comparison.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<RunRow>,
}

/// Mean and standard error of one variant over its successful runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub variant: String,
    pub runs: usize,
    pub failed: usize,
    pub mean: f64,
    pub std_err: f64,
    pub episodes: usize,
    pub mean_steps: Option<f64>,
    pub final_loss: Option<f64>,
}

pub const COMPARE_HEADER: &str = "row,variant,seed,success_ratio,std_err,ci_half_width,episodes,mean_steps,final_loss,status";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl CompareReport {
    pub fn variants(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.variant.as_str()) {
                out.push(&r.variant);
            }
        }
        out
    }

    /// Per-seed success ratios of `variant`, `None` for failed runs.
    pub fn success(&self, variant: &str) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.outcome.as_ref().ok().map(|o| o.eval.success_ratio))
            .collect()
    }

    pub fn failures(&self, variant: &str) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.outcome.as_ref().err().map(String::as_str))
            .collect()
    }

    pub fn aggregate(&self, variant: &str) -> Aggregate {
        let ok: Vec<&CellOutcome> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        let ratios: Vec<f64> = ok.iter().map(|o| o.eval.success_ratio).collect();
        let steps: Vec<f64> = ok.iter().filter_map(|o| o.eval.mean_steps).collect();
        let losses: Vec<f64> = ok.iter().filter_map(|o| o.final_loss).collect();
        Aggregate {
            variant: variant.to_string(),
            runs: ok.len(),
            failed: self.failures(variant).len(),
            mean: mean(&ratios),
            std_err: std_err(&ratios),
            episodes: ok.iter().map(|o| o.eval.episodes).sum(),
            mean_steps: (!steps.is_empty()).then(|| mean(&steps)),
            final_loss: (!losses.is_empty()).then(|| mean(&losses)),
        }
    }

    /// One row per run, then one aggregate row per variant.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARE_HEADER}\n");
        for r in &self.rows {
            let line = match &r.outcome {
                Ok(o) => format!(
                    "run,{},{},{},,{},{},{},{},ok",
                    r.variant,
                    r.seed,
                    o.eval.success_ratio,
                    o.eval.half_width,
                    o.eval.episodes,
                    opt(o.eval.mean_steps),
                    opt(o.final_loss)
                ),
                Err(e) => format!("run,{},{},,,,,,,{}", r.variant, r.seed, csv_text(e)),
            };
            out.push_str(&line);
            out.push('\n');
        }
        for v in self.variants() {
            let a = self.aggregate(v);
            let status = if a.failed == 0 { "ok".to_string() } else { format!("{} failed", a.failed) };
            let (m, se) = if a.runs == 0 { (String::new(), String::new()) } else { (a.mean.to_string(), a.std_err.to_string()) };
            out.push_str(&format!(
                "aggregate,{},,{m},{se},,{},{},{},{status}\n",
                a.variant,
                a.episodes,
                opt(a.mean_steps),
                opt(a.final_loss)
            ));
        }
        out
    }
}

fn csv_text(s: &str) -> String {
    let flat = s.replace(['\n', '\r'], " ");
    if flat.contains([',', '"']) {
        format!("\"{}\"", flat.replace('"', "\"\""))
    } else {
        flat
    }
}

/// Trains and evaluates every configured variant for `config.seeds` seeds.
/// Runs are spread over `config.workers` threads; a failing run is recorded
/// and the rest continue. `progress` sees each row as it completes.
pub fn run_compare(
    config: &RunConfig,
    dataset: &[LabeledExample],
    out_dir: Option<&Path>,
    progress: &(dyn Fn(&RunRow) + Sync),
) -> Result<CompareReport, HarnessError> {
    let cells: Vec<(String, CellKind, RunConfig)> = config
        .variants
        .iter()
        .map(|v| variant_config(config, v).map(|(k, c)| (v.clone(), k, c)))
        .collect::<Result<_, _>>()?;
    if cells.is_empty() {
        return Err(HarnessError::Usage("no variants to compare".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..config.seeds).map(move |k| (c, k))).collect();
    let results: Mutex<Vec<Option<RunRow>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let work = || loop {
        let j = next.fetch_add(1, AtomicOrdering::Relaxed);
        let Some(&(c, k)) = jobs.get(j) else { break };
        let (name, kind, cfg) = &cells[c];
        let dir = out_dir.map(|d| d.join("runs").join(name.replace('=', "")).join(format!("seed-{k}")));
        let outcome = run_cell(*kind, cfg, config.seed, k, dataset, dir.as_deref()).map_err(|e| e.to_string());
        let row = RunRow {
            variant: name.clone(),
            seed: k,
            outcome,
        };
        progress(&row);
        results.lock().expect("results lock")[j] = Some(row);
    };
    if config.workers <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..config.workers {
                s.spawn(work);
            }
        });
    }
    let rows = results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every job ran")).collect();
    Ok(CompareReport { rows })
}
