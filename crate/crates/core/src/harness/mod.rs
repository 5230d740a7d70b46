//! Experiment plumbing behind the command-line tool: run configuration,
//! level and dataset generation, training runs, agent evaluation and the
//! variant comparison grid.

mod compare;
mod config;
mod eval;
mod gradcheck;
pub mod stats;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mcts::{MctsError, SearchConfig};
use crate::mctsnet::MctsNet;
use crate::nn::{checkpoint, NnError, ParamStore};
use crate::sokoban::{format_collection, generate_level, parse_collection, solve_oracle, GridState, SokobanError};
use crate::training::{label_level, load_dataset, mix, train_policy_prior, write_example, LabeledExample, TrainError};

pub use compare::{
    init_network, run_cell, run_compare, run_seed, train_network, variant_config, Aggregate, CellKind, CellOutcome, CompareReport, RunRow, COMPARE_HEADER,
};
pub use config::{ModelKind, NetSize, RunConfig};
pub use eval::{
    eval_levels, evaluate, heuristic_value, prior_probs, run_episode, Agent, BaselineAgent, BaselineRule, Episode, EvalResult, MctsNetAgent, OracleAgent, RandomAgent,
};
pub use gradcheck::gradient_checks;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sokoban(#[from] SokobanError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mcts(#[from] MctsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// 1 for usage errors, 2 for everything that failed at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            _ => 2,
        }
    }
}

const LEVEL_TAG: u64 = 0x1e7e;

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn levels_path(c: &RunConfig) -> PathBuf {
    c.levels_file.clone().unwrap_or_else(|| c.out_dir.join("levels.xsb"))
}

fn dataset_path(c: &RunConfig) -> PathBuf {
    c.dataset.clone().unwrap_or_else(|| c.out_dir.join("dataset.jsonl"))
}

fn read_levels(path: &Path) -> Result<Vec<GridState>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Runtime(format!("cannot read levels {}: {e}", path.display())))?;
    Ok(parse_collection(&text)?)
}

/// Loads the configured dataset, failing clearly if it is missing.
pub fn require_dataset(c: &RunConfig) -> Result<Vec<LabeledExample>, HarnessError> {
    let path = c
        .dataset
        .as_ref()
        .ok_or_else(|| HarnessError::Runtime("no dataset given (set dataset=<file> or --dataset)".into()))?;
    if !path.exists() {
        return Err(HarnessError::Runtime(format!("dataset {} does not exist", path.display())));
    }
    let data = load_dataset(path)?;
    if data.is_empty() {
        return Err(HarnessError::Runtime(format!("dataset {} is empty", path.display())));
    }
    Ok(data)
}

/// `gen-levels`: generates `levels` levels, keeps those the oracle solves
/// within its budget and writes them as an XSB collection.
pub fn cmd_gen_levels(c: &RunConfig) -> Result<String, HarnessError> {
    let config = c.level_config();
    let mut kept = Vec::with_capacity(c.levels);
    for i in 0..c.levels {
        let level = generate_level(&config, &mut ChaCha8Rng::seed_from_u64(mix(c.seed, i as u64, LEVEL_TAG)))?;
        if solve_oracle(&level, c.oracle_nodes).is_some() {
            kept.push(level);
        }
    }
    let path = levels_path(c);
    let mut out = create(&path)?;
    out.write_all(format_collection(&kept).as_bytes())?;
    out.flush()?;
    let failed = c.levels - kept.len();
    Ok(format!(
        "wrote {} levels to {}; oracle failures {failed}/{} ({:.1}%)",
        kept.len(),
        path.display(),
        c.levels,
        100.0 * failed as f64 / c.levels.max(1) as f64
    ))
}

/// Counts reported by dataset generation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSummary {
    pub levels: usize,
    pub examples: usize,
    pub skipped: usize,
}

/// Labels levels until `c.levels` were attempted, or, with
/// `dataset_examples` set, until that many examples exist. Levels come from
/// `levels_file` when given, otherwise from the generator.
pub fn build_dataset<W: Write>(c: &RunConfig, out: &mut W) -> Result<(Vec<LabeledExample>, DatasetSummary), HarnessError> {
    let from_file = c.levels_file.as_deref().map(read_levels).transpose()?;
    let config = c.level_config();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut all = Vec::new();
    let mut s = DatasetSummary::default();
    let mut streak = 0;
    for i in 0.. {
        let done = match (c.dataset_examples, &from_file) {
            (_, Some(levels)) => i >= levels.len(),
            (Some(target), None) => s.examples >= target,
            (None, None) => i >= c.levels,
        };
        if done {
            break;
        }
        let level = match &from_file {
            Some(levels) => levels[i].clone(),
            None => generate_level(&config, &mut rng)?,
        };
        match label_level(&level, s.levels, c.oracle_nodes) {
            Some(examples) => {
                for ex in &examples {
                    write_example(out, ex)?;
                }
                s.levels += 1;
                s.examples += examples.len();
                all.extend(examples);
                streak = 0;
            }
            None => {
                s.skipped += 1;
                streak += 1;
                if streak >= 1000 {
                    return Err(HarnessError::Runtime("oracle failed on 1000 consecutive levels; raise oracle_nodes".into()));
                }
            }
        }
    }
    out.flush()?;
    Ok((all, s))
}

/// `gen-dataset`: oracle-labelled JSON-lines dataset.
pub fn cmd_gen_dataset(c: &RunConfig) -> Result<String, HarnessError> {
    let path = dataset_path(c);
    let mut out = create(&path)?;
    let (_, s) = build_dataset(c, &mut out)?;
    let attempted = s.levels + s.skipped;
    let rate = s.skipped as f64 / attempted.max(1) as f64;
    let mut msg = format!(
        "wrote {} examples from {} levels to {}; oracle failures {}/{attempted} ({:.1}%)",
        s.examples,
        s.levels,
        path.display(),
        s.skipped,
        100.0 * rate
    );
    if rate > 0.5 {
        msg.push_str("\nwarning: more than half the levels were unsolved within the oracle budget; check the board configuration or raise oracle_nodes");
    }
    Ok(msg)
}

fn load_into(store: &mut ParamStore, path: &Path) -> Result<(), HarnessError> {
    let loaded = checkpoint::load(path).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    checkpoint::restore_into(store, &loaded).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

/// Copies the policy-prior parameters of a checkpoint into `store`.
fn load_prior(store: &mut ParamStore, path: &Path) -> Result<(), HarnessError> {
    let loaded = checkpoint::load(path).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = store.names().filter(|n| n.starts_with("prior.")).map(String::from).collect();
    for name in names {
        let value = loaded
            .get(&name)
            .ok_or_else(|| HarnessError::Runtime(format!("{}: checkpoint has no parameter `{name}`", path.display())))?;
        let target = store.get_mut(&name).expect("listed above");
        if target.shape() != value.shape() {
            return Err(HarnessError::Runtime(format!(
                "{}: parameter `{name}`: model expects shape {:?}, checkpoint has {:?}",
                path.display(),
                target.shape(),
                value.shape()
            )));
        }
        *target = value.clone();
    }
    Ok(())
}

/// `train-prior`: supervised training of the policy prior alone.
pub fn cmd_train_prior(c: &RunConfig) -> Result<String, HarnessError> {
    let data = require_dataset(c)?;
    let net = MctsNet::new(c.net_config())?;
    let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(c.seed));
    if let Some(path) = &c.checkpoint {
        load_into(&mut store, path)?;
    }
    let report = train_policy_prior(&net, &mut store, &data, &c.prior_config())?;
    let path = c.out_dir.join("prior.ckpt");
    std::fs::create_dir_all(&c.out_dir)?;
    checkpoint::save(&store, &path)?;
    let losses: Vec<String> = report.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
    Ok(format!(
        "epoch losses {}; top-1 accuracy {:.4}; wrote {}",
        losses.join(" "),
        report.accuracy,
        path.display()
    ))
}

/// `train`: trains from scratch, or resumes from `checkpoint`, writing
/// `metrics.csv`, optional periodic checkpoints and `model.ckpt` to the
/// output directory.
pub fn cmd_train(c: &RunConfig) -> Result<String, HarnessError> {
    let data = require_dataset(c)?;
    let (net, mut store, resumed) = match &c.checkpoint {
        Some(path) => {
            let net = MctsNet::new(c.net_config())?;
            let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(c.seed));
            load_into(&mut store, path)?;
            (net, store, true)
        }
        None => match &c.prior_checkpoint {
            Some(path) => {
                let net = MctsNet::new(c.net_config())?;
                let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(c.seed));
                load_prior(&mut store, path)?;
                (net, store, false)
            }
            None => {
                let (net, store) = init_network(c, &data)?;
                (net, store, false)
            }
        },
    };
    let summary = train_network(c, &data, &net, &mut store, Some(&c.out_dir), resumed)?;
    let path = c.out_dir.join("model.ckpt");
    checkpoint::save(&store, &path)?;
    let mut msg = format!(
        "trained steps {}..{} on {} examples; recent loss {:.4}; wrote {} and {}",
        summary.first_step + 1,
        summary.last_step,
        data.len(),
        summary.recent_loss(100),
        c.out_dir.join("metrics.csv").display(),
        path.display()
    );
    if let Some(r) = summary.last_success_ratio {
        msg.push_str(&format!("; last success ratio {r:.3}"));
    }
    Ok(msg)
}

pub const EVAL_HEADER: &str = "agent,episodes,successes,success_ratio,ci_half_width,mean_steps";

fn eval_level_set(c: &RunConfig) -> Result<Vec<GridState>, HarnessError> {
    let levels = if let Some(path) = &c.levels_file {
        read_levels(path)?
    } else if let Some(path) = c.dataset.as_ref().filter(|p| p.exists()) {
        let mut levels: Vec<GridState> = Vec::new();
        for ex in load_dataset(path)? {
            if levels.last() != Some(&ex.level) {
                levels.push(ex.level);
            }
        }
        levels
    } else {
        return eval_levels(&c.level_config(), c.seed, c.episodes);
    };
    if levels.len() < c.episodes {
        return Err(HarnessError::Usage(format!("{} levels available, {} episodes requested", levels.len(), c.episodes)));
    }
    Ok(levels[..c.episodes].to_vec())
}

/// `eval`: plays `episodes` levels with the configured agent and reports the
/// success ratio with a 95% Wilson interval.
pub fn cmd_eval(c: &RunConfig) -> Result<(EvalResult, String), HarnessError> {
    let levels = eval_level_set(c)?;
    let steps = c.max_episode_steps;
    let model = c.model.env();
    let search = SearchConfig {
        simulations: c.simulations,
        gamma: c.search_gamma,
    };
    let load_net = || -> Result<(MctsNet, ParamStore), HarnessError> {
        let path = c
            .checkpoint
            .as_ref()
            .ok_or_else(|| HarnessError::Usage(format!("agent {} needs a checkpoint", c.agent)))?;
        let net = MctsNet::new(c.net_config())?;
        let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(c.seed));
        load_into(&mut store, path)?;
        Ok((net, store))
    };
    let result = match c.agent.as_str() {
        "mctsnet" => {
            let (net, store) = load_net()?;
            evaluate(&levels, steps, c.workers, |i| {
                Box::new(MctsNetAgent::new(&net, &store, model.clone(), c.simulations, mix(c.seed, i as u64, 0xa9e7)).replanning(c.replan))
            })?
        }
        "uct" => {
            let rule = BaselineRule::Uct { c: c.c_uct };
            evaluate(&levels, steps, c.workers, |_| Box::new(BaselineAgent::new(&rule, model.clone(), search)))?
        }
        "puct" => {
            let (net, store) = load_net()?;
            let rule = BaselineRule::Puct {
                c_puct: c.c_puct,
                net,
                store,
            };
            evaluate(&levels, steps, c.workers, |_| Box::new(BaselineAgent::new(&rule, model.clone(), search)))?
        }
        "random" => evaluate(&levels, steps, c.workers, |i| Box::new(RandomAgent(ChaCha8Rng::seed_from_u64(mix(c.seed, i as u64, 0xa9e7)))))?,
        "oracle" => evaluate(&levels, steps, c.workers, |_| Box::new(OracleAgent::new(c.oracle_nodes)))?,
        other => return Err(HarnessError::Usage(format!("unknown agent `{other}`"))),
    };
    std::fs::create_dir_all(&c.out_dir)?;
    let path = c.out_dir.join("eval.csv");
    let mut out = create(&path)?;
    writeln!(out, "{EVAL_HEADER}")?;
    writeln!(
        out,
        "{},{},{},{},{},{}",
        c.agent,
        result.episodes,
        result.successes,
        result.success_ratio,
        result.half_width,
        result.mean_steps.map(|m| m.to_string()).unwrap_or_default()
    )?;
    out.flush()?;
    let msg = format!(
        "{}: solved {}/{} ({:.1}% ± {:.1}%); wrote {}",
        c.agent,
        result.successes,
        result.episodes,
        100.0 * result.success_ratio,
        100.0 * result.half_width,
        path.display()
    );
    Ok((result, msg))
}

/// `compare`: the variant grid, written to `compare.csv`.
pub fn cmd_compare(c: &RunConfig, progress: &(dyn Fn(&RunRow) + Sync)) -> Result<(CompareReport, String), HarnessError> {
    let data = match &c.dataset {
        Some(_) => require_dataset(c)?,
        None => build_dataset(c, &mut std::io::sink())?.0,
    };
    let report = run_compare(c, &data, Some(&c.out_dir), progress)?;
    let path = c.out_dir.join("compare.csv");
    let mut out = create(&path)?;
    out.write_all(report.to_csv().as_bytes())?;
    out.flush()?;
    let mut msg = String::new();
    for v in report.variants() {
        let a = report.aggregate(v);
        msg.push_str(&format!("{:<14} {:.3} ± {:.3} over {} runs", a.variant, a.mean, a.std_err, a.runs));
        if a.failed > 0 {
            msg.push_str(&format!(" ({} failed)", a.failed));
        }
        msg.push('\n');
    }
    msg.push_str(&format!("wrote {}", path.display()));
    Ok((report, msg))
}

/// `gradcheck`: finite-difference checks, written to `gradcheck.csv`. Fails
/// if any check exceeds its tolerance.
pub fn cmd_gradcheck(c: &RunConfig) -> Result<String, HarnessError> {
    let reports = gradient_checks(c)?;
    let path = c.out_dir.join("gradcheck.csv");
    let mut out = create(&path)?;
    writeln!(out, "check,max_rel_error,checked,skipped_kinks,passed")?;
    let mut msg = String::new();
    for (name, r) in &reports {
        writeln!(out, "{name},{},{},{},{}", r.max_rel_error, r.checked, r.skipped_kinks, r.passed)?;
        msg.push_str(&format!(
            "{name:<22} max rel error {:.2e} over {} coordinates{}\n",
            r.max_rel_error,
            r.checked,
            if r.passed { "" } else { "  FAILED" }
        ));
    }
    out.flush()?;
    msg.push_str(&format!("wrote {}", path.display()));
    if reports.iter().any(|(_, r)| !r.passed) {
        return Err(HarnessError::Runtime(format!("gradient check failed\n{msg}")));
    }
    Ok(msg)
}

