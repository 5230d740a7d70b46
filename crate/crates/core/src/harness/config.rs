use std::path::PathBuf;
use std::str::FromStr;

use super::HarnessError;
use crate::mctsnet::{BackupKind, NetConfig, PolicyKind, SubnetConfig};
use crate::sokoban::{EnvModel, LevelConfig, SokobanModel};
use crate::training::{CreditConfig, Estimator, PriorConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Real,
    Sham,
}

impl ModelKind {
    pub fn env(self) -> EnvModel {
        match self {
            ModelKind::Real => EnvModel::Real(SokobanModel::default()),
            ModelKind::Sham => EnvModel::Sham,
        }
    }
}

impl FromStr for ModelKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "real" => Ok(ModelKind::Real),
            "sham" => Ok(ModelKind::Sham),
            other => Err(HarnessError::Usage(format!("unknown model `{other}` (expected real or sham)"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Real => "real",
            ModelKind::Sham => "sham",
        })
    }
}

/// Network size preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetSize {
    Paper,
    Desk,
    Tiny,
}

impl NetSize {
    pub fn subnets(self) -> SubnetConfig {
        match self {
            NetSize::Paper => SubnetConfig::paper(),
            NetSize::Desk => SubnetConfig::desk(),
            NetSize::Tiny => SubnetConfig::tiny(),
        }
    }
}

impl FromStr for NetSize {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "paper" => Ok(NetSize::Paper),
            "desk" => Ok(NetSize::Desk),
            "tiny" => Ok(NetSize::Tiny),
            other => Err(HarnessError::Usage(format!("unknown net size `{other}` (expected paper, desk or tiny)"))),
        }
    }
}

impl std::fmt::Display for NetSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NetSize::Paper => "paper",
            NetSize::Desk => "desk",
            NetSize::Tiny => "tiny",
        })
    }
}

/// Everything a command needs: board, network, training and evaluation
/// settings, and paths. Loaded from `key=value` lines, then overridden by
/// command-line flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub width: usize,
    pub height: usize,
    pub boxes: usize,
    pub reverse_steps: usize,
    pub simulations: usize,
    pub max_simulations: Option<usize>,
    pub estimator: Estimator,
    pub gamma: f64,
    pub entropy_coeff: f64,
    pub baseline_decay: Option<f64>,
    pub backup: BackupKind,
    pub policy: PolicyKind,
    pub model: ModelKind,
    pub net: NetSize,
    pub seed: u64,
    /// Seeds per comparison cell.
    pub seeds: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub workers: usize,
    pub log_every: u64,
    pub checkpoint_every: Option<u64>,
    pub eval_every: Option<u64>,
    /// Episodes of each periodic evaluation during training.
    pub train_eval_episodes: usize,
    pub episodes: usize,
    pub max_episode_steps: usize,
    /// Levels to generate (`gen-levels`, `gen-dataset`).
    pub levels: usize,
    /// When set, dataset generation continues until this many examples.
    pub dataset_examples: Option<usize>,
    pub oracle_nodes: usize,
    pub prior_epochs: usize,
    pub prior_learning_rate: f64,
    /// Whether search training leaves the distilled prior untouched.
    pub freeze_prior: bool,
    /// Whether the network agent carries its search subtree across steps.
    pub replan: bool,
    pub c_uct: f64,
    pub c_puct: f64,
    /// Discount for the value-estimate baselines.
    pub search_gamma: f64,
    /// Comparison grid, comma separated.
    pub variants: Vec<String>,
    pub out_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub prior_checkpoint: Option<PathBuf>,
    pub levels_file: Option<PathBuf>,
    /// `eval` agent: `mctsnet`, `uct`, `puct`, `random` or `oracle`.
    pub agent: String,
    /// Toy tree used by the `uct-bandit` comparison cell.
    pub bandit_depth: usize,
    pub bandit_simulations: usize,
    pub bandit_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            width: 7,
            height: 7,
            boxes: 1,
            reverse_steps: LevelConfig::default().reverse_steps,
            simulations: 5,
            max_simulations: None,
            estimator: Estimator::Anytime,
            gamma: 0.99,
            entropy_coeff: 0.01,
            baseline_decay: None,
            backup: BackupKind::Gated,
            policy: PolicyKind::Modulated,
            model: ModelKind::Real,
            net: NetSize::Desk,
            seed: 0,
            seeds: 5,
            steps: 1000,
            batch_size: 1,
            learning_rate: 5e-4,
            workers: 1,
            log_every: 1,
            checkpoint_every: None,
            eval_every: Some(2000),
            train_eval_episodes: 20,
            episodes: 100,
            max_episode_steps: 100,
            levels: 10,
            dataset_examples: None,
            oracle_nodes: 200_000,
            prior_epochs: 5,
            prior_learning_rate: 0.01,
            freeze_prior: true,
            replan: false,
            c_uct: 1.25,
            c_puct: 1.25,
            search_gamma: 0.97,
            variants: ["real", "sham", "mlp", "uniform", "distilled", "uct", "puct", "m=2", "m=10"]
                .map(String::from)
                .to_vec(),
            out_dir: PathBuf::from("out"),
            dataset: None,
            checkpoint: None,
            prior_checkpoint: None,
            levels_file: None,
            agent: "mctsnet".into(),
            bandit_depth: 2,
            bandit_simulations: 512,
            bandit_runs: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| HarnessError::Usage(format!("bad value `{value}` for `{key}`: {e}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    match value {
        "" | "none" | "off" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn policy(value: &str) -> Result<PolicyKind, HarnessError> {
    let name = value.strip_prefix("learned-").unwrap_or(value);
    name.parse().map_err(|e| HarnessError::Usage(format!("{e}")))
}

impl RunConfig {
    /// Parses `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn parse_text(text: &str) -> Result<Self, HarnessError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("config line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one field by its key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "width" => self.width = parse(key, value)?,
            "height" => self.height = parse(key, value)?,
            "boxes" => self.boxes = parse(key, value)?,
            "reverse_steps" => self.reverse_steps = parse(key, value)?,
            "simulations" | "m" => self.simulations = parse(key, value)?,
            "max_simulations" => self.max_simulations = optional(key, value)?,
            "estimator" => self.estimator = value.parse().map_err(|e| HarnessError::Usage(format!("{e}")))?,
            "gamma" => self.gamma = parse(key, value)?,
            "entropy_coeff" => self.entropy_coeff = parse(key, value)?,
            "baseline_decay" => self.baseline_decay = optional(key, value)?,
            "backup" => self.backup = value.parse().map_err(|e| HarnessError::Usage(format!("{e}")))?,
            "policy" => self.policy = policy(value)?,
            "model" => self.model = parse(key, value)?,
            "net" => self.net = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "seeds" => self.seeds = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = optional(key, value)?,
            "eval_every" => self.eval_every = optional(key, value)?,
            "train_eval_episodes" => self.train_eval_episodes = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "max_episode_steps" => self.max_episode_steps = parse(key, value)?,
            "levels" | "n" => self.levels = parse(key, value)?,
            "dataset_examples" => self.dataset_examples = optional(key, value)?,
            "oracle_nodes" => self.oracle_nodes = parse(key, value)?,
            "prior_epochs" => self.prior_epochs = parse(key, value)?,
            "prior_learning_rate" => self.prior_learning_rate = parse(key, value)?,
            "freeze_prior" => self.freeze_prior = parse(key, value)?,
            "replan" => self.replan = parse(key, value)?,
            "c_uct" => self.c_uct = parse(key, value)?,
            "c_puct" => self.c_puct = parse(key, value)?,
            "search_gamma" => self.search_gamma = parse(key, value)?,
            "variants" => {
                self.variants = value.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect()
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "dataset" => self.dataset = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "prior_checkpoint" => self.prior_checkpoint = path(value),
            "levels_file" => self.levels_file = path(value),
            "agent" => self.agent = value.to_string(),
            "bandit_depth" => self.bandit_depth = parse(key, value)?,
            "bandit_simulations" => self.bandit_simulations = parse(key, value)?,
            "bandit_runs" => self.bandit_runs = parse(key, value)?,
            other => return Err(HarnessError::Usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Checks ranges and enum combinations that parsing alone cannot.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let usage = |m: String| Err(HarnessError::Usage(m));
        if self.width < 3 || self.height < 3 {
            return usage(format!("board {}x{} is too small", self.width, self.height));
        }
        if self.boxes < 1 {
            return usage("at least one box is required".into());
        }
        if self.seeds < 1 || self.episodes < 1 || self.max_episode_steps < 1 {
            return usage("seeds, episodes and max_episode_steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.search_gamma) {
            return usage(format!("search_gamma must lie in [0, 1], got {}", self.search_gamma));
        }
        if !matches!(self.agent.as_str(), "mctsnet" | "uct" | "puct" | "random" | "oracle") {
            return usage(format!("unknown agent `{}`", self.agent));
        }
        self.train_config().validate().map_err(|e| HarnessError::Usage(e.to_string()))
    }

    pub fn level_config(&self) -> LevelConfig {
        LevelConfig {
            reverse_steps: self.reverse_steps,
            ..LevelConfig::with_size(self.width, self.height, self.boxes)
        }
    }

    pub fn net_config(&self) -> NetConfig {
        let mut c = NetConfig::new(self.height, self.width, self.net.subnets());
        c.backup = self.backup;
        c.policy = self.policy;
        c
    }

    pub fn credit(&self) -> CreditConfig {
        CreditConfig {
            gamma: self.gamma,
            entropy_coeff: self.entropy_coeff,
            estimator: self.estimator,
            baseline_decay: self.baseline_decay,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            simulations: self.simulations,
            max_simulations: self.max_simulations,
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            credit: self.credit(),
            workers: self.workers,
            seed: self.seed,
            log_every: self.log_every,
            checkpoint_every: self.checkpoint_every,
            eval_every: self.eval_every,
            checkpoint_dir: None,
            freeze_prior: self.freeze_prior,
        }
    }

    pub fn prior_config(&self) -> PriorConfig {
        PriorConfig {
            epochs: self.prior_epochs,
            learning_rate: self.prior_learning_rate,
            entropy_coeff: self.entropy_coeff,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_comments_and_aliases() {
        let c = RunConfig::parse_text("# run\nwidth = 6\n\nm=10 # sims\npolicy=learned-unstructured\nmodel=sham\nvariants=real, sham\neval_every=none\n")
            .unwrap();
        assert_eq!(c.width, 6);
        assert_eq!(c.simulations, 10);
        assert_eq!(c.policy, PolicyKind::Unstructured);
        assert_eq!(c.model, ModelKind::Sham);
        assert_eq!(c.variants, vec!["real", "sham"]);
        assert_eq!(c.eval_every, None);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse_text("width 6").is_err());
        assert!(RunConfig::parse_text("colour=red").is_err());
        assert!(RunConfig::parse_text("backup=lstm").is_err());
        assert!(RunConfig::parse_text("gamma=abc").is_err());
        let c = RunConfig::parse_text("gamma=2").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::parse_text("width=2").unwrap();
        assert!(c.validate().is_err());
    }
}
