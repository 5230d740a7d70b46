use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mctsnet::harness::{self, HarnessError, RunConfig, RunRow};

/// Learned tree search on Sokoban: data generation, training, evaluation and
/// ablation comparisons.
#[derive(Parser)]
#[command(name = "mctsnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random levels and write them as an XSB collection.
    GenLevels(Common),
    /// Label levels with the oracle and write a JSON-lines dataset.
    GenDataset(Common),
    /// Train the policy prior on a dataset.
    TrainPrior(Common),
    /// Train the search network.
    Train(Common),
    /// Play levels with an agent and report the success ratio.
    Eval(Common),
    /// Train and evaluate a grid of variants over several seeds.
    Compare(Common),
    /// Check backward-pass gradients against finite differences.
    Gradcheck(Common),
}

/// Flags shared by every command. Each overrides the matching key of the
/// `--config` file.
#[derive(Args)]
struct Common {
    /// File of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Levels to generate.
    #[arg(long, short = 'n')]
    n: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    boxes: Option<usize>,
    /// Simulations per search.
    #[arg(long, short = 'm')]
    m: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    levels_file: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    prior_checkpoint: Option<PathBuf>,
    /// basic or anytime.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// gated or mlp.
    #[arg(long)]
    backup: Option<String>,
    /// learned-modulated, learned-unstructured, uniform or distilled.
    #[arg(long)]
    policy: Option<String>,
    /// real or sham.
    #[arg(long)]
    model: Option<String>,
    /// paper, desk or tiny.
    #[arg(long)]
    net: Option<String>,
    /// mctsnet, uct, puct, random or oracle.
    #[arg(long)]
    agent: Option<String>,
    /// Comma-separated comparison variants.
    #[arg(long)]
    variants: Option<String>,
    /// Any other configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn show<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(ToString::to_string)
        }
        fn path(v: &Option<PathBuf>) -> Option<String> {
            v.as_ref().map(|p| p.display().to_string())
        }
        [
            ("seed", show(&self.seed)),
            ("out_dir", path(&self.out_dir)),
            ("workers", show(&self.workers)),
            ("levels", show(&self.n)),
            ("width", show(&self.width)),
            ("height", show(&self.height)),
            ("boxes", show(&self.boxes)),
            ("simulations", show(&self.m)),
            ("steps", show(&self.steps)),
            ("episodes", show(&self.episodes)),
            ("seeds", show(&self.seeds)),
            ("dataset", path(&self.dataset)),
            ("levels_file", path(&self.levels_file)),
            ("checkpoint", path(&self.checkpoint)),
            ("prior_checkpoint", path(&self.prior_checkpoint)),
            ("estimator", self.estimator.clone()),
            ("gamma", show(&self.gamma)),
            ("backup", self.backup.clone()),
            ("policy", self.policy.clone()),
            ("model", self.model.clone()),
            ("net", self.net.clone()),
            ("agent", self.agent.clone()),
            ("variants", self.variants.clone()),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            config.apply_text(&text)?;
        }
        for (key, value) in self.overrides() {
            config.set(key, &value)?;
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn report_row(row: &RunRow) {
    match &row.outcome {
        Ok(o) => eprintln!("{} seed {}: success {:.3}", row.variant, row.seed, o.eval.success_ratio),
        Err(e) => eprintln!("{} seed {}: failed: {e}", row.variant, row.seed),
    }
}

fn run(command: Command) -> Result<String, HarnessError> {
    match command {
        Command::GenLevels(c) => harness::cmd_gen_levels(&c.resolve()?),
        Command::GenDataset(c) => harness::cmd_gen_dataset(&c.resolve()?),
        Command::TrainPrior(c) => harness::cmd_train_prior(&c.resolve()?),
        Command::Train(c) => harness::cmd_train(&c.resolve()?),
        Command::Eval(c) => harness::cmd_eval(&c.resolve()?).map(|(_, msg)| msg),
        Command::Compare(c) => harness::cmd_compare(&c.resolve()?, &report_row).map(|(_, msg)| msg),
        Command::Gradcheck(c) => harness::cmd_gradcheck(&c.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
