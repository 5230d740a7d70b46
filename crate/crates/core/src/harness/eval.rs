use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stats::{wilson, Z95};
use super::HarnessError;
use crate::mcts::{search_tree, BaselineTree, SearchConfig, Selection};
use crate::mctsnet::{MctsNet, MemoryTree, RngSampler};
use crate::nn::{Graph, ParamStore};
use crate::sokoban::{deadlocked, generate_level, solve_oracle, transition, Action, EnvModel, GridState, LevelConfig, Model, RewardScheme, NUM_ACTIONS};
use crate::training::mix;

/// Something that picks real-environment actions, possibly keeping state
/// between steps of one episode.
pub trait Agent {
    fn act(&mut self, state: &GridState) -> Result<Action, HarnessError>;
}

/// Acts by searching with the network and taking the most probable readout
/// action. Each step searches from a fresh tree, as in training, unless
/// replanning is on: then the tree is re-rooted at the chosen child and
/// rebuilt only when its root no longer matches the real state.
pub struct MctsNetAgent<'a> {
    net: &'a MctsNet,
    store: &'a ParamStore,
    model: EnvModel,
    simulations: usize,
    rng: ChaCha8Rng,
    tree: Option<MemoryTree>,
    replan: bool,
}

impl<'a> MctsNetAgent<'a> {
    pub fn new(net: &'a MctsNet, store: &'a ParamStore, model: EnvModel, simulations: usize, seed: u64) -> Self {
        Self {
            net,
            store,
            model,
            simulations,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tree: None,
            replan: false,
        }
    }

    /// Keeps the searched subtree of the chosen action for the next step.
    pub fn replanning(mut self, on: bool) -> Self {
        self.replan = on;
        self
    }
}

impl Agent for MctsNetAgent<'_> {
    fn act(&mut self, state: &GridState) -> Result<Action, HarnessError> {
        let mut tree = match self.tree.take() {
            Some(t) if t.root_node().state == *state => t,
            _ => MemoryTree::new(state.clone(), self.model.is_terminal(state)),
        };
        let mut g = Graph::new(self.store);
        let out = self
            .net
            .run_search(&mut g, &mut tree, self.simulations, &self.model, &mut RngSampler(&mut self.rng))?;
        let a = Action::ALL[g.value(out.log_probs).argmax()];
        if self.replan {
            self.tree = Some(tree.replan_reroot(a, &self.model));
        }
        Ok(a)
    }
}

/// Rough state value for the scalar-statistics baselines, in reward units:
/// the step cost of the remaining pushes and walking, and a large penalty
/// for a cornered box.
pub fn heuristic_value(s: &GridState) -> f64 {
    if deadlocked(s) {
        return -10.0;
    }
    let l = s.layout();
    let targets: Vec<(usize, usize)> = l.targets().ones().map(|t| l.coords(t)).collect();
    let dist = |a: (usize, usize), b: (usize, usize)| a.0.abs_diff(b.0) + a.1.abs_diff(b.1);
    let off: Vec<(usize, usize)> = s.boxes().ones().filter(|&b| !l.is_target(b)).map(|b| l.coords(b)).collect();
    let pushes: usize = off
        .iter()
        .map(|&b| targets.iter().map(|&t| dist(b, t)).min().unwrap_or(0))
        .sum();
    let walk = off.iter().map(|&b| dist(s.agent(), b)).min().unwrap_or(0);
    -0.1 * (2 * pushes + walk) as f64
}

pub enum BaselineRule {
    Uct { c: f64 },
    /// PUCT with the network's policy prior.
    Puct { c_puct: f64, net: MctsNet, store: ParamStore },
}

/// Scalar-statistics MCTS with [`heuristic_value`] leaves and subtree reuse.
pub struct BaselineAgent<'a> {
    rule: &'a BaselineRule,
    model: EnvModel,
    config: SearchConfig,
    tree: Option<BaselineTree<GridState>>,
}

impl<'a> BaselineAgent<'a> {
    pub fn new(rule: &'a BaselineRule, model: EnvModel, config: SearchConfig) -> Self {
        Self {
            rule,
            model,
            config,
            tree: None,
        }
    }
}

pub fn prior_probs(net: &MctsNet, store: &ParamStore, s: &GridState) -> [f64; NUM_ACTIONS] {
    let mut g = Graph::new(store);
    match net.prior_log_probs(&mut g, s) {
        Ok(lp) => std::array::from_fn(|i| g.value(lp).data()[i].exp()),
        Err(_) => [f64::NAN; NUM_ACTIONS],
    }
}

impl Agent for BaselineAgent<'_> {
    fn act(&mut self, state: &GridState) -> Result<Action, HarnessError> {
        let mut tree = match self.tree.take() {
            Some(t) if t.root_node().state == *state => t,
            _ => BaselineTree::new(state.clone(), self.model.is_terminal(state)),
        };
        let a = match self.rule {
            BaselineRule::Uct { c } => search_tree(&mut tree, &self.model, &heuristic_value, &self.config, &Selection::Uct { c: *c })?,
            BaselineRule::Puct { c_puct, net, store } => {
                let prior = |s: &GridState| prior_probs(net, store, s);
                let rule = Selection::Puct {
                    c_puct: *c_puct,
                    prior: &prior,
                };
                search_tree(&mut tree, &self.model, &heuristic_value, &self.config, &rule)?
            }
        };
        self.tree = Some(tree.reuse_subtree(a, &self.model));
        Ok(a)
    }
}

/// Uniformly random actions.
pub struct RandomAgent(pub ChaCha8Rng);

impl Agent for RandomAgent {
    fn act(&mut self, _state: &GridState) -> Result<Action, HarnessError> {
        Ok(Action::ALL[self.0.gen_range(0..NUM_ACTIONS)])
    }
}

/// Follows the labelling oracle's plan, re-solving if it runs out.
pub struct OracleAgent {
    max_nodes: usize,
    plan: std::collections::VecDeque<Action>,
}

impl OracleAgent {
    pub fn new(max_nodes: usize) -> Self {
        Self {
            max_nodes,
            plan: Default::default(),
        }
    }
}

impl Agent for OracleAgent {
    fn act(&mut self, state: &GridState) -> Result<Action, HarnessError> {
        if self.plan.is_empty() {
            self.plan = solve_oracle(state, self.max_nodes)
                .ok_or_else(|| HarnessError::Runtime("oracle found no plan".into()))?
                .into();
        }
        self.plan.pop_front().ok_or_else(|| HarnessError::Runtime("oracle plan is empty".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Episode {
    pub solved: bool,
    /// Real steps taken.
    pub steps: usize,
}

/// Plays one level for at most `max_steps` real steps. A solve on the last
/// allowed step counts. Play stops early once a box is cornered, since the
/// level can no longer be solved.
pub fn run_episode(agent: &mut dyn Agent, level: &GridState, max_steps: usize) -> Result<Episode, HarnessError> {
    let rewards = RewardScheme::default();
    let mut state = level.clone();
    if state.is_solved() {
        return Ok(Episode { solved: true, steps: 0 });
    }
    for t in 1..=max_steps {
        let a = agent.act(&state)?;
        state = transition(&state, a, &rewards).state;
        if state.is_solved() {
            return Ok(Episode { solved: true, steps: t });
        }
        if deadlocked(&state) {
            return Ok(Episode { solved: false, steps: t });
        }
    }
    Ok(Episode {
        solved: false,
        steps: max_steps,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub episodes: usize,
    pub successes: usize,
    pub success_ratio: f64,
    /// Mean steps over solved episodes.
    pub mean_steps: Option<f64>,
    /// Half width of the 95% Wilson interval.
    pub half_width: f64,
}

impl EvalResult {
    pub fn from_episodes(episodes: &[Episode]) -> Self {
        let n = episodes.len();
        let solved: Vec<usize> = episodes.iter().filter(|e| e.solved).map(|e| e.steps).collect();
        let (_, half_width) = wilson(solved.len(), n, Z95);
        Self {
            episodes: n,
            successes: solved.len(),
            success_ratio: if n == 0 { 0.0 } else { solved.len() as f64 / n as f64 },
            mean_steps: (!solved.is_empty()).then(|| solved.iter().sum::<usize>() as f64 / solved.len() as f64),
            half_width,
        }
    }
}

/// Fresh evaluation levels. Level `i` depends only on `seed` and `i`.
pub fn eval_levels(config: &LevelConfig, seed: u64, n: usize) -> Result<Vec<GridState>, HarnessError> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64, 0xe7a1));
            Ok(generate_level(config, &mut rng)?)
        })
        .collect()
}

/// Plays every level with a fresh agent from `make_agent(i)`, splitting the
/// levels over `workers` threads. Results do not depend on `workers`.
pub fn evaluate<'a, F>(levels: &[GridState], max_steps: usize, workers: usize, make_agent: F) -> Result<EvalResult, HarnessError>
where
    F: Fn(usize) -> Box<dyn Agent + 'a> + Sync,
{
    let play = |i: usize| run_episode(make_agent(i).as_mut(), &levels[i], max_steps);
    let episodes: Vec<Episode> = if workers <= 1 || levels.len() <= 1 {
        (0..levels.len()).map(play).collect::<Result<_, _>>()?
    } else {
        let chunk = levels.len().div_ceil(workers);
        let ranges: Vec<std::ops::Range<usize>> = (0..levels.len()).step_by(chunk).map(|s| s..(s + chunk).min(levels.len())).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .into_iter()
                .map(|r| scope.spawn(|| r.map(play).collect::<Result<Vec<_>, _>>()))
                .collect();
            let mut out = Vec::with_capacity(levels.len());
            for h in handles {
                out.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, HarnessError>(out)
        })?
    };
    Ok(EvalResult::from_episodes(&episodes))
}
