//! Value-network Monte-Carlo tree search with scalar node statistics.
//!
//! Each simulation descends with a deterministic selection rule (UCT or PUCT)
//! until it reaches an unvisited node, evaluates it with a value function, and
//! backs the discounted return up the path as a running mean.

mod toy;

pub use toy::{ToyState, ToyTree};

use crate::sokoban::{Action, Model, NUM_ACTIONS};

#[derive(Debug, thiserror::Error)]
pub enum MctsError {
    #[error("usage error: {0}")]
    Usage(String),
}

/// Visit counts and mean action values at one node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarStats {
    pub visits: u32,
    pub action_visits: [u32; NUM_ACTIONS],
    pub q: [f64; NUM_ACTIONS],
}

fn argmax_first(scores: &[f64; NUM_ACTIONS]) -> Action {
    let mut best = 0;
    for a in 1..NUM_ACTIONS {
        if scores[a] > scores[best] {
            best = a;
        }
    }
    Action::ALL[best]
}

/// `argmax_a Q(s,a) + c·sqrt(ln N(s) / N(s,a))`; untried actions first,
/// ties to the lowest index.
pub fn uct_select(stats: &ScalarStats, c: f64) -> Action {
    if let Some(a) = stats.action_visits.iter().position(|&n| n == 0) {
        return Action::ALL[a];
    }
    let ln_n = f64::from(stats.visits.max(1)).ln();
    let scores = std::array::from_fn(|a| {
        stats.q[a] + c * (ln_n / f64::from(stats.action_visits[a])).sqrt()
    });
    argmax_first(&scores)
}

/// `argmax_a Q(s,a) + c·P(a)·sqrt(N(s)) / (1 + N(s,a))`.
pub fn puct_select(stats: &ScalarStats, prior: &[f64; NUM_ACTIONS], c_puct: f64) -> Result<Action, MctsError> {
    let total: f64 = prior.iter().sum();
    if prior.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > 1e-6 {
        return Err(MctsError::Usage(format!("prior {prior:?} is not a distribution")));
    }
    let sqrt_n = f64::from(stats.visits).sqrt();
    let scores = std::array::from_fn(|a| {
        stats.q[a] + c_puct * prior[a] * sqrt_n / (1.0 + f64::from(stats.action_visits[a]))
    });
    Ok(argmax_first(&scores))
}

#[derive(Clone, Debug)]
pub struct BaselineNode<S> {
    pub state: S,
    pub terminal: bool,
    pub stats: ScalarStats,
    pub children: [Option<usize>; NUM_ACTIONS],
    pub rewards: [f64; NUM_ACTIONS],
    pub prior: Option<[f64; NUM_ACTIONS]>,
}

impl<S> BaselineNode<S> {
    fn new(state: S, terminal: bool) -> Self {
        Self {
            state,
            terminal,
            stats: ScalarStats::default(),
            children: [None; NUM_ACTIONS],
            rewards: [0.0; NUM_ACTIONS],
            prior: None,
        }
    }
}

/// One backed-up return, kept for auditing the running means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackupRecord {
    pub node: usize,
    pub action: Action,
    pub ret: f64,
}

/// Arena-allocated search tree.
#[derive(Clone, Debug)]
pub struct BaselineTree<S> {
    nodes: Vec<BaselineNode<S>>,
    root: usize,
    log: Vec<BackupRecord>,
}

impl<S: Clone> BaselineTree<S> {
    pub fn new(root: S, terminal: bool) -> Self {
        Self {
            nodes: vec![BaselineNode::new(root, terminal)],
            root: 0,
            log: Vec::new(),
        }
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &BaselineNode<S> {
        &self.nodes[id]
    }

    pub fn root_node(&self) -> &BaselineNode<S> {
        &self.nodes[self.root]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[BaselineNode<S>] {
        &self.nodes
    }

    /// Every return backed up since the tree was created or re-rooted.
    pub fn backup_log(&self) -> &[BackupRecord] {
        &self.log
    }

    /// Node ids in the subtree under `id`, including `id`.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.nodes[out[i]].children.iter().flatten());
            i += 1;
        }
        out
    }

    /// Makes the child under `a` the new root, keeping its subtree statistics.
    /// If that child was never expanded a fresh single-node tree is returned.
    pub fn reuse_subtree<M: Model<State = S>>(self, a: Action, model: &M) -> Self {
        let root = &self.nodes[self.root];
        let Some(child) = root.children[a.index()] else {
            let step = model.step(&root.state, a);
            return Self::new(step.state, step.terminal);
        };
        let keep = self.subtree(child);
        let mut remap = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut nodes: Vec<Option<BaselineNode<S>>> = self.nodes.into_iter().map(Some).collect();
        let nodes = keep
            .iter()
            .map(|&old| {
                let mut n = nodes[old].take().expect("tree nodes are visited once");
                for c in n.children.iter_mut().flatten() {
                    *c = remap[*c];
                }
                n
            })
            .collect();
        Self {
            nodes,
            root: 0,
            log: Vec::new(),
        }
    }

    fn child<M: Model<State = S>>(&mut self, id: usize, a: Action, model: &M) -> usize {
        if let Some(c) = self.nodes[id].children[a.index()] {
            return c;
        }
        let step = model.step(&self.nodes[id].state, a);
        self.nodes.push(BaselineNode::new(step.state, step.terminal));
        let c = self.nodes.len() - 1;
        self.nodes[id].children[a.index()] = Some(c);
        self.nodes[id].rewards[a.index()] = step.reward;
        c
    }
}

/// Selection rule used during descent.
pub enum Selection<'a, S> {
    Uct { c: f64 },
    Puct {
        c_puct: f64,
        prior: &'a dyn Fn(&S) -> [f64; NUM_ACTIONS],
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub simulations: usize,
    pub gamma: f64,
}

/// Path of one simulation: `(node, action)` pairs and the evaluated leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationPath {
    pub steps: Vec<(usize, Action)>,
    pub leaf: usize,
}

/// Runs one simulation: descend, evaluate the leaf, back up.
pub fn simulate<S, M, V>(
    tree: &mut BaselineTree<S>,
    model: &M,
    value_fn: &V,
    gamma: f64,
    rule: &Selection<'_, S>,
) -> Result<SimulationPath, MctsError>
where
    S: Clone,
    M: Model<State = S>,
    V: Fn(&S) -> f64,
{
    let mut steps = Vec::new();
    let mut cur = tree.root;
    while tree.nodes[cur].stats.visits > 0 && !tree.nodes[cur].terminal {
        let node = &tree.nodes[cur];
        let a = match rule {
            Selection::Uct { c } => uct_select(&node.stats, *c),
            Selection::Puct { c_puct, prior } => {
                let p = node.prior.unwrap_or_else(|| prior(&node.state));
                puct_select(&node.stats, &p, *c_puct)?
            }
        };
        steps.push((cur, a));
        cur = tree.child(cur, a, model);
    }

    let leaf = &mut tree.nodes[cur];
    let value = if leaf.terminal { 0.0 } else { value_fn(&leaf.state) };
    if leaf.stats.visits == 0 {
        leaf.stats.visits = 1;
        if let Selection::Puct { prior, .. } = rule {
            if !leaf.terminal {
                leaf.prior = Some(prior(&leaf.state));
            }
        }
    } else {
        // a revisited terminal leaf
        leaf.stats.visits += 1;
    }

    let mut ret = value;
    for &(id, a) in steps.iter().rev() {
        let node = &mut tree.nodes[id];
        let i = a.index();
        ret = node.rewards[i] + gamma * ret;
        node.stats.q[i] += (ret - node.stats.q[i]) / f64::from(node.stats.action_visits[i] + 1);
        node.stats.visits += 1;
        node.stats.action_visits[i] += 1;
        tree.log.push(BackupRecord { node: id, action: a, ret });
    }
    Ok(SimulationPath { steps, leaf: cur })
}

/// Runs `config.simulations` simulations on an existing tree and picks the
/// most visited root action (ties to the lowest index). With no root action
/// statistics the choice falls back to a one-step lookahead
/// `argmax_a r(s,a) + γ·V(T(s,a))`.
pub fn search_tree<S, M, V>(
    tree: &mut BaselineTree<S>,
    model: &M,
    value_fn: &V,
    config: &SearchConfig,
    rule: &Selection<'_, S>,
) -> Result<Action, MctsError>
where
    S: Clone,
    M: Model<State = S>,
    V: Fn(&S) -> f64,
{
    if config.simulations < 1 {
        return Err(MctsError::Usage("at least one simulation is required".into()));
    }
    for _ in 0..config.simulations {
        simulate(tree, model, value_fn, config.gamma, rule)?;
    }
    Ok(root_action(tree, model, value_fn, config.gamma))
}

/// Fresh-tree search from `root`.
pub fn run_search<S, M, V>(
    root: S,
    model: &M,
    value_fn: &V,
    config: &SearchConfig,
    rule: &Selection<'_, S>,
) -> Result<(Action, BaselineTree<S>), MctsError>
where
    S: Clone,
    M: Model<State = S>,
    V: Fn(&S) -> f64,
{
    let terminal = model.is_terminal(&root);
    let mut tree = BaselineTree::new(root, terminal);
    let action = search_tree(&mut tree, model, value_fn, config, rule)?;
    Ok((action, tree))
}

fn root_action<S, M, V>(tree: &BaselineTree<S>, model: &M, value_fn: &V, gamma: f64) -> Action
where
    S: Clone,
    M: Model<State = S>,
    V: Fn(&S) -> f64,
{
    let root = tree.root_node();
    let counts = root.stats.action_visits;
    if counts.iter().all(|&n| n == 0) {
        let scores = std::array::from_fn(|a| {
            let step = model.step(&root.state, Action::ALL[a]);
            let v = if step.terminal { 0.0 } else { value_fn(&step.state) };
            step.reward + gamma * v
        });
        return argmax_first(&scores);
    }
    let scores = counts.map(f64::from);
    argmax_first(&scores)
}

#[cfg(test)]
mod tests;
