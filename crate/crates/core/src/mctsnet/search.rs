use std::collections::{HashMap, VecDeque};

use rand::Rng;

use super::{MctsNet, MemoryTree};
use crate::nn::{Graph, NnError, NodeId, Tensor};
use crate::sokoban::{Action, GridState, Model, NUM_ACTIONS};

/// Source of the stochastic simulation-policy decisions.
pub trait ActionSampler {
    fn sample(&mut self, probs: &[f64]) -> Result<Action, NnError>;
}

/// Inverse-CDF sampling from a random number generator.
pub struct RngSampler<'a, R: Rng>(pub &'a mut R);

impl<R: Rng> ActionSampler for RngSampler<'_, R> {
    fn sample(&mut self, probs: &[f64]) -> Result<Action, NnError> {
        let u: f64 = self.0.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last = i;
            }
            acc += p;
            if u < acc {
                return Ok(Action::ALL[i]);
            }
        }
        // rounding left u above the total mass
        Ok(Action::ALL[last])
    }
}

/// Replays a fixed decision sequence, e.g. the one recorded by an earlier search.
#[derive(Clone, Debug, Default)]
pub struct ReplaySampler {
    actions: VecDeque<Action>,
}

impl ReplaySampler {
    pub fn new(actions: impl IntoIterator<Item = Action>) -> Self {
        Self {
            actions: actions.into_iter().collect(),
        }
    }

    pub fn from_traces(traces: &[SimulationTrace]) -> Self {
        Self::new(traces.iter().flat_map(|t| t.path.iter().map(|p| p.action)))
    }

    pub fn remaining(&self) -> usize {
        self.actions.len()
    }
}

impl ActionSampler for ReplaySampler {
    fn sample(&mut self, probs: &[f64]) -> Result<Action, NnError> {
        let a = self
            .actions
            .pop_front()
            .ok_or_else(|| NnError::Usage("replay sampler exhausted".into()))?;
        if probs[a.index()] <= 0.0 {
            return Err(NnError::Usage(format!("replayed action {a:?} has zero probability")));
        }
        Ok(a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathStep {
    pub node: usize,
    pub action: Action,
    pub reward: f64,
}

/// What one simulation did and what training needs from it.
#[derive(Clone, Debug)]
pub struct SimulationTrace {
    /// 1-based simulation index.
    pub index: usize,
    pub path: Vec<PathStep>,
    pub leaf: usize,
    /// `log π(a_t | ·)` of every sampled action, on the graph.
    pub log_probs: Vec<NodeId>,
    pub log_prob_values: Vec<f64>,
    /// Full log-policy at every decision point, on the graph.
    pub policies: Vec<NodeId>,
}

/// Result of a search on one graph.
#[derive(Clone, Debug)]
pub struct SearchOutput {
    /// Final root log-probabilities.
    pub log_probs: NodeId,
    pub probs: Tensor,
    pub traces: Vec<SimulationTrace>,
    /// Root log-probabilities after each simulation.
    pub per_sim_log_probs: Vec<NodeId>,
    pub per_sim_probs: Vec<Tensor>,
}

/// Graph handles for tree memories and cached per-state subnetwork outputs,
/// valid for one graph.
#[derive(Default)]
pub(super) struct Bindings {
    memory: HashMap<usize, NodeId>,
    embed: HashMap<GridState, NodeId>,
    prior: HashMap<GridState, NodeId>,
}

impl Bindings {
    /// Current memory of `node`; memories computed before this graph enter
    /// as constants.
    pub(super) fn memory(&mut self, g: &mut Graph, tree: &MemoryTree, node: usize) -> Result<NodeId, NnError> {
        if let Some(&id) = self.memory.get(&node) {
            return Ok(id);
        }
        let h = tree
            .node(node)
            .h
            .clone()
            .ok_or_else(|| NnError::Usage(format!("node {node} has no memory")))?;
        let id = g.constant(h);
        self.memory.insert(node, id);
        Ok(id)
    }

    fn set_memory(&mut self, g: &Graph, tree: &mut MemoryTree, node: usize, h: NodeId) {
        self.memory.insert(node, h);
        tree.node_mut(node).h = Some(g.value(h).clone());
    }

    fn embed(&mut self, net: &MctsNet, g: &mut Graph, s: &GridState) -> Result<NodeId, NnError> {
        if let Some(&id) = self.embed.get(s) {
            return Ok(id);
        }
        let id = net.embed(g, s)?;
        self.embed.insert(s.clone(), id);
        Ok(id)
    }

    pub(super) fn prior(&mut self, net: &MctsNet, g: &mut Graph, s: &GridState) -> Result<NodeId, NnError> {
        if let Some(&id) = self.prior.get(s) {
            return Ok(id);
        }
        let id = net.prior_log_probs(g, s)?;
        self.prior.insert(s.clone(), id);
        Ok(id)
    }
}

impl MctsNet {
    /// Runs `simulations` simulations on `tree` and reads out the root after
    /// each one.
    pub fn run_search<M: Model<State = GridState>>(
        &self,
        g: &mut Graph,
        tree: &mut MemoryTree,
        simulations: usize,
        model: &M,
        sampler: &mut dyn ActionSampler,
    ) -> Result<SearchOutput, NnError> {
        self.run_search_observed(g, tree, simulations, model, sampler, &mut |_, _| {})
    }

    /// Fresh tree at `root`.
    pub fn search_from<M: Model<State = GridState>>(
        &self,
        g: &mut Graph,
        root: &GridState,
        simulations: usize,
        model: &M,
        sampler: &mut dyn ActionSampler,
    ) -> Result<(SearchOutput, MemoryTree), NnError> {
        let mut tree = MemoryTree::new(root.clone(), model.is_terminal(root));
        let out = self.run_search(g, &mut tree, simulations, model, sampler)?;
        Ok((out, tree))
    }

    /// Like [`MctsNet::run_search`], calling `observer` after every simulation
    /// once its backup is complete.
    pub fn run_search_observed<M: Model<State = GridState>>(
        &self,
        g: &mut Graph,
        tree: &mut MemoryTree,
        simulations: usize,
        model: &M,
        sampler: &mut dyn ActionSampler,
        observer: &mut dyn FnMut(&MemoryTree, &SimulationTrace),
    ) -> Result<SearchOutput, NnError> {
        if simulations < 1 {
            return Err(NnError::Usage("at least one simulation is required".into()));
        }
        let mut b = Bindings::default();
        let mut traces = Vec::with_capacity(simulations);
        let mut per_sim_log_probs = Vec::with_capacity(simulations);
        let mut per_sim_probs = Vec::with_capacity(simulations);
        for m in 1..=simulations {
            let trace = self.simulate(g, tree, &mut b, model, sampler, m)?;
            self.backup(g, tree, &mut b, &trace)?;
            let h_root = b.memory(g, tree, tree.root())?;
            let lp = self.readout(g, h_root)?;
            per_sim_probs.push(exp(g.value(lp)));
            per_sim_log_probs.push(lp);
            observer(tree, &trace);
            traces.push(trace);
        }
        Ok(SearchOutput {
            log_probs: *per_sim_log_probs.last().expect("at least one simulation"),
            probs: per_sim_probs.last().expect("at least one simulation").clone(),
            traces,
            per_sim_log_probs,
            per_sim_probs,
        })
    }

    fn simulate<M: Model<State = GridState>>(
        &self,
        g: &mut Graph,
        tree: &mut MemoryTree,
        b: &mut Bindings,
        model: &M,
        sampler: &mut dyn ActionSampler,
        index: usize,
    ) -> Result<SimulationTrace, NnError> {
        let mut trace = SimulationTrace {
            index,
            path: Vec::new(),
            leaf: tree.root(),
            log_probs: Vec::new(),
            log_prob_values: Vec::new(),
            policies: Vec::new(),
        };
        let mut cur = tree.root();
        while tree.node(cur).visits > 0 && !tree.node(cur).terminal {
            let logits = self.policy_logits(g, tree, b, cur)?;
            let policy = g.log_softmax(logits);
            let probs: Vec<f64> = g.value(policy).data().iter().map(|v| v.exp()).collect();
            let a = sampler.sample(&probs)?;
            let lp = g.pick(policy, a.index())?;
            let next = tree.expand(cur, a, model);
            trace.path.push(PathStep {
                node: cur,
                action: a,
                reward: tree.node(cur).rewards[a.index()],
            });
            trace.log_prob_values.push(g.scalar(lp));
            trace.log_probs.push(lp);
            trace.policies.push(policy);
            cur = next;
        }
        trace.leaf = cur;
        Ok(trace)
    }

    fn backup(&self, g: &mut Graph, tree: &mut MemoryTree, b: &mut Bindings, trace: &SimulationTrace) -> Result<(), NnError> {
        let leaf = trace.leaf;
        if tree.node(leaf).visits == 0 {
            let state = tree.node(leaf).state.clone();
            let h = b.embed(self, g, &state)?;
            b.set_memory(g, tree, leaf, h);
        }
        tree.node_mut(leaf).visits += 1;
        for step in trace.path.iter().rev() {
            let child = tree.node(step.node).children[step.action.index()].expect("path child exists");
            let h_parent = b.memory(g, tree, step.node)?;
            let h_child = b.memory(g, tree, child)?;
            let h = self.backup_step(g, h_parent, h_child, step.reward, step.action)?;
            b.set_memory(g, tree, step.node, h);
            tree.node_mut(step.node).visits += 1;
        }
        Ok(())
    }
}

fn exp(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|v| v.exp()).collect();
    Tensor::new(vec![NUM_ACTIONS], data).expect("readout has one entry per action")
}
