//! Search with learned node statistics: every tree node holds a memory vector
//! produced by an embedding network, refined by a backup network along the
//! simulated path, and read out at the root into an action distribution. Tree
//! descent follows a learned stochastic simulation policy.

mod search;
mod tree;

use std::str::FromStr;

use rand::Rng;

use crate::nn::layers::{init_mlp2, mlp2, ConvTower};
use crate::nn::{Graph, NnError, NodeId, ParamStore, Tensor};
use crate::sokoban::{encode, Action, GridState, NUM_ACTIONS, PLANES};

pub use search::{ActionSampler, PathStep, ReplaySampler, RngSampler, SearchOutput, SimulationTrace};
pub use tree::{MemoryNode, MemoryTree};

/// Widths of the five subnetworks.
#[derive(Clone, Debug, PartialEq)]
pub struct SubnetConfig {
    /// Memory vector width.
    pub memory: usize,
    pub embed_channels: usize,
    pub embed_blocks: usize,
    pub embed_head_channels: usize,
    pub readout_hidden: usize,
    pub backup_hidden: usize,
    pub policy_hidden: usize,
    pub prior_channels: usize,
    pub prior_blocks: usize,
    pub prior_head_channels: usize,
}

impl SubnetConfig {
    /// Full-size networks.
    pub fn paper() -> Self {
        Self {
            memory: 128,
            embed_channels: 64,
            embed_blocks: 3,
            embed_head_channels: 32,
            readout_hidden: 128,
            backup_hidden: 128,
            policy_hidden: 64,
            prior_channels: 32,
            prior_blocks: 2,
            prior_head_channels: 8,
        }
    }

    /// Small networks that train in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            memory: 32,
            embed_channels: 16,
            embed_blocks: 1,
            embed_head_channels: 8,
            readout_hidden: 32,
            backup_hidden: 32,
            policy_hidden: 16,
            prior_channels: 16,
            prior_blocks: 1,
            prior_head_channels: 4,
        }
    }

    /// Minimal networks for exhaustive and finite-difference tests.
    pub fn tiny() -> Self {
        Self {
            memory: 6,
            embed_channels: 3,
            embed_blocks: 1,
            embed_head_channels: 2,
            readout_hidden: 5,
            backup_hidden: 5,
            policy_hidden: 4,
            prior_channels: 3,
            prior_blocks: 1,
            prior_head_channels: 2,
        }
    }

    fn validate(&self) -> Result<(), NnError> {
        let sizes = [
            self.memory,
            self.embed_channels,
            self.embed_head_channels,
            self.readout_hidden,
            self.backup_hidden,
            self.policy_hidden,
            self.prior_channels,
            self.prior_head_channels,
        ];
        if sizes.contains(&0) {
            return Err(NnError::Usage(format!("all subnetwork sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    fn embed_tower(&self) -> ConvTower {
        ConvTower {
            in_channels: PLANES.len(),
            channels: self.embed_channels,
            blocks: self.embed_blocks,
            head_channels: self.embed_head_channels,
            outputs: self.memory,
        }
    }

    fn prior_tower(&self) -> ConvTower {
        ConvTower {
            in_channels: PLANES.len(),
            channels: self.prior_channels,
            blocks: self.prior_blocks,
            head_channels: self.prior_head_channels,
            outputs: NUM_ACTIONS,
        }
    }
}

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = NnError;

            fn from_str(s: &str) -> Result<Self, NnError> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(NnError::Usage(format!(
                        "unknown {} `{other}` (expected one of: {})",
                        stringify!($name),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackupKind {
    /// `h + sigmoid(gate(φ)) ⊙ tanh(update(φ))`.
    Gated,
    /// Plain two-layer network `φ → h`.
    Mlp,
}

named_enum!(BackupKind { Gated => "gated", Mlp => "mlp" });

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    /// `w0·log μ(s, a) + w1·u(h_s, h_child)`.
    Modulated,
    /// Two-layer network on `h_s` alone.
    Unstructured,
    Uniform,
    /// The frozen policy prior.
    Distilled,
}

named_enum!(PolicyKind {
    Modulated => "modulated",
    Unstructured => "unstructured",
    Uniform => "uniform",
    Distilled => "distilled",
});

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    pub subnets: SubnetConfig,
    pub backup: BackupKind,
    pub policy: PolicyKind,
}

impl NetConfig {
    pub fn new(height: usize, width: usize, subnets: SubnetConfig) -> Self {
        Self {
            height,
            width,
            subnets,
            backup: BackupKind::Gated,
            policy: PolicyKind::Modulated,
        }
    }
}

/// The network side of the search: parameter layout and the subnetwork
/// forward passes.
#[derive(Clone, Debug)]
pub struct MctsNet {
    config: NetConfig,
}

impl MctsNet {
    pub fn new(config: NetConfig) -> Result<Self, NnError> {
        config.subnets.validate()?;
        if config.height < 3 || config.width < 3 {
            return Err(NnError::Usage(format!("board {}x{} too small", config.width, config.height)));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn memory_width(&self) -> usize {
        self.config.subnets.memory
    }

    /// Fresh parameters for every subnetwork the configured variants use.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamStore {
        let c = &self.config;
        let s = &c.subnets;
        let n = s.memory;
        let mut store = ParamStore::new();
        s.embed_tower().init(&mut store, "embed", c.height, c.width, rng);
        let phi = 2 * n + 1 + NUM_ACTIONS;
        match c.backup {
            BackupKind::Gated => {
                init_mlp2(&mut store, "backup.gate", phi, s.backup_hidden, n, rng);
                init_mlp2(&mut store, "backup.update", phi, s.backup_hidden, n, rng);
            }
            BackupKind::Mlp => init_mlp2(&mut store, "backup.mlp", phi, s.backup_hidden, n, rng),
        }
        match c.policy {
            PolicyKind::Modulated => {
                init_mlp2(&mut store, "simpol.u", 2 * n, s.policy_hidden, 1, rng);
                store.insert("simpol.w0", Tensor::vector(vec![1.0]));
                store.insert("simpol.w1", Tensor::vector(vec![0.0]));
            }
            PolicyKind::Unstructured => init_mlp2(&mut store, "simpol.mlp", n, s.policy_hidden, NUM_ACTIONS, rng),
            PolicyKind::Uniform | PolicyKind::Distilled => {}
        }
        init_mlp2(&mut store, "readout", n, s.readout_hidden, NUM_ACTIONS, rng);
        self.init_prior(&mut store, rng);
        store
    }

    /// Adds the policy-prior parameters to `store`.
    pub fn init_prior<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.config
            .subnets
            .prior_tower()
            .init(store, "prior", self.config.height, self.config.width, rng);
    }

    fn check_board(&self, s: &GridState) -> Result<(), NnError> {
        if s.height() != self.config.height || s.width() != self.config.width {
            return Err(NnError::Shape(format!(
                "board {}x{} but network expects {}x{}",
                s.width(),
                s.height(),
                self.config.width,
                self.config.height
            )));
        }
        Ok(())
    }

    /// Memory vector of a freshly expanded node.
    pub fn embed(&self, g: &mut Graph, s: &GridState) -> Result<NodeId, NnError> {
        self.check_board(s)?;
        let x = g.constant(encode(s));
        self.config.subnets.embed_tower().forward(g, x, "embed")
    }

    /// Log-probabilities of the model-free policy prior.
    pub fn prior_log_probs(&self, g: &mut Graph, s: &GridState) -> Result<NodeId, NnError> {
        self.check_board(s)?;
        let x = g.constant(encode(s));
        let logits = self.config.subnets.prior_tower().forward(g, x, "prior")?;
        Ok(g.log_softmax(logits))
    }

    /// Updated parent memory after observing the child under `a`.
    pub fn backup_step(
        &self,
        g: &mut Graph,
        h_parent: NodeId,
        h_child: NodeId,
        reward: f64,
        a: Action,
    ) -> Result<NodeId, NnError> {
        let n = self.memory_width();
        for h in [h_parent, h_child] {
            if g.value(h).shape() != [n] {
                return Err(NnError::Shape(format!("memory shape {:?}, expected [{n}]", g.value(h).shape())));
            }
        }
        let mut extra = vec![0.0; 1 + NUM_ACTIONS];
        extra[0] = reward;
        extra[1 + a.index()] = 1.0;
        let extra = g.constant(Tensor::vector(extra));
        let phi = g.concat(&[h_parent, h_child, extra])?;
        match self.config.backup {
            BackupKind::Gated => {
                let gate = mlp2(g, phi, "backup.gate")?;
                let gate = g.sigmoid(gate);
                let update = mlp2(g, phi, "backup.update")?;
                let update = g.tanh(update);
                let delta = g.mul(gate, update)?;
                g.add(h_parent, delta)
            }
            BackupKind::Mlp => mlp2(g, phi, "backup.mlp"),
        }
    }

    /// Log-probabilities of the root decision.
    pub fn readout(&self, g: &mut Graph, h_root: NodeId) -> Result<NodeId, NnError> {
        let logits = mlp2(g, h_root, "readout")?;
        Ok(g.log_softmax(logits))
    }

    /// Simulation-policy logits at `node`, reading memories from the tree as
    /// constants.
    pub fn sim_policy_logits(&self, g: &mut Graph, tree: &MemoryTree, node: usize) -> Result<NodeId, NnError> {
        let mut bindings = search::Bindings::default();
        self.policy_logits(g, tree, &mut bindings, node)
    }

    fn policy_logits(
        &self,
        g: &mut Graph,
        tree: &MemoryTree,
        b: &mut search::Bindings,
        node: usize,
    ) -> Result<NodeId, NnError> {
        let h_s = b.memory(g, tree, node)?;
        match self.config.policy {
            PolicyKind::Uniform => Ok(g.constant(Tensor::zeros(&[NUM_ACTIONS]))),
            PolicyKind::Distilled => {
                let prior = b.prior(self, g, &tree.node(node).state)?;
                let frozen = g.value(prior).clone();
                Ok(g.constant(frozen))
            }
            PolicyKind::Unstructured => mlp2(g, h_s, "simpol.mlp"),
            PolicyKind::Modulated => {
                let n = self.memory_width();
                let mut parts = Vec::with_capacity(2 * NUM_ACTIONS);
                let mut zero = None;
                for a in 0..NUM_ACTIONS {
                    let child = tree.node(node).children[a].filter(|&c| tree.node(c).h.is_some());
                    let h_c = match child {
                        Some(c) => b.memory(g, tree, c)?,
                        None => *zero.get_or_insert_with(|| g.constant(Tensor::zeros(&[n]))),
                    };
                    parts.push(h_s);
                    parts.push(h_c);
                }
                let pairs = g.concat(&parts)?;
                let pairs = g.reshape(pairs, &[NUM_ACTIONS, 2 * n])?;
                let u = mlp2(g, pairs, "simpol.u")?;
                let u = g.reshape(u, &[NUM_ACTIONS])?;
                let prior = b.prior(self, g, &tree.node(node).state)?;
                let w0 = g.param("simpol.w0")?;
                let w1 = g.param("simpol.w1")?;
                let a = g.scale_by(prior, w0)?;
                let c = g.scale_by(u, w1)?;
                g.add(a, c)
            }
        }
    }
}
