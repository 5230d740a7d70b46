use rand::Rng;

use crate::sokoban::{Action, Model, Step, NUM_ACTIONS};

/// Deterministic complete 4-ary tree of fixed depth with one reward per edge.
/// States are `(depth, index)` with the root at `(0, 0)`; leaves at full depth
/// are terminal. Useful as a bandit-style test bed for search.
#[derive(Clone, Debug)]
pub struct ToyTree {
    depth: usize,
    // rewards[d][i * 4 + a] is the reward of edge a out of node i at depth d
    rewards: Vec<Vec<f64>>,
}

pub type ToyState = (usize, usize);

impl ToyTree {
    /// `rewards[d]` must hold `4^(d+1)` entries.
    pub fn from_rewards(rewards: Vec<Vec<f64>>) -> Self {
        for (d, level) in rewards.iter().enumerate() {
            assert_eq!(level.len(), NUM_ACTIONS.pow(d as u32 + 1), "rewards at depth {d}");
        }
        Self {
            depth: rewards.len(),
            rewards,
        }
    }

    /// Uniform `[0, 1)` edge rewards.
    pub fn random(depth: usize, rng: &mut impl Rng) -> Self {
        let rewards = (0..depth)
            .map(|d| (0..NUM_ACTIONS.pow(d as u32 + 1)).map(|_| rng.gen::<f64>()).collect())
            .collect();
        Self { depth, rewards }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root(&self) -> ToyState {
        (0, 0)
    }

    pub fn reward(&self, s: ToyState, a: Action) -> f64 {
        self.rewards[s.0][s.1 * NUM_ACTIONS + a.index()]
    }

    /// Optimal discounted return from `s`.
    pub fn value(&self, s: ToyState, gamma: f64) -> f64 {
        if s.0 == self.depth {
            return 0.0;
        }
        Action::ALL
            .iter()
            .map(|&a| self.action_value(s, a, gamma))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn action_value(&self, s: ToyState, a: Action, gamma: f64) -> f64 {
        let next = (s.0 + 1, s.1 * NUM_ACTIONS + a.index());
        self.reward(s, a) + gamma * self.value(next, gamma)
    }

    /// Best root action, lowest index on ties.
    pub fn optimal_action(&self, gamma: f64) -> Action {
        let mut best = Action::Up;
        for a in Action::ALL {
            if self.action_value(self.root(), a, gamma) > self.action_value(self.root(), best, gamma) {
                best = a;
            }
        }
        best
    }
}

impl Model for ToyTree {
    type State = ToyState;

    fn step(&self, s: &ToyState, a: Action) -> Step<ToyState> {
        if s.0 >= self.depth {
            return Step {
                state: *s,
                reward: 0.0,
                terminal: true,
            };
        }
        let state = (s.0 + 1, s.1 * NUM_ACTIONS + a.index());
        Step {
            state,
            reward: self.reward(*s, a),
            terminal: state.0 == self.depth,
        }
    }

    fn is_terminal(&self, s: &ToyState) -> bool {
        s.0 >= self.depth
    }
}
