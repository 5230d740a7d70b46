//! Deterministic Sokoban: board state, transition and reward model, feature
//! encoding, reverse-play level generation, and an A* labelling oracle.

mod encode;
mod generate;
mod oracle;
mod xsb;

use std::fmt;
use std::sync::Arc;

pub use encode::{decode, encode, PLANES};
pub use generate::{generate_level, LevelConfig};
pub use oracle::{deadlocked, solve_oracle};
pub use xsb::{format_collection, parse_collection, parse_level, to_xsb};

#[derive(Debug, thiserror::Error)]
pub enum SokobanError {
    #[error("invalid state: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("level generation failed after {0} attempts")]
    Generation(usize),
}

/// One of the four moves. Blocked moves are legal no-ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

pub const NUM_ACTIONS: usize = 4;

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// (row, col) offset.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    pub fn opposite(self) -> Action {
        match self {
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

/// Small fixed-size bitset over board cells.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitset(Vec<u64>);

impl Bitset {
    pub fn new(len: usize) -> Self {
        Bitset(vec![0; len.div_ceil(64)])
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        if v {
            self.0[i / 64] |= 1 << (i % 64);
        } else {
            self.0[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

impl fmt::Debug for Bitset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.ones()).finish()
    }
}

/// Static part of a board: size, walls and targets.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Layout {
    width: usize,
    height: usize,
    walls: Bitset,
    targets: Bitset,
}

impl Layout {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn is_wall(&self, cell: usize) -> bool {
        self.walls.get(cell)
    }

    pub fn is_target(&self, cell: usize) -> bool {
        self.targets.get(cell)
    }

    pub fn targets(&self) -> &Bitset {
        &self.targets
    }

    pub fn walls(&self) -> &Bitset {
        &self.walls
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    /// Neighbouring cell, or `None` off the board.
    pub fn offset(&self, cell: usize, a: Action) -> Option<usize> {
        let (r, c) = self.coords(cell);
        let (dr, dc) = a.delta();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.height as isize || nc >= self.width as isize {
            None
        } else {
            Some(nr as usize * self.width + nc as usize)
        }
    }

    fn blocked(&self, cell: Option<usize>) -> bool {
        cell.is_none_or(|c| self.walls.get(c))
    }
}

/// Immutable Sokoban position. Equality and hashing are structural.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GridState {
    layout: Arc<Layout>,
    boxes: Bitset,
    agent: usize,
}

impl GridState {
    /// Builds and validates a state from cell lists (row-major cell indices).
    pub fn new(
        width: usize,
        height: usize,
        walls: &[usize],
        targets: &[usize],
        boxes: &[usize],
        agent: (usize, usize),
    ) -> Result<Self, SokobanError> {
        if width == 0 || height == 0 {
            return Err(SokobanError::Invalid("board must be non-empty".into()));
        }
        let cells = width * height;
        let bits = |list: &[usize], what: &str| -> Result<Bitset, SokobanError> {
            let mut b = Bitset::new(cells);
            for &c in list {
                if c >= cells {
                    return Err(SokobanError::Invalid(format!("{what} cell {c} outside {width}x{height} board")));
                }
                if b.get(c) {
                    return Err(SokobanError::Invalid(format!("duplicate {what} at cell {c}")));
                }
                b.set(c, true);
            }
            Ok(b)
        };
        let layout = Layout {
            width,
            height,
            walls: bits(walls, "wall")?,
            targets: bits(targets, "target")?,
        };
        let boxes = bits(boxes, "box")?;
        if agent.0 >= height || agent.1 >= width {
            return Err(SokobanError::Invalid(format!("agent {agent:?} outside board")));
        }
        let state = GridState {
            layout: Arc::new(layout),
            boxes,
            agent: agent.0 * width + agent.1,
        };
        state.validate()?;
        Ok(state)
    }

    pub(crate) fn from_parts(layout: Arc<Layout>, boxes: Bitset, agent: usize) -> Self {
        GridState { layout, boxes, agent }
    }

    pub fn validate(&self) -> Result<(), SokobanError> {
        let l = &self.layout;
        if l.walls.get(self.agent) {
            return Err(SokobanError::Invalid("agent on a wall".into()));
        }
        if self.boxes.get(self.agent) {
            return Err(SokobanError::Invalid("agent on a box".into()));
        }
        if let Some(c) = self.boxes.ones().find(|&c| l.walls.get(c)) {
            return Err(SokobanError::Invalid(format!("box on wall at cell {c}")));
        }
        if let Some(c) = l.targets.ones().find(|&c| l.walls.get(c)) {
            return Err(SokobanError::Invalid(format!("target on wall at cell {c}")));
        }
        if self.boxes.count() != l.targets.count() {
            return Err(SokobanError::Invalid(format!(
                "{} boxes but {} targets",
                self.boxes.count(),
                l.targets.count()
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn layout_arc(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn height(&self) -> usize {
        self.layout.height
    }

    pub fn agent(&self) -> (usize, usize) {
        self.layout.coords(self.agent)
    }

    pub fn agent_cell(&self) -> usize {
        self.agent
    }

    pub fn boxes(&self) -> &Bitset {
        &self.boxes
    }

    pub fn has_box(&self, cell: usize) -> bool {
        self.boxes.get(cell)
    }

    pub fn num_boxes(&self) -> usize {
        self.boxes.count()
    }

    pub fn boxes_on_targets(&self) -> usize {
        self.boxes.ones().filter(|&c| self.layout.targets.get(c)).count()
    }

    pub fn is_solved(&self) -> bool {
        self.boxes == self.layout.targets
    }
}

impl fmt::Debug for GridState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GridState(\n{})", to_xsb(self))
    }
}

/// Reward values for a transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardScheme {
    pub step_penalty: f64,
    pub box_on: f64,
    pub box_off: f64,
    pub solve_bonus: f64,
}

impl Default for RewardScheme {
    fn default() -> Self {
        Self {
            step_penalty: -0.1,
            box_on: 1.0,
            box_off: -1.0,
            solve_bonus: 10.0,
        }
    }
}

/// Result of applying an action.
#[derive(Clone, Debug, PartialEq)]
pub struct Step<S> {
    pub state: S,
    pub reward: f64,
    pub terminal: bool,
}

/// Applies Sokoban rules. A move into a wall, or a push against a wall or
/// second box, leaves the state unchanged and still costs the step penalty.
pub fn transition(s: &GridState, a: Action, rewards: &RewardScheme) -> Step<GridState> {
    let layout = &s.layout;
    let mut reward = rewards.step_penalty;
    let next = layout.offset(s.agent, a);
    let blocked = |s: &GridState| Step {
        state: s.clone(),
        reward: rewards.step_penalty,
        terminal: s.is_solved(),
    };
    if layout.blocked(next) {
        return blocked(s);
    }
    let next = next.expect("checked");
    let mut boxes = s.boxes.clone();
    if s.boxes.get(next) {
        let beyond = layout.offset(next, a);
        if layout.blocked(beyond) || s.boxes.get(beyond.expect("checked")) {
            return blocked(s);
        }
        let beyond = beyond.expect("checked");
        boxes.set(next, false);
        boxes.set(beyond, true);
        match (layout.targets.get(next), layout.targets.get(beyond)) {
            (false, true) => reward += rewards.box_on,
            (true, false) => reward += rewards.box_off,
            _ => {}
        }
    }
    let state = GridState::from_parts(Arc::clone(&s.layout), boxes, next);
    let terminal = state.is_solved();
    if terminal {
        reward += rewards.solve_bonus;
    }
    Step { state, reward, terminal }
}

/// Deterministic environment model queried by search.
pub trait Model {
    type State: Clone;

    fn step(&self, s: &Self::State, a: Action) -> Step<Self::State>;

    fn is_terminal(&self, s: &Self::State) -> bool;
}

/// The real Sokoban dynamics.
#[derive(Clone, Debug, Default)]
pub struct SokobanModel {
    pub rewards: RewardScheme,
}

impl Model for SokobanModel {
    type State = GridState;

    fn step(&self, s: &GridState, a: Action) -> Step<GridState> {
        transition(s, a, &self.rewards)
    }

    fn is_terminal(&self, s: &GridState) -> bool {
        s.is_solved()
    }
}

/// Ablation model with `T(s, a) = s` and zero reward.
#[derive(Clone, Copy, Debug, Default)]
pub struct ShamModel;

impl Model for ShamModel {
    type State = GridState;

    fn step(&self, s: &GridState, _a: Action) -> Step<GridState> {
        Step {
            state: s.clone(),
            reward: 0.0,
            terminal: false,
        }
    }

    fn is_terminal(&self, _s: &GridState) -> bool {
        false
    }
}

/// Either model, selected at run time.
#[derive(Clone, Debug)]
pub enum EnvModel {
    Real(SokobanModel),
    Sham,
}

impl Model for EnvModel {
    type State = GridState;

    fn step(&self, s: &GridState, a: Action) -> Step<GridState> {
        match self {
            EnvModel::Real(m) => m.step(s, a),
            EnvModel::Sham => ShamModel.step(s, a),
        }
    }

    fn is_terminal(&self, s: &GridState) -> bool {
        match self {
            EnvModel::Real(m) => m.is_terminal(s),
            EnvModel::Sham => false,
        }
    }
}
