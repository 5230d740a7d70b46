use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Action, Bitset, GridState, Layout, SokobanError};

/// Parameters for reverse-play level generation.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelConfig {
    pub width: usize,
    pub height: usize,
    pub boxes: usize,
    /// Random reverse moves applied after placing boxes on targets.
    pub reverse_steps: usize,
    /// Probability of pulling an adjacent box on a reverse move.
    pub pull_probability: f64,
    /// Fraction of interior cells carved to floor.
    pub floor_fraction: f64,
    pub max_retries: usize,
}

impl Default for LevelConfig {
    fn default() -> Self {
        Self {
            width: 7,
            height: 7,
            boxes: 1,
            reverse_steps: 60,
            pull_probability: 0.8,
            floor_fraction: 0.7,
            max_retries: 1000,
        }
    }
}

impl LevelConfig {
    pub fn with_size(width: usize, height: usize, boxes: usize) -> Self {
        Self {
            width,
            height,
            boxes,
            ..Self::default()
        }
    }
}

/// Generates a level that is solvable by construction: boxes start on their
/// targets and are scattered by pulls, which are exactly reversed pushes. Of
/// the configurations visited right after a pull, the one with the boxes
/// farthest from the targets is kept, with the agent anywhere it could walk
/// to from there.
pub fn generate_level<R: Rng>(config: &LevelConfig, rng: &mut R) -> Result<GridState, SokobanError> {
    let (w, h) = (config.width, config.height);
    if w < 3 || h < 3 {
        return Err(SokobanError::Invalid(format!("{w}x{h} board has no interior")));
    }
    let interior = (w - 2) * (h - 2);
    if interior < config.boxes + 2 {
        return Err(SokobanError::Invalid(format!(
            "{w}x{h} board too small for {} boxes",
            config.boxes
        )));
    }
    for _ in 0..config.max_retries {
        if let Some(level) = attempt(config, rng) {
            return Ok(level);
        }
    }
    Err(SokobanError::Generation(config.max_retries))
}

fn attempt<R: Rng>(config: &LevelConfig, rng: &mut R) -> Option<GridState> {
    let (w, h) = (config.width, config.height);
    let cells = w * h;
    let interior = (w - 2) * (h - 2);
    let wanted = ((interior as f64 * config.floor_fraction).ceil() as usize).clamp(config.boxes + 2, interior);

    let mut floor = Bitset::new(cells);
    let (mut r, mut c) = (rng.gen_range(1..h - 1), rng.gen_range(1..w - 1));
    floor.set(r * w + c, true);
    let mut carved = 1;
    while carved < wanted {
        let a = Action::ALL[rng.gen_range(0..4)];
        let (dr, dc) = a.delta();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 1 || nc < 1 || nr >= h as isize - 1 || nc >= w as isize - 1 {
            continue;
        }
        (r, c) = (nr as usize, nc as usize);
        if !floor.get(r * w + c) {
            floor.set(r * w + c, true);
            carved += 1;
        }
    }
    let mut walls = Bitset::new(cells);
    for cell in 0..cells {
        walls.set(cell, !floor.get(cell));
    }

    let mut open: Vec<usize> = floor.ones().collect();
    open.shuffle(rng);
    let mut targets = Bitset::new(cells);
    for &t in &open[..config.boxes] {
        targets.set(t, true);
    }
    let mut boxes = targets.clone();
    let mut agent = open[config.boxes];
    let layout = Layout {
        width: w,
        height: h,
        walls,
        targets,
    };

    // keep the visited configuration whose boxes are farthest from the targets
    let spread = |boxes: &Bitset| -> usize {
        boxes
            .ones()
            .map(|b| {
                let (br, bc) = layout.coords(b);
                layout
                    .targets
                    .ones()
                    .map(|t| {
                        let (tr, tc) = layout.coords(t);
                        br.abs_diff(tr) + bc.abs_diff(tc)
                    })
                    .min()
                    .unwrap_or(0)
            })
            .sum()
    };
    let mut best: Option<(usize, Bitset, usize)> = None;
    for _ in 0..config.reverse_steps {
        let a = Action::ALL[rng.gen_range(0..4)];
        let Some(dest) = layout.offset(agent, a) else { continue };
        if layout.is_wall(dest) || boxes.get(dest) {
            continue;
        }
        let behind = layout.offset(agent, a.opposite());
        let pull = matches!(behind, Some(b) if boxes.get(b)) && rng.gen_bool(config.pull_probability);
        if pull {
            let b = behind.expect("checked");
            boxes.set(b, false);
            boxes.set(agent, true);
        }
        agent = dest;
        if pull && !boxes.ones().any(|b| layout.is_target(b)) {
            let score = spread(&boxes);
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, boxes.clone(), agent));
            }
        }
    }
    let (_, boxes, pulled_from) = best?;
    // any cell the agent can walk to from there is an equally solvable start
    let mut reach = vec![pulled_from];
    let mut seen = Bitset::new(cells);
    seen.set(pulled_from, true);
    let mut i = 0;
    while i < reach.len() {
        for a in Action::ALL {
            if let Some(n) = layout.offset(reach[i], a) {
                if !layout.is_wall(n) && !boxes.get(n) && !seen.get(n) {
                    seen.set(n, true);
                    reach.push(n);
                }
            }
        }
        i += 1;
    }
    let agent = reach[rng.gen_range(0..reach.len())];
    let state = GridState::from_parts(Arc::new(layout), boxes, agent);
    debug_assert!(state.validate().is_ok());
    Some(state)
}
