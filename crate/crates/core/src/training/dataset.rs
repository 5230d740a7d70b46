use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::sokoban::{generate_level, parse_level, solve_oracle, to_xsb, transition, Action, GridState, LevelConfig, RewardScheme};

/// A state and the oracle's next action there.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub level_id: usize,
    pub level: GridState,
    pub step: usize,
    pub state: GridState,
    pub label: Action,
}

#[derive(Serialize, Deserialize)]
struct Record {
    level: String,
    step: usize,
    state: String,
    label: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetStats {
    pub levels: usize,
    pub examples: usize,
    /// Levels the oracle could not solve within its node budget.
    pub skipped: usize,
}

impl DatasetStats {
    pub fn skip_rate(&self) -> f64 {
        let attempted = self.levels + self.skipped;
        if attempted == 0 {
            0.0
        } else {
            self.skipped as f64 / attempted as f64
        }
    }

    /// More than half the generated levels were unsolvable within budget.
    pub fn needs_attention(&self) -> bool {
        self.skip_rate() > 0.5
    }
}

/// Oracle plan unrolled into one example per step.
pub fn label_level(level: &GridState, level_id: usize, max_nodes: usize) -> Option<Vec<LabeledExample>> {
    let plan = solve_oracle(level, max_nodes)?;
    let mut state = level.clone();
    let mut out = Vec::with_capacity(plan.len());
    for (step, &a) in plan.iter().enumerate() {
        out.push(LabeledExample {
            level_id,
            level: level.clone(),
            step,
            state: state.clone(),
            label: a,
        });
        state = transition(&state, a, &RewardScheme::default()).state;
    }
    Some(out)
}

/// Generates `n_levels` levels, labels every step of each oracle plan and
/// writes the examples as JSON lines.
pub fn generate_dataset<R: Rng, W: Write>(
    n_levels: usize,
    config: &LevelConfig,
    max_nodes: usize,
    rng: &mut R,
    out: W,
) -> Result<DatasetStats, TrainError> {
    let mut out = BufWriter::new(out);
    let mut stats = DatasetStats::default();
    for _ in 0..n_levels {
        let level = generate_level(config, rng)?;
        match label_level(&level, stats.levels, max_nodes) {
            Some(examples) => {
                for ex in &examples {
                    write_example(&mut out, ex)?;
                }
                stats.levels += 1;
                stats.examples += examples.len();
            }
            None => stats.skipped += 1,
        }
    }
    out.flush()?;
    Ok(stats)
}

pub fn write_example<W: Write>(out: &mut W, ex: &LabeledExample) -> Result<(), TrainError> {
    let record = Record {
        level: to_xsb(&ex.level),
        step: ex.step,
        state: to_xsb(&ex.state),
        label: ex.label.index() as u8,
    };
    serde_json::to_writer(&mut *out, &record).map_err(|e| TrainError::Dataset(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Parses a JSON-lines dataset. Level ids are assigned in order of first
/// appearance of each distinct level.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<LabeledExample>, TrainError> {
    let mut out = Vec::new();
    let mut last_level: Option<(String, usize)> = None;
    let mut next_id = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: String| TrainError::Dataset(format!("line {}: {what}", i + 1));
        let record: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let label = Action::from_index(usize::from(record.label)).ok_or_else(|| bad(format!("label {} out of range", record.label)))?;
        let level_id = match &last_level {
            Some((text, id)) if *text == record.level => *id,
            _ => {
                next_id += 1;
                last_level = Some((record.level.clone(), next_id - 1));
                next_id - 1
            }
        };
        let level = parse_level(&record.level).map_err(|e| bad(e.to_string()))?;
        let state = parse_level(&record.state).map_err(|e| bad(e.to_string()))?;
        if (state.width(), state.height()) != (level.width(), level.height()) {
            return Err(bad("state and level sizes differ".into()));
        }
        out.push(LabeledExample {
            level_id,
            level,
            step: record.step,
            state,
            label,
        });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<LabeledExample>, TrainError> {
    let file = File::open(path).map_err(|e| TrainError::Dataset(format!("{}: {e}", path.display())))?;
    read_dataset(BufReader::new(file))
}
