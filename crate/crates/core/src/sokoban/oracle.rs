use std::cmp::Reverse;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use super::{Action, Bitset, GridState, Layout, RewardScheme};

/// True if some box off-target sits in a corner formed by two walls.
pub fn deadlocked(s: &GridState) -> bool {
    let l = s.layout();
    let wall = |c: usize, a: Action| l.offset(c, a).is_none_or(|n| l.is_wall(n));
    s.boxes().ones().any(|b| {
        !l.is_target(b)
            && (wall(b, Action::Up) || wall(b, Action::Down))
            && (wall(b, Action::Left) || wall(b, Action::Right))
    })
}

fn heuristic(layout: &Layout, targets: &[(usize, usize)], boxes: &Bitset) -> usize {
    boxes
        .ones()
        .map(|b| {
            let (r, c) = layout.coords(b);
            targets
                .iter()
                .map(|&(tr, tc)| r.abs_diff(tr) + c.abs_diff(tc))
                .min()
                .unwrap_or(0)
        })
        .sum()
}

struct SearchNode {
    boxes: Bitset,
    agent: usize,
    parent: usize,
    action: Option<Action>,
}

/// Shortest action sequence reaching the solved state, found by A* over
/// (boxes, agent) with the sum of box-to-nearest-target Manhattan distances as
/// heuristic and corner-deadlock pruning. Returns `None` if the search space is
/// exhausted or more than `max_nodes` nodes are expanded.
pub fn solve_oracle(s: &GridState, max_nodes: usize) -> Option<Vec<Action>> {
    if s.is_solved() {
        return Some(Vec::new());
    }
    let layout: &Arc<Layout> = s.layout_arc();
    let targets: Vec<(usize, usize)> = layout.targets().ones().map(|t| layout.coords(t)).collect();
    let rewards = RewardScheme::default();

    let mut nodes = vec![SearchNode {
        boxes: s.boxes().clone(),
        agent: s.agent_cell(),
        parent: usize::MAX,
        action: None,
    }];
    let mut best_g: HashMap<(Bitset, usize), usize> = HashMap::new();
    best_g.insert((s.boxes().clone(), s.agent_cell()), 0);
    // (f, -g, insertion order) gives a deterministic expansion order that prefers deeper nodes.
    let mut open = BinaryHeap::new();
    let h0 = heuristic(layout, &targets, s.boxes());
    open.push(Reverse((h0, Reverse(0usize), 0usize)));
    let mut expanded = 0;

    while let Some(Reverse((_, Reverse(g), id))) = open.pop() {
        if best_g
            .get(&(nodes[id].boxes.clone(), nodes[id].agent))
            .is_some_and(|&b| b < g)
        {
            continue;
        }
        expanded += 1;
        if expanded > max_nodes {
            return None;
        }
        let current = GridState::from_parts(Arc::clone(layout), nodes[id].boxes.clone(), nodes[id].agent);
        for a in Action::ALL {
            let step = super::transition(&current, a, &rewards);
            let next = step.state;
            if next.agent_cell() == current.agent_cell() {
                continue;
            }
            if step.terminal {
                let mut plan = vec![a];
                let mut cursor = id;
                while let Some(prev) = nodes[cursor].action {
                    plan.push(prev);
                    cursor = nodes[cursor].parent;
                }
                plan.reverse();
                return Some(plan);
            }
            if next.boxes() != current.boxes() && deadlocked(&next) {
                continue;
            }
            let key = (next.boxes().clone(), next.agent_cell());
            match best_g.entry(key) {
                Entry::Occupied(mut e) => {
                    if *e.get() <= g + 1 {
                        continue;
                    }
                    e.insert(g + 1);
                }
                Entry::Vacant(e) => {
                    e.insert(g + 1);
                }
            }
            let f = g + 1 + heuristic(layout, &targets, next.boxes());
            nodes.push(SearchNode {
                boxes: next.boxes().clone(),
                agent: next.agent_cell(),
                parent: id,
                action: Some(a),
            });
            let nid = nodes.len() - 1;
            open.push(Reverse((f, Reverse(g + 1), nid)));
        }
    }
    None
}
