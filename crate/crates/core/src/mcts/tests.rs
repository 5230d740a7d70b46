use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn stats(visits: u32, action_visits: [u32; 4], q: [f64; 4]) -> ScalarStats {
    ScalarStats { visits, action_visits, q }
}

fn brute_force_argmax(score: impl Fn(usize) -> f64) -> usize {
    let scores: Vec<f64> = (0..4).map(score).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().position(|&s| s == best).unwrap()
}

fn uct_oracle(s: &ScalarStats, c: f64) -> usize {
    brute_force_argmax(|a| {
        if s.action_visits[a] == 0 {
            f64::INFINITY
        } else {
            s.q[a] + c * ((s.visits as f64).ln() / s.action_visits[a] as f64).sqrt()
        }
    })
}

fn random_stats(rng: &mut impl Rng, allow_zero: bool) -> ScalarStats {
    let lo = if allow_zero { 0 } else { 1 };
    let action_visits = std::array::from_fn(|_| rng.gen_range(lo..20));
    let q = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
    stats(1 + action_visits.iter().sum::<u32>(), action_visits, q)
}

#[test]
fn uct_untried_first_then_least_visited() {
    assert_eq!(uct_select(&stats(1, [0; 4], [0.0; 4]), 1.0), Action::Up);
    assert_eq!(uct_select(&stats(3, [1, 0, 1, 0], [9.0; 4]), 1.0), Action::Down);
    let n = 7.0f64.exp().round() as u32;
    let s = stats(n, [4, 1, 1, 1], [0.5; 4]);
    assert_eq!(uct_select(&s, 1.0), Action::Down);
}

#[test]
fn uct_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..2000 {
        let s = random_stats(&mut rng, true);
        let c = rng.gen_range(0.0..3.0);
        assert_eq!(uct_select(&s, c).index(), uct_oracle(&s, c));
    }
}

#[test]
fn puct_cases() {
    let prior = [0.1, 0.2, 0.6, 0.1];
    assert_eq!(puct_select(&stats(1, [0; 4], [0.0; 4]), &prior, 1.0).unwrap(), Action::Left);
    // uniform prior: exploration falls to the least visited action
    let s = stats(10, [3, 2, 1, 3], [0.0; 4]);
    assert_eq!(puct_select(&s, &[0.25; 4], 1.0).unwrap(), Action::Left);
    assert!(puct_select(&s, &[0.5, 0.5, 0.5, 0.0], 1.0).is_err());
    assert!(puct_select(&s, &[1.5, -0.5, 0.0, 0.0], 1.0).is_err());
    assert!(puct_select(&s, &[f64::NAN, 0.5, 0.5, 0.0], 1.0).is_err());
}

#[test]
fn puct_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let s = random_stats(&mut rng, true);
        let raw: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.01..1.0));
        let total: f64 = raw.iter().sum();
        let prior = raw.map(|p| p / total);
        let c = rng.gen_range(0.0..3.0);
        let expected = brute_force_argmax(|a| {
            s.q[a] + c * prior[a] * (s.visits as f64).sqrt() / (1.0 + s.action_visits[a] as f64)
        });
        assert_eq!(puct_select(&s, &prior, c).unwrap().index(), expected);
    }
}

fn uct(c: f64) -> Selection<'static, ToyState> {
    Selection::Uct { c }
}

fn config(simulations: usize, gamma: f64) -> SearchConfig {
    SearchConfig { simulations, gamma }
}

#[test]
fn single_simulation_falls_back_to_lookahead() {
    let model = ToyTree::from_rewards(vec![vec![0.0, 0.3, 0.2, 0.0], vec![0.0; 16]]);
    // value favours the child reached by Right
    let value = |s: &ToyState| if *s == (1, 3) { 1.0 } else { 0.0 };
    let (a, tree) = run_search(model.root(), &model, &value, &config(1, 0.5), &uct(1.0)).unwrap();
    assert_eq!(tree.len(), 1);
    assert_eq!(tree.root_node().stats.visits, 1);
    assert_eq!(tree.root_node().stats.action_visits, [0; 4]);
    assert_eq!(a, Action::Right);
    let (a, _) = run_search(model.root(), &model, &|_: &ToyState| 0.0, &config(1, 0.5), &uct(1.0)).unwrap();
    assert_eq!(a, Action::Down);
}

#[test]
fn zero_simulations_is_a_usage_error() {
    let model = ToyTree::from_rewards(vec![vec![0.0; 4]]);
    assert!(run_search(model.root(), &model, &|_: &ToyState| 0.0, &config(0, 1.0), &uct(1.0)).is_err());
}

#[test]
fn two_armed_bandit_picks_rewarding_arm() {
    let model = ToyTree::from_rewards(vec![vec![0.0, 1.0, 0.0, 0.0]]);
    let (a, tree) = run_search(model.root(), &model, &|_: &ToyState| 0.0, &config(100, 1.0), &uct(1.0)).unwrap();
    assert_eq!(a, Action::Down);
    assert_eq!(tree.root_node().stats.q, [0.0, 1.0, 0.0, 0.0]);
    assert_eq!(tree.root_node().stats.visits, 100);
}

#[test]
fn first_backup_sets_q_to_return() {
    let model = ToyTree::from_rewards(vec![vec![0.7, 0.0, 0.0, 0.0], vec![0.0; 16]]);
    let value = |_: &ToyState| 2.0;
    let mut tree = BaselineTree::new(model.root(), false);
    simulate(&mut tree, &model, &value, 0.9, &uct(1.0)).unwrap();
    let path = simulate(&mut tree, &model, &value, 0.9, &uct(1.0)).unwrap();
    assert_eq!(path.steps, vec![(0, Action::Up)]);
    assert!((tree.root_node().stats.q[0] - (0.7 + 0.9 * 2.0)).abs() < 1e-15);
}

#[test]
fn visits_and_means_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..40 {
        let model = ToyTree::random(3, &mut rng);
        let noise: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let value = |s: &ToyState| noise[(s.0 * 97 + s.1) % noise.len()];
        let gamma = [1.0, 0.9, 0.0][trial % 3];
        let mut tree = BaselineTree::new(model.root(), false);
        for _ in 0..150 {
            let before: Vec<u32> = tree.nodes().iter().map(|n| n.stats.visits).collect();
            let path = simulate(&mut tree, &model, &value, gamma, &uct(1.0)).unwrap();
            for (id, n) in tree.nodes().iter().enumerate() {
                let old = before.get(id).copied().unwrap_or(0);
                let on_path = path.steps.iter().any(|&(p, _)| p == id) || path.leaf == id;
                assert_eq!(n.stats.visits, old + u32::from(on_path), "node {id}");
            }
            for n in tree.nodes() {
                if !n.terminal && n.stats.visits > 0 {
                    assert_eq!(n.stats.visits, 1 + n.stats.action_visits.iter().sum::<u32>());
                }
                if n.terminal {
                    assert!(n.children.iter().all(Option::is_none));
                }
            }
        }
        // replay the backup log
        let mut sums = vec![[0.0f64; 4]; tree.len()];
        let mut counts = vec![[0u32; 4]; tree.len()];
        for r in tree.backup_log() {
            sums[r.node][r.action.index()] += r.ret;
            counts[r.node][r.action.index()] += 1;
        }
        for (id, n) in tree.nodes().iter().enumerate() {
            for a in 0..4 {
                assert_eq!(n.stats.action_visits[a], counts[id][a]);
                if counts[id][a] > 0 {
                    let mean = sums[id][a] / counts[id][a] as f64;
                    assert!((n.stats.q[a] - mean).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn terminal_leaves_are_valued_zero() {
    let model = ToyTree::from_rewards(vec![vec![0.5, 0.0, 0.0, 0.0]]);
    let value = |_: &ToyState| 100.0;
    let (_, tree) = run_search(model.root(), &model, &value, &config(20, 1.0), &uct(1.0)).unwrap();
    assert!(tree.backup_log().iter().all(|r| r.ret == model.reward(model.root(), r.action)));
    assert_eq!(tree.len(), 5);
}

#[test]
fn greedy_with_exact_values_is_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let model = ToyTree::random(1, &mut rng);
        let gamma = 0.95;
        let value = |s: &ToyState| model.value(*s, gamma);
        for m in [8, 9, 16, 33] {
            let (a, _) = run_search(model.root(), &model, &value, &config(m, gamma), &uct(0.0)).unwrap();
            assert_eq!(a, model.optimal_action(gamma));
        }
    }
}

#[test]
fn uct_finds_optimum_on_depth_two_trees() {
    let mut hits = 0;
    for seed in 0..200 {
        let model = ToyTree::random(2, &mut ChaCha8Rng::seed_from_u64(seed));
        let (a, _) = run_search(model.root(), &model, &|_: &ToyState| 0.0, &config(512, 1.0), &uct(1.25)).unwrap();
        hits += usize::from(a == model.optimal_action(1.0));
    }
    assert!(hits >= 190, "{hits}/200");
}

#[test]
fn puct_search_uses_prior() {
    let model = ToyTree::from_rewards(vec![vec![0.0; 4], vec![0.0; 16]]);
    let prior = |_: &ToyState| [0.05, 0.05, 0.85, 0.05];
    let rule = Selection::Puct { c_puct: 1.0, prior: &prior };
    let (a, tree) = run_search(model.root(), &model, &|_: &ToyState| 0.0, &config(30, 1.0), &rule).unwrap();
    assert_eq!(a, Action::Left);
    assert!(tree.root_node().prior.is_some());
    let bad = |_: &ToyState| [0.5; 4];
    let rule = Selection::Puct { c_puct: 1.0, prior: &bad };
    assert!(run_search(model.root(), &model, &|_: &ToyState| 0.0, &config(3, 1.0), &rule).is_err());
}

fn count_reachable<S: Clone>(tree: &BaselineTree<S>, id: usize) -> usize {
    1 + tree.node(id).children.iter().flatten().map(|&c| count_reachable(tree, c)).sum::<usize>()
}

#[test]
fn reuse_keeps_subtree_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = ToyTree::random(3, &mut rng);
    let (a, tree) = run_search(model.root(), &model, &|_: &ToyState| 0.0, &config(200, 1.0), &uct(1.0)).unwrap();
    let child = tree.root_node().children[a.index()].unwrap();
    let expected_len = count_reachable(&tree, child);
    let old = tree.node(child).clone();
    let reused = tree.reuse_subtree(a, &model);
    assert_eq!(reused.len(), expected_len);
    let root = reused.root_node();
    assert_eq!(root.state, old.state);
    assert_eq!(root.stats, old.stats);
    assert_eq!(root.rewards, old.rewards);
    for (new_c, old_c) in root.children.iter().zip(old.children.iter()) {
        assert_eq!(new_c.is_some(), old_c.is_some());
    }
    assert!(reused.backup_log().is_empty());
}

#[test]
fn reuse_of_unexpanded_action_gives_fresh_tree() {
    let model = ToyTree::from_rewards(vec![vec![0.0; 4], vec![0.0; 16]]);
    let (_, tree) = run_search(model.root(), &model, &|_: &ToyState| 0.0, &config(2, 1.0), &uct(1.0)).unwrap();
    assert!(tree.root_node().children[3].is_none());
    let mut fresh = tree.reuse_subtree(Action::Right, &model);
    assert_eq!(fresh.len(), 1);
    assert_eq!(fresh.root_node().state, (1, 3));
    assert_eq!(fresh.root_node().stats.visits, 0);
    simulate(&mut fresh, &model, &|_: &ToyState| 0.0, 1.0, &uct(1.0)).unwrap();
    assert_eq!(fresh.root_node().stats.visits, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn search_counts_add_up(seed in any::<u64>(), sims in 1usize..120, c in 0.0f64..3.0) {
        let model = ToyTree::random(3, &mut ChaCha8Rng::seed_from_u64(seed));
        let (_, tree) = run_search(model.root(), &model, &|s: &ToyState| s.1 as f64 * 0.01, &config(sims, 0.9), &uct(c)).unwrap();
        prop_assert_eq!(tree.root_node().stats.visits as usize, sims);
        prop_assert_eq!(tree.backup_log().len(), tree.nodes().iter().map(|n| n.stats.action_visits.iter().sum::<u32>() as usize).sum::<usize>());
        for n in tree.nodes() {
            prop_assert!(n.stats.q.iter().all(|q| q.is_finite()));
        }
    }
}
