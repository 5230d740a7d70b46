use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mctsnet::{NetConfig, PolicyKind, ReplaySampler, RngSampler, SubnetConfig};
use crate::nn::{checkpoint, grad_check, GradCheckOptions};
use crate::sokoban::{parse_level, transition, Action, LevelConfig, RewardScheme, SokobanModel};

fn tiny_net(h: usize, w: usize, policy: PolicyKind) -> MctsNet {
    let mut config = NetConfig::new(h, w, SubnetConfig::tiny());
    config.policy = policy;
    MctsNet::new(config).unwrap()
}

fn small_example() -> LabeledExample {
    let s = parse_level("####\n#@ #\n# $#\n# .#\n####").unwrap();
    LabeledExample {
        level_id: 0,
        level: s.clone(),
        step: 0,
        state: s,
        label: Action::Right,
    }
}

fn credit(estimator: Estimator, gamma: f64) -> CreditConfig {
    CreditConfig {
        gamma,
        entropy_coeff: 0.0,
        estimator,
        baseline_decay: None,
    }
}

#[test]
fn telescoping_examples() {
    let r = telescoping_rewards(&[0.9, 0.5, 0.6]);
    let expected = [-0.9, 0.4, -0.1];
    for (a, b) in r.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((r.iter().sum::<f64>() + 0.6).abs() < 1e-15);
    assert_eq!(&telescoping_rewards(&[0.7, 0.7, 0.7])[1..], &[0.0, 0.0]);
}

#[test]
fn telescoping_sum_is_negative_final_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let m = rng.gen_range(1..30);
        let losses: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..5.0)).collect();
        let total: f64 = telescoping_rewards(&losses).iter().sum();
        assert!((total + losses[m - 1]).abs() < 1e-12);
    }
}

#[test]
fn discounted_return_closed_forms() {
    assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let m = rng.gen_range(1..20);
        let losses: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..3.0)).collect();
        let rewards = telescoping_rewards(&losses);
        let prev = |i: usize| if i == 0 { 0.0 } else { losses[i - 1] };
        assert_eq!(discounted_returns(&rewards, 0.0), rewards);
        for (i, r) in discounted_returns(&rewards, 1.0).iter().enumerate() {
            assert!((r + (losses[m - 1] - prev(i))).abs() < 1e-12);
        }
    }
}

#[test]
fn dataset_examples_replay_and_round_trip() {
    let config = LevelConfig::with_size(6, 6, 1);
    let mut bytes = Vec::new();
    let stats = generate_dataset(30, &config, 50_000, &mut ChaCha8Rng::seed_from_u64(3), &mut bytes).unwrap();
    assert_eq!(stats.levels + stats.skipped, 30);
    let mut again = Vec::new();
    generate_dataset(30, &config, 50_000, &mut ChaCha8Rng::seed_from_u64(3), &mut again).unwrap();
    assert_eq!(bytes, again);

    let examples = read_dataset(&bytes[..]).unwrap();
    assert_eq!(examples.len(), stats.examples);
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), stats.examples);
    let mut by_level: std::collections::BTreeMap<usize, Vec<&LabeledExample>> = Default::default();
    for ex in &examples {
        by_level.entry(ex.level_id).or_default().push(ex);
    }
    assert_eq!(by_level.len(), stats.levels);
    for steps in by_level.values() {
        let plan_len = crate::sokoban::solve_oracle(&steps[0].level, 50_000).unwrap().len();
        assert_eq!(steps.len(), plan_len);
        // each label, followed by the later ones, solves the level
        for (i, ex) in steps.iter().enumerate() {
            assert_eq!(ex.step, i);
            let mut s = ex.state.clone();
            for later in &steps[i..] {
                assert_eq!(later.state, s);
                s = transition(&s, later.label, &RewardScheme::default()).state;
            }
            assert!(s.is_solved());
        }
    }
    assert!(read_dataset("{\"level\":\"#\",\"step\":0}".as_bytes()).is_err());
}

#[test]
fn loss_trace_shapes_and_uniform_case() {
    let net = tiny_net(5, 4, PolicyKind::Modulated);
    let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(4));
    let ex = small_example();
    let mut g = Graph::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = loss_and_traces(&net, &mut g, &ex, 6, &SokobanModel::default(), &mut RngSampler(&mut rng)).unwrap();
    assert_eq!(t.per_sim_losses.len(), 6);
    assert!(t.per_sim_losses.iter().all(|&l| l >= 0.0));
    assert_eq!(g.scalar(t.loss), t.per_sim_losses[5]);

    // frozen decisions reproduce the loss
    let mut replay = ReplaySampler::from_traces(&t.search.traces);
    let mut g2 = Graph::new(&store);
    let t2 = loss_and_traces(&net, &mut g2, &ex, 6, &SokobanModel::default(), &mut replay).unwrap();
    assert!((g2.scalar(t2.loss) - g.scalar(t.loss)).abs() < 1e-12);

    crate::nn::layers::zero_linear(&mut store, "readout.out");
    let mut g = Graph::new(&store);
    let t = loss_and_traces(&net, &mut g, &ex, 3, &SokobanModel::default(), &mut RngSampler(&mut rng)).unwrap();
    assert!((g.scalar(t.loss) - 4f64.ln()).abs() < 1e-12);
}

fn flat(store: &ParamStore, grads: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..store.len() {
        match grads.get(i) {
            Some(t) => out.extend_from_slice(t.data()),
            None => out.extend(std::iter::repeat_n(0.0, store.value(i).len())),
        }
    }
    out
}

/// `E_z[ℓ_M(z)] = Σ_z p(z) ℓ_M(z)` over every decision sequence of a
/// two-simulation search (one decision, four outcomes).
fn expected_loss(net: &MctsNet, g: &mut Graph, ex: &LabeledExample) -> Result<NodeId, NnError> {
    let mut terms = Vec::new();
    for a in Action::ALL {
        let (out, _) = net.search_from(g, &ex.state, 2, &SokobanModel::default(), &mut ReplaySampler::new([a]))?;
        let log_p = out.traces[1].log_probs[0];
        let p = g.exp(log_p);
        let picked = g.pick(out.log_probs, ex.label.index())?;
        let loss = g.scale(picked, -1.0);
        terms.push(g.mul(p, loss)?);
    }
    let joined = g.concat(&terms)?;
    Ok(g.sum(joined))
}

fn decision_probability(net: &MctsNet, store: &ParamStore, ex: &LabeledExample, a: Action) -> f64 {
    let mut g = Graph::new(store);
    let (out, _) = net
        .search_from(&mut g, &ex.state, 2, &SokobanModel::default(), &mut ReplaySampler::new([a]))
        .unwrap();
    out.traces[1].log_prob_values[0].exp()
}

fn enumeration_store(net: &MctsNet) -> ParamStore {
    let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(6));
    store.get_mut("simpol.w1").unwrap().data_mut()[0] = 0.9;
    store
}

#[test]
fn enumerated_objective_matches_finite_differences() {
    let net = tiny_net(5, 4, PolicyKind::Modulated);
    let store = enumeration_store(&net);
    let ex = small_example();
    let opts = GradCheckOptions {
        samples: 300,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&store, |g| expected_loss(&net, g, &ex), &opts, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn estimator_expectations_equal_exact_gradient() {
    let net = tiny_net(5, 4, PolicyKind::Modulated);
    let store = enumeration_store(&net);
    let ex = small_example();
    let exact = {
        let mut g = Graph::new(&store);
        let j = expected_loss(&net, &mut g, &ex).unwrap();
        flat(&store, &g.backward(j).unwrap())
    };
    let probs: Vec<f64> = Action::ALL.iter().map(|&a| decision_probability(&net, &store, &ex, a)).collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (est, gamma) in [(Estimator::Basic, 1.0), (Estimator::Anytime, 1.0), (Estimator::Anytime, 0.5), (Estimator::Anytime, 0.0)] {
        let mut mean = vec![0.0; exact.len()];
        for (a, p) in Action::ALL.iter().zip(&probs) {
            let o = example_gradient(&net, &store, &ex, 2, &SokobanModel::default(), &credit(est, gamma), 0.0, &mut ReplaySampler::new([*a]))
                .unwrap();
            for (m, v) in mean.iter_mut().zip(flat(&store, &o.grads)) {
                *m += p * v;
            }
        }
        for (i, (m, e)) in mean.iter().zip(&exact).enumerate() {
            assert!((m - e).abs() < 1e-10, "{est} gamma {gamma} coordinate {i}: {m} vs {e}");
        }
    }
    // the simulation policy receives gradient only through the score terms
    let pathwise = example_gradient(
        &net,
        &store,
        &ex,
        2,
        &SokobanModel::default(),
        &credit(Estimator::Basic, 1.0),
        0.0,
        &mut ReplaySampler::new([Action::Up]),
    )
    .unwrap();
    let w1 = store.index_of("simpol.w1").unwrap();
    assert!(pathwise.grads.get(w1).is_some());
}

#[test]
fn score_function_is_zero_mean() {
    let net = tiny_net(5, 4, PolicyKind::Modulated);
    let store = enumeration_store(&net);
    let ex = small_example();
    let n = 20_000;
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..n {
        let mut g = Graph::new(&store);
        let (out, _) = net
            .search_from(&mut g, &ex.state, 2, &SokobanModel::default(), &mut RngSampler(&mut rng))
            .unwrap();
        let v = flat(&store, &g.backward(out.traces[1].log_probs[0]).unwrap());
        if sum.is_empty() {
            sum = vec![0.0; v.len()];
            sum_sq = vec![0.0; v.len()];
        }
        for i in 0..v.len() {
            sum[i] += v[i];
            sum_sq[i] += v[i] * v[i];
        }
    }
    let nf = n as f64;
    for i in 0..sum.len() {
        let mean = sum[i] / nf;
        let var = (sum_sq[i] / nf - mean * mean).max(0.0);
        let se = (var / nf).sqrt();
        assert!(mean.abs() <= 3.0 * se + 1e-12, "coordinate {i}: mean {mean} se {se}");
    }
}

#[test]
fn supervised_direction_without_policy_learning() {
    let net = tiny_net(5, 4, PolicyKind::Uniform);
    let store = net.init_params(&mut ChaCha8Rng::seed_from_u64(9));
    let ex = small_example();
    let decisions = [Action::Down, Action::Left, Action::Down, Action::Up, Action::Right, Action::Down];
    let o = example_gradient(
        &net,
        &store,
        &ex,
        4,
        &SokobanModel::default(),
        &credit(Estimator::Anytime, 1.0),
        0.0,
        &mut ReplaySampler::new(decisions),
    )
    .unwrap();
    // with nothing learnable in the simulation policy the estimator is the
    // plain supervised gradient of the frozen-decision loss
    let mut g = Graph::new(&store);
    let t = loss_and_traces(&net, &mut g, &ex, 4, &SokobanModel::default(), &mut ReplaySampler::new(decisions)).unwrap();
    assert!(o.score_weights.iter().any(|&w| w != 0.0));
    assert_eq!(flat(&store, &g.backward(t.loss).unwrap()), flat(&store, &o.grads));

    let frozen = |g: &mut Graph| {
        loss_and_traces(&net, g, &ex, 4, &SokobanModel::default(), &mut ReplaySampler::new(decisions))
            .map(|t| t.loss)
            .map_err(|e| NnError::Usage(e.to_string()))
    };
    let opts = GradCheckOptions {
        samples: 500,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&store, frozen, &opts, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert!(report.passed && report.checked > 100, "{report:?}");
}

#[test]
fn non_finite_gradient_names_subnetwork() {
    let net = tiny_net(5, 4, PolicyKind::Modulated);
    let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(11));
    store.get_mut("readout.out.b").unwrap().data_mut()[0] = f64::NAN;
    let ex = small_example();
    let err = gradient_step(&net, &mut store, &[&ex], 2, &SokobanModel::default(), &CreditConfig::default(), 0.1, 0, false)
        .err()
        .unwrap();
    match err {
        TrainError::NonFinite { subnetworks, .. } => assert!(subnetworks.contains(&"readout".to_string())),
        other => panic!("unexpected {other}"),
    }
    assert_eq!(store.step(), 0);
}

fn memorizable_set(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut id = 0;
    while out.len() < n {
        let level = crate::sokoban::generate_level(&LevelConfig::with_size(5, 5, 1), &mut rng).unwrap();
        if let Some(examples) = label_level(&level, id, 10_000) {
            out.push(examples[0].clone());
            id += 1;
        }
    }
    out
}

#[test]
fn prior_memorizes_small_set() {
    let net = tiny_net(5, 5, PolicyKind::Modulated);
    let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(12));
    crate::nn::layers::zero_linear(&mut store, "prior.out");
    let data = memorizable_set(10, 13);
    {
        let mut g = Graph::new(&store);
        let lp = net.prior_log_probs(&mut g, &data[0].state).unwrap();
        assert!(g.value(lp).data().iter().all(|v| (v.exp() - 0.25).abs() < 1e-15));
    }
    let config = PriorConfig {
        epochs: 300,
        learning_rate: 0.05,
        entropy_coeff: 0.001,
        seed: 1,
    };
    let report = train_policy_prior(&net, &mut store, &data, &config).unwrap();
    assert_eq!(report.accuracy, 1.0, "{:?}", report.epoch_losses.last());
}

fn loop_config(steps: u64, dir: Option<std::path::PathBuf>) -> TrainConfig {
    TrainConfig {
        simulations: 2,
        max_simulations: Some(4),
        steps,
        batch_size: 2,
        learning_rate: 0.02,
        credit: CreditConfig::default(),
        workers: 1,
        seed: 99,
        log_every: 1,
        checkpoint_every: Some(3),
        eval_every: Some(2),
        checkpoint_dir: dir,
        freeze_prior: false,
    }
}

fn run_loop(store: &mut ParamStore, config: &TrainConfig, data: &[LabeledExample], header: bool) -> (Vec<u8>, TrainSummary) {
    let net = tiny_net(5, 5, PolicyKind::Modulated);
    let mut writer = if header {
        MetricsWriter::new(Vec::new(), config.max_sims()).unwrap()
    } else {
        MetricsWriter::resume(Vec::new(), config.max_sims())
    };
    let mut eval = |s: &ParamStore, step: u64| -> Result<f64, TrainError> { Ok((s.step() + step) as f64 / 1000.0) };
    let summary = train_loop(&net, store, data, &SokobanModel::default(), config, &mut writer, Some(&mut eval)).unwrap();
    (writer.into_inner(), summary)
}

#[test]
fn training_loop_is_deterministic_and_resumable() {
    let net = tiny_net(5, 5, PolicyKind::Modulated);
    let data = memorizable_set(5, 14);
    let dir = tempfile::tempdir().unwrap();

    let mut a = net.init_params(&mut ChaCha8Rng::seed_from_u64(15));
    let mut b = a.clone();
    let (csv_a, sum_a) = run_loop(&mut a, &loop_config(6, Some(dir.path().to_path_buf())), &data, true);
    let (csv_b, _) = run_loop(&mut b, &loop_config(6, None), &data, true);
    assert_eq!(csv_a, csv_b);
    assert_eq!(sum_a.last_step, 6);
    let text = String::from_utf8(csv_a.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,loss,l_1,l_2,l_3,l_4,success_ratio,grad_norm,entropy"));
    let steps: Vec<u64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, vec![1, 2, 3, 4, 5, 6]);
    assert!(text.lines().nth(2).unwrap().split(',').nth(6).is_some_and(|s| !s.is_empty()));

    // resume from the step-3 checkpoint
    let mut resumed = net.init_params(&mut ChaCha8Rng::seed_from_u64(0));
    let loaded = checkpoint::load(&dir.path().join("step-00000003.ckpt")).unwrap();
    checkpoint::restore_into(&mut resumed, &loaded).unwrap();
    assert_eq!(resumed.step(), 3);
    let (tail, _) = run_loop(&mut resumed, &loop_config(3, None), &data, false);
    let full_tail: Vec<&str> = text.lines().skip(4).collect();
    assert_eq!(String::from_utf8(tail).unwrap().lines().collect::<Vec<_>>(), full_tail);
    for i in 0..a.len() {
        assert_eq!(a.value(i).data(), resumed.value(i).data(), "{}", a.name(i));
    }
    let last = checkpoint::load(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!(last.step(), 6);
}

#[test]
fn frozen_prior_keeps_distilled_weights() {
    let data = memorizable_set(4, 20);
    let net = tiny_net(5, 5, PolicyKind::Modulated);
    let init = net.init_params(&mut ChaCha8Rng::seed_from_u64(21));
    let prior_moved = |store: &ParamStore| {
        (0..store.len())
            .filter(|&i| store.name(i).starts_with("prior."))
            .any(|i| store.value(i).data() != init.value(i).data())
    };
    let others_moved = |store: &ParamStore| {
        (0..store.len())
            .filter(|&i| !store.name(i).starts_with("prior."))
            .any(|i| store.value(i).data() != init.value(i).data())
    };
    let mut config = loop_config(4, None);
    let mut trained = init.clone();
    run_loop(&mut trained, &config, &data, true);
    assert!(prior_moved(&trained) && others_moved(&trained));
    config.freeze_prior = true;
    let mut frozen = init.clone();
    run_loop(&mut frozen, &config, &data, true);
    assert!(!prior_moved(&frozen) && others_moved(&frozen));
}

#[test]
fn worker_count_does_not_change_results() {
    let net = tiny_net(5, 5, PolicyKind::Modulated);
    let data = memorizable_set(4, 16);
    let mut one = net.init_params(&mut ChaCha8Rng::seed_from_u64(17));
    let mut three = one.clone();
    let mut config = loop_config(3, None);
    let (csv_one, _) = run_loop(&mut one, &config, &data, true);
    config.workers = 3;
    config.batch_size = 4;
    let mut config_one = config.clone();
    config_one.workers = 1;
    let mut one_b = net.init_params(&mut ChaCha8Rng::seed_from_u64(17));
    let (csv_a, _) = run_loop(&mut one_b, &config_one, &data, true);
    let (csv_b, _) = run_loop(&mut three, &config, &data, true);
    assert_eq!(csv_a, csv_b);
    assert!(!csv_one.is_empty());
}

#[test]
fn entropy_bonus_raises_policy_entropy() {
    let net = tiny_net(5, 5, PolicyKind::Unstructured);
    let data = memorizable_set(10, 18);
    let init = net.init_params(&mut ChaCha8Rng::seed_from_u64(19));
    let mut entropies = Vec::new();
    for coeff in [0.0, 0.2, 1.0] {
        let mut store = init.clone();
        let config = TrainConfig {
            simulations: 4,
            max_simulations: None,
            steps: 400,
            batch_size: 1,
            learning_rate: 0.05,
            credit: CreditConfig {
                entropy_coeff: coeff,
                ..CreditConfig::default()
            },
            workers: 1,
            seed: 3,
            log_every: 1,
            checkpoint_every: None,
            eval_every: None,
            checkpoint_dir: None,
            freeze_prior: true,
        };
        let mut writer = MetricsWriter::new(Vec::new(), 4).unwrap();
        train_loop(&net, &mut store, &data, &SokobanModel::default(), &config, &mut writer, None).unwrap();
        let text = String::from_utf8(writer.into_inner()).unwrap();
        let tail: Vec<f64> = text
            .lines()
            .skip(301)
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .collect();
        entropies.push(tail.iter().sum::<f64>() / tail.len() as f64);
    }
    assert!(entropies[0] <= entropies[1] && entropies[1] <= entropies[2], "{entropies:?}");
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::default();
    assert!(c.validate().is_ok());
    c.credit.gamma = 1.5;
    assert!(c.validate().is_err());
    let c = TrainConfig {
        max_simulations: Some(1),
        simulations: 3,
        ..TrainConfig::default()
    };
    assert!(c.validate().is_err());
    assert!("anytime".parse::<Estimator>().is_ok());
    assert!("other".parse::<Estimator>().is_err());
}
