use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::HarnessError;
use crate::mctsnet::{BackupKind, MctsNet, MemoryTree, PolicyKind, ReplaySampler, RngSampler};
use crate::nn::{grad_check, GradCheckOptions, GradCheckReport, Graph, NnError, NodeId, ParamStore, Tensor};
use crate::sokoban::{generate_level, Action, GridState, SokobanModel};
use crate::training::{loss_and_traces, mix, LabeledExample};

fn random_vector(len: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::vector((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Scalar `Σ x_i w_i` with fixed random `w`.
fn probe(g: &mut Graph, x: NodeId, seed: u64) -> Result<NodeId, NnError> {
    let w = g.constant(random_vector(g.value(x).len(), seed));
    let prod = g.mul(x, w)?;
    Ok(g.sum(prod))
}

fn network(config: &RunConfig, backup: BackupKind, policy: PolicyKind) -> Result<(MctsNet, ParamStore), HarnessError> {
    let mut c = config.net_config();
    c.backup = backup;
    c.policy = policy;
    let net = MctsNet::new(c)?;
    let mut store = net.init_params(&mut ChaCha8Rng::seed_from_u64(config.seed));
    if let Some(w1) = store.get_mut("simpol.w1") {
        // away from the initial zero so the modulation network matters
        w1.data_mut()[0] = 0.8;
    }
    Ok((net, store))
}

fn check(
    store: &ParamStore,
    prefixes: &[&str],
    seed: u64,
    build: impl Fn(&mut Graph) -> Result<NodeId, NnError>,
) -> Result<GradCheckReport, HarnessError> {
    let opts = GradCheckOptions {
        prefixes: prefixes.iter().map(|p| p.to_string()).collect(),
        ..GradCheckOptions::default()
    };
    Ok(grad_check(store, build, &opts, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

/// Central-difference checks of every subnetwork and of the full search loss
/// with frozen simulation decisions, at the configured board and network size.
pub fn gradient_checks(config: &RunConfig) -> Result<Vec<(String, GradCheckReport)>, HarnessError> {
    let seed = config.seed;
    let level: GridState = generate_level(&config.level_config(), &mut ChaCha8Rng::seed_from_u64(mix(seed, 0, 0x9c)))?;
    let model = SokobanModel::default();
    let mut out = Vec::new();

    let (net, store) = network(config, BackupKind::Gated, PolicyKind::Modulated)?;
    out.push((
        "embed".to_string(),
        check(&store, &["embed."], seed, |g| {
            let h = net.embed(g, &level)?;
            probe(g, h, 1)
        })?,
    ));
    for backup in [BackupKind::Gated, BackupKind::Mlp] {
        let (net, store) = network(config, backup, PolicyKind::Modulated)?;
        let width = net.memory_width();
        out.push((
            format!("backup-{backup}"),
            check(&store, &["backup."], seed, |g| {
                let p = g.constant(random_vector(width, 2));
                let c = g.constant(random_vector(width, 3));
                let h = net.backup_step(g, p, c, -0.1, Action::Left)?;
                probe(g, h, 4)
            })?,
        ));
    }
    for policy in [PolicyKind::Modulated, PolicyKind::Unstructured] {
        let (net, store) = network(config, BackupKind::Gated, policy)?;
        let mut tree = MemoryTree::new(level.clone(), false);
        {
            let mut g = Graph::new(&store);
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1, 0x9c));
            net.run_search(&mut g, &mut tree, config.simulations.max(2), &model, &mut RngSampler(&mut rng))?;
        }
        out.push((
            format!("policy-{policy}"),
            check(&store, &["simpol.", "prior."], seed, |g| {
                let logits = net.sim_policy_logits(g, &tree, tree.root())?;
                let lp = g.log_softmax(logits);
                probe(g, lp, 5)
            })?,
        ));
    }
    let width = net.memory_width();
    out.push((
        "readout".to_string(),
        check(&store, &["readout."], seed, |g| {
            let h = g.constant(random_vector(width, 6));
            let lp = net.readout(g, h)?;
            probe(g, lp, 7)
        })?,
    ));
    out.push((
        "prior".to_string(),
        check(&store, &["prior."], seed, |g| {
            let lp = net.prior_log_probs(g, &level)?;
            probe(g, lp, 8)
        })?,
    ));

    let example = LabeledExample {
        level_id: 0,
        level: level.clone(),
        step: 0,
        state: level.clone(),
        label: Action::Down,
    };
    for backup in [BackupKind::Gated, BackupKind::Mlp] {
        let (net, store) = network(config, backup, PolicyKind::Modulated)?;
        let decisions = {
            let mut g = Graph::new(&store);
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 2, 0x9c));
            let t = loss_and_traces(&net, &mut g, &example, config.simulations, &model, &mut RngSampler(&mut rng))
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            t.search.traces
        };
        out.push((
            format!("search-loss-{backup}"),
            check(&store, &[], seed, |g| {
                let mut replay = ReplaySampler::from_traces(&decisions);
                loss_and_traces(&net, g, &example, config.simulations, &model, &mut replay)
                    .map(|t| t.loss)
                    .map_err(|e| NnError::Usage(e.to_string()))
            })?,
        ));
    }
    Ok(out)
}
