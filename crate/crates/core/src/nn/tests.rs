use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{init_conv, init_linear, residual_block, ConvTower};
use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(x: &[f64], w: &[f64], b: &[f64], rows: usize, i: usize, o: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * o];
    for r in 0..rows {
        for c in 0..o {
            let mut acc = b[c];
            for k in 0..i {
                acc += x[r * i + k] * w[k * o + c];
            }
            out[r * o + c] = acc;
        }
    }
    out
}

#[allow(clippy::needless_range_loop)]
fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, ks) = (k.shape()[0], k.shape()[2]);
    let pad = (ks / 2) as isize;
    let mut out = vec![0.0; n * co * h * w];
    for bn in 0..n {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xi = ((bn * ci + c) * h + sy as usize) * w + sx as usize;
                                let ki = ((o * ci + c) * ks + ky) * ks + kx;
                                acc += x.data()[xi] * k.data()[ki];
                            }
                        }
                    }
                    out[((bn * co + o) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn linear_identity_and_zero() {
    let mut store = ParamStore::new();
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    store.insert("id.W", eye);
    store.insert("id.b", Tensor::zeros(&[3]));
    store.insert("z.W", Tensor::zeros(&[3, 2]));
    store.insert("z.b", Tensor::vector(vec![5.0, 5.0]));
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let y = g.linear(x, "id").unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    let z = g.linear(x, "z").unwrap();
    assert_eq!(g.value(z).data(), &[5.0, 5.0]);
}

#[test]
fn linear_matches_naive_oracle() {
    let mut r = rng(11);
    for rows in [1, 3] {
        let mut store = ParamStore::new();
        store.insert("l.W", random_tensor(&[4, 3], &mut r));
        store.insert("l.b", random_tensor(&[3], &mut r));
        let x = random_tensor(&[rows, 4], &mut r);
        let expected = naive_matmul(
            x.data(),
            store.get("l.W").unwrap().data(),
            store.get("l.b").unwrap().data(),
            rows,
            4,
            3,
        );
        let mut g = Graph::new(&store);
        let xi = g.constant(x);
        let y = g.linear(xi, "l").unwrap();
        assert_eq!(g.value(y).shape(), &[rows, 3]);
        for (a, b) in g.value(y).data().iter().zip(&expected) {
            assert!(rel_close(*a, *b, 1e-12), "{a} vs {b}");
        }
    }
}

#[test]
fn linear_shape_error_names_both_shapes() {
    let mut store = ParamStore::new();
    store.insert("l.W", Tensor::zeros(&[4, 3]));
    store.insert("l.b", Tensor::zeros(&[3]));
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros(&[5]));
    let err = g.linear(x, "l").unwrap_err().to_string();
    assert!(err.contains("[5]") && err.contains("[4, 3]"), "{err}");
    assert!(matches!(g.linear(x, "missing"), Err(NnError::MissingParam(_))));
}

#[test]
fn conv_identity_and_constant() {
    let mut r = rng(2);
    let c = 3;
    let mut store = ParamStore::new();
    let mut k = Tensor::zeros(&[c, c, 3, 3]);
    for i in 0..c {
        k.data_mut()[((i * c + i) * 3 + 1) * 3 + 1] = 1.0;
    }
    store.insert("id.K", k);
    store.insert("id.b", Tensor::zeros(&[c]));
    store.insert("cst.K", Tensor::zeros(&[2, c, 3, 3]));
    store.insert("cst.b", Tensor::vector(vec![0.75, 0.75]));
    let x = random_tensor(&[1, c, 4, 5], &mut r);
    let mut g = Graph::new(&store);
    let xi = g.constant(x.clone());
    let y = g.conv3x3(xi, "id").unwrap();
    assert_eq!(g.value(y).data(), x.data());
    let z = g.conv3x3(xi, "cst").unwrap();
    assert!(g.value(z).data().iter().all(|&v| v == 0.75));
    assert_eq!(g.value(z).shape(), &[1, 2, 4, 5]);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut r = rng(5);
    let mut store = ParamStore::new();
    store.insert("c.K", random_tensor(&[3, 2, 3, 3], &mut r));
    store.insert("c.b", random_tensor(&[3], &mut r));
    store.insert("p.K", random_tensor(&[2, 3, 1, 1], &mut r));
    store.insert("p.b", random_tensor(&[2], &mut r));
    let x = random_tensor(&[1, 2, 4, 4], &mut r);
    let expected = naive_conv(&x, store.get("c.K").unwrap(), store.get("c.b").unwrap());
    let mut g = Graph::new(&store);
    let xi = g.constant(x);
    let y = g.conv3x3(xi, "c").unwrap();
    for (a, b) in g.value(y).data().iter().zip(&expected) {
        assert!(rel_close(*a, *b, 1e-12), "{a} vs {b}");
    }
    let yv = g.value(y).clone();
    let expected = naive_conv(&yv, store.get("p.K").unwrap(), store.get("p.b").unwrap());
    let z = g.conv_named(y, "p").unwrap();
    for (a, b) in g.value(z).data().iter().zip(&expected) {
        assert!(rel_close(*a, *b, 1e-12), "{a} vs {b}");
    }
}

#[test]
fn conv_channel_mismatch() {
    let mut store = ParamStore::new();
    store.insert("c.K", Tensor::zeros(&[3, 2, 3, 3]));
    store.insert("c.b", Tensor::zeros(&[3]));
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros(&[1, 4, 3, 3]));
    assert!(matches!(g.conv3x3(x, "c"), Err(NnError::Shape(_))));
}

#[test]
fn pointwise_values() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    assert_eq!(g.scalar(s), 0.5);
    assert!("softplus".parse::<Pointwise>().is_err());
    assert_eq!("tanh".parse::<Pointwise>().unwrap(), Pointwise::Tanh);

    let mut r = rng(9);
    let xs: Vec<f64> = (0..100).map(|_| r.gen_range(-5.0..5.0)).collect();
    let x = g.constant(Tensor::vector(xs.clone()));
    let t = g.tanh(x);
    let s = g.sigmoid(x);
    for (i, &v) in xs.iter().enumerate() {
        let def = (v.exp() - (-v).exp()) / (v.exp() + (-v).exp());
        assert!((g.value(t).data()[i] - def).abs() <= 1e-12);
        let sv = g.value(s).data()[i];
        assert!(sv > 0.0 && sv < 1.0);
    }
}

#[test]
fn softmax_xent_cases() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let u = g.constant(Tensor::new(vec![1, 4], vec![0.3; 4]).unwrap());
    let (probs, loss) = g.softmax_xent(u, 2).unwrap();
    assert!((g.scalar(loss) - 4f64.ln()).abs() < 1e-12);
    assert!((probs.sum() - 1.0).abs() < 1e-9);
    let s = g.constant(Tensor::vector(vec![100.0, 0.0, 0.0, 0.0]));
    let (_, loss) = g.softmax_xent(s, 0).unwrap();
    assert!(g.scalar(loss) < 1e-10 && g.scalar(loss) >= 0.0);
    assert!(matches!(g.softmax_xent(s, 4), Err(NnError::Usage(_))));
}

#[test]
fn softmax_xent_gradient_is_probs_minus_onehot() {
    let mut r = rng(4);
    let mut store = ParamStore::new();
    store.insert("logits", random_tensor(&[5], &mut r));
    let label = 3;
    let (probs, grads) = {
        let mut g = Graph::new(&store);
        let l = g.param("logits").unwrap();
        let (probs, loss) = g.softmax_xent(l, label).unwrap();
        (probs, g.backward(loss).unwrap())
    };
    let analytic = grads.get(0).unwrap().data().to_vec();
    for j in 0..5 {
        let expected = probs.data()[j] - if j == label { 1.0 } else { 0.0 };
        assert!((analytic[j] - expected).abs() < 1e-14);
        // central differences
        let h = 1e-5;
        let f = |delta: f64| {
            let mut s = store.clone();
            s.get_mut("logits").unwrap().data_mut()[j] += delta;
            let mut g = Graph::new(&s);
            let l = g.param("logits").unwrap();
            let (_, loss) = g.softmax_xent(l, label).unwrap();
            g.scalar(loss)
        };
        let numeric = (f(h) - f(-h)) / (2.0 * h);
        assert!(relative_error(analytic[j], numeric, 1e-8) < 1e-7);
    }
}

#[test]
fn backward_linear_outer_product() {
    let mut r = rng(8);
    let mut store = ParamStore::new();
    init_linear(&mut store, "l", 3, 2, &mut r);
    let x = vec![0.5, -1.0, 2.0];
    let grads = {
        let mut g = Graph::new(&store);
        let xi = g.constant(Tensor::vector(x.clone()));
        let y = g.linear(xi, "l").unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap()
    };
    let dw = grads.get(store.index_of("l.W").unwrap()).unwrap();
    for i in 0..3 {
        for o in 0..2 {
            assert_eq!(dw.data()[i * 2 + o], x[i]);
        }
    }
    let db = grads.get(store.index_of("l.b").unwrap()).unwrap();
    assert_eq!(db.data(), &[1.0, 1.0]);
}

#[test]
fn backward_usage_errors() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let v = g.constant(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(v), Err(NnError::Usage(_))));
    let s = g.sum(v);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(NnError::Usage(_))));
}

#[test]
fn unreachable_parameters_get_exact_zero() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    init_linear(&mut store, "used", 2, 2, &mut r);
    init_linear(&mut store, "dangling", 2, 2, &mut r);
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let y = g.linear(x, "used").unwrap();
    let _unused = g.linear(x, "dangling").unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    store.accumulate(&grads);
    assert!(store.grad_by_name("dangling.W").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(store.grad_by_name("used.W").unwrap().data().iter().any(|&v| v != 0.0));
}

fn tiny_loss(store: &ParamStore, x: &[f64]) -> Gradients {
    let mut g = Graph::new(store);
    let xi = g.constant(Tensor::vector(x.to_vec()));
    let h = g.linear(xi, "a").unwrap();
    let h = g.tanh(h);
    let y = g.linear(h, "b").unwrap();
    let (_, loss) = g.softmax_xent(y, 1).unwrap();
    g.backward(loss).unwrap()
}

#[test]
fn accumulation_is_additive_and_order_independent() {
    let mut r = rng(21);
    let mut store = ParamStore::new();
    init_linear(&mut store, "a", 3, 4, &mut r);
    init_linear(&mut store, "b", 4, 3, &mut r);
    let x1 = [0.1, -0.4, 0.9];
    let x2 = [1.3, 0.2, -0.7];
    let g1 = tiny_loss(&store, &x1);
    let g2 = tiny_loss(&store, &x2);

    let mut forward = store.clone();
    forward.accumulate(&g1);
    forward.accumulate(&g2);
    let mut reverse = store.clone();
    reverse.accumulate(&g2);
    reverse.accumulate(&g1);
    for (i, _) in store.indexed_names() {
        let sum: Vec<f64> = g1
            .get(i)
            .unwrap()
            .data()
            .iter()
            .zip(g2.get(i).unwrap().data())
            .map(|(a, b)| a + b)
            .collect();
        for ((a, b), s) in forward.grad(i).data().iter().zip(reverse.grad(i).data()).zip(&sum) {
            assert!(rel_close(*a, *b, 1e-9));
            assert_eq!(a, s);
        }
    }
}

fn conv_stack_store(seed: u64) -> ParamStore {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    init_conv(&mut store, "c0", 2, 3, 3, &mut r);
    init_conv(&mut store, "blk.conv0", 3, 3, 3, &mut r);
    init_conv(&mut store, "blk.conv1", 3, 3, 3, &mut r);
    init_conv(&mut store, "p", 3, 2, 1, &mut r);
    init_linear(&mut store, "head", 2 * 4 * 4, 4, &mut r);
    // non-zero biases exercise the bias gradients
    for name in ["c0.b", "blk.conv0.b", "blk.conv1.b", "p.b", "head.b"] {
        for v in store.get_mut(name).unwrap().data_mut() {
            *v = r.gen_range(-0.2..0.2);
        }
    }
    store
}

fn conv_stack_loss(g: &mut Graph, x: &Tensor) -> Result<NodeId, NnError> {
    let xi = g.constant(x.clone());
    let h = g.conv3x3(xi, "c0")?;
    let h = g.relu(h);
    let h = residual_block(g, h, "blk")?;
    let h = g.conv_named(h, "p")?;
    let h = g.sigmoid(h);
    let flat = g.reshape(h, &[32])?;
    let y = g.linear(flat, "head")?;
    Ok(g.softmax_xent(y, 2)?.1)
}

#[test]
fn conv_stack_passes_grad_check() {
    let store = conv_stack_store(3);
    let x = random_tensor(&[2, 4, 4], &mut rng(30));
    let report = grad_check(
        &store,
        |g| conv_stack_loss(g, &x),
        &GradCheckOptions {
            samples: 300,
            ..Default::default()
        },
        &mut rng(31),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.checked > 200);
}

#[test]
fn linear_layer_grad_check_is_tight() {
    let mut r = rng(12);
    let mut store = ParamStore::new();
    init_linear(&mut store, "l", 5, 3, &mut r);
    let x = random_tensor(&[5], &mut r);
    let report = grad_check(
        &store,
        |g| {
            let xi = g.constant(x.clone());
            let y = g.linear(xi, "l")?;
            Ok(g.softmax_xent(y, 0)?.1)
        },
        &GradCheckOptions {
            tolerance: 1e-7,
            ..Default::default()
        },
        &mut r,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn grad_check_catches_corrupted_backward() {
    let mut r = rng(13);
    let mut store = ParamStore::new();
    init_linear(&mut store, "l", 5, 3, &mut r);
    let x = random_tensor(&[5], &mut r);
    let build = |g: &mut Graph| -> Result<NodeId, NnError> {
        let xi = g.constant(x.clone());
        let y = g.linear(xi, "l")?;
        Ok(g.softmax_xent(y, 0)?.1)
    };
    // Reproduce grad_check with the sabotaged rule on the analytic side.
    let grads = {
        let mut g = Graph::new(&store);
        g.corrupt_affine_weight_grad = true;
        let loss = build(&mut g).unwrap();
        g.backward(loss).unwrap()
    };
    let wi = store.index_of("l.W").unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..15 {
        let f = |d: f64| {
            let mut s = store.clone();
            s.value_mut(wi).data_mut()[j] += d;
            let mut g = Graph::new(&s);
            let l = build(&mut g).unwrap();
            g.scalar(l)
        };
        let numeric = (f(1e-5) - f(-1e-5)) / 2e-5;
        worst = worst.max(relative_error(grads.get(wi).unwrap().data()[j], numeric, 1e-6));
    }
    assert!(worst > 1e-2, "sabotage went unnoticed: {worst}");
}

#[test]
fn tower_output_shape_and_determinism() {
    let tower = ConvTower {
        in_channels: 4,
        channels: 4,
        blocks: 2,
        head_channels: 2,
        outputs: 7,
    };
    let mut store = ParamStore::new();
    tower.init(&mut store, "t", 5, 5, &mut rng(0));
    let x = random_tensor(&[4, 5, 5], &mut rng(1));
    let run = || {
        let mut g = Graph::new(&store);
        let xi = g.constant(x.clone());
        let y = tower.forward(&mut g, xi, "t").unwrap();
        g.value(y).clone()
    };
    let a = run();
    assert_eq!(a.shape(), &[7]);
    assert_eq!(a, run());
}

#[test]
fn log_softmax_exp_sums_to_one_and_grad_checks() {
    let mut r = rng(17);
    let mut store = ParamStore::new();
    store.insert("z", random_tensor(&[2, 4], &mut r));
    store.insert("s", Tensor::scalar(0.7));
    let build = |g: &mut Graph| -> Result<NodeId, NnError> {
        let z = g.param("z")?;
        let s = g.param("s")?;
        let z = g.scale_by(z, s)?;
        let ls = g.log_softmax(z);
        let p = g.exp(ls);
        for row in g.value(p).data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ent = g.mul(p, ls)?;
        let a = g.pick(ent, 1)?;
        let b = g.pick(ls, 6)?;
        let c = g.sub(a, b)?;
        let d = g.concat(&[c, a])?;
        let d = g.scale(d, 1.5);
        Ok(g.sum(d))
    };
    let report = grad_check(
        &store,
        build,
        &GradCheckOptions {
            samples: 9,
            tolerance: 1e-7,
            ..Default::default()
        },
        &mut r,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}
