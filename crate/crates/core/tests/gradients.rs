//! Analytic gradients against central finite differences (h = 1e-5).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windadapt::nn::{
    batchnorm_backward, batchnorm_forward, conv1d_backward, conv1d_forward, dense_backward,
    dense_forward, relu, relu_backward, softmax_cross_entropy, Architecture, BnParams, Mode,
    ModelParams, ParamGroup, Tensor,
};

const H: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central difference of `f` with respect to every entry of `v`.
fn numeric(v: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + H;
            let up = f(v);
            v[i] = orig - H;
            let down = f(v);
            v[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn assert_close(what: &str, analytic: &[f64], numeric: &[f64], tol: f64) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a, n);
        assert!(e < tol, "{what}[{i}]: analytic {a}, numeric {n}, rel err {e}");
    }
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [1, 3, 5] {
        let x = rand_tensor(&mut rng, &[2, 3, 7]);
        let w = rand_tensor(&mut rng, &[4, 3, k]);
        let b = rand_vec(&mut rng, 4);
        let r = rand_tensor(&mut rng, &[2, 4, 7]);
        let (gx, gw, gb) = conv1d_backward(&x, &w, &r).unwrap();

        let mut xv = x.data().to_vec();
        let nx = numeric(&mut xv, |v| {
            let xt = Tensor::from_vec(&[2, 3, 7], v.to_vec()).unwrap();
            weighted_sum(&conv1d_forward(&xt, &w, &b).unwrap(), &r)
        });
        assert_close("conv dx", gx.data(), &nx, 1e-4);

        let mut wv = w.data().to_vec();
        let nw = numeric(&mut wv, |v| {
            let wt = Tensor::from_vec(&[4, 3, k], v.to_vec()).unwrap();
            weighted_sum(&conv1d_forward(&x, &wt, &b).unwrap(), &r)
        });
        assert_close("conv dw", gw.data(), &nw, 1e-4);

        let mut bv = b.clone();
        let nb = numeric(&mut bv, |v| weighted_sum(&conv1d_forward(&x, &w, v).unwrap(), &r));
        assert_close("conv db", &gb, &nb, 1e-4);
    }
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[3, 2, 5]);
    let r = rand_tensor(&mut rng, &[3, 2, 5]);
    let mut base = BnParams::<f64>::new(2);
    base.gamma = vec![1.3, -0.7];
    base.beta = vec![0.2, 0.1];
    base.run_mean = vec![0.1, -0.2];
    base.run_var = vec![0.8, 1.5];

    for mode in [Mode::Train, Mode::Eval] {
        let mut p = base.clone();
        let (_, cache) = batchnorm_forward(&x, &mut p, mode).unwrap();
        let (gx, ggamma, gbeta) = batchnorm_backward(&cache, &r).unwrap();
        let loss = |xt: &Tensor<f64>, p: &BnParams<f64>| {
            let mut p = p.clone();
            weighted_sum(&batchnorm_forward(xt, &mut p, mode).unwrap().0, &r)
        };

        let mut xv = x.data().to_vec();
        let nx = numeric(&mut xv, |v| loss(&Tensor::from_vec(&[3, 2, 5], v.to_vec()).unwrap(), &base));
        assert_close(&format!("bn {mode:?} dx"), gx.data(), &nx, 1e-4);

        let mut gv = base.gamma.clone();
        let ng = numeric(&mut gv, |v| {
            let p = BnParams { gamma: v.to_vec(), ..base.clone() };
            loss(&x, &p)
        });
        assert_close(&format!("bn {mode:?} dgamma"), &ggamma, &ng, 1e-4);

        let mut bv = base.beta.clone();
        let nb = numeric(&mut bv, |v| {
            let p = BnParams { beta: v.to_vec(), ..base.clone() };
            loss(&x, &p)
        });
        assert_close(&format!("bn {mode:?} dbeta"), &gbeta, &nb, 1e-4);
    }
}

#[test]
fn relu_gradient_away_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = rand_tensor(&mut rng, &[4, 6]);
    for v in x.data_mut() {
        if v.abs() < 1e-3 {
            *v = 0.5;
        }
    }
    let r = rand_tensor(&mut rng, &[4, 6]);
    let g = relu_backward(&x, &r);
    let mut xv = x.data().to_vec();
    let n = numeric(&mut xv, |v| {
        weighted_sum(&relu(&Tensor::from_vec(&[4, 6], v.to_vec()).unwrap()), &r)
    });
    assert_close("relu dx", g.data(), &n, 1e-4);
}

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[3, 5]);
    let w = rand_tensor(&mut rng, &[4, 5]);
    let b = rand_vec(&mut rng, 4);
    let r = rand_tensor(&mut rng, &[3, 4]);
    let (gx, gw, gb) = dense_backward(&x, &w, &r).unwrap();

    let mut xv = x.data().to_vec();
    let nx = numeric(&mut xv, |v| {
        weighted_sum(&dense_forward(&Tensor::from_vec(&[3, 5], v.to_vec()).unwrap(), &w, &b).unwrap(), &r)
    });
    assert_close("dense dx", gx.data(), &nx, 1e-4);
    let mut wv = w.data().to_vec();
    let nw = numeric(&mut wv, |v| {
        weighted_sum(&dense_forward(&x, &Tensor::from_vec(&[4, 5], v.to_vec()).unwrap(), &b).unwrap(), &r)
    });
    assert_close("dense dw", gw.data(), &nw, 1e-4);
    let mut bv = b.clone();
    let nb = numeric(&mut bv, |v| weighted_sum(&dense_forward(&x, &w, v).unwrap(), &r));
    assert_close("dense db", &gb, &nb, 1e-4);
}

#[test]
fn softmax_cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = rand_tensor(&mut rng, &[4, 6]);
    let labels = [0, 5, 2, 2];
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let mut lv = logits.data().to_vec();
    let n = numeric(&mut lv, |v| {
        softmax_cross_entropy(&Tensor::from_vec(&[4, 6], v.to_vec()).unwrap(), &labels)
            .unwrap()
            .0
    });
    assert_close("ce dlogits", g.data(), &n, 1e-4);
}

fn tiny() -> Architecture {
    Architecture {
        window: 4,
        features: 2,
        kernel: 3,
        c1: 2,
        c2: 2,
        hidden: 3,
        classes: 2,
    }
}

/// A seeded model and batch whose ReLU inputs (train and eval normalization)
/// all sit at least 1e-3 from the kink, so finite differences never cross it.
fn off_kink_instance() -> (ModelParams<f64>, Tensor<f64>, Vec<usize>) {
    for seed in 0..1000 {
        let mut model = ModelParams::<f64>::init(tiny(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // non-trivial BN affine parameters and biases
        for g in ParamGroup::ALL {
            if !matches!(g, ParamGroup::Conv1W | ParamGroup::Conv2W | ParamGroup::Fc1W | ParamGroup::Fc2W) {
                for v in model.group_mut(g) {
                    *v += rng.gen_range(-0.5..0.5);
                }
            }
        }
        let x = rand_tensor(&mut rng, &[3, 4, 2]);
        let labels = vec![0, 1, 1];
        let mut pre = model.relu_inputs(&x, Mode::Train).unwrap();
        pre.extend(model.relu_inputs(&x, Mode::Eval).unwrap());
        if pre.iter().all(|v| v.abs() > 1e-3) {
            return (model, x, labels);
        }
    }
    panic!("no off-kink instance found");
}

#[test]
fn full_network_gradients_every_group() {
    let (model, x, labels) = off_kink_instance();
    let mut m = model.clone();
    let (logits, cache) = m.forward_cached(&x, Mode::Train).unwrap();
    let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = model.backward(&cache, &grad).unwrap();

    for g in ParamGroup::ALL {
        let mut v = model.group(g).to_vec();
        let n = numeric(&mut v, |vals| {
            let mut probe = model.clone();
            probe.group_mut(g).copy_from_slice(vals);
            let logits = probe.forward(&x, Mode::Train).unwrap();
            softmax_cross_entropy(&logits, &labels).unwrap().0
        });
        assert_close(g.name(), grads.get(g), &n, 1e-3);
    }
}

#[test]
fn full_network_gradients_eval_mode_head() {
    // with BN statistics frozen the trunk is fixed; head gradients alone
    let (model, x, labels) = off_kink_instance();
    let mut m = model.clone();
    let (logits, cache) = m.forward_cached(&x, Mode::Eval).unwrap();
    assert_eq!(m, model);
    let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = model.backward(&cache, &grad).unwrap();
    for g in ParamGroup::ALL {
        let mut v = model.group(g).to_vec();
        let n = numeric(&mut v, |vals| {
            let mut probe = model.clone();
            probe.group_mut(g).copy_from_slice(vals);
            softmax_cross_entropy(&probe.logits(&x).unwrap(), &labels).unwrap().0
        });
        assert_close(g.name(), grads.get(g), &n, 1e-3);
    }
}
