use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Central-difference check of d(loss)/d(input) for every input entry.
/// Returns the largest relative error, with a floor on the denominator.
fn max_rel_err(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
) -> f64 {
    let h = 1e-4;
    let eval = |ins: &[Tensor<f64>]| {
        let mut g = Graph::<f64>::new();
        let ids: Vec<_> = ins.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).data()[0]
    };
    let mut g = Graph::<f64>::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &ids);
    g.backward(loss, &mut ParamStore::<f64>::new()).unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g
            .grad(ids[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let [c, h, w] = *x.shape() else { panic!() };
    let [o, _, kh, kw] = *k.shape() else { panic!() };
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; o * oh * ow];
    for oi in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = b.data()[oi];
                for ci in 0..c {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            s += x.data()[(ci * h + y + dy) * w + xx + dx]
                                * k.data()[((oi * c + ci) * kh + dy) * kw + dx];
                        }
                    }
                }
                out[(oi * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

#[test]
fn conv2d_zero_input_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros([1, 36, 36]));
    let k = g.input(rand_tensor(&mut rng, &[32, 1, 3, 3]));
    let b = g.input(Tensor::zeros([32]));
    let y = g.conv2d(x, k, b).unwrap();
    assert_eq!(g.shape(y), [32, 34, 34]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_center_delta_is_center_crop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = rand_tensor(&mut rng, &[1, 6, 7]);
    let mut kd = vec![0.0; 9];
    kd[4] = 1.0;
    let mut g = Graph::<f64>::new();
    let x = g.input(img.clone());
    let k = g.input(Tensor::new([1, 1, 3, 3], kd).unwrap());
    let b = g.input(Tensor::zeros([1]));
    let y = g.conv2d(x, k, b).unwrap();
    for yy in 0..4 {
        for xx in 0..5 {
            assert_eq!(
                g.value(y).data()[yy * 5 + xx],
                img.data()[(yy + 1) * 7 + xx + 1]
            );
        }
    }
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x = rand_tensor(&mut rng, &[2, 5, 5]);
        let k = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        let mut g = Graph::<f64>::new();
        let (xi, ki, bi) = (g.input(x.clone()), g.input(k.clone()), g.input(b.clone()));
        let y = g.conv2d(xi, ki, bi).unwrap();
        for (a, e) in g.value(y).data().iter().zip(conv_oracle(&x, &k, &b)) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_batched_equals_per_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[3, 2, 6, 6]);
    let k = rand_tensor(&mut rng, &[4, 2, 3, 3]);
    let b = rand_tensor(&mut rng, &[4]);
    let mut g = Graph::<f64>::new();
    let (xi, ki, bi) = (g.input(x.clone()), g.input(k.clone()), g.input(b.clone()));
    let y = g.conv2d(xi, ki, bi).unwrap();
    assert_eq!(g.shape(y), [3, 4, 4, 4]);
    for n in 0..3 {
        let single = Tensor::new([2, 6, 6], x.data()[n * 72..(n + 1) * 72].to_vec()).unwrap();
        let got = &g.value(y).data()[n * 64..(n + 1) * 64];
        for (a, e) in got.iter().zip(conv_oracle(&single, &k, &b)) {
            assert!((a - e).abs() < 1e-12);
        }
        let mut h = Graph::<f64>::new();
        let (xi, ki, bi) = (h.input(single), h.input(k.clone()), h.input(b.clone()));
        let one = h.conv2d(xi, ki, bi).unwrap();
        assert_eq!(got, h.value(one).data());
    }
}

#[test]
fn conv2d_rejects_bad_shapes() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros([2, 5, 5]));
    let k = g.input(Tensor::zeros([3, 1, 3, 3]));
    let b = g.input(Tensor::zeros([3]));
    assert!(matches!(g.conv2d(x, k, b), Err(crate::Error::Contract(_))));
    let small = g.input(Tensor::zeros([1, 2, 5]));
    let k1 = g.input(Tensor::zeros([3, 1, 3, 3]));
    assert!(g.conv2d(small, k1, b).is_err());
}

#[test]
fn maxpool_shapes_and_oracle() {
    let mut g = Graph::<f64>::new();
    let c = g.input(Tensor::full([2, 5, 7], 0.25));
    let p = g.maxpool2d(c).unwrap();
    assert_eq!(g.shape(p), [2, 2, 3]);
    assert!(g.value(p).data().iter().all(|&v| v == 0.25));
    let odd = g.input(Tensor::zeros([1, 17, 17]));
    let p = g.maxpool2d(odd).unwrap();
    assert_eq!(g.shape(p), [1, 8, 8]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let x = rand_tensor(&mut rng, &[1, 4, 4]);
        let mut g = Graph::<f64>::new();
        let xi = g.input(x.clone());
        let p = g.maxpool2d(xi).unwrap();
        for y in 0..2 {
            for xx in 0..2 {
                let d = x.data();
                let m = [
                    d[2 * y * 4 + 2 * xx],
                    d[2 * y * 4 + 2 * xx + 1],
                    d[(2 * y + 1) * 4 + 2 * xx],
                    d[(2 * y + 1) * 4 + 2 * xx + 1],
                ]
                .into_iter()
                .fold(f64::MIN, f64::max);
                assert_eq!(g.value(p).data()[y * 2 + xx], m);
            }
        }
    }
}

#[test]
fn maxpool_gradient_goes_to_first_max() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full([1, 2, 2], 1.0));
    let p = g.maxpool2d(x).unwrap();
    let loss = g.mean(p);
    g.backward(loss, &mut ParamStore::<f64>::new()).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn affine_identity_zero_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[4]);
    let mut eye = Tensor::zeros([4, 4]);
    for i in 0..4 {
        eye.data_mut()[i * 5] = 1.0;
    }
    let mut g = Graph::<f64>::new();
    let xi = g.input(x.clone());
    let wi = g.input(eye);
    let bi = g.input(Tensor::zeros([4]));
    let y = g.affine(xi, wi, Some(bi)).unwrap();
    assert_eq!(g.value(y), &x);

    let b = rand_tensor(&mut rng, &[3]);
    let wz = g.input(Tensor::zeros([3, 4]));
    let bz = g.input(b.clone());
    let y = g.affine(xi, wz, Some(bz)).unwrap();
    assert_eq!(g.value(y), &b);

    for _ in 0..100 {
        let x = rand_tensor(&mut rng, &[4]);
        let w = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[3]);
        let mut g = Graph::<f64>::new();
        let (xi, wi, bi) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
        let y = g.affine(xi, wi, Some(bi)).unwrap();
        for m in 0..3 {
            let mut s = b.data()[m];
            for n in 0..4 {
                s += w.data()[m * 4 + n] * x.data()[n];
            }
            assert!((g.value(y).data()[m] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn affine_shape_mismatch_is_contract_error() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros([5]));
    let w = g.input(Tensor::zeros([3, 4]));
    assert!(matches!(
        g.affine(x, w, None),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn activations_pointwise() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.input(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).data(), &[0.5]);
}

#[test]
fn softmax_uniform_and_overflow_safe() {
    let mut g = Graph::<f64>::new();
    let z = g.input(Tensor::full([12], 3.7));
    let p = g.softmax(z).unwrap();
    for &v in g.value(p).data() {
        assert!((v - 1.0 / 12.0).abs() < 1e-15);
    }
    let z = g.input(Tensor::vector(vec![1000.0, 0.0]));
    let p = g.softmax(z).unwrap();
    let d = g.value(p).data();
    assert!((d[0] - 1.0).abs() < 1e-12 && d[1] >= 0.0 && d[1] < 1e-12);
    assert!(d.iter().all(|v| v.is_finite()));
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let z = rand_tensor(&mut rng, &[5]);
        let denom: f64 = z.data().iter().map(|v| v.exp()).sum();
        let mut g = Graph::<f64>::new();
        let zi = g.input(z.clone());
        let p = g.softmax(zi).unwrap();
        for (a, &zv) in g.value(p).data().iter().zip(z.data()) {
            assert!((a - zv.exp() / denom).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_entropy_values() {
    let mut g = Graph::<f64>::new();
    let p = g.input(Tensor::vector(vec![0.0, 1.0, 0.0]));
    let j = g
        .cross_entropy(p, Tensor::vector(vec![0.0, 1.0, 0.0]))
        .unwrap();
    assert_eq!(g.value(j).data(), &[0.0]);

    let p = g.input(Tensor::full([12], 1.0 / 12.0));
    let mut t = Tensor::zeros([12]);
    t.data_mut()[3] = 1.0;
    let j = g.cross_entropy(p, t).unwrap();
    assert!((g.value(j).data()[0] - 12f64.ln()).abs() < 1e-12);
    assert!((g.value(j).data()[0] - 2.4849).abs() < 1e-4);
}

#[test]
fn cross_entropy_rejects_non_one_hot() {
    let mut g = Graph::<f64>::new();
    let p = g.input(Tensor::full([3], 1.0 / 3.0));
    assert!(matches!(
        g.cross_entropy(p, Tensor::vector(vec![0.5, 0.5, 0.0])),
        Err(crate::Error::Contract(_))
    ));
    assert!(g
        .cross_entropy(p, Tensor::vector(vec![1.0, 1.0, 0.0]))
        .is_err());
}

#[test]
fn cross_entropy_batch_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let logits = rand_tensor(&mut rng, &[4, 6]);
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..6)).collect();
        let mut t = Tensor::zeros([4, 6]);
        for (i, &l) in labels.iter().enumerate() {
            t.data_mut()[i * 6 + l] = 1.0;
        }
        let mut oracle = 0.0;
        for i in 0..4 {
            let row = &logits.data()[i * 6..(i + 1) * 6];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            for j in 0..6 {
                let tij = t.data()[i * 6 + j];
                oracle += -tij * (row[j].exp() / denom).ln();
            }
        }
        oracle /= 4.0;
        let mut g = Graph::<f64>::new();
        let z = g.input(logits.clone());
        let p = g.softmax(z).unwrap();
        let j = g.cross_entropy(p, t).unwrap();
        let fused = g.softmax_cross_entropy(z, &labels).unwrap();
        assert!((g.value(j).data()[0] - oracle).abs() < 1e-12);
        assert!((g.value(fused).data()[0] - oracle).abs() < 1e-12);
    }
}

#[test]
fn backward_trivial_losses() {
    let mut store = ParamStore::<f64>::new();
    let pid = store.add("w", Tensor::scalar(3.0));
    let mut g = Graph::<f64>::new();
    let w = g.param(&store, pid);
    g.backward(w, &mut store).unwrap();
    assert_eq!(store.grad(pid).data(), &[1.0]);

    let mut store = ParamStore::<f64>::new();
    let v = Tensor::vector(vec![0.5, -2.0, 3.0]);
    let pid = store.add("v", v.clone());
    let mut g = Graph::<f64>::new();
    let n = g.param(&store, pid);
    let loss = g.sum_squares(n);
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(pid).data(), &[1.0, -4.0, 6.0]);

    // accumulation across calls
    let mut g = Graph::<f64>::new();
    let n = g.param(&store, pid);
    let loss = g.sum_squares(n);
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(pid).data(), &[2.0, -8.0, 12.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros([2]));
    assert!(matches!(
        g.backward(x, &mut ParamStore::<f64>::new()),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let w = rand_tensor(&mut rng, &[3, 4, 4]);
        let err = max_rel_err(
            &[
                rand_tensor(&mut rng, &[2, 6, 6]),
                rand_tensor(&mut rng, &[3, 2, 3, 3]),
                rand_tensor(&mut rng, &[3]),
            ],
            |g, ids| {
                let y = g.conv2d(ids[0], ids[1], ids[2]).unwrap();
                g.weighted_sum(y, w.clone()).unwrap()
            },
        );
        assert!(err < 1e-4, "conv2d {err}");

        let w = rand_tensor(&mut rng, &[2, 3, 2]);
        let err = max_rel_err(&[rand_tensor(&mut rng, &[2, 6, 5])], |g, ids| {
            let y = g.maxpool2d(ids[0]).unwrap();
            g.weighted_sum(y, w.clone()).unwrap()
        });
        assert!(err < 1e-4, "maxpool {err}");

        let w = rand_tensor(&mut rng, &[2, 3]);
        let err = max_rel_err(
            &[
                rand_tensor(&mut rng, &[2, 4]),
                rand_tensor(&mut rng, &[3, 4]),
                rand_tensor(&mut rng, &[3]),
            ],
            |g, ids| {
                let y = g.affine(ids[0], ids[1], Some(ids[2])).unwrap();
                g.weighted_sum(y, w.clone()).unwrap()
            },
        );
        assert!(err < 1e-4, "affine {err}");

        for kind in [Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
            let w = rand_tensor(&mut rng, &[7]);
            let err = max_rel_err(&[rand_tensor(&mut rng, &[7])], |g, ids| {
                let y = g.activation(ids[0], kind);
                g.weighted_sum(y, w.clone()).unwrap()
            });
            assert!(err < 1e-6, "{kind:?} {err}");
        }

        let w = rand_tensor(&mut rng, &[3, 5]);
        let err = max_rel_err(&[rand_tensor(&mut rng, &[3, 5])], |g, ids| {
            let y = g.softmax(ids[0]).unwrap();
            g.weighted_sum(y, w.clone()).unwrap()
        });
        assert!(err < 1e-4, "softmax {err}");

        let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..5)).collect();
        let mut t = Tensor::zeros([3, 5]);
        for (i, &l) in labels.iter().enumerate() {
            t.data_mut()[i * 5 + l] = 1.0;
        }
        let err = max_rel_err(&[rand_tensor(&mut rng, &[3, 5])], |g, ids| {
            let p = g.softmax(ids[0]).unwrap();
            g.cross_entropy(p, t.clone()).unwrap()
        });
        assert!(err < 1e-4, "cross_entropy {err}");
        let err = max_rel_err(&[rand_tensor(&mut rng, &[3, 5])], |g, ids| {
            g.softmax_cross_entropy(ids[0], &labels).unwrap()
        });
        assert!(err < 1e-4, "fused {err}");

        let w = rand_tensor(&mut rng, &[3, 6]);
        let err = max_rel_err(
            &[
                rand_tensor(&mut rng, &[3, 2]),
                rand_tensor(&mut rng, &[3, 4]),
                rand_tensor(&mut rng, &[5, 4]),
            ],
            |g, ids| {
                let c = g.concat(ids[0], ids[1]).unwrap();
                let m = g.mul(c, c).unwrap();
                let gathered = g.gather_rows(ids[2], &[4, 0, 4]).unwrap();
                let s = g.sub(m, c).unwrap();
                let om = g.one_minus(s);
                let a = g.add(om, s).unwrap();
                let r = g.reshape(a, &[18]).unwrap();
                let r = g.reshape(r, &[3, 6]).unwrap();
                let x = g.weighted_sum(r, w.clone()).unwrap();
                let y = g.sum_squares(gathered);
                let sum = g.add(x, y).unwrap();
                g.mean(sum)
            },
        );
        assert!(err < 1e-4, "misc {err}");
    }
}

#[test]
fn shared_node_accumulates_both_consumers() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let w = rand_tensor(&mut rng, &[4]);
    let err = max_rel_err(&[rand_tensor(&mut rng, &[4])], |g, ids| {
        let a = g.tanh(ids[0]);
        let b = g.sigmoid(ids[0]);
        let c = g.mul(a, b).unwrap();
        g.weighted_sum(c, w.clone()).unwrap()
    });
    assert!(err < 1e-4);
}

#[test]
fn adam_zero_grad_is_noop_and_first_step() {
    let mut store = ParamStore::<f64>::new();
    let pid = store.add("w", Tensor::vector(vec![0.3, -0.7]));
    let before = store.clone();
    let mut adam = AdamState::<f64>::new(1e-3);
    adam.step(&mut store);
    assert_eq!(store.value(pid), before.value(pid));
    assert_eq!(adam.step, 1);

    // first step with g = 1: m_hat = 1, v_hat = 1, update = eta / (1 + eps)
    let mut store = ParamStore::<f64>::new();
    let pid = store.add("w", Tensor::scalar(0.0));
    store.grad_mut(pid).data_mut()[0] = 1.0;
    let mut adam = AdamState::<f64>::new(1e-3);
    adam.step(&mut store);
    let expected = -1e-3 / (1.0 + 1e-8);
    assert!((store.value(pid).data()[0] - expected).abs() < 1e-15);
    assert_eq!(store.grad(pid).data(), &[1.0]);
}

#[test]
fn adam_descends_quadratic() {
    let mut store = ParamStore::<f64>::new();
    let pid = store.add("w", Tensor::scalar(1.0));
    let mut adam = AdamState::<f64>::new(1e-3);
    let mut trace = Vec::new();
    for _ in 0..100 {
        store.zero_grads();
        let mut g = Graph::<f64>::new();
        let w = g.param(&store, pid);
        let loss = g.sum_squares(w);
        g.backward(loss, &mut store).unwrap();
        adam.step(&mut store);
        trace.push(store.value(pid).data()[0]);
    }
    assert!(trace.iter().all(|w| w.abs() < 1.0));
    assert!(trace.windows(2).all(|p| p[1] < p[0]));
    // Adam moves roughly eta per step early on
    assert!((trace[99] - 0.9).abs() < 0.01);
}

mod props {
    use proptest::prelude::*;

    use super::super::*;

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            z in prop::collection::vec(-50.0f64..50.0, 1..16),
            c in -100.0f64..100.0,
        ) {
            let p = softmax_row(&z);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax_row(&shifted);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
