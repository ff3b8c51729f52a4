use super::*;
use crate::rng::{stream, Purpose};
use proptest::prelude::*;
use rand::Rng;

fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = stream(seed, Purpose::Custom(0), 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_params(net: &Network, seed: u64) -> NetworkParams {
    let mut rng = stream(seed, Purpose::Custom(1), 0);
    let mut p = net.zero_params();
    p.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    p
}

#[test]
fn dense_identity_returns_input() {
    let net = Network::new(ActShape::Flat(3), vec![LayerSpec::dense(3, 3)]).unwrap();
    let mut p = net.zero_params();
    for i in 0..3 {
        p.blocks_mut()[0].weight[i * 3 + i] = 1.0;
    }
    let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 7.0]).unwrap();
    let (logits, _) = net.forward(&p, &x).unwrap();
    assert_eq!(logits.data(), x.data());
}

#[test]
fn one_by_one_conv_scales() {
    let net = Network::new(
        ActShape::Spatial {
            height: 4,
            width: 4,
            channels: 1,
        },
        vec![LayerSpec::conv(1, 1, 1)],
    )
    .unwrap();
    let mut p = net.zero_params();
    p.blocks_mut()[0].weight[0] = 2.0;
    let x = Tensor::new(vec![1, 4, 4], vec![1.0; 16]).unwrap();
    let (out, _) = net.forward(&p, &x).unwrap();
    assert_eq!(out.shape(), &[1, 16]);
    assert!(out.data().iter().all(|&v| v == 2.0));
}

#[test]
fn dimension_mismatch_names_layer() {
    let err = Network::new(
        ActShape::Flat(4),
        vec![LayerSpec::dense(4, 3), LayerSpec::Relu, LayerSpec::dense(5, 2)],
    )
    .unwrap_err();
    assert!(matches!(err, Error::Dimension { layer: 2, .. }), "{err}");

    let net = Network::new(ActShape::Flat(4), vec![LayerSpec::dense(4, 2)]).unwrap();
    let p = net.zero_params();
    let bad = Tensor::zeros(vec![2, 5]);
    assert!(matches!(
        net.forward(&p, &bad),
        Err(Error::Dimension { layer: 0, .. })
    ));
}

/// Straight-line evaluation of conv(same pad)+relu+pool+dense, written without im2col.
fn direct_eval(
    x: &[f64],
    side: usize,
    cin: usize,
    cout: usize,
    k: usize,
    classes: usize,
    p: &NetworkParams,
) -> Vec<f64> {
    let conv = &p.blocks()[0];
    let dense = &p.blocks()[1];
    let pad = k as isize / 2;
    let mut act = vec![0.0; side * side * cout];
    for y in 0..side {
        for xx in 0..side {
            for o in 0..cout {
                let mut s = conv.bias[o];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = y as isize + ky as isize - pad;
                        let ix = xx as isize + kx as isize - pad;
                        if iy < 0 || ix < 0 || iy >= side as isize || ix >= side as isize {
                            continue;
                        }
                        for c in 0..cin {
                            let w = conv.weight[o * k * k * cin + (ky * k + kx) * cin + c];
                            s += w * x[(iy as usize * side + ix as usize) * cin + c];
                        }
                    }
                }
                act[(y * side + xx) * cout + o] = s.max(0.0);
            }
        }
    }
    let half = side / 2;
    let mut pooled = vec![0.0; half * half * cout];
    for y in 0..half {
        for xx in 0..half {
            for o in 0..cout {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(act[((2 * y + dy) * side + 2 * xx + dx) * cout + o]);
                    }
                }
                pooled[(y * half + xx) * cout + o] = m;
            }
        }
    }
    (0..classes)
        .map(|c| {
            dense.bias[c]
                + (0..pooled.len())
                    .map(|i| dense.weight[c * pooled.len() + i] * pooled[i])
                    .sum::<f64>()
        })
        .collect()
}

#[test]
fn forward_matches_direct_evaluation() {
    let (side, cin, cout, k, classes) = (6, 2, 3, 3, 4);
    let net = Network::new(
        ActShape::Spatial {
            height: side,
            width: side,
            channels: cin,
        },
        vec![
            LayerSpec::conv(cin, cout, k),
            LayerSpec::Relu,
            LayerSpec::pool2(),
            LayerSpec::dense(9 * cout, classes),
        ],
    )
    .unwrap();
    for seed in 0..3 {
        let p = random_params(&net, seed);
        let x = random_tensor(vec![3, side, side, cin], 100 + seed);
        let (logits, _) = net.forward(&p, &x).unwrap();
        for b in 0..3 {
            let want = direct_eval(x.row(b), side, cin, cout, k, classes, &p);
            for (got, want) in logits.row(b).iter().zip(&want) {
                assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
            }
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let net = Network::reference_scaled(8, 3, [2, 3, 5], 3).unwrap();
    let p = random_params(&net, 4);
    let x = random_tensor(vec![5, 8, 8], 9);
    let (a, _) = net.forward(&p, &x).unwrap();
    let (b, _) = net.forward(&p, &x).unwrap();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn loss_uniform_two_classes_is_ln2() {
    let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
    let (loss, d) = loss_and_grad(&logits, &[0]).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(d.data(), &[-0.5, 0.5]);
}

#[test]
fn loss_is_stable_for_large_logits() {
    let logits = Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
    let (loss, d) = loss_and_grad(&logits, &[0]).unwrap();
    assert!(loss.is_finite() && loss.abs() < 1e-300);
    assert!(d.all_finite());
}

#[test]
fn loss_rejects_bad_label() {
    let logits = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
    assert!(matches!(
        loss_and_grad(&logits, &[3]),
        Err(Error::LabelOutOfRange { label: 3, .. })
    ));
}

#[test]
fn loss_matches_definition() {
    let logits = random_tensor(vec![16, 7], 3);
    let mut rng = stream(5, Purpose::Custom(2), 0);
    let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..7)).collect();
    let (loss, _) = loss_and_grad(&logits, &labels).unwrap();
    let want: f64 = (0..16)
        .map(|b| {
            let row = logits.row(b);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            -(row[labels[b]].exp() / z).ln()
        })
        .sum::<f64>()
        / 16.0;
    assert!((loss - want).abs() <= 1e-12 * want.abs());
}

#[test]
fn zero_dlogits_give_zero_gradient() {
    let net = Network::reference_scaled(8, 3, [2, 3, 5], 3).unwrap();
    let p = random_params(&net, 1);
    let x = random_tensor(vec![2, 8, 8], 2);
    let (logits, mut cache) = net.forward(&p, &x).unwrap();
    let g = net
        .backward(&p, &mut cache, &Tensor::zeros(logits.shape().to_vec()))
        .unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn dense_gradient_is_outer_product() {
    let net = Network::new(ActShape::Flat(2), vec![LayerSpec::dense(2, 2)]).unwrap();
    let p = random_params(&net, 3);
    let a = Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap();
    let (_, mut cache) = net.forward(&p, &a).unwrap();
    let dl = Tensor::new(vec![1, 2], vec![0.5, 2.0]).unwrap();
    let g = net.backward(&p, &mut cache, &dl).unwrap();
    assert_eq!(g.blocks()[0].weight, vec![1.5, -0.5, 6.0, -2.0]);
    assert_eq!(g.blocks()[0].bias, vec![0.5, 2.0]);
    // per-example pre-activation gradients are cached for K-FAC
    assert_eq!(cache.layer_stats()[0].grads.unwrap(), &[0.5, 2.0]);
}

#[test]
fn backward_rejects_mismatched_cache() {
    let net = Network::new(ActShape::Flat(2), vec![LayerSpec::dense(2, 2)]).unwrap();
    let p = net.zero_params();
    let mut empty = ActivationCache::default();
    let dl = Tensor::zeros(vec![1, 2]);
    assert!(matches!(
        net.backward(&p, &mut empty, &dl),
        Err(Error::StaleCache(_))
    ));
    let (_, mut cache) = net.forward(&p, &Tensor::zeros(vec![3, 2])).unwrap();
    assert!(matches!(
        net.backward(&p, &mut cache, &dl),
        Err(Error::StaleCache(_))
    ));
}

#[test]
fn maxpool_routes_to_first_maximum() {
    let net = Network::new(
        ActShape::Spatial {
            height: 2,
            width: 2,
            channels: 1,
        },
        vec![LayerSpec::pool2()],
    )
    .unwrap();
    let p = net.zero_params();
    let x = Tensor::new(vec![1, 4], vec![1.0, 3.0, 3.0, 2.0]).unwrap();
    let (y, mut cache) = net.forward(&p, &x).unwrap();
    assert_eq!(y.data(), &[3.0]);
    let (_, dx) = net
        .backward_with_input(&p, &mut cache, &Tensor::new(vec![1, 1], vec![1.0]).unwrap())
        .unwrap();
    assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn maxpool_backward_routes_each_output_once() {
    let net = Network::new(
        ActShape::Spatial {
            height: 6,
            width: 6,
            channels: 2,
        },
        vec![LayerSpec::pool2()],
    )
    .unwrap();
    let p = net.zero_params();
    let x = random_tensor(vec![2, 6, 6, 2], 11);
    let (y, mut cache) = net.forward(&p, &x).unwrap();
    let dy = Tensor::new(y.shape().to_vec(), vec![1.0; y.len()]).unwrap();
    let (_, dx) = net.backward_with_input(&p, &mut cache, &dy).unwrap();
    assert_eq!(dx.data().iter().filter(|&&v| v == 1.0).count(), y.len());
    assert_eq!(dx.data().iter().filter(|&&v| v == 0.0).count(), x.len() - y.len());
}

#[test]
fn finite_diff_quadratic_and_linear() {
    let mut theta = NetworkParams::zeros(&[(2, 2)]);
    theta
        .iter_mut()
        .zip([0.3, -1.2, 2.0, 0.7, -0.1, 4.0])
        .for_each(|(v, x)| *v = x);
    let g = finite_diff_gradient_fn(&theta, 1e-4, |p| Ok(0.5 * p.iter().map(|v| v * v).sum::<f64>()))
        .unwrap();
    for (a, b) in g.iter().zip(theta.iter()) {
        assert!((a - b).abs() < 1e-8);
    }
    let c = [1.0, -2.0, 0.5, 3.0, 0.25, -4.0];
    let g = finite_diff_gradient_fn(&theta, 1e-3, |p| {
        Ok(p.iter().zip(&c).map(|(x, c)| x * c).sum::<f64>())
    })
    .unwrap();
    for (a, b) in g.iter().zip(&c) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!(finite_diff_gradient_fn(&theta, 0.0, |_| Ok(0.0)).is_err());
}

#[test]
fn backward_matches_finite_differences_small_net() {
    let net = Network::reference_scaled(8, 3, [2, 3, 6], 3).unwrap();
    let p = random_params(&net, 21);
    let x = random_tensor(vec![4, 8, 8], 22);
    let labels = [0, 2, 1, 2];
    let (logits, mut cache) = net.forward(&p, &x).unwrap();
    let (_, dl) = loss_and_grad(&logits, &labels).unwrap();
    let g = net.backward(&p, &mut cache, &dl).unwrap();
    let fd = finite_diff_gradient(&net, &p, &x, &labels, 1e-5).unwrap();
    for (i, (a, f)) in g.iter().zip(fd.iter()).enumerate() {
        assert!((a - f).abs() / (a.abs() + 1e-8) <= 1e-4 || (a - f).abs() < 1e-10, "coord {i}: {a} vs {f}");
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let net = Network::reference_scaled(8, 3, [2, 3, 6], 3).unwrap();
    let p = random_params(&net, 31);
    let x = random_tensor(vec![2, 8, 8], 32);
    let labels = [1, 0];
    let (logits, mut cache) = net.forward(&p, &x).unwrap();
    let (_, dl) = loss_and_grad(&logits, &labels).unwrap();
    let (_, dx) = net.backward_with_input(&p, &mut cache, &dl).unwrap();
    let h = 1e-6;
    for i in (0..x.len()).step_by(7) {
        let mut up = x.clone();
        up.data_mut()[i] += h;
        let mut down = x.clone();
        down.data_mut()[i] -= h;
        let lu = loss_and_grad(&net.forward(&p, &up).unwrap().0, &labels).unwrap().0;
        let ld = loss_and_grad(&net.forward(&p, &down).unwrap().0, &labels).unwrap().0;
        let fd = (lu - ld) / (2.0 * h);
        assert!((dx.data()[i] - fd).abs() < 1e-7, "input {i}: {} vs {fd}", dx.data()[i]);
    }
}

#[test]
fn reference_architecture_dimensions() {
    let net = Network::reference(28, 10).unwrap();
    assert_eq!(
        net.block_dims(),
        vec![(32, 25), (64, 800), (1024, 7 * 7 * 64), (10, 1024)]
    );
    assert_eq!(
        net.param_count(),
        32 * 26 + 64 * 801 + 1024 * 3137 + 10 * 1025
    );
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let t = Tensor::new(vec![3, 4], vals).unwrap();
        let s = softmax_rows(&t);
        for r in 0..3 {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
        let (loss, _) = loss_and_grad(&t, &[0, 1, 3]).unwrap();
        prop_assert!(loss >= 0.0);
    }
}

#[test]
fn im2col_matches_elementwise_definition() {
    let mut rng = stream(3, Purpose::Custom(7), 0);
    for (h, w, c, k, s) in [(5, 5, 1, 3, 1), (6, 7, 3, 5, 1), (7, 5, 2, 3, 2), (4, 4, 2, 5, 2)] {
        let g = ConvGeom::new(ActShape::Spatial { height: h, width: w, channels: c }, k, s);
        let n = 2;
        let x: Vec<f64> = (0..n * h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = im2col(&x, n, &g);
        let plen = g.patch_len();
        for b in 0..n {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let row = (b * g.out_h + oy) * g.out_w + ox;
                    for ky in 0..k {
                        for kx in 0..k {
                            for ch in 0..c {
                                let want = g
                                    .source(oy, ox, ky, kx)
                                    .map_or(0.0, |o| x[b * h * w * c + o + ch]);
                                assert_eq!(got[row * plen + (ky * k + kx) * c + ch], want);
                            }
                        }
                    }
                }
            }
        }
        // col2im is the adjoint: <im2col(x), p> == <x, col2im(p)>
        let p: Vec<f64> = (0..got.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = col2im(&p, n, &g);
        let lhs: f64 = got.iter().zip(&p).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
