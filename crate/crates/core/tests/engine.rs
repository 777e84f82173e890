use proptest::prelude::*;
use skelact::engine::{BatchNormMode, Tape, Tensor};
use skelact::rng::Rng;
use skelact::verify::{check_op, op_names, OP_TOLERANCE};

/// Ops whose output is linear in every input: central differences are exact
/// up to rounding, so they get a tighter bound.
const LINEAR: [&str; 10] = [
    "add",
    "scale",
    "sum",
    "reshape",
    "permute",
    "temporal_subsample",
    "concat_channels",
    "slice_channels",
    "global_avg_pool",
    "mean_dim1",
];

#[test]
fn every_op_matches_finite_differences_over_20_seeds() {
    for name in op_names() {
        let r = check_op(name, 20).unwrap().unwrap();
        let tol = if LINEAR.contains(&name) {
            1e-7
        } else {
            OP_TOLERANCE
        };
        assert!(r.checked > 0, "{name} checked nothing");
        assert!(r.max_rel_error < tol, "{name}: {r:?}");
    }
}

fn randn(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn f32_tensor(shape: &[usize], data: &[f64]) -> Tensor<f32> {
    Tensor::from_f64(shape, data).unwrap()
}

fn assert_close(got: &Tensor<f32>, want: &[f64], tol: f64) {
    assert_eq!(got.numel(), want.len());
    for (i, (g, w)) in got.data().iter().zip(want).enumerate() {
        assert!(
            (*g as f64 - w).abs() <= tol * (1.0 + w.abs()),
            "index {i}: {g} vs {w}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn graph_conv_matches_naive_loops(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4, k in 1usize..4, t in 1usize..5, v in 1usize..6, seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let x = randn(&mut rng, n * cin * t * v);
        let a = randn(&mut rng, k * v * v);
        let w = randn(&mut rng, k * cout * cin);
        let b = randn(&mut rng, k * cout);
        // Y[n,o,t,u] = Σ_k Σ_w A[k,w,u] (Σ_i W[k,o,i] X[n,i,t,w] + b[k,o])
        let mut want = vec![0.0; n * cout * t * v];
        for ni in 0..n { for o in 0..cout { for ti in 0..t { for u in 0..v {
            let mut acc = 0.0;
            for kk in 0..k { for wj in 0..v {
                let mut z = b[kk * cout + o];
                for i in 0..cin {
                    z += w[(kk * cout + o) * cin + i] * x[((ni * cin + i) * t + ti) * v + wj];
                }
                acc += a[(kk * v + wj) * v + u] * z;
            }}
            want[((ni * cout + o) * t + ti) * v + u] = acc;
        }}}}
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(f32_tensor(&[n, cin, t, v], &x));
        let av = tape.constant(f32_tensor(&[k, v, v], &a));
        let wv = tape.constant(f32_tensor(&[k, cout, cin], &w));
        let bv = tape.constant(f32_tensor(&[k, cout], &b));
        let y = tape.graph_conv(xv, av, wv, Some(bv)).unwrap();
        assert_close(tape.value(y), &want, 1e-5);
    }

    #[test]
    fn temporal_conv_matches_naive_loops(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4, t in 1usize..12, v in 1usize..4,
        kernel in prop::sample::select(vec![1usize, 3, 5, 9]), stride in 1usize..3, dilation in 1usize..4,
        seed in any::<u64>(),
    ) {
        let padding = dilation * (kernel - 1) / 2;
        let mut rng = Rng::new(seed);
        let x = randn(&mut rng, n * cin * t * v);
        let w = randn(&mut rng, cout * cin * kernel);
        let b = randn(&mut rng, cout);
        let span = dilation * (kernel - 1) + 1;
        prop_assume!(t + 2 * padding >= span);
        let tout = (t + 2 * padding - span) / stride + 1;
        let mut want = vec![0.0; n * cout * tout * v];
        for ni in 0..n { for o in 0..cout { for to in 0..tout { for u in 0..v {
            let mut acc = b[o];
            for i in 0..cin { for j in 0..kernel {
                let src = (to * stride + j * dilation) as isize - padding as isize;
                if src >= 0 && (src as usize) < t {
                    acc += w[(o * cin + i) * kernel + j] * x[((ni * cin + i) * t + src as usize) * v + u];
                }
            }}
            want[((ni * cout + o) * tout + to) * v + u] = acc;
        }}}}
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(f32_tensor(&[n, cin, t, v], &x));
        let wv = tape.constant(f32_tensor(&[cout, cin, kernel], &w));
        let bv = tape.constant(f32_tensor(&[cout], &b));
        let y = tape.temporal_conv(xv, wv, Some(bv), stride, dilation, padding).unwrap();
        prop_assert_eq!(tape.shape(y), &[n, cout, tout, v][..]);
        assert_close(tape.value(y), &want, 1e-5);
    }

    #[test]
    fn pointwise_conv_matches_naive_loops(
        n in 1usize..3, cin in 1usize..6, cout in 1usize..6, s in 1usize..20, seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let x = randn(&mut rng, n * cin * s);
        let w = randn(&mut rng, cout * cin);
        let b = randn(&mut rng, cout);
        let mut want = vec![0.0; n * cout * s];
        for ni in 0..n { for o in 0..cout { for p in 0..s {
            want[(ni * cout + o) * s + p] = b[o] + (0..cin).map(|i| w[o * cin + i] * x[(ni * cin + i) * s + p]).sum::<f64>();
        }}}
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(f32_tensor(&[n, cin, s], &x));
        let wv = tape.constant(f32_tensor(&[cout, cin], &w));
        let bv = tape.constant(f32_tensor(&[cout], &b));
        let y = tape.pointwise_conv(xv, wv, Some(bv)).unwrap();
        assert_close(tape.value(y), &want, 1e-5);
    }

    #[test]
    fn max_pool_matches_naive_loops(t in 1usize..15, stride in 1usize..3, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (c, v) = (2, 3);
        let x = randn(&mut rng, c * t * v);
        let tout = (t + 2 - 3) / stride + 1;
        let mut want = vec![0.0; c * tout * v];
        for ci in 0..c { for to in 0..tout { for u in 0..v {
            let mut m = f64::NEG_INFINITY;
            for j in 0..3 {
                let src = (to * stride + j) as isize - 1;
                if src >= 0 && (src as usize) < t {
                    m = m.max(x[(ci * t + src as usize) * v + u]);
                }
            }
            want[(ci * tout + to) * v + u] = m;
        }}}
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(f32_tensor(&[1, c, t, v], &x));
        let y = tape.temporal_max_pool(xv, 3, stride, 1).unwrap();
        assert_close(tape.value(y), &want, 1e-6);
    }
}

#[test]
fn batch_norm_train_normalizes_and_updates_running_stats() {
    let mut rng = Rng::new(3);
    let (n, c, s) = (4, 2, 5);
    let x = randn(&mut rng, n * c * s);
    let mut mean = Tensor::<f64>::zeros(&[c]);
    let mut var = Tensor::<f64>::full(&[c], 1.0);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(Tensor::from_f64(&[n, c, s], &x).unwrap());
    let g = tape.constant(Tensor::full(&[c], 1.0));
    let b = tape.constant(Tensor::zeros(&[c]));
    let y = tape
        .batch_norm(xv, g, b, Some((&mut mean, &mut var)), BatchNormMode::Train)
        .unwrap();
    let y = tape.value(y).data().to_vec();
    for ci in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|ni| (0..s).map(move |p| (ni, p)))
            .map(|(ni, p)| x[(ni * c + ci) * s + p])
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let biased = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        let unbiased = biased * vals.len() as f64 / (vals.len() - 1) as f64;
        assert!((mean.data()[ci] - 0.1 * m).abs() < 1e-12);
        assert!((var.data()[ci] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
        for ni in 0..n {
            for p in 0..s {
                let i = (ni * c + ci) * s + p;
                assert!((y[i] - (x[i] - m) / (biased + 1e-5).sqrt()).abs() < 1e-12);
            }
        }
    }
}
