use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds a scalar loss from leaves `inputs` (all differentiable) on a fresh tape.
type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

fn analytic(inputs: &[Tensor], build: &Build) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    vars.iter().map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(v).numel()])).collect()
}

fn eval(inputs: &[Tensor], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item()
}

/// Worst relative error between analytic gradients and central differences.
#[allow(clippy::needless_range_loop)]
fn fd_check(inputs: &[Tensor], build: &Build, h: f64) -> f64 {
    let grads = analytic(inputs, build);
    let mut worst = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        for i in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[i] -= h;
            let fd = (eval(&plus, build) - eval(&minus, build)) / (2.0 * h);
            let a = grads[ti][i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn identity_kernel_conv_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&[2, 1, 5, 5], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let w = tape.leaf(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = tape.leaf(Tensor::zeros(&[1]));
    let y = tape.conv2d(xv, w, b, 0).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
}

#[test]
fn ones_kernel_center_sums_window() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = tape.leaf(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, w, b, 1).unwrap();
    let out = tape.value(y).data();
    // Direct summation over the zero-padded window.
    let mut expect = [0.0; 9];
    for r in 0..3i32 {
        for c in 0..3i32 {
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if (0..3).contains(&(r + dr)) && (0..3).contains(&(c + dc)) {
                        expect[(r * 3 + c) as usize] += 1.0;
                    }
                }
            }
        }
    }
    assert_eq!(out[4], 9.0);
    assert_eq!(out, expect);
}

#[test]
fn conv_output_shape() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2, 1, 32, 32]));
    let w = tape.leaf(Tensor::zeros(&[8, 1, 3, 3]));
    let b = tape.leaf(Tensor::zeros(&[8]));
    let y = tape.conv2d(x, w, b, 1).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 8, 32, 32]);
}

#[test]
fn conv_channel_mismatch_is_descriptive() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
    let w = tape.leaf(Tensor::zeros(&[3, 1, 3, 3]));
    let b = tape.leaf(Tensor::zeros(&[3]));
    let err = tape.conv2d(x, w, b, 1).unwrap_err().to_string();
    assert!(err.contains("channels"), "{err}");
}

#[test]
fn linear_relu_pool_flatten_shapes_and_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[1, 3], vec![1.0, -2.0, 3.0]).unwrap());
    let w = tape.leaf(Tensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap());
    let b = tape.leaf(Tensor::new(&[2], vec![0.5, 0.0]).unwrap());
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[1.5, 1.0]);
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[1.0, 0.0, 3.0]);

    let img = tape.leaf(Tensor::new(&[1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, -1.0]).unwrap());
    let p = tape.maxpool2(img).unwrap();
    assert_eq!(tape.value(p).shape(), &[1, 1, 1, 2]);
    assert_eq!(tape.value(p).data(), &[5.0, 9.0]);
    let f = tape.flatten(img).unwrap();
    assert_eq!(tape.value(f).shape(), &[1, 8]);
}

#[test]
fn cross_entropy_uniform_and_saturated() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::zeros(&[1, 5]));
    let l = tape.cross_entropy(z, &[2], Reduction::Mean).unwrap();
    assert!((tape.value(l).item() - 5f64.ln()).abs() < 1e-15);
    assert!((tape.value(l).item() - 1.60944).abs() < 1e-5);

    let mut logits = vec![0.0; 5];
    logits[3] = 1000.0;
    let z = tape.leaf(Tensor::new(&[1, 5], logits).unwrap());
    let l = tape.cross_entropy(z, &[3], Reduction::Mean).unwrap();
    assert!(tape.value(l).item().abs() < 1e-12);
}

#[test]
fn cross_entropy_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = rand_tensor(&[4, 5], &mut rng);
    let labels = [0, 4, 2, 2];
    let mut tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let l = tape.cross_entropy(zv, &labels, Reduction::Mean).unwrap();
    let mut direct = 0.0;
    for i in 0..4 {
        let row = &z.data()[i * 5..][..5];
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        direct -= (row[labels[i]].exp() / denom).ln();
    }
    direct /= 4.0;
    assert!((tape.value(l).item() - direct).abs() < 1e-12);
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::zeros(&[1, 3]));
    assert!(tape.cross_entropy(z, &[3], Reduction::Mean).is_err());
}

#[test]
fn sum_and_square_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&[3, 4], &mut rng);
    let g = analytic(std::slice::from_ref(&x), &|t, v| t.sum(v[0]));
    assert!(g[0].iter().all(|&v| v == 1.0));
    let g = analytic(std::slice::from_ref(&x), &|t, v| {
        let s = t.square(v[0]);
        t.sum(s)
    });
    for (gi, xi) in g[0].iter().zip(x.data()) {
        assert_eq!(*gi, 2.0 * xi);
    }
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2]).with_grad());
    let y = tape.square(x);
    assert!(tape.backward(y).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[2], 3.0));
    let w = tape.leaf(Tensor::full(&[2], 1.0).with_grad());
    let s = tape.add(x, w).unwrap();
    let l = tape.sum(s);
    tape.backward(l).unwrap();
    assert!(tape.grad(x).is_none());
    assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0]);
}

fn small_cnn_loss(t: &mut Tape, v: &[Var]) -> Var {
    let h = t.conv2d(v[0], v[1], v[2], 1).unwrap();
    let h = t.relu(h);
    let h = t.maxpool2(h).unwrap();
    let h = t.conv2d(h, v[3], v[4], 1).unwrap();
    let h = t.relu(h);
    let h = t.maxpool2(h).unwrap();
    let h = t.flatten(h).unwrap();
    let z = t.linear(h, v[5], v[6]).unwrap();
    t.cross_entropy(z, &[1, 2], Reduction::Mean).unwrap()
}

#[test]
fn small_cnn_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        rand_tensor(&[2, 1, 8, 8], &mut rng),
        rand_tensor(&[3, 1, 3, 3], &mut rng),
        rand_tensor(&[3], &mut rng),
        rand_tensor(&[4, 3, 3, 3], &mut rng),
        rand_tensor(&[4], &mut rng),
        rand_tensor(&[3, 16], &mut rng),
        rand_tensor(&[3], &mut rng),
    ];
    let err = fd_check(&inputs, &small_cnn_loss, 1e-5);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradients_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![
        rand_tensor(&[2, 1, 8, 8], &mut rng),
        rand_tensor(&[3, 1, 3, 3], &mut rng),
        rand_tensor(&[3], &mut rng),
        rand_tensor(&[4, 3, 3, 3], &mut rng),
        rand_tensor(&[4], &mut rng),
        rand_tensor(&[3, 16], &mut rng),
        rand_tensor(&[3], &mut rng),
    ];
    let a = analytic(&inputs, &small_cnn_loss);
    let b = analytic(&inputs, &small_cnn_loss);
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn per_plane_masks_match_shared_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&[2, 1, 4, 4], &mut rng);
    let m = rand_tensor(&[4, 4], &mut rng);
    let stacked = Tensor::new(&[2, 4, 4], [m.data(), m.data()].concat()).unwrap();
    let mut t = Tape::new();
    let xv = t.leaf(x.clone());
    let shared = t.leaf(m);
    let per = t.leaf(stacked);
    let a = t.spectral_filter(xv, shared).unwrap();
    let b = t.spectral_filter(xv, per).unwrap();
    assert_eq!(t.value(a).data(), t.value(b).data());
    let three = t.leaf(Tensor::zeros(&[3, 4, 4]));
    assert!(t.spectral_filter(xv, three).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn weighted(t: &mut Tape, y: Var, seed: u64) -> Var {
        // Random linear functional so every output coordinate matters.
        let n = t.value(y).numel();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shape = t.value(y).shape().to_vec();
        let wv = t.leaf(Tensor::new(&shape, w).unwrap());
        let sq = t.square(wv);
        let s = t.add(y, sq).unwrap();
        let s2 = t.square(s);
        t.sum(s2)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn conv_matches_fd(seed in any::<u64>(), pad in 0usize..2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![
                rand_tensor(&[1, 2, 5, 5], &mut rng),
                rand_tensor(&[3, 2, 3, 3], &mut rng),
                rand_tensor(&[3], &mut rng),
            ];
            let err = fd_check(&inputs, &move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], pad).unwrap();
                weighted(t, y, seed)
            }, 1e-5);
            prop_assert!(err < 1e-4, "{}", err);
        }

        #[test]
        fn linear_matches_fd(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![
                rand_tensor(&[3, 4], &mut rng),
                rand_tensor(&[2, 4], &mut rng),
                rand_tensor(&[2], &mut rng),
            ];
            let err = fd_check(&inputs, &move |t, v| {
                let y = t.linear(v[0], v[1], v[2]).unwrap();
                weighted(t, y, seed)
            }, 1e-5);
            prop_assert!(err < 1e-4, "{}", err);
        }

        #[test]
        fn relu_and_pool_match_fd(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![rand_tensor(&[1, 2, 4, 4], &mut rng)];
            let err = fd_check(&inputs, &move |t, v| {
                let r = t.relu(v[0]);
                let p = t.maxpool2(r).unwrap();
                let f = t.flatten(p).unwrap();
                weighted(t, f, seed)
            }, 1e-6);
            prop_assert!(err < 1e-4, "{}", err);
        }

        #[test]
        fn cross_entropy_matches_fd(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![rand_tensor(&[3, 5], &mut rng)];
            let err = fd_check(&inputs, &|t, v| {
                let l = t.cross_entropy(v[0], &[0, 3, 4], Reduction::None).unwrap();
                let e = t.exp_clamped(l, 50.0);
                t.sum(e)
            }, 1e-5);
            prop_assert!(err < 1e-4, "{}", err);
        }

        #[test]
        fn spectral_filter_matches_fd(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![rand_tensor(&[2, 1, 4, 4], &mut rng), rand_tensor(&[4, 4], &mut rng)];
            let err = fd_check(&inputs, &move |t, v| {
                let y = t.spectral_filter(v[0], v[1]).unwrap();
                weighted(t, y, seed)
            }, 1e-5);
            prop_assert!(err < 1e-4, "{}", err);
        }

        #[test]
        fn per_plane_spectral_filter_matches_fd(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![rand_tensor(&[3, 1, 4, 4], &mut rng), rand_tensor(&[3, 4, 4], &mut rng)];
            let err = fd_check(&inputs, &move |t, v| {
                let y = t.spectral_filter(v[0], v[1]).unwrap();
                weighted(t, y, seed)
            }, 1e-5);
            prop_assert!(err < 1e-4, "{}", err);
        }

        #[test]
        fn norms_and_affine_match_fd(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![rand_tensor(&[6], &mut rng)];
            let err = fd_check(&inputs, &|t, v| {
                let a = t.affine(v[0], 1.7, -0.2);
                let n1 = t.abs_sum(a);
                let n2 = t.l2_norm(v[0]);
                let s = t.add(n1, n2).unwrap();
                t.scale(s, 0.5)
            }, 1e-6);
            prop_assert!(err < 1e-4, "{}", err);
        }
    }
}
