//! Central finite-difference checks for every op. Each graph ends in an
//! elementwise product with a fixed random matrix before the final mean, so
//! output gradients are non-uniform and transposition bugs cannot hide.

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamSet, Tape, Var, MASK_VALUE};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let dist = Uniform::new(-1.0, 1.0);
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Multiply by a fixed random matrix, then mean, to get a scalar with
/// non-uniform sensitivities.
fn scalarize(tape: &mut Tape, v: Var, mixer: &Array2<f64>) -> Var {
    let r = tape.leaf(mixer.clone());
    let m = tape.mul(v, r);
    tape.mean_all(m)
}

fn fd_check<F>(build: F, inputs: &[Array2<f64>])
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let root = build(&mut tape, &vars);
    tape.backward(root);
    let analytic: Vec<Array2<f64>> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(tape.value(v).dim()))
        })
        .collect();

    let eval = |perturbed: &[Array2<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let r = build(&mut t, &vs);
        t.value(r)[[0, 0]]
    };

    for (pi, input) in inputs.iter().enumerate() {
        for flat in 0..input.len() {
            let (r, c) = (flat / input.ncols(), flat % input.ncols());
            let mut plus = inputs.to_vec();
            plus[pi][[r, c]] += EPS;
            let mut minus = inputs.to_vec();
            minus[pi][[r, c]] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let a = analytic[pi][[r, c]];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            assert!(
                (a - numeric).abs() / denom < TOL,
                "input {pi} entry ({r},{c}): analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn grad_elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, 3, 4);
    let b = randn(&mut rng, 3, 4);
    let mixer = randn(&mut rng, 3, 4);
    fd_check(
        |t, v| {
            let s = t.add(v[0], v[1]);
            let d = t.sub(s, v[1]);
            let m = t.mul(d, v[0]);
            let sc = t.scale(m, -1.7);
            let ac = t.add_const(sc, 0.3);
            scalarize(t, ac, &mixer)
        },
        &[a, b],
    );
}

#[test]
fn grad_row_broadcast_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = randn(&mut rng, 4, 3);
    let row = randn(&mut rng, 1, 3);
    let gain = randn(&mut rng, 1, 3);
    let mixer = randn(&mut rng, 4, 3);
    fd_check(
        |t, v| {
            let shifted = t.add_row(v[0], v[1]);
            let scaled = t.mul_row(shifted, v[2]);
            scalarize(t, scaled, &mixer)
        },
        &[a, row, gain],
    );
}

#[test]
fn grad_matmul_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&mut rng, 3, 5);
    let b = randn(&mut rng, 5, 2);
    let c = randn(&mut rng, 4, 5);
    let mixer_ab = randn(&mut rng, 3, 2);
    let mixer_ac = randn(&mut rng, 3, 4);
    fd_check(
        |t, v| {
            let ab = t.matmul(v[0], v[1]);
            scalarize(t, ab, &mixer_ab)
        },
        &[a.clone(), b],
    );
    fd_check(
        |t, v| {
            let ac = t.matmul_trans_b(v[1], v[0]);
            let tr = t.transpose(ac);
            scalarize(t, tr, &mixer_ac)
        },
        &[a, c],
    );
}

#[test]
fn grad_relu_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut a = randn(&mut rng, 4, 4);
    a.mapv_inplace(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
    let mixer = randn(&mut rng, 4, 4);
    fd_check(
        |t, v| {
            let r = t.relu(v[0]);
            scalarize(t, r, &mixer)
        },
        &[a],
    );
}

#[test]
fn grad_softmax_and_logsumexp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = randn(&mut rng, 3, 6);
    let mixer_sm = randn(&mut rng, 3, 6);
    let mixer_lse = randn(&mut rng, 3, 1);
    fd_check(
        |t, v| {
            let s = t.softmax_rows(v[0]);
            scalarize(t, s, &mixer_sm)
        },
        &[a.clone()],
    );
    fd_check(
        |t, v| {
            let l = t.logsumexp_rows(v[0]);
            scalarize(t, l, &mixer_lse)
        },
        &[a],
    );
}

#[test]
fn grad_select_per_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = randn(&mut rng, 4, 5);
    let mixer = randn(&mut rng, 4, 1);
    fd_check(
        |t, v| {
            let s = t.select_per_row(v[0], vec![4, 0, 2, 2]);
            scalarize(t, s, &mixer)
        },
        &[a],
    );
}

#[test]
fn grad_normalization_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = randn(&mut rng, 3, 5);
    let mixer = randn(&mut rng, 3, 5);
    fd_check(
        |t, v| {
            let n = t.row_normalize(v[0]);
            scalarize(t, n, &mixer)
        },
        &[a.clone()],
    );
    fd_check(
        |t, v| {
            let n = t.layer_norm_rows(v[0]);
            scalarize(t, n, &mixer)
        },
        &[a],
    );
}

#[test]
fn grad_reductions_and_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = randn(&mut rng, 4, 3);
    let b = randn(&mut rng, 2, 3);
    let mixer_mean = randn(&mut rng, 1, 3);
    let mixer_cat = randn(&mut rng, 6, 3);
    fd_check(
        |t, v| {
            let m = t.mean_rows(v[0]);
            scalarize(t, m, &mixer_mean)
        },
        &[a.clone()],
    );
    fd_check(
        |t, v| {
            let cat = t.concat_rows(vec![v[0], v[1]]);
            scalarize(t, cat, &mixer_cat)
        },
        &[a, b],
    );
}

#[test]
fn grad_embed_gather_accumulates_repeats() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let table = randn(&mut rng, 5, 3);
    let mixer = randn(&mut rng, 4, 3);
    // Index 2 appears twice: its gradient row must be the sum of both uses.
    fd_check(
        |t, v| {
            let e = t.embed_gather(v[0], vec![2, 0, 2, 4]);
            scalarize(t, e, &mixer)
        },
        &[table],
    );
}

#[test]
fn grad_im2col_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (c, h, w, k, stride) in [(2, 5, 4, 3, 2), (1, 4, 4, 1, 1), (3, 6, 6, 3, 1)] {
        let src = randn(&mut rng, c, h * w);
        let pad = k / 2;
        let out_h = (h + 2 * pad - k) / stride + 1;
        let out_w = (w + 2 * pad - k) / stride + 1;
        let mixer = randn(&mut rng, c * k * k, out_h * out_w);
        fd_check(
            |t, v| {
                let cols = t.im2col(v[0], h, w, k, stride);
                scalarize(t, cols, &mixer)
            },
            &[src],
        );
    }
}

#[test]
fn stop_grad_blocks_flow() {
    let mut tape = Tape::new();
    let x = tape.leaf(Array2::from_elem((2, 2), 1.5));
    let frozen = tape.stop_grad(x);
    let y = tape.mul(frozen, frozen);
    let loss = tape.mean_all(y);
    tape.backward(loss);
    assert_eq!(tape.value(frozen), tape.value(x));
    assert!(tape.grad(x).is_none(), "gradient leaked through stop_grad");
    assert!(tape.grad(frozen).is_some());
}

#[test]
fn shared_subexpressions_accumulate() {
    // f(x) = mean(x*x + x); df/dx = (2x + 1) / n.
    let mut tape = Tape::new();
    let vals = Array2::from_shape_vec((1, 3), vec![0.5, -2.0, 3.0]).unwrap();
    let x = tape.leaf(vals.clone());
    let sq = tape.mul(x, x);
    let sum = tape.add(sq, x);
    let loss = tape.mean_all(sum);
    tape.backward(loss);
    let g = tape.grad(x).unwrap();
    for j in 0..3 {
        let expect = (2.0 * vals[[0, j]] + 1.0) / 3.0;
        assert!((g[[0, j]] - expect).abs() < 1e-12);
    }
}

#[test]
fn unused_leaf_has_no_grad() {
    let mut tape = Tape::new();
    let used = tape.leaf(Array2::from_elem((1, 1), 2.0));
    let unused = tape.leaf(Array2::from_elem((3, 3), 1.0));
    let loss = tape.mean_all(used);
    tape.backward(loss);
    assert!(tape.grad(unused).is_none());
    assert!(tape.grad(used).is_some());
}

#[test]
fn mask_value_keeps_gradients_finite() {
    // Masking with a large negative constant (not -inf) must keep both the
    // forward value and the gradient finite.
    let mut tape = Tape::new();
    let x = tape.leaf(Array2::from_shape_vec((2, 2), vec![0.3, -0.1, 0.2, 0.9]).unwrap());
    let mask = tape.leaf(Array2::from_shape_vec((2, 2), vec![MASK_VALUE, 0.0, 0.0, MASK_VALUE]).unwrap());
    let masked = tape.add(x, mask);
    let lse = tape.logsumexp_rows(masked);
    let loss = tape.mean_all(lse);
    tape.backward(loss);
    let g = tape.grad(x).unwrap();
    assert!(g.iter().all(|v| v.is_finite()));
    // Masked entries get essentially zero gradient.
    assert!(g[[0, 0]].abs() < 1e-12);
    assert!(g[[1, 1]].abs() < 1e-12);
    assert!((g[[0, 1]] - 0.5).abs() < 1e-9);
}

#[test]
fn param_set_binds_saves_and_checksums() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ParamSet::new();
    params.insert("w1", randn(&mut rng, 3, 4));
    params.insert("b1", randn(&mut rng, 1, 4));
    assert_eq!(params.param_count(), 16);

    let mut buf = Vec::new();
    params.save_json(&mut buf).unwrap();
    let reloaded = ParamSet::load_json(buf.as_slice()).unwrap();
    assert_eq!(params, reloaded);
    assert_eq!(params.checksum(), reloaded.checksum());

    let mut tweaked = reloaded.clone();
    tweaked.get_mut("w1")[[0, 0]] += 1e-12;
    assert_ne!(params.checksum(), tweaked.checksum());

    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let w1 = binding.var("w1");
    assert_eq!(tape.value(w1), params.get("w1"));
}
