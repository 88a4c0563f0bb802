use std::rc::Rc;

use dafe::numerics::{grad_check, AttnMask, Coverage, Graph, NodeId, ParamGroup, ParamId, ParamStore, Tensor};
use dafe::{Error, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn store_with(shapes: &[(usize, usize)], seed: u64) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            let t = Tensor::new(vec![r, c], uniform(&mut rng, r * c)).unwrap();
            store.add(format!("p{i}"), ParamGroup::Base, t).unwrap()
        })
        .collect();
    (store, ids)
}

/// Σ out ⊙ w for a fixed pseudo-random `w`, so every output coordinate
/// carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, out: NodeId, seed: u64) -> Result<NodeId> {
    let v = g.value(out);
    let (r, c) = (v.rows(), v.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.input(Tensor::new(vec![r, c], uniform(&mut rng, r * c))?);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn check<F>(shapes: &[(usize, usize)], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let (mut store, ids) = store_with(shapes, seed);
    let f = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let nodes: Vec<NodeId> = ids.iter().map(|&p| g.param(s, p)).collect();
        let out = build(&mut g, &nodes)?;
        let loss = weighted_sum(&mut g, out, seed)?;
        Ok((g, loss))
    };
    grad_check(&mut store, &ids, f, 1e-5, Coverage::All)
        .unwrap()
        .max_rel_error
}

#[test]
fn affine_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let eye = g.input(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let zero = g.input(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
    let y = g.affine(x, eye, zero).unwrap();
    assert_eq!(g.value(y).values(), &[1.0, 2.0]);

    let w = g.input(Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap());
    let ones = g.input(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
    let y = g.affine(x, w, ones).unwrap();
    // hand product: [1·1 + 2·1, 1·0 + 2·1] + 1
    assert_eq!(g.value(y).values(), &[4.0, 3.0]);

    let xz = g.input(Tensor::zeros(vec![3, 4]));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = g.input(Tensor::new(vec![4, 2], uniform(&mut rng, 8)).unwrap());
    let b = g.input(Tensor::from_rows(&[vec![5.0, -2.0]]).unwrap());
    let y = g.affine(xz, w, b).unwrap();
    for r in 0..3 {
        assert_eq!(g.value(y).row(r), &[5.0, -2.0]);
    }
}

#[test]
fn affine_shape_mismatch_is_a_dimension_error() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(vec![2, 3]));
    let w = g.input(Tensor::zeros(vec![2, 2]));
    let b = g.input(Tensor::zeros(vec![1, 2]));
    assert!(matches!(g.affine(x, w, b), Err(Error::Dimension { .. })));
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::<f64>::new();
    let gain = g.input(Tensor::filled(vec![1, 4], 1.0));
    let bias = g.input(Tensor::zeros(vec![1, 4]));
    let x = g.input(Tensor::filled(vec![1, 4], 3.25));
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert!(g.value(y).values().iter().all(|&v| v == 0.0));

    let gain = g.input(Tensor::filled(vec![1, 2], 1.0));
    let bias = g.input(Tensor::zeros(vec![1, 2]));
    let x = g.input(Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap());
    let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
    let v = g.value(y).values();
    assert!((v[0] - 1.0).abs() < 1e-9 && (v[1] + 1.0).abs() < 1e-9, "{v:?}");

    let x = g.input(Tensor::zeros(vec![1, 2]));
    assert!(g.layer_norm(x, gain, bias, 0.0).is_err());
}

#[test]
fn layer_norm_gradient_on_random_4x8() {
    let err = check(&[(4, 8), (1, 8), (1, 8)], 11, |g, n| g.layer_norm(n[0], n[1], n[2], 1e-5));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let s = g.input(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
    let p = g.softmax_masked(s, &[true, true]).unwrap();
    assert_eq!(g.value(p).values(), &[0.5, 0.5]);

    let s = g.input(Tensor::from_rows(&[vec![5.0, 7.0]]).unwrap());
    let p = g.softmax_masked(s, &[true, false]).unwrap();
    assert_eq!(g.value(p).values(), &[1.0, 0.0]);

    let s = g.input(Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap());
    let p = g.softmax_masked(s, &[true, true]).unwrap();
    let v = g.value(p).values();
    assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15, "{v:?}");
}

#[test]
fn softmax_fully_masked_row_is_rejected() {
    let mut g = Graph::<f64>::new();
    let s = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap());
    let err = g.softmax_masked(s, &[true, false, false, false]).unwrap_err();
    assert!(matches!(err, Error::InvalidMask { row: 1 }));
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::<f64>::new();
    let logits = g.input(Tensor::filled(vec![3, 10], 0.7));
    let loss = g.cross_entropy(logits, &[0, 4, 9], 99).unwrap();
    assert!((g.value(loss).values()[0] - 10f64.ln()).abs() < 1e-12);

    let mut row = vec![0.0; 5];
    row[2] = 1e4;
    let logits = g.input(Tensor::from_rows(&[row]).unwrap());
    let loss = g.cross_entropy(logits, &[2], 99).unwrap();
    assert!(g.value(loss).values()[0].abs() < 1e-12);
}

#[test]
fn cross_entropy_ignores_marked_positions() {
    let mut g = Graph::<f64>::new();
    let logits = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![50.0, -50.0]]).unwrap());
    let loss = g.cross_entropy(logits, &[1, 0], 0).unwrap();
    // only row 0 counts: −log σ(1)
    let expected = (1.0 + (-1f64).exp()).ln();
    assert!((g.value(loss).values()[0] - expected).abs() < 1e-12);
    let all_ignored = g.cross_entropy(logits, &[0, 0], 0);
    assert!(matches!(all_ignored, Err(Error::EmptyLoss)));
}

#[test]
fn cross_entropy_gradient_on_random_3x7() {
    let (mut store, ids) = store_with(&[(3, 7)], 5);
    let f = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let l = g.param(s, ids[0]);
        let loss = g.cross_entropy(l, &[6, 0, 3], 99)?;
        Ok((g, loss))
    };
    let r = grad_check(&mut store, &ids, f, 1e-5, Coverage::All).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn grad_check_examples() {
    let mut store = ParamStore::new();
    let x = store
        .add("x", ParamGroup::Base, Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap())
        .unwrap();
    let square = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let n = g.param(s, x);
        let sq = g.mul(n, n)?;
        let loss = g.sum(sq);
        Ok((g, loss))
    };
    let (g, loss) = square(&store).unwrap();
    assert_eq!(g.backward(loss).unwrap().of_param(x).unwrap(), &[2.0, 4.0]);
    let r = grad_check(&mut store, &[x], square, 1e-5, Coverage::All).unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
    assert_eq!(r.coordinates, 2);

    let constant = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let n = g.param(s, x);
        let z = g.scale(n, 0.0);
        let loss = g.sum(z);
        Ok((g, loss))
    };
    let r = grad_check(&mut store, &[x], constant, 1e-5, Coverage::All).unwrap();
    assert_eq!(r.max_rel_error, 0.0);
}

#[test]
fn grad_check_rejects_out_of_range_step() {
    let (mut store, ids) = store_with(&[(1, 2)], 0);
    let f = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let n = g.param(s, ids[0]);
        let loss = g.sum(n);
        Ok((g, loss))
    };
    assert!(grad_check(&mut store, &ids, f, 1e-2, Coverage::All).is_err());
}

#[test]
fn masked_softmax_entries_get_exactly_zero_gradient() {
    let (store, ids) = store_with(&[(2, 4)], 9);
    let mask = [true, false, true, true, false, true, true, false];
    let mut g = Graph::new();
    let s = g.param(&store, ids[0]);
    let p = g.softmax_masked(s, &mask).unwrap();
    let loss = weighted_sum(&mut g, p, 9).unwrap();
    let grads = g.backward(loss).unwrap();
    let gs = grads.of_param(ids[0]).unwrap();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            assert_eq!(gs[i], 0.0);
            assert_eq!(g.value(p).values()[i], 0.0);
        }
    }
}

#[test]
fn backward_leaves_store_gradients_untouched() {
    let (store, ids) = store_with(&[(2, 3)], 1);
    let mut g = Graph::new();
    let n = g.param(&store, ids[0]);
    let loss = g.sum(n);
    g.backward(loss).unwrap();
    assert!(store.get(ids[0]).grad().iter().all(|&v| v == 0.0));
}

fn causal_attention(g: &mut Graph<f64>, n: &[NodeId]) -> Result<NodeId> {
    let mask = Rc::new(AttnMask::from_fn(2, 3, 3, |b, i, j| j <= i && !(b == 1 && j == 2)));
    g.attention(n[0], n[1], n[2], 2, mask)
}

fn gradient_error(op: usize, seed: u64) -> f64 {
    match op {
        0 => check(&[(3, 4), (4, 2)], seed, |g, n| g.matmul(n[0], n[1])),
        1 => check(&[(3, 4), (2, 4)], seed, |g, n| g.matmul_bt(n[0], n[1])),
        2 => check(&[(2, 3), (2, 3)], seed, |g, n| g.add(n[0], n[1])),
        3 => check(&[(2, 3), (2, 3)], seed, |g, n| g.mul(n[0], n[1])),
        4 => check(&[(3, 2), (2, 5), (1, 5)], seed, |g, n| g.affine(n[0], n[1], n[2])),
        5 => check(&[(2, 3)], seed, |g, n| Ok(g.scale(n[0], -1.5))),
        6 => check(&[(3, 3)], seed, |g, n| Ok(g.relu(n[0]))),
        7 => check(&[(2, 3)], seed, |g, n| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(g.dropout(n[0], 0.4, &mut rng))
        }),
        8 => check(&[(5, 3)], seed, |g, n| g.gather(n[0], &[4, 0, 4, 2])),
        9 => check(&[(3, 5), (1, 5), (1, 5)], seed, |g, n| g.layer_norm(n[0], n[1], n[2], 1e-5)),
        10 => check(&[(2, 3)], seed, |g, n| {
            g.softmax_masked(n[0], &[true, true, false, true, true, true])
        }),
        11 => check(&[(6, 4), (6, 4), (6, 4)], seed, causal_attention),
        12 => check(&[(2, 3), (1, 3)], seed, |g, n| g.add_row(n[0], n[1])),
        _ => {
            let (mut store, ids) = store_with(&[(4, 6)], seed);
            let f = |s: &ParamStore<f64>| {
                let mut g = Graph::new();
                let l = g.param(s, ids[0]);
                let loss = g.cross_entropy(l, &[1, 5, 0, 2], 0)?;
                Ok((g, loss))
            };
            grad_check(&mut store, &ids, f, 1e-5, Coverage::All)
                .unwrap()
                .max_rel_error
        }
    }
}

#[test]
fn every_op_passes_finite_differences_over_five_seeds() {
    for op in 0..14 {
        for seed in 0..5 {
            let err = gradient_error(op, seed);
            assert!(err < 1e-3, "op {op} seed {seed}: {err}");
        }
    }
}

#[test]
fn attention_single_key_returns_its_value_row() {
    let mut g = Graph::<f64>::new();
    let q = g.input(Tensor::from_rows(&[vec![3.0, -1.0], vec![0.2, 9.0]]).unwrap());
    let k = g.input(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap());
    let v = g.input(Tensor::from_rows(&[vec![7.0, -3.0]]).unwrap());
    let mask = Rc::new(AttnMask::from_fn(1, 2, 1, |_, _, _| true));
    let out = g.attention(q, k, v, 1, mask).unwrap();
    assert_eq!(g.value(out).values(), &[7.0, -3.0, 7.0, -3.0]);
}

#[test]
fn attention_with_equal_scores_averages_values() {
    let mut g = Graph::<f64>::new();
    let q = g.input(Tensor::zeros(vec![1, 2]));
    let k = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
    let v = g.input(Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 3.0], vec![6.0, -6.0]]).unwrap());
    let mask = Rc::new(AttnMask::from_fn(1, 1, 3, |_, _, _| true));
    let out = g.attention(q, k, v, 2, mask).unwrap();
    let o = g.value(out).values();
    assert!((o[0] - 3.0).abs() < 1e-12 && (o[1] + 1.0).abs() < 1e-12, "{o:?}");
}

#[test]
fn causal_attention_ignores_future_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let qk = uniform(&mut rng, 16);
    let v = uniform(&mut rng, 16);
    let run = |v: Vec<f64>| {
        let mut g = Graph::<f64>::new();
        let q = g.input(Tensor::new(vec![4, 4], qk.clone()).unwrap());
        let vn = g.input(Tensor::new(vec![4, 4], v).unwrap());
        let mask = Rc::new(AttnMask::causal(&[false; 4], 1, 4));
        let out = g.attention(q, q, vn, 2, mask).unwrap();
        g.value(out).values().to_vec()
    };
    let base = run(v.clone());
    for t in 0..3 {
        let mut mutated = v.clone();
        for x in &mut mutated[(t + 1) * 4..] {
            *x += 10.0;
        }
        let out = run(mutated);
        assert_eq!(&out[..(t + 1) * 4], &base[..(t + 1) * 4], "position {t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_sum_to_one(
        scores in prop::collection::vec(-30.0f64..30.0, 12),
        mask in prop::collection::vec(any::<bool>(), 12),
    ) {
        let mut mask = mask;
        for r in 0..3 {
            mask[r * 4] = true;
        }
        let mut g = Graph::<f64>::new();
        let s = g.input(Tensor::new(vec![3, 4], scores).unwrap());
        let p = g.softmax_masked(s, &mask).unwrap();
        let v = g.value(p);
        for r in 0..3 {
            let sum: f64 = v.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        for (x, m) in v.values().iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*x, 0.0);
            }
        }
    }

    #[test]
    fn ops_are_bitwise_deterministic(seed in any::<u64>()) {
        let run = || {
            let (store, ids) = store_with(&[(6, 4), (6, 4), (6, 4)], seed);
            let mut g = Graph::new();
            let n: Vec<NodeId> = ids.iter().map(|&p| g.param(&store, p)).collect();
            let out = causal_attention(&mut g, &n).unwrap();
            let loss = weighted_sum(&mut g, out, seed).unwrap();
            let grads = g.backward(loss).unwrap();
            let mut bits: Vec<u64> = g.value(out).values().iter().map(|v| v.to_bits()).collect();
            for &p in &ids {
                bits.extend(grads.of_param(p).unwrap().iter().map(|v| v.to_bits()));
            }
            bits
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn random_seeds_pass_gradient_checks(op in 0usize..14, seed in 100u64..10_000) {
        let err = gradient_error(op, seed);
        prop_assert!(err < 1e-3, "op {} seed {}: {}", op, seed, err);
    }
}
