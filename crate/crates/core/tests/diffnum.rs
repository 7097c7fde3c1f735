mod common;

use common::{check_op, numeric_gradient, oracle_attention, rel_err, rng, to_mat, uniform};
use lvsm::diffnum::{global_grad_norm, qknorm_attention, Tape, Tensor, Var};
use proptest::prelude::*;

#[test]
fn mean_of_squares_gradient_matches_central_differences() {
    let x = uniform(&[5, 7], -1.0, 1.0, &mut rng(1));
    let build = |t: &mut Tape<f64>, x: Var| -> Var {
        let sq = t.mul(x, x).unwrap();
        t.mean(sq).unwrap()
    };
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = build(&mut tape, v);
    let grads = tape.backward(out, None).unwrap();
    let numeric = numeric_gradient(x.data(), 1e-4, |probe| {
        let mut t = Tape::new();
        let v = t.param(Tensor::from_vec(vec![5, 7], probe.to_vec()).unwrap());
        let out = build(&mut t, v);
        t.value(out).data()[0]
    });
    let worst = grads
        .get(v)
        .unwrap()
        .data()
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(*a, *n, 0.0))
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "max relative error {worst:e}");
}

#[test]
fn attention_matches_scalar_loop_oracle_and_differences() {
    // 4 tokens, 2 heads of width 8.
    let mut r = rng(2);
    let q = uniform(&[4, 16], -1.0, 1.0, &mut r);
    let k = uniform(&[4, 16], -1.0, 1.0, &mut r);
    let v = uniform(&[4, 16], -1.0, 1.0, &mut r);
    let gains = vec![2.5, 1.3];
    let as3 = |t: &Tensor<f64>| t.clone().reshape(vec![4, 2, 8]).unwrap();
    let got = qknorm_attention(&as3(&q), &as3(&k), &as3(&v), None, &gains).unwrap();
    let want = oracle_attention(&to_mat(&q), &to_mat(&k), &to_mat(&v), &gains, 2, &|_, _| {
        true
    });
    for (a, b) in got.data().iter().zip(want.iter().flatten()) {
        assert!((a - b).abs() < 1e-6);
    }
    let g = Tensor::from_vec(vec![2], gains).unwrap();
    let err = check_op(&[q, k, v, g], &|t: &mut Tape<f64>, x: &[Var]| {
        t.attention(x[0], x[1], x[2], x[3], 2, None)
    });
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn masked_attention_matches_oracle() {
    let mut r = rng(3);
    let q = uniform(&[3, 6], -1.0, 1.0, &mut r);
    let k = uniform(&[5, 6], -1.0, 1.0, &mut r);
    let v = uniform(&[5, 6], -1.0, 1.0, &mut r);
    let allowed = |i: usize, j: usize| j <= i + 1;
    let mask: Vec<bool> = (0..15).map(|n| allowed(n / 5, n % 5)).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = [&q, &k, &v]
        .iter()
        .map(|t| tape.constant((*t).clone()))
        .collect();
    let gains = tape.constant(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let out = tape
        .attention(vars[0], vars[1], vars[2], gains, 3, Some(&mask))
        .unwrap();
    let want = oracle_attention(
        &to_mat(&q),
        &to_mat(&k),
        &to_mat(&v),
        &[1.0, 2.0, 3.0],
        3,
        &allowed,
    );
    for (a, b) in tape.value(out).data().iter().zip(want.iter().flatten()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn grad_norm_matches_flattened_norm() {
    let mut r = rng(4);
    let tensors: Vec<Tensor<f64>> = [[3, 4], [7, 1], [2, 9]]
        .iter()
        .map(|s| uniform(s, -2.0, 2.0, &mut r))
        .collect();
    let flat: Vec<f64> = tensors.iter().flat_map(|t| t.data().to_vec()).collect();
    let want = flat.iter().map(|x| x * x).sum::<f64>().sqrt();
    let got = global_grad_norm(tensors.iter().map(Some)).unwrap();
    assert!((got - want).abs() < 1e-7);
}

#[test]
fn backward_sums_contributions_of_a_reused_value() {
    // y = x·x + 3x, dy/dx = 2x + 3.
    let x = Tensor::from_vec(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let sq = tape.mul(xv, xv).unwrap();
    let lin = tape.scale(xv, 3.0);
    let y = tape.add(sq, lin).unwrap();
    let g = tape
        .backward(y, Some(Tensor::full(vec![1, 3], 1.0)))
        .unwrap();
    let want: Vec<f64> = x.data().iter().map(|v| 2.0 * v + 3.0).collect();
    assert_eq!(g.get(xv).unwrap().data(), want.as_slice());
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::full(vec![2, 2], 1.0f64));
    let b = tape.constant(Tensor::full(vec![2, 2], 2.0));
    let c = tape.mul(a, b).unwrap();
    let g = tape
        .backward(c, Some(Tensor::full(vec![2, 2], 1.0)))
        .unwrap();
    assert!(g.get(b).is_none());
    assert_eq!(g.get(a).unwrap().data(), &[2.0; 4]);
}

#[test]
fn f32_and_f64_tapes_agree() {
    let mut r = rng(5);
    let a = uniform(&[6, 10], -1.0, 1.0, &mut r);
    let b = uniform(&[10, 4], -1.0, 1.0, &mut r);
    let run64 = {
        let mut t = Tape::new();
        let (x, y) = (t.param(a.clone()), t.param(b.clone()));
        let m = t.matmul(x, y).unwrap();
        let s = t.softmax(m).unwrap();
        t.value(s).clone()
    };
    let run32 = {
        let mut t = Tape::<f32>::new();
        let (x, y) = (t.param(a.cast()), t.param(b.cast()));
        let m = t.matmul(x, y).unwrap();
        let s = t.softmax(m).unwrap();
        t.value(s).cast::<f64>()
    };
    assert!(run64.max_abs_diff(&run32) < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(seed in 0u64..100_000, rows in 1usize..5, cols in 1usize..9) {
        let x = uniform(&[rows, cols], -30.0, 30.0, &mut rng(seed));
        let mut t = Tape::new();
        let v = t.constant(x);
        let s = t.softmax(v).unwrap();
        for row in t.value(s).data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_output_is_centered_and_scaled(seed in 0u64..100_000, cols in 2usize..12) {
        let x = uniform(&[3, cols], -5.0, 5.0, &mut rng(seed));
        let mut t = Tape::new();
        let v = t.constant(x);
        let g = t.constant(Tensor::full(vec![cols], 1.0));
        let y = t.layer_norm(v, g).unwrap();
        for row in t.value(y).data().chunks(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn attention_rows_stay_in_the_value_hull(seed in 0u64..100_000, lq in 1usize..4, lk in 1usize..6) {
        let mut r = rng(seed);
        let q = uniform(&[lq, 1, 4], -1.0, 1.0, &mut r);
        let k = uniform(&[lk, 1, 4], -1.0, 1.0, &mut r);
        let v = uniform(&[lk, 1, 4], -1.0, 1.0, &mut r);
        let out = qknorm_attention(&q, &k, &v, None, &[4.0]).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = v.data().iter().skip(c).step_by(4).copied().collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..lq {
                let o = out.data()[i * 4 + c];
                prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
            }
        }
    }
}
