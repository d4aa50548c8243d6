mod common;

use common::*;
use htlstm_core::tensor::{contract, flatten, permute, tensorize};
use htlstm_core::DenseTensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn close(a: &DenseTensor, b: &DenseTensor, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

/// A random contraction instance: shapes for `a` and `b` with `k` shared modes
/// placed at random positions.
fn instance(seed: u64) -> (DenseTensor, DenseTensor, Vec<usize>, Vec<usize>) {
    let mut r = rng(seed);
    let k = r.random_range(1..=2usize);
    let fa = r.random_range(0..=2usize);
    let fb = r.random_range(0..=2usize);
    let shared: Vec<usize> = (0..k).map(|_| r.random_range(1..=3)).collect();
    let mut pa: Vec<usize> = (0..k + fa).collect();
    let mut pb: Vec<usize> = (0..k + fb).collect();
    pa.shuffle(&mut r);
    pb.shuffle(&mut r);
    let mut sa = vec![0; k + fa];
    let mut sb = vec![0; k + fb];
    for (i, &s) in shared.iter().enumerate() {
        sa[pa[i]] = s;
        sb[pb[i]] = s;
    }
    for m in &pa[k..] {
        sa[*m] = r.random_range(1..=3);
    }
    for m in &pb[k..] {
        sb[*m] = r.random_range(1..=3);
    }
    let a = random_tensor(&mut r, &sa);
    let b = random_tensor(&mut r, &sb);
    (a, b, pa[..k].to_vec(), pb[..k].to_vec())
}

#[test]
fn contract_matches_index_loops() {
    for seed in 0..50 {
        let (a, b, ma, mb) = instance(seed);
        let got = contract(&a, &b, &ma, &mb).unwrap();
        let want = brute_contract(&a, &b, &ma, &mb);
        assert_eq!(got.shape(), want.shape(), "seed {seed}");
        assert!(max_rel_err(got.data(), want.data()) <= 1e-12, "seed {seed}");
    }
}

#[test]
fn all_ones_bond_of_three() {
    let a = DenseTensor::new(vec![2, 2, 3], vec![1.0; 12]).unwrap();
    let b = DenseTensor::new(vec![3, 2, 2], vec![1.0; 12]).unwrap();
    let c = contract(&a, &b, &[2], &[0]).unwrap();
    assert_eq!(c.shape(), &[2, 2, 2, 2]);
    assert!(c.data().iter().all(|&v| v == 3.0));
}

#[test]
fn transpose_of_three_by_four() {
    let a = DenseTensor::new(vec![3, 4], (0..12).map(f64::from).collect()).unwrap();
    let t = permute(&a, &[1, 0]).unwrap();
    assert_eq!(t.shape(), &[4, 3]);
    for i in 0..3 {
        for j in 0..4 {
            assert_eq!(t.get(&[j, i]), a.get(&[i, j]));
        }
    }
}

#[test]
fn permute_then_inverse_is_identity() {
    let mut r = rng(5);
    let shape: Vec<usize> = (0..5).map(|_| r.random_range(1..=4)).collect();
    let t = random_tensor(&mut r, &shape);
    let mut perm: Vec<usize> = (0..5).collect();
    perm.shuffle(&mut r);
    let mut inv = vec![0; 5];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    let p = permute(&t, &perm).unwrap();
    for (k, &m) in perm.iter().enumerate() {
        assert_eq!(p.shape()[k], shape[m]);
    }
    assert_eq!(permute(&p, &inv).unwrap(), t);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contract_is_bilinear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let (a, b, ma, mb) = instance(seed);
        let mut r = rng(seed ^ 0x9e37);
        let a2 = random_tensor(&mut r, a.shape());
        let b2 = random_tensor(&mut r, b.shape());
        let mut comb = a.scaled(alpha);
        comb.axpy(beta, &a2).unwrap();
        let lhs = contract(&comb, &b, &ma, &mb).unwrap();
        let mut rhs = contract(&a, &b, &ma, &mb).unwrap().scaled(alpha);
        rhs.axpy(beta, &contract(&a2, &b, &ma, &mb).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));

        let mut comb = b.scaled(alpha);
        comb.axpy(beta, &b2).unwrap();
        let lhs = contract(&a, &comb, &ma, &mb).unwrap();
        let mut rhs = contract(&a, &b, &ma, &mb).unwrap().scaled(alpha);
        rhs.axpy(beta, &contract(&a, &b2, &ma, &mb).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn contract_is_associative(seed in any::<u64>(), p in 1usize..4, q in 1usize..4, s in 1usize..4, u in 1usize..4) {
        // (A x_1 B) x C  ==  A x (B x C) on a chain A(p,q) B(q,s) C(s,u)
        let mut r = rng(seed);
        let a = random_tensor(&mut r, &[p, q]);
        let b = random_tensor(&mut r, &[q, s]);
        let c = random_tensor(&mut r, &[s, u]);
        let left = contract(&contract(&a, &b, &[1], &[0]).unwrap(), &c, &[1], &[0]).unwrap();
        let right = contract(&a, &contract(&b, &c, &[1], &[0]).unwrap(), &[1], &[0]).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
    }

    #[test]
    fn tensorize_flatten_round_trip(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let mut r = rng(seed);
        let len: usize = shape.iter().product();
        let v = DenseTensor::vector(random_vec(&mut r, len));
        let t = tensorize(&v, &shape).unwrap();
        prop_assert_eq!(t.shape(), shape.as_slice());
        prop_assert_eq!(flatten(&t), v.clone());
        prop_assert_eq!(tensorize(&flatten(&t), &shape).unwrap(), t);
    }

    #[test]
    fn permute_preserves_entries(shape in prop::collection::vec(1usize..4, 1..6), seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = random_tensor(&mut r, &shape);
        let mut perm: Vec<usize> = (0..shape.len()).collect();
        perm.shuffle(&mut r);
        let p = permute(&t, &perm).unwrap();
        let mut src = vec![0; shape.len()];
        for_each_index(p.shape(), |idx| {
            for (k, &m) in perm.iter().enumerate() {
                src[m] = idx[k];
            }
            assert_eq!(p.get(idx), t.get(&src));
        });
    }
}
