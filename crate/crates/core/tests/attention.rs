//! Entity embedding, shared Q/K/V projections and the dense and sparse
//! attention heads against reference pipelines built from naive oracles.

mod common;

use attnmix_core::attention::{attend_dense, attend_sparse, embed_entities, project_qkv, AttentionParams, EntitySet};
use attnmix_core::numerics::{Shape, Tensor};
use attnmix_testkit::{matmul_naive, simplex_projection_bruteforce, softmax_naive, SplitMix};
use proptest::prelude::*;

fn random_params(rng: &mut SplitMix, d_e: usize, d_x: usize) -> AttentionParams {
    AttentionParams {
        embed_w: Tensor::matrix(d_e, d_x, rng.vec(d_e * d_x, -1.0, 1.0)),
        embed_b: Tensor::vector(rng.vec(d_x, -1.0, 1.0)),
        w_q: Tensor::matrix(d_x, d_x, rng.vec(d_x * d_x, -1.0, 1.0)),
        w_k: Tensor::matrix(d_x, d_x, rng.vec(d_x * d_x, -1.0, 1.0)),
        w_v: Tensor::matrix(d_x, d_x, rng.vec(d_x * d_x, -1.0, 1.0)),
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Weights and output of one attention head from naive parts: logits by
/// triple loop, each row normalised over the kept keys only.
fn reference_head(q: &[f64], k: &[f64], v: &[f64], m: usize, d: usize, keep: &[bool], sparse: bool) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / (d as f64).sqrt();
    let z: Vec<f64> = matmul_naive(q, &transpose(k, m, d), m, d, m).iter().map(|v| v * scale).collect();
    let mut p = vec![0.0; m * m];
    for r in 0..m {
        let kept: Vec<f64> = (0..m).filter(|&j| keep[j]).map(|j| z[r * m + j]).collect();
        let w = if sparse { simplex_projection_bruteforce(&kept) } else { softmax_naive(&kept) };
        for (j, w) in (0..m).filter(|&j| keep[j]).zip(w) {
            p[r * m + j] = w;
        }
    }
    let y = matmul_naive(&p, v, m, m, d);
    (p, y)
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "entry {i}: {g} vs {w}");
    }
}

#[test]
fn embedding_matches_per_row_affine_reference() {
    let mut rng = SplitMix(1);
    let (m, d_e, d_x) = (5, 7, 4);
    let params = random_params(&mut rng, d_e, d_x);
    let o = rng.vec(m * d_e, -1.0, 1.0);
    let x = embed_entities(&EntitySet::new(Tensor::matrix(m, d_e, o.clone()), vec![true; m]).unwrap(), &params).unwrap();
    for r in 0..m {
        for c in 0..d_x {
            let want: f64 = params.embed_b.data()[c] + (0..d_e).map(|i| o[r * d_e + i] * params.embed_w.data()[i * d_x + c]).sum::<f64>();
            assert!((x.data()[r * d_x + c] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn projections_match_matmul_reference_and_zero_input() {
    let mut rng = SplitMix(2);
    let (m, d) = (4, 3);
    let params = random_params(&mut rng, 2, d);
    let x = rng.vec(m * d, -1.0, 1.0);
    let (q, k, v) = project_qkv(&Tensor::matrix(m, d, x.clone()), &params).unwrap();
    assert_close(q.data(), &matmul_naive(&x, params.w_q.data(), m, d, d), 1e-12);
    assert_close(k.data(), &matmul_naive(&x, params.w_k.data(), m, d, d), 1e-12);
    assert_close(v.data(), &matmul_naive(&x, params.w_v.data(), m, d, d), 1e-12);

    let (q, k, v) = project_qkv(&Tensor::zeros(Shape::matrix(m, d)), &params).unwrap();
    for t in [q, k, v] {
        assert!(t.data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn dense_head_two_entities_matches_reference_pipeline() {
    let mut rng = SplitMix(3);
    let (m, d) = (2, 3);
    let (q, k, v) = (rng.vec(m * d, -1.0, 1.0), rng.vec(m * d, -1.0, 1.0), rng.vec(m * d, -1.0, 1.0));
    let got = attend_dense(&Tensor::matrix(m, d, q.clone()), &Tensor::matrix(m, d, k.clone()), &Tensor::matrix(m, d, v.clone()), None).unwrap();
    let (p, y) = reference_head(&q, &k, &v, m, d, &[true; 2], false);
    assert_close(got.weights.data(), &p, 1e-12);
    assert_close(got.output.data(), &y, 1e-12);
}

#[test]
fn sparse_head_three_entities_matches_reference_pipeline() {
    let mut rng = SplitMix(4);
    let (m, d) = (3, 4);
    for _ in 0..50 {
        let (q, k, v) = (rng.vec(m * d, -2.0, 2.0), rng.vec(m * d, -2.0, 2.0), rng.vec(m * d, -1.0, 1.0));
        let got = attend_sparse(&Tensor::matrix(m, d, q.clone()), &Tensor::matrix(m, d, k.clone()), &Tensor::matrix(m, d, v.clone()), None).unwrap();
        let (p, y) = reference_head(&q, &k, &v, m, d, &[true; 3], true);
        assert_close(got.weights.data(), &p, 1e-9);
        assert_close(got.output.data(), &y, 1e-9);
    }
}

#[test]
fn aligned_key_with_unit_gap_returns_its_value_row() {
    // d = 1, so logits are q·k. Query 3, keys [1, 0, −1]: logits [3, 0, −3].
    let q = Tensor::matrix(3, 1, vec![3.0, 3.0, 3.0]);
    let k = Tensor::matrix(3, 1, vec![1.0, 0.0, -1.0]);
    let v = Tensor::matrix(3, 1, vec![7.0, -2.0, 5.0]);
    let out = attend_sparse(&q, &k, &v, None).unwrap();
    assert_eq!(out.output.data(), &[7.0, 7.0, 7.0]);
    assert_eq!(out.weights.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn equal_logits_give_identical_heads() {
    let mut rng = SplitMix(5);
    let (m, d) = (4, 3);
    let q = Tensor::zeros(Shape::matrix(m, d));
    let k = Tensor::matrix(m, d, rng.vec(m * d, -1.0, 1.0));
    let v = Tensor::matrix(m, d, rng.vec(m * d, -1.0, 1.0));
    let dense = attend_dense(&q, &k, &v, None).unwrap();
    let sparse = attend_sparse(&q, &k, &v, None).unwrap();
    assert_eq!(dense, sparse);
}

#[test]
fn masked_keys_get_exact_zeros_in_both_heads() {
    let mut rng = SplitMix(6);
    let (m, d) = (5, 3);
    let keep = [true, false, true, true, false];
    let (q, k, v) = (rng.vec(m * d, -1.0, 1.0), rng.vec(m * d, -1.0, 1.0), rng.vec(m * d, -1.0, 1.0));
    let t = |x: &[f64]| Tensor::matrix(m, d, x.to_vec());
    for sparse in [false, true] {
        let out = if sparse { attend_sparse(&t(&q), &t(&k), &t(&v), Some(&keep)) } else { attend_dense(&t(&q), &t(&k), &t(&v), Some(&keep)) }.unwrap();
        let (p, y) = reference_head(&q, &k, &v, m, d, &keep, sparse);
        assert_close(out.weights.data(), &p, 1e-9);
        assert_close(out.output.data(), &y, 1e-9);
        for r in 0..m {
            for j in [1, 4] {
                assert_eq!(out.weights.data()[r * m + j].to_bits(), 0.0f64.to_bits());
            }
        }
    }
}

#[test]
fn shared_projection_change_moves_both_heads() {
    let mut rng = SplitMix(7);
    let (m, d_e, d_x) = (4, 5, 3);
    let mut params = random_params(&mut rng, d_e, d_x);
    let obs = EntitySet::new(Tensor::matrix(m, d_e, rng.vec(m * d_e, -1.0, 1.0)), vec![true; m]).unwrap();
    let heads = |p: &AttentionParams| {
        let x = embed_entities(&obs, p).unwrap();
        let (q, k, v) = project_qkv(&x, p).unwrap();
        (attend_dense(&q, &k, &v, None).unwrap().output, attend_sparse(&q, &k, &v, None).unwrap().output)
    };
    let (d0, s0) = heads(&params);
    params.w_v.data_mut()[0] += 0.5;
    let (d1, s1) = heads(&params);
    assert_ne!(d0, d1);
    assert_ne!(s0, s1);
}

proptest! {
    #[test]
    fn heads_are_permutation_equivariant(seed in any::<u64>(), m in 2usize..7, shift in 1usize..6) {
        let mut rng = SplitMix(seed);
        let d = 3;
        let (q, k, v) = (rng.vec(m * d, -2.0, 2.0), rng.vec(m * d, -2.0, 2.0), rng.vec(m * d, -1.0, 1.0));
        let perm: Vec<usize> = (0..m).map(|i| (i + shift) % m).collect();
        let permute = |x: &[f64]| -> Tensor {
            Tensor::matrix(m, d, perm.iter().flat_map(|&i| x[i * d..(i + 1) * d].to_vec()).collect())
        };
        let t = |x: &[f64]| Tensor::matrix(m, d, x.to_vec());
        for sparse in [false, true] {
            let attend = if sparse { attend_sparse } else { attend_dense };
            let base = attend(&t(&q), &t(&k), &t(&v), None).unwrap().output;
            let moved = attend(&permute(&q), &permute(&k), &permute(&v), None).unwrap().output;
            for (r, &src) in perm.iter().enumerate() {
                for c in 0..d {
                    prop_assert!((moved.data()[r * d + c] - base.data()[src * d + c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn heads_agree_as_spread_vanishes(seed in any::<u64>(), m in 1usize..8) {
        // d = 1 and q = 1, so logits equal the keys; keys within 1e-6.
        let mut rng = SplitMix(seed);
        let q = Tensor::matrix(m, 1, vec![1.0; m]);
        let base = rng.uniform(-1.0, 1.0);
        let k = Tensor::matrix(m, 1, (0..m).map(|_| base + rng.uniform(0.0, 1e-6)).collect());
        let v = Tensor::matrix(m, 1, rng.vec(m, -1.0, 1.0));
        let dense = attend_dense(&q, &k, &v, None).unwrap();
        let sparse = attend_sparse(&q, &k, &v, None).unwrap();
        prop_assert!(sparse.weights.data().iter().all(|&w| w > 0.0));
        for (a, b) in dense.weights.data().iter().zip(sparse.weights.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn weight_rows_are_distributions_with_exact_sparse_zeros(seed in any::<u64>(), m in 1usize..9) {
        let mut rng = SplitMix(seed);
        let d = 4;
        let t = |rng: &mut SplitMix| Tensor::matrix(m, d, rng.vec(m * d, -3.0, 3.0));
        let (q, k, v) = (t(&mut rng), t(&mut rng), t(&mut rng));
        let dense = attend_dense(&q, &k, &v, None).unwrap();
        let sparse = attend_sparse(&q, &k, &v, None).unwrap();
        let logits = matmul_naive(q.data(), &transpose(k.data(), m, d), m, d, m);
        for r in 0..m {
            let ds: f64 = dense.weights.row(r).iter().sum();
            let ss: f64 = sparse.weights.row(r).iter().sum();
            prop_assert!((ds - 1.0).abs() < 1e-12 && (ss - 1.0).abs() < 1e-12);
            // Entries clearly below the oracle's threshold are bit-exact zeros.
            let z: Vec<f64> = logits[r * m..(r + 1) * m].iter().map(|z| z / 2.0).collect();
            let want = simplex_projection_bruteforce(&z);
            let (j0, p0) = want.iter().enumerate().find(|(_, &w)| w > 0.0).map(|(j, &w)| (j, w)).unwrap();
            let tau = z[j0] - p0;
            for (j, &zj) in z.iter().enumerate() {
                if zj < tau - 1e-9 {
                    prop_assert_eq!(sparse.weights.row(r)[j].to_bits(), 0.0f64.to_bits());
                }
            }
        }
    }
}
