//! Query/key/value attention over feature-map positions.
//!
//! A feature map `(C, H, W)` is read as `P = H*W` position vectors of
//! dimension `C`. One learned query scores every position (dot product then
//! softmax); the weights either gate the map elementwise (spatial attention)
//! or pool the positions into a single vector (attention pooling).

use crate::tensor::{Scalar, TensorError, TensorResult, Var};

/// Scores and weights of a query against a set of keys:
/// `e_p = q . k_p`, `alpha = softmax(e)`.
pub fn attention_scores<T: Scalar>(
    q: &Var<T>,
    keys: &Var<T>,
) -> TensorResult<(Var<T>, Var<T>)> {
    let q_shape = q.shape();
    let k_shape = keys.shape();
    if q_shape.len() != 1 || k_shape.len() != 2 || k_shape[1] != q_shape[0] {
        return Err(TensorError::ShapeMismatch {
            op: "attention_scores",
            left: q_shape,
            right: k_shape,
        });
    }
    let positions = k_shape[0];
    let channels = q_shape[0];
    let scores = keys
        .matmul(&q.reshape(&[channels, 1])?)?
        .reshape(&[positions])?;
    let weights = scores.softmax(0)?;
    Ok((scores, weights))
}

/// Weighted sum of value vectors: `sum_p alpha_p * v_p`.
///
/// `alpha` must already be normalized (sum 1 within 1e-5), as produced by
/// [`attention_scores`].
pub fn attention_pool<T: Scalar>(alpha: &Var<T>, values: &Var<T>) -> TensorResult<Var<T>> {
    let a_shape = alpha.shape();
    let v_shape = values.shape();
    if a_shape.len() != 1 || v_shape.len() != 2 || v_shape[0] != a_shape[0] {
        return Err(TensorError::ShapeMismatch {
            op: "attention_pool",
            left: a_shape,
            right: v_shape,
        });
    }
    let total: f64 = alpha
        .value()
        .data()
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .sum();
    // The guard catches raw (non-softmaxed) scores. Accumulated rounding of
    // the element type must not trip it, so the 1e-5 tolerance widens when a
    // long f32 sum cannot stay inside it.
    let eps = T::epsilon().to_f64().unwrap_or(f64::EPSILON);
    let tolerance = (1e-5f64).max(8.0 * eps * a_shape[0] as f64);
    if !total.is_finite() || (total - 1.0).abs() > tolerance {
        return Err(TensorError::UnnormalizedWeights { sum: total });
    }
    let positions = a_shape[0];
    let channels = v_shape[1];
    alpha
        .reshape(&[1, positions])?
        .matmul(values)?
        .reshape(&[channels])
}

/// Spatial attention gate: weights over positions, reshaped to `(1, H, W)`
/// and multiplied elementwise into the feature map (broadcast over channels).
/// No rescaling is applied to the weighted map.
pub fn spatial_attention_gate<T: Scalar>(f: &Var<T>, q: &Var<T>) -> TensorResult<Var<T>> {
    let f_shape = f.shape();
    let q_shape = q.shape();
    if f_shape.len() != 3 || q_shape.len() != 1 || q_shape[0] != f_shape[0] {
        return Err(TensorError::ShapeMismatch {
            op: "spatial_attention_gate",
            left: f_shape,
            right: q_shape,
        });
    }
    let (channels, height, width) = (f_shape[0], f_shape[1], f_shape[2]);
    let positions = height * width;
    let keys = f.reshape(&[channels, positions])?.transpose2()?;
    let (_, alpha) = attention_scores(q, &keys)?;
    let gate = alpha.reshape(&[1, height, width])?;
    gate.mul(f)
}

/// Position vectors of a feature map as a `(P, C)` matrix; the keys/values
/// view used by the attention layers.
pub fn position_matrix<T: Scalar>(f: &Var<T>) -> TensorResult<Var<T>> {
    let f_shape = f.shape();
    if f_shape.len() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "position_matrix",
            left: f_shape,
            right: vec![],
        });
    }
    let (channels, height, width) = (f_shape[0], f_shape[1], f_shape[2]);
    f.reshape(&[channels, height * width])?.transpose2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn leaf(g: &Graph<f64>, shape: &[usize], data: &[f64]) -> Var<f64> {
        g.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap(), true)
    }

    #[test]
    fn scores_match_analytic_two_key_case() {
        let g = Graph::new();
        let q = leaf(&g, &[2], &[1.0, 0.0]);
        let keys = leaf(&g, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let (e, alpha) = attention_scores(&q, &keys).unwrap();
        assert_eq!(e.value().data(), &[1.0, 0.0]);
        let ev = std::f64::consts::E;
        let expect = [ev / (1.0 + ev), 1.0 / (1.0 + ev)];
        for (a, b) in alpha.value().data().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let g = Graph::new();
        let q = leaf(&g, &[3], &[0.3, -0.7, 1.1]);
        let keys = leaf(&g, &[5, 3], &[0.2, 0.4, -0.1].repeat(5));
        let (_, alpha) = attention_scores(&q, &keys).unwrap();
        for &a in alpha.value().data() {
            assert!((a - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_match_loop_and_normalize_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let q0: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k0: Vec<f64> = (0..7 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Graph::new();
        let q = leaf(&g, &[4], &q0);
        let keys = leaf(&g, &[7, 4], &k0);
        let (e, alpha) = attention_scores(&q, &keys).unwrap();

        let mut e_want = [0.0; 7];
        for p in 0..7 {
            for c in 0..4 {
                e_want[p] += q0[c] * k0[p * 4 + c];
            }
        }
        let max = e_want.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = e_want.iter().map(|v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for p in 0..7 {
            assert!((e.value().data()[p] - e_want[p]).abs() < 1e-6);
            assert!((alpha.value().data()[p] - exps[p] / denom).abs() < 1e-6);
        }
    }

    #[test]
    fn score_shape_mismatch_rejected() {
        let g = Graph::new();
        let q = leaf(&g, &[3], &[0.0; 3]);
        let keys = leaf(&g, &[4, 2], &[0.0; 8]);
        assert!(matches!(
            attention_scores(&q, &keys).unwrap_err(),
            TensorError::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn pool_uniform_weights_take_mean() {
        let g = Graph::new();
        let alpha = leaf(&g, &[4], &[0.25; 4]);
        let values = leaf(&g, &[4, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let out = attention_pool(&alpha, &values).unwrap();
        assert_eq!(out.value().data(), &[2.5, 25.0]);
    }

    #[test]
    fn pool_one_hot_selects_row() {
        let g = Graph::new();
        let alpha = leaf(&g, &[3], &[0.0, 1.0, 0.0]);
        let values = leaf(&g, &[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = attention_pool(&alpha, &values).unwrap();
        assert_eq!(out.value().data(), &[3.0, 4.0]);
    }

    #[test]
    fn pool_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let a0: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let v0: Vec<f64> = (0..5 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Graph::new();
        let alpha = leaf(&g, &[5], &a0);
        let values = leaf(&g, &[5, 3], &v0);
        let out = attention_pool(&alpha, &values).unwrap();
        for c in 0..3 {
            let mut want = 0.0;
            for p in 0..5 {
                want += a0[p] * v0[p * 3 + c];
            }
            assert!((out.value().data()[c] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn pool_rejects_unnormalized_weights() {
        let g = Graph::new();
        let alpha = leaf(&g, &[2], &[0.9, 0.3]);
        let values = leaf(&g, &[2, 2], &[0.0; 4]);
        assert!(matches!(
            attention_pool(&alpha, &values).unwrap_err(),
            TensorError::UnnormalizedWeights { .. }
        ));
    }

    #[test]
    fn gate_on_constant_map_scales_by_inverse_position_count() {
        let g = Graph::new();
        let f = g.leaf(Tensor::filled(&[3, 2, 2], 4.0), true);
        let q = leaf(&g, &[3], &[0.5, -0.2, 0.9]);
        let out = spatial_attention_gate(&f, &q).unwrap();
        for &v in out.value().data() {
            assert!((v - 4.0 / 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gate_preserves_zeros_and_shape() {
        let g = Graph::new();
        let mut data = vec![1.0; 8];
        data[3] = 0.0;
        let f = leaf(&g, &[2, 2, 2], &data);
        let q = leaf(&g, &[2], &[0.1, 0.2]);
        let out = spatial_attention_gate(&f, &q).unwrap();
        assert_eq!(out.shape(), vec![2, 2, 2]);
        assert_eq!(out.value().data()[3], 0.0);
    }

    #[test]
    fn gate_matches_hand_computed_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let f0: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q0: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Graph::new();
        let f = leaf(&g, &[2, 2, 2], &f0);
        let q = leaf(&g, &[2], &q0);
        let out = spatial_attention_gate(&f, &q).unwrap();

        // Position p holds channel column (f0[p], f0[4 + p]).
        let mut scores = [0.0; 4];
        for p in 0..4 {
            scores[p] = q0[0] * f0[p] + q0[1] * f0[4 + p];
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for c in 0..2 {
            for p in 0..4 {
                let want = f0[c * 4 + p] * exps[p] / denom;
                assert!((out.value().data()[c * 4 + p] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gate_never_increases_max_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let f0: Vec<f64> = (0..3 * 4 * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q0: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = Graph::new();
            let f = leaf(&g, &[3, 4, 4], &f0);
            let q = leaf(&g, &[3], &q0);
            let out = spatial_attention_gate(&f, &q).unwrap();
            let max_in = f0.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
            let max_out = out
                .value()
                .data()
                .iter()
                .cloned()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max_out <= max_in + 1e-12);
        }
    }

    #[test]
    fn attention_path_is_differentiable() {
        use crate::tensor::gradcheck::{finite_difference, max_relative_error};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f0: Vec<f64> = (0..2 * 2 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q0: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |inputs: &[Tensor<f64>]| -> f64 {
            let g = Graph::new();
            let f = g.leaf(inputs[0].clone(), true);
            let q = g.leaf(inputs[1].clone(), true);
            let gated = spatial_attention_gate(&f, &q).unwrap();
            let keys = position_matrix(&gated).unwrap();
            let (_, alpha) = attention_scores(&q, &keys).unwrap();
            let pooled = attention_pool(&alpha, &keys).unwrap();
            pooled.mul(&pooled).unwrap().sum(None).unwrap().value().item()
        };
        let inputs = vec![
            Tensor::new(vec![2, 2, 2], f0.clone()).unwrap(),
            Tensor::new(vec![2], q0.clone()).unwrap(),
        ];

        let g = Graph::new();
        let f = g.leaf(inputs[0].clone(), true);
        let q = g.leaf(inputs[1].clone(), true);
        let gated = spatial_attention_gate(&f, &q).unwrap();
        let keys = position_matrix(&gated).unwrap();
        let (_, alpha) = attention_scores(&q, &keys).unwrap();
        let pooled = attention_pool(&alpha, &keys).unwrap();
        pooled.mul(&pooled).unwrap().sum(None).unwrap().backward().unwrap();

        let numeric = finite_difference(run, &inputs, 1e-5);
        assert!(max_relative_error(&f.grad().unwrap(), &numeric[0]) < 1e-4);
        assert!(max_relative_error(&q.grad().unwrap(), &numeric[1]) < 1e-4);
    }
}
