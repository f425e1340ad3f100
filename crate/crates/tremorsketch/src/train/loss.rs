//! Categorical cross-entropy over batched probability rows.

use crate::tensor::{Scalar, Var};

use super::TrainError;

/// Mean over the batch of `-sum_k target_k * ln(max(pred_k, 1e-12))`.
///
/// `pred` is `(B, K)` with rows summing to 1 (softmax output); `target` is a
/// one-hot `(B, K)` constant. Differentiable through `pred`; the log clamp at
/// 1e-12 keeps the loss finite when a probability collapses to zero.
pub const LOG_CLAMP: f64 = 1e-12;

pub fn categorical_cross_entropy<T: Scalar>(
    pred: &Var<T>,
    target: &Var<T>,
) -> Result<Var<T>, TrainError> {
    let p_shape = pred.shape();
    let t_shape = target.shape();
    if p_shape.len() != 2 || p_shape != t_shape {
        return Err(TrainError::LossShapeMismatch {
            pred: p_shape,
            target: t_shape,
        });
    }
    let (batch, classes) = (p_shape[0], p_shape[1]);
    let pred_value = pred.value();
    for row in 0..batch {
        let sum: f64 = pred_value.data()[row * classes..(row + 1) * classes]
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .sum();
        if !sum.is_finite() || (sum - 1.0).abs() > 1e-4 {
            return Err(TrainError::NotDistribution {
                what: "prediction",
                row,
                sum,
            });
        }
    }
    let target_value = target.value();
    for row in 0..batch {
        let slice = &target_value.data()[row * classes..(row + 1) * classes];
        let sum: f64 = slice.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
        let one_hot = slice
            .iter()
            .all(|&v| v == T::zero() || v == T::one());
        if !one_hot || (sum - 1.0).abs() > 1e-9 {
            return Err(TrainError::NotDistribution {
                what: "target",
                row,
                sum,
            });
        }
    }

    let log_pred = pred.log_clamped(LOG_CLAMP)?;
    let picked = target.mul(&log_pred)?;
    let per_sample = picked.sum(Some(1))?;
    let loss = per_sample.scale(-1.0)?.mean(None)?;
    Ok(loss)
}
