use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax of a `(batch, classes)` tensor, stabilized by
/// subtracting each row's maximum.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.shape().len() != 2 {
        return Err(dim_err("softmax", format!("expected (batch, classes), got {:?}", logits.shape())));
    }
    let classes = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    /// Gradient of `loss` with respect to the logits.
    pub grad: Tensor<T>,
}

/// Class-weighted cross entropy on logits.
///
/// `loss = sum_i w[y_i] * -log p_i[y_i] / sum_i w[y_i]`, so equal weights give
/// the plain batch mean. The logit gradient is `w[y_i] * (p_i - onehot_i) / sum_i w[y_i]`.
pub fn weighted_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], weights: &[T]) -> Result<LossOutput<T>> {
    let probs = softmax(logits)?;
    let (b, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(dim_err("weighted_ce", format!("{} labels for batch of {}", labels.len(), b)));
    }
    if weights.len() != classes {
        return Err(dim_err("weighted_ce", format!("{} weights for {} classes", weights.len(), classes)));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let norm: T = labels.iter().map(|&y| weights[y]).sum();
    if norm <= T::zero() {
        return Err(Error::InvalidParameter("sum of sample weights must be positive".into()));
    }
    let mut total = T::zero();
    let mut grad = probs.data().to_vec();
    for (i, (row, &y)) in logits.data().chunks(classes).zip(labels).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
        let w = weights[y];
        total = total + w * (lse - row[y]);
        let g = &mut grad[i * classes..(i + 1) * classes];
        g[y] = g[y] - T::one();
        for v in g.iter_mut() {
            *v = *v * w / norm;
        }
    }
    Ok(LossOutput {
        loss: total / norm,
        grad: Tensor::new(probs.shape().to_vec(), grad)?,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::<f64>::zeros(vec![3, 8]);
        let out = weighted_cross_entropy(&logits, &[0, 3, 7], &[1.0; 8]).unwrap();
        assert!((out.loss - 8f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn loss_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let logits = Tensor::new(vec![1, 3], vec![margin, 0.0, 0.0]).unwrap();
            let loss = weighted_cross_entropy(&logits, &[0], &[1.0; 3]).unwrap().loss;
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let logits = Tensor::new(vec![2, 4], vec![1.0f32, 2.0, 3.0, 4.0, -100.0, 0.0, 50.0, 2.0]).unwrap();
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        let shifted = softmax(&logits.map(|v| v + 1000.0)).unwrap();
        for (a, b) in p.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_label() {
        let logits = Tensor::<f64>::zeros(vec![1, 4]);
        assert!(matches!(
            weighted_cross_entropy(&logits, &[4], &[1.0; 4]),
            Err(Error::LabelOutOfRange { label: 4, classes: 4 })
        ));
    }

    #[test]
    fn unit_weights_match_unweighted_mean_exactly() {
        let logits = Tensor::from_fn(vec![5, 3], |i| (i as f64 * 0.91).cos() * 2.0);
        let labels = [0, 1, 2, 1, 0];
        let weighted = weighted_cross_entropy(&logits, &labels, &[1.0; 3]).unwrap();
        let mut sum = 0.0;
        for (row, &y) in logits.data().chunks(3).zip(&labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
            sum += lse - row[y];
        }
        assert_eq!(weighted.loss, sum / 5.0);
    }
}
