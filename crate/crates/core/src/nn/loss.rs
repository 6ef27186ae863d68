use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / B` with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (b, n) = logits.dims2("logits")?;
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelOutOfRange { label, n_classes: n });
    }
    let inv_b = T::one() / T::of(b as f64);
    let mut grad = Tensor::zeros(&[b, n]);
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * n..][..n];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let g = &mut grad.data_mut()[i * n..][..n];
        let mut sum = T::zero();
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - max).exp();
            sum += *gj;
        }
        total += sum.ln() - (row[label] - max);
        for gj in g.iter_mut() {
            *gj = *gj / sum * inv_b;
        }
        g[label] -= inv_b;
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(Error::NumericalDivergence("loss"));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let logits = Tensor::<f64>::zeros(&[3, 6]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 3, 5]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.791759).abs() < 1e-6);
        for row in grad.data().chunks(6) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logit() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.0, 1000.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-6);
        assert!(grad.all_finite());
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f64>::zeros(&[1, 2]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[2]),
            Err(Error::LabelOutOfRange { label: 2, n_classes: 2 })
        ));
    }
}
