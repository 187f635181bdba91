use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean negative log-likelihood of a softmax over logits `[B, K]`.
#[derive(Default)]
pub struct SoftmaxCrossEntropy {
    cache: Option<(Vec<f64>, Vec<usize>, usize)>,
}

impl SoftmaxCrossEntropy {
    pub fn new() -> Self {
        SoftmaxCrossEntropy { cache: None }
    }

    pub fn forward<T: Element>(&mut self, logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        let (b, k) = logits.dims2()?;
        if labels.len() != b {
            return Err(Error::mismatch("softmax_xent labels", logits.shape(), &[labels.len()]));
        }
        let mut probs = Vec::with_capacity(b * k);
        let mut loss = 0.0;
        for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            loss += z.ln() - (row[label].as_f64() - max);
            probs.extend(exps.iter().map(|e| e / z));
        }
        self.cache = Some((probs, labels.to_vec(), k));
        Ok(loss / b as f64)
    }

    /// `(softmax - onehot) / B` for the cached forward.
    pub fn backward<T: Element>(&mut self) -> Result<Tensor<T>> {
        let (mut probs, labels, k) = self
            .cache
            .take()
            .ok_or(Error::BackwardBeforeForward { layer: "softmax_xent" })?;
        let b = labels.len();
        for (row, &label) in probs.chunks_exact_mut(k).zip(&labels) {
            row[label] -= 1.0;
        }
        let inv = 1.0 / b as f64;
        Tensor::from_vec(&[b, k], probs.into_iter().map(|v| T::from_f64_lossy(v * inv)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let mut xent = SoftmaxCrossEntropy::new();
        let logits = Tensor::<f32>::zeros(&[4, 10]).unwrap();
        let loss = xent.forward(&logits, &[0, 3, 9, 5]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - std::f64::consts::LN_10).abs() < 1e-6);
    }

    #[test]
    fn confident_margin_drives_loss_to_zero() {
        let mut xent = SoftmaxCrossEntropy::new();
        let mut logits = Tensor::<f64>::zeros(&[1, 10]).unwrap();
        logits.data_mut()[7] = 50.0;
        assert!(xent.forward(&logits, &[7]).unwrap() < 1e-6);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut xent = SoftmaxCrossEntropy::new();
        let logits = Tensor::<f64>::from_vec(&[2, 3], vec![0.1, -2.0, 3.0, 1.0, 1.5, -0.5]).unwrap();
        xent.forward(&logits, &[2, 0]).unwrap();
        let g: Tensor<f64> = xent.backward().unwrap();
        for row in g.data().chunks_exact(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut xent = SoftmaxCrossEntropy::new();
        let logits = Tensor::<f32>::zeros(&[1, 10]).unwrap();
        assert!(matches!(
            xent.forward(&logits, &[10]),
            Err(Error::LabelOutOfRange { label: 10, classes: 10 })
        ));
    }
}
