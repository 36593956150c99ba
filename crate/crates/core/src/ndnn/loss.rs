use crate::error::{Error, Result};
use crate::ndnn::Tensor;
use crate::scalar::Scalar;

/// Row-wise softmax of `[N, C]` logits, computed with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.shape().len() != 2 {
        return Err(Error::invalid(format!(
            "softmax expects [N, C], got {:?}",
            logits.shape()
        )));
    }
    let c = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Mean negative log-likelihood of `labels` and its gradient
/// `(softmax - onehot) / N` with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    if logits.shape().len() != 2 || logits.shape()[1] < 2 {
        return Err(Error::invalid(format!(
            "cross-entropy expects [N, C>=2] logits, got {:?}",
            logits.shape()
        )));
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let batch = T::from_usize_lossy(n);
    let mut loss = T::zero();
    let mut grad = logits.clone();
    for (row, &label) in grad.data_mut().chunks_exact_mut(c).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += log_sum - (row[label] - max);
        for v in row.iter_mut() {
            *v = (*v - max - log_sum).exp() / batch;
        }
        row[label] -= T::one() / batch;
    }
    Ok((loss / batch, grad))
}
