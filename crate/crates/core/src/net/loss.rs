use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let classes = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / batch`.
pub fn loss_and_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    let classes = logits.row_len();
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    let mut dlogits = logits.clone();
    let mut total = 0.0;
    for (row_idx, (row, &label)) in dlogits
        .data_mut()
        .chunks_mut(classes)
        .zip(labels)
        .enumerate()
    {
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                row: row_idx,
                label,
                classes,
            });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label];
        for v in row.iter_mut() {
            *v = (*v - log_z).exp() / n as f64;
        }
        row[label] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, dlogits))
}
