use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// the logits, `(softmax − onehot) / N`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelRange { label, classes: k });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (row[label] - max);
        let g = grad.row_mut(i);
        for (j, z) in row.iter().enumerate() {
            g[j] = (z - max).exp() / sum / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Index of the largest logit per row; ties go to the lowest index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
