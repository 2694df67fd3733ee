use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of a `batch×classes` tensor, max-subtracted.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let classes = classes_of(logits)?;
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks_exact(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let z: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= z);
    }
    Tensor::from_vec(logits.shape().clone(), out)
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax − target)/batch`.
///
/// Targets must be one-hot rows.
pub fn softmax_xent(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    let classes = classes_of(logits)?;
    if targets.shape() != logits.shape() {
        return Err(Error::ShapeMismatch(format!(
            "targets {} vs logits {}",
            targets.shape(),
            logits.shape()
        )));
    }
    let batch = logits.dims()[0];
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.numel());
    for (r, (row, t)) in logits
        .data()
        .chunks_exact(classes)
        .zip(targets.data().chunks_exact(classes))
        .enumerate()
    {
        let label = one_hot_index(t).ok_or_else(|| {
            Error::InvalidTarget(format!("row {r} is not one-hot: {t:?}"))
        })?;
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        grad.extend(row.iter().zip(t).map(|(&v, &tv)| ((v - lse).exp() - tv) / batch as f64));
    }
    let loss = loss / batch as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax cross-entropy"));
    }
    Ok((loss, Tensor::from_vec(logits.shape().clone(), grad)?))
}

fn classes_of(logits: &Tensor) -> Result<usize> {
    match logits.dims() {
        &[_, c] => Ok(c),
        d => Err(Error::ShapeMismatch(format!("logits must be batch×classes, got {d:?}"))),
    }
}

fn one_hot_index(row: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}
