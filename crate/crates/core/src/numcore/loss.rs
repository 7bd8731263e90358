use super::tensor::Tensor;
use super::NumError;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(k) {
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

/// Log-softmax of one row.
pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    out.iter_mut().zip(row).for_each(|(o, v)| *o = v - lse);
}

/// Masked mean cross-entropy over rows of `logits` (`n × k`).
///
/// Returns the loss and its gradient w.r.t. the logits; masked rows
/// contribute nothing to either.
pub fn softmax_xent(logits: &Tensor, targets: &[usize], mask: &[f64]) -> Result<(f64, Tensor), NumError> {
    let (n, k) = (logits.rows(), logits.cols());
    if logits.shape().len() != 2 || targets.len() != n || mask.len() != n || k < 2 {
        return Err(NumError::ShapeMismatch(format!("xent logits {:?}", logits.shape())));
    }
    if targets.iter().any(|&t| t >= k) {
        return Err(NumError::ShapeMismatch("target id out of range".into()));
    }
    let mut grad = vec![0.0; n * k];
    let loss = xent_raw(logits.data(), k, targets, mask, 1.0, &mut grad)?;
    Ok((loss, Tensor::matrix(n, k, grad)?))
}

/// Loss is normalized by the mask sum; `grad` receives `scale * dL/dlogits`
/// (overwritten, not accumulated).
pub(crate) fn xent_raw(logits: &[f64], k: usize, targets: &[usize], mask: &[f64], scale: f64, grad: &mut [f64]) -> Result<f64, NumError> {
    let denom: f64 = mask.iter().sum();
    if denom <= 0.0 {
        return Err(NumError::AllMasked);
    }
    let mut total = 0.0;
    let mut logp = vec![0.0; k];
    for ((row, g), (&t, &m)) in logits.chunks_exact(k).zip(grad.chunks_exact_mut(k)).zip(targets.iter().zip(mask)) {
        if m == 0.0 {
            g.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        log_softmax_row(row, &mut logp);
        total -= m * logp[t];
        let w = scale * m / denom;
        for (j, (gv, lp)) in g.iter_mut().zip(&logp).enumerate() {
            let p = lp.exp();
            *gv = w * (p - if j == t { 1.0 } else { 0.0 });
        }
    }
    Ok(total / denom)
}
