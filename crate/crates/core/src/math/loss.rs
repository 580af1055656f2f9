use super::{MathError, Matrix};

/// Row-wise softmax with max-subtraction for stability. Rows sum to 1.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let cols = out.cols();
    for i in 0..out.rows() {
        let row = &mut out.data_mut()[i * cols..(i + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean per-token negative log-likelihood of `targets` under row-wise
/// softmax of `logits`, plus its gradient `(softmax - onehot) / rows`.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[u32]) -> Result<(f64, Matrix), MathError> {
    if targets.len() != logits.rows() {
        return Err(MathError::Shape(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.rows()
        )));
    }
    if !logits.is_finite() {
        return Err(MathError::NonFiniteIn("softmax_cross_entropy logits".into()));
    }
    for &t in targets {
        if t as usize >= logits.cols() {
            return Err(MathError::TargetOutOfRange { index: t as usize, cols: logits.cols() });
        }
    }
    let n = logits.rows();
    let cols = logits.cols();
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let p = grad.at(i, t as usize);
        // p > 0 always: softmax of finite logits.
        loss -= p.ln();
        let v = grad.at(i, t as usize) - 1.0;
        grad.set(i, t as usize, v);
    }
    let scale = 1.0 / n as f64;
    for v in grad.data_mut().iter_mut() {
        *v *= scale;
    }
    debug_assert_eq!(grad.cols(), cols);
    Ok((loss * scale, grad))
}

/// Mean of squared elementwise differences, plus gradient `2(pred - target)/count`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix), MathError> {
    if pred.shape() != target.shape() {
        return Err(MathError::Shape(format!(
            "mse {}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    if !pred.is_finite() || !target.is_finite() {
        return Err(MathError::NonFiniteIn("mse_loss".into()));
    }
    let count = pred.len() as f64;
    let mut loss = 0.0;
    let grad = {
        let mut g = pred.sub(target)?;
        for v in g.data_mut().iter_mut() {
            loss += *v * *v;
            *v *= 2.0 / count;
        }
        g
    };
    Ok((loss / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        let v = 7;
        let logits = Matrix::zeros(3, v);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3, 6]).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let mut logits = Matrix::zeros(1, 4);
        logits.set(0, 2, 50.0);
        let (loss, _) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss < 1e-12);
        assert!(loss >= 0.0);
    }

    #[test]
    fn two_class_scalar_evaluation() {
        // logits [2, 0], target 0 -> loss = ln(1 + e^-2)
        let logits = Matrix::from_vec(1, 2, vec![2.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        // grad = softmax - onehot
        let p0 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((grad.at(0, 0) - (p0 - 1.0)).abs() < 1e-12);
        assert!((grad.at(0, 1) - (1.0 - p0)).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_target_rejected() {
        let logits = Matrix::zeros(1, 3);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(MathError::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 100.0, 100.0, -100.0]).unwrap();
        let sm = softmax_rows(&logits);
        for i in 0..2 {
            let s: f64 = sm.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_zero_when_equal() {
        let a = Matrix::from_vec(1, 2, vec![3.0, -1.0]).unwrap();
        let (loss, grad) = mse_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, Matrix::zeros(1, 2));
    }

    #[test]
    fn mse_hand_evaluated() {
        let pred = Matrix::zeros(1, 2);
        let target = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.data(), &[-1.0, -1.0]);
    }
}
