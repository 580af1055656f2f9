use super::{MathError, Matrix, Tape, Var};

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences, returning the worst relative discrepancy
/// `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)` over all elements of `x`.
///
/// `f` must build the scalar output from the input variable it is handed;
/// it is re-invoked on perturbed copies of `x` for the difference quotients.
pub fn finite_difference_check<F>(f: F, x: &Matrix, eps: f64) -> Result<f64, MathError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, MathError>,
{
    assert!(eps > 0.0, "eps must be positive");

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));

    let eval = |m: &Matrix| -> Result<f64, MathError> {
        let mut t = Tape::new();
        let v = t.leaf(m.clone());
        let o = f(&mut t, v)?;
        Ok(t.scalar(o))
    };

    let mut worst: f64 = 0.0;
    let mut plus = x.clone();
    for i in 0..x.len() {
        let orig = plus.data()[i];
        plus.data_mut()[i] = orig + eps;
        let up = eval(&plus)?;
        plus.data_mut()[i] = orig - eps;
        let down = eval(&plus)?;
        plus.data_mut()[i] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
