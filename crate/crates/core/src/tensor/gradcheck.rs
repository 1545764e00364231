use super::{NumericError, ShapeError, Tape, Tensor, Var};

const STEP: f64 = 1e-5;

/// Largest relative disagreement between the tape gradient of scalar `f`
/// at `x` and central finite differences, `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>) -> Result<f64, NumericError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, ShapeError>,
{
    let eval = |x: Tensor<f64>| -> Result<f64, NumericError> {
        let mut t = Tape::new();
        let v = t.constant(x);
        let y = f(&mut t, v).map_err(|e| NumericError(e.to_string()))?;
        let val = t.value(y).item();
        if !val.is_finite() {
            return Err(NumericError(format!("function value {val}")));
        }
        Ok(val)
    };

    let mut t = Tape::new();
    let v = t.param(x.clone());
    let y = f(&mut t, v).map_err(|e| NumericError(e.to_string()))?;
    if t.value(y).len() != 1 {
        return Err(NumericError(format!(
            "function is not scalar: {:?}",
            t.value(y).shape()
        )));
    }
    let grads = t.backward(y);
    let g_ad = grads.tensor(&t, v);
    if !g_ad.all_finite() {
        return Err(NumericError("analytic gradient".into()));
    }

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= STEP;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * STEP);
        let err = (g_ad.data()[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
