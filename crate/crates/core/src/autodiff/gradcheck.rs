use super::{AutogradError, Tape, Tensor, Var};

/// Compares the tape gradient of a scalar function against central
/// differences and returns the worst `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F, E>(f: F, point: &Tensor, step: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<AutogradError>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        step,
        None,
    )
}

/// Multi-input form of [`grad_check`]. With `max_coords` set, only that many
/// evenly spaced coordinates of each input are perturbed.
pub fn grad_check_many<F, E>(
    f: F,
    points: &[Tensor],
    step: f64,
    max_coords: Option<usize>,
) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<AutogradError>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(AutogradError::Domain {
            op: "grad_check",
            detail: format!("step must be positive, got {step}"),
        }
        .into());
    }
    let eval = |inputs: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(finite_item(tape.value(out))?)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    finite_item(tape.value(out))?;
    tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = points.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let n = points[k].len();
        let analytic = tape.grad(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let stride = max_coords.map_or(1, |m| n.div_ceil(m.max(1)));
        for i in (0..n).step_by(stride) {
            let orig = points[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn finite_item(t: &Tensor) -> Result<f64, AutogradError> {
    let v = t.item()?;
    if !v.is_finite() {
        return Err(AutogradError::Domain {
            op: "grad_check",
            detail: "non-finite function value".into(),
        });
    }
    Ok(v)
}
