use crate::error::{Error, Result};

use super::{Graph, Tensor, Var};

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |a - n| / max(1e-12, |a| + |n|)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub checked: usize,
}

/// Relative discrepancy between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares `analytic[c]` against `(f(x + h e_c) - f(x - h e_c)) / 2h` for
/// every `c` in `coords`. `eval(c, delta)` returns the function value with
/// coordinate `c` shifted by `delta`.
pub fn finite_difference_check(
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    mut eval: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GradCheck> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::Config(format!("gradient check step must lie in (0, 1e-2], got {step}")));
    }
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_coordinate: coords.first().copied().unwrap_or(0),
        checked: 0,
    };
    for &c in coords {
        let plus = eval(c, step)?;
        let minus = eval(c, -step)?;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::GradCheckNonFinite { coordinate: c });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[c], numeric);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_coordinate = c;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Checks the tape gradient of a scalar function of one tensor at `point`
/// against central finite differences over every coordinate.
pub fn gradient_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    gradient_check_coords(f, point, step, &coords)
}

/// As [`gradient_check`], restricted to the listed coordinates.
pub fn gradient_check_coords<F>(f: F, point: &Tensor<f64>, step: f64, coords: &[usize]) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let y = f(&mut g, x)?;
    if g.value(y).len() != 1 {
        return Err(Error::Dimension(format!(
            "gradient check needs a scalar function, got shape {:?}",
            g.shape(y)
        )));
    }
    let value = g.value(y).item();
    if !value.is_finite() {
        return Err(Error::GradCheckNonFinite {
            coordinate: coords.first().copied().unwrap_or(0),
        });
    }
    let grads = g.backward(y);
    let analytic = grads
        .get(x)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; point.len()]);
    finite_difference_check(&analytic, coords, step, |c, delta| {
        let mut shifted = point.clone();
        shifted.data_mut()[c] += delta;
        let mut g = Graph::new();
        let x = g.input(shifted);
        let y = f(&mut g, x)?;
        Ok(g.value(y).item())
    })
}
