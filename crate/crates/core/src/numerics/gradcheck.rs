use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradient magnitudes below this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coordinates: Vec<CoordinateCheck>,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordinateCheck> {
        self.coordinates
            .iter()
            .filter(move |c| c.relative_error > self.tolerance)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` receives a fresh tape and one tracked variable per entry of `point`
/// and must return a scalar.
pub fn grad_check<F>(f: F, point: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = point.iter().map(|p| tape.var(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        let v = f(&tape, &vars)?.scalar();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("function value at perturbed point".into()))
        }
    };

    let mut coordinates = Vec::new();
    let mut work: Vec<Tensor> = point.to_vec();
    for (input, base) in point.iter().enumerate() {
        for index in 0..base.numel() {
            let orig = base.data()[index];
            work[input].data_mut()[index] = orig + step;
            let plus = eval(&work)?;
            work[input].data_mut()[index] = orig - step;
            let minus = eval(&work)?;
            work[input].data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[input].data()[index];
            coordinates.push(CoordinateCheck {
                input,
                index,
                analytic: a,
                numeric,
                relative_error: relative_error(a, numeric),
            });
        }
    }
    let max_relative_error = coordinates
        .iter()
        .map(|c| c.relative_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        coordinates,
        max_relative_error,
        tolerance,
    })
}
