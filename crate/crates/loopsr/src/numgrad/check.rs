//! Finite-difference gradient verification.

use super::params::ParamSet;
use super::tape::{BoundParams, Tape, Var};
use super::NumError;

/// Relative error metric used by the checker: stable near zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat coordinate at which the max occurred.
    pub worst_coordinate: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error < tol
    }
}

/// Compare reverse-mode gradients of `build` against central differences.
///
/// `build` receives a fresh tape with the parameters bound and must return
/// a scalar loss var. It is re-invoked twice per parameter coordinate for
/// the (f(θ+h) - f(θ-h)) / 2h stencil.
pub fn grad_check<F>(build: &F, params: &ParamSet, h: f64) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, NumError>,
{
    if h <= 0.0 {
        return Err(NumError::Config("grad_check: h must be positive".into()));
    }

    // analytic side
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let loss = build(&mut tape, &bound)?;
    if tape.value(loss).numel() != 1 {
        return Err(NumError::BadShape("grad_check: loss must be scalar".into()));
    }
    let tape_grads = tape.backward(loss)?;
    let analytic = tape.param_grads(&tape_grads, params);

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_coordinate: None,
        coordinates_checked: 0,
    };

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    for name in &names {
        let numel = params.get(name).unwrap().numel();
        for coord in 0..numel {
            let original = probe.get(name).unwrap().values()[coord];

            probe.get_mut(name).unwrap().values_mut()[coord] = original + h;
            let f_plus = eval_scalar(build, &probe)?;
            probe.get_mut(name).unwrap().values_mut()[coord] = original - h;
            let f_minus = eval_scalar(build, &probe)?;
            probe.get_mut(name).unwrap().values_mut()[coord] = original;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let analytic_v = analytic.get(name).unwrap().values()[coord];
            let err = relative_error(analytic_v, numeric);
            report.coordinates_checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_coordinate = Some((name.clone(), coord));
            }
        }
    }
    Ok(report)
}

fn eval_scalar<F>(build: &F, params: &ParamSet) -> Result<f64, NumError>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, NumError>,
{
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let loss = build(&mut tape, &bound)?;
    let v = tape.value(loss).item();
    if !v.is_finite() {
        return Err(NumError::NonFinite { op: "grad_check loss" });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgrad::Tensor;

    #[test]
    fn linear_function_is_exact() {
        let mut params = ParamSet::new();
        params
            .insert("w", Tensor::vector(vec![1.0, -2.0, 0.5]))
            .unwrap();
        let build = |tape: &mut Tape, bound: &BoundParams| {
            let w = bound.var("w");
            let s = tape.scale(w, 3.0)?;
            tape.sum(s)
        };
        let report = grad_check(&build, &params, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    #[test]
    fn quadratic_at_three_matches_hand_value() {
        // f(θ) = θ², θ = 3: analytic 6, central difference exact up to roundoff
        let mut params = ParamSet::new();
        params.insert("theta", Tensor::scalar(3.0)).unwrap();
        let build = |tape: &mut Tape, bound: &BoundParams| {
            let t = bound.var("theta");
            let sq = tape.mul(t, t)?;
            tape.sum(sq)
        };
        let report = grad_check(&build, &params, 1e-4).unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        // compare a doubled analytic gradient against the central difference
        // by hand: the report metric must be far above any pass threshold
        let analytic = 2.0 * 6.0; // corrupted: x2
        let numeric = 6.0;
        let err = relative_error(analytic, numeric);
        assert!((err - 0.5).abs() < 1e-12);
        assert!(err > 1e-4, "corruption must be detected");
        // a zeroed-out analytic gradient reports error ~ 1.0
        let err_zeroed = relative_error(0.0, 6.0);
        assert!((err_zeroed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::scalar(1.0)).unwrap();
        let build = |tape: &mut Tape, bound: &BoundParams| {
            let w = bound.var("w");
            tape.sum(w)
        };
        assert!(grad_check(&build, &params, 0.0).is_err());
    }
}
