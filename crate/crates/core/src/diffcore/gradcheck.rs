//! Central finite-difference oracle for tape gradients.

use super::real::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// Points closer than this to a relu/abs/hinge kink are not checked.
pub const KINK_GUARD: f64 = 1e-3;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum GradCheck {
    Checked {
        /// max |analytic − numeric| / max(1, |numeric|) over all coordinates.
        max_rel_error: f64,
        /// (input index, flat coordinate) of the worst coordinate.
        worst: (usize, usize),
    },
    /// The probe point sits within [`KINK_GUARD`] of a non-differentiable point.
    Excluded { kink_distance: f64 },
}

impl GradCheck {
    pub fn max_rel_error(&self) -> Option<f64> {
        match self {
            GradCheck::Checked { max_rel_error, .. } => Some(*max_rel_error),
            GradCheck::Excluded { .. } => None,
        }
    }

    pub fn is_excluded(&self) -> bool {
        matches!(self, GradCheck::Excluded { .. })
    }
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` records the function on a fresh tape given one trainable leaf per
/// input. `fault` corrupts the named op's gradient rule (harness use).
pub fn grad_check<F, Fun>(f: Fun, inputs: &[Tensor<F>], eps: F) -> Result<GradCheck, AutodiffError>
where
    F: Real,
    Fun: Fn(&mut Tape<F>, &[Var]) -> Result<Var, AutodiffError>,
{
    grad_check_with_fault(f, inputs, eps, None)
}

#[doc(hidden)]
pub fn grad_check_with_fault<F, Fun>(
    f: Fun,
    inputs: &[Tensor<F>],
    eps: F,
    fault: Option<&'static str>,
) -> Result<GradCheck, AutodiffError>
where
    F: Real,
    Fun: Fn(&mut Tape<F>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    if let Some(op) = fault {
        tape.inject_fault(op);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if let Some(d) = tape.kink_distance() {
        let d = d.to_f64_lossy();
        if d < KINK_GUARD {
            return Ok(GradCheck::Excluded { kink_distance: d });
        }
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<F>> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |probe: &[Tensor<F>]| -> Result<f64, AutodiffError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|p| t.param(p.clone())).collect();
        let o = f(&mut t, &vs)?;
        let v = t.value(o);
        if !v.is_scalar() {
            return Err(AutodiffError::NonScalarOutput { shape: v.shape().to_vec() });
        }
        Ok(v.item().to_f64_lossy())
    };

    let mut probe: Vec<Tensor<F>> = inputs.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst = (0, 0);
    let two_eps = 2.0 * eps.to_f64_lossy();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / two_eps;
            let a = analytic[i].data()[j].to_f64_lossy();
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            if err > max_rel_error || err.is_nan() {
                max_rel_error = err;
                worst = (i, j);
            }
        }
    }
    Ok(GradCheck::Checked { max_rel_error, worst })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_error_is_roundoff() {
        let x = Tensor::from_vec(vec![0.3, -1.2, 2.0]);
        let r = grad_check(
            |t, v| {
                let s = t.scale(v[0], 3.0)?;
                t.sum(s)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error().unwrap() < 1e-9);
    }

    #[test]
    fn relu_at_origin_is_excluded() {
        let x = Tensor::from_vec(vec![0.0, 1.0]);
        let r = grad_check(
            |t, v| {
                let y = t.relu(v[0])?;
                t.sum(y)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.is_excluded());
    }

    #[test]
    fn injected_fault_is_detected() {
        let x = Tensor::from_vec(vec![0.5, 1.0]);
        let f = |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.relu(v[0])?;
            t.sum(y)
        };
        let clean = grad_check(f, std::slice::from_ref(&x), 1e-5).unwrap();
        assert!(clean.max_rel_error().unwrap() < 1e-9);
        let bad = grad_check_with_fault(f, &[x], 1e-5, Some("relu")).unwrap();
        assert!(bad.max_rel_error().unwrap() > 0.1);
    }
}
