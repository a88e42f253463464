//! Finite-difference verification of tape gradients.

use super::{NodeId, Tape, Tensor};
use crate::error::Result;

/// Per-element comparison of tape gradient vs central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_deviation: f64,
    pub worst_index: usize,
    /// True when either gradient contains a non-finite entry.
    pub non_finite: bool,
    pub passed: bool,
}

/// Compare the tape gradient of a scalar-valued function against
/// (f(x + h e_i) - f(x - h e_i)) / 2h for every element of x.
///
/// Deviation is measured relative to max(1, |analytic|, |numeric|) so that
/// near-zero gradients are compared absolutely.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    // Analytic gradient via one taped forward + backward.
    let mut tape = Tape::new();
    let xid = tape.var(x);
    let loss = f(&mut tape, xid)?;
    tape.backward(loss)?;
    let analytic = tape.grad(xid)?.to_vec();

    // Numeric gradient via central differences, forward passes only.
    let eval = |data: &[f64]| -> Result<f64> {
        let mut t = Tape::new();
        let id = t.constant(&Tensor::new(x.shape().to_vec(), data.to_vec())?);
        let out = f(&mut t, id)?;
        t.value(out).item()
    };
    let mut numeric = vec![0.0; x.len()];
    let mut probe = x.data().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = eval(&probe)?;
        probe[i] = orig - h;
        let fm = eval(&probe)?;
        probe[i] = orig;
        numeric[i] = (fp - fm) / (2.0 * h);
    }

    let mut max_rel = 0.0;
    let mut worst = 0;
    let mut non_finite = false;
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        if !a.is_finite() || !n.is_finite() {
            non_finite = true;
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    let passed = !non_finite && max_rel <= tol;
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_deviation: max_rel,
        worst_index: worst,
        non_finite,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        // dyadic inputs and a power-of-two step keep the central difference
        // exact, so both gradients are exactly 1 everywhere
        let x = Tensor::new(vec![4], vec![0.5, -1.25, 0.75, 2.0]).unwrap();
        let report = grad_check(|t, id| t.sum_all(id), &x, 2f64.powi(-16), 1e-9).unwrap();
        assert_eq!(report.max_rel_deviation, 0.0);
        assert!(report.passed);
    }

    #[test]
    fn non_finite_input_reported_not_panicked() {
        let x = Tensor::new(vec![2], vec![f64::INFINITY, 1.0]).unwrap();
        let report = grad_check(
            |t, id| {
                let s = t.square(id)?;
                t.sum_all(s)
            },
            &x,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.non_finite);
        assert!(!report.passed);
    }
}
