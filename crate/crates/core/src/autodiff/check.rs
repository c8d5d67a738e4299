//! Central finite-difference validation of tape gradients.
//!
//! The checker rebuilds the computation at perturbed inputs and compares
//! the analytic gradient against `(f(x + h e_i) - f(x - h e_i)) / 2h`
//! per coordinate. Coordinates where the perturbation crosses a discrete
//! decision boundary (a relu sign change, a pooling argmax change, or a
//! nearest-neighbor reassignment) are excluded, since the two sides then
//! sample different smooth pieces and the quotient is meaningless.

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    /// Largest relative error over checked coordinates.
    pub max_rel_err: f64,
    /// Mean relative error over checked coordinates.
    pub mean_rel_err: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates excluded by the kink mask or a signature change.
    pub skipped: usize,
}

/// Marks coordinates lying within `10 h` of zero. Useful for losses that
/// apply a kink directly to the input (such as a relu on raw coordinates),
/// where the finite-difference window would straddle the corner even
/// without a sign flip at the sample points.
pub fn kink_skip_mask(x: &Tensor, h: f64) -> Vec<bool> {
    x.data().iter().map(|v| v.abs() < 10.0 * h).collect()
}

/// Compares the tape gradient of a scalar loss against central finite
/// differences. `build` receives a fresh tape and the input node and must
/// return the scalar root; it is invoked once per function evaluation, so
/// any constants must be re-added inside it.
///
/// Relative error per coordinate is `|analytic - fd| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(
    x: &Tensor,
    h: f64,
    kink_mask: Option<&[bool]>,
    build: F,
) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be positive and finite, got {h}"
        )));
    }
    if let Some(mask) = kink_mask {
        if mask.len() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "finite_diff_check",
                detail: format!(
                    "kink mask has {} entries for {} coordinates",
                    mask.len(),
                    x.len()
                ),
            });
        }
    }

    let mut tape = Tape::new();
    let input = tape.input(x.clone(), true)?;
    let root = build(&mut tape, input)?;
    let mut grads = tape.backward(root)?;
    let analytic = grads.take(input).ok_or_else(|| {
        Error::InvalidInput("loss does not depend on the checked input".into())
    })?;
    let center_sig = tape.signature();

    let eval_at = |probe: Tensor| -> Result<(f64, Vec<u64>)> {
        let mut tape = Tape::new();
        let input = tape.input(probe, false)?;
        let root = build(&mut tape, input)?;
        let value = tape.value(root).scalar_value()?;
        Ok((value, tape.signature()))
    };

    let mut max_rel_err = 0.0f64;
    let mut sum_rel_err = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;

    for i in 0..x.len() {
        if kink_mask.is_some_and(|m| m[i]) {
            skipped += 1;
            continue;
        }
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let (f_plus, sig_plus) = eval_at(plus)?;
        let (f_minus, sig_minus) = eval_at(minus)?;
        if sig_plus != center_sig || sig_minus != center_sig {
            skipped += 1;
            continue;
        }
        let fd = (f_plus - f_minus) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - fd).abs() / a.abs().max(1.0);
        max_rel_err = max_rel_err.max(rel);
        sum_rel_err += rel;
        checked += 1;
    }

    let mean_rel_err = if checked > 0 {
        sum_rel_err / checked as f64
    } else {
        0.0
    };
    Ok(FiniteDiffReport {
        max_rel_err,
        mean_rel_err,
        checked,
        skipped,
    })
}
