//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::tape::{Tape, Var};
use super::{Result, Tensor, TensorError};
use crate::rng::stream;

/// Denominator floor for the relative error. Coordinates whose true gradient
/// is below this magnitude are effectively compared in absolute terms. In
/// `f64` with a step of `1e-6` the difference quotient of an O(1) loss built
/// from a few hundred operations carries rounding noise around `1e-9`, so an
/// exactly-zero gradient (a bias feeding train-mode batch norm) would
/// otherwise report a relative error near `1e-3`.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// Relative disagreement between the central differences at `eps` and
/// `eps / REFINE` above which `[x - eps, x + eps]` is taken to contain a kink
/// (a ReLU or max-pool switch). A smooth function makes the two agree to
/// `O(eps²)`.
pub const KINK_TOL: f64 = 1e-3;
/// Step reduction used when a kink is detected.
pub const REFINE: f64 = 8.0;
/// Magnitude below which kink detection works in absolute terms. Rounding
/// noise at the reduced step reaches `~1e-7` for losses of order 5, which
/// must not read as a kink.
pub const KINK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Coordinates whose numeric gradient came from the reduced step because
    /// the full step straddled a kink.
    pub refined: usize,
    /// `(input index, flat coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    fn record(&mut self, input: usize, coord: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if rel > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(rel);
            self.worst = Some((input, coord, analytic, numeric));
        }
    }
}

/// Compares the analytic gradient of scalar `f` at `x` with central
/// differences `(f(x+eps·eᵢ) − f(x−eps·eᵢ)) / 2eps` over every coordinate.
/// Where the step straddles a kink the difference at `eps / REFINE` is used
/// instead; a kink closer than that still fails the check.
pub fn grad_check<G>(f: G, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    G: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_inputs(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        eps,
        None,
    )
}

/// Multi-input gradient check. With `sample = Some((k, seed))` only `k`
/// randomly chosen coordinates of each input are perturbed.
pub fn grad_check_inputs<G>(
    f: G,
    inputs: &[Tensor<f64>],
    eps: f64,
    sample_coords: Option<(usize, u64)>,
) -> Result<GradCheckReport>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(TensorError::NonScalarOutput {
                shape: value.shape().to_vec(),
            });
        }
        Ok(value.item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(TensorError::NonScalarOutput {
            shape: tape.value(out).shape().to_vec(),
        });
    }
    let grads = tape.backward(out)?;
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
        refined: 0,
        worst: None,
    };
    let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        let coords: Vec<usize> = match sample_coords {
            Some((k, seed)) if k < input.len() => {
                let mut rng = stream(seed, &format!("gradcheck/{i}"));
                let mut c = sample(&mut rng, input.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..input.len()).collect(),
        };
        for c in coords {
            let orig = input.data()[c];
            let mut central = |h: f64| -> Result<f64> {
                perturbed[i].make_mut()[c] = orig + h;
                let plus = eval(&perturbed)?;
                perturbed[i].make_mut()[c] = orig - h;
                let minus = eval(&perturbed)?;
                perturbed[i].make_mut()[c] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            let coarse = central(eps)?;
            let fine = central(eps / REFINE)?;
            let scale = coarse.abs().max(fine.abs()).max(KINK_FLOOR);
            let numeric = if (coarse - fine).abs() > KINK_TOL * scale {
                report.refined += 1;
                fine
            } else {
                coarse
            };
            report.record(i, c, analytic.data()[c], numeric);
        }
    }
    Ok(report)
}
