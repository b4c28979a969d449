use crate::error::{contract, Result};

use super::{Tape, Tensor, Var};

/// Worst-case discrepancy between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Worst coordinate: `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// Worst input tensor: `‖a - n‖ / max(‖a‖, ‖n‖, 1e-8)`. Coordinates
    /// whose true gradient is below the finite-difference noise floor only
    /// count in proportion to their tensor's scale.
    pub max_tensor_rel_error: f64,
    pub coordinates: usize,
}

/// Compares the tape gradient of the scalar function `f` against central
/// differences `(f(x+eps) - f(x-eps)) / 2eps` on every coordinate of every
/// input.
///
/// The relative error per coordinate uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        if tape.numel(out) != 1 {
            return contract("grad_check function must return a scalar");
        }
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tape.numel(v)])
        })
        .collect();

    let mut worst: f64 = 0.0;
    let mut worst_tensor: f64 = 0.0;
    let mut coordinates = 0;
    let mut work = inputs.to_vec();
    for (ti, grads) in analytic.iter().enumerate() {
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for j in 0..grads.len() {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[ti].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grads[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            coordinates += 1;
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(1e-8);
        worst_tensor = worst_tensor.max(diff2.sqrt() / denom);
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        max_tensor_rel_error: worst_tensor,
        coordinates,
    })
}
