//! Gated recurrent unit unrolled on the tape.
//!
//! With `h₀ = 0`, for each step:
//!
//! ```text
//! z_t = σ(x_t W_z + h_{t−1} U_z + b_z)
//! r_t = σ(x_t W_r + h_{t−1} U_r + b_r)
//! h̃_t = tanh(x_t W_h + (r_t ∘ h_{t−1}) U_h + b_h)
//! h_t = (1 − z_t) ∘ h_{t−1} + z_t ∘ h̃_t
//! ```
//!
//! `W_*` are `(D,H)`, `U_*` are `(H,H)` and `b_*` are `(H)`.

use crate::tensor::{Result, Scalar, Tape, Tensor, TensorError, Var};

/// Tape handles of the nine GRU parameters.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruVars {
    /// Builds from a slice ordered `W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h`.
    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            w_z: v[0],
            u_z: v[1],
            b_z: v[2],
            w_r: v[3],
            u_r: v[4],
            b_r: v[5],
            w_h: v[6],
            u_h: v[7],
            b_h: v[8],
        }
    }
}

pub struct GruOutput {
    /// Hidden state at every step, `(B,T,H)`.
    pub outputs: Var,
    /// Final hidden state, `(B,H)`.
    pub last: Var,
}

/// Runs the GRU over `x: (B,T,D)` from a zero initial state.
pub fn gru_forward<F: Scalar>(tape: &mut Tape<F>, x: Var, p: &GruVars) -> Result<GruOutput> {
    let last = gru_unroll(tape, x, p, true)?;
    Ok(GruOutput {
        outputs: last.1.expect("outputs requested"),
        last: last.0,
    })
}

/// Like [`gru_forward`] but only materializes the final hidden state.
pub fn gru_last<F: Scalar>(tape: &mut Tape<F>, x: Var, p: &GruVars) -> Result<Var> {
    Ok(gru_unroll(tape, x, p, false)?.0)
}

fn gru_unroll<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    p: &GruVars,
    keep: bool,
) -> Result<(Var, Option<Var>)> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "gru",
            lhs: xs,
            rhs: vec![],
        });
    }
    let (batch, steps, dim) = (xs[0], xs[1], xs[2]);
    if steps == 0 {
        return Err(TensorError::EmptySequence);
    }
    let w_shape = tape.shape(p.w_z).to_vec();
    if w_shape.len() != 2 || w_shape[0] != dim {
        return Err(TensorError::ShapeMismatch {
            op: "gru",
            lhs: xs,
            rhs: w_shape,
        });
    }
    let hidden = w_shape[1];

    // Time-major rows so each step is one contiguous slice.
    let xt = tape.permute(x, &[1, 0, 2])?;
    let flat = tape.reshape(xt, &[steps * batch, dim])?;
    let gate_input = |tape: &mut Tape<F>, w: Var, b: Var| -> Result<Var> {
        let xw = tape.matmul(flat, w)?;
        tape.add(xw, b)
    };
    let xz = gate_input(tape, p.w_z, p.b_z)?;
    let xr = gate_input(tape, p.w_r, p.b_r)?;
    let xh = gate_input(tape, p.w_h, p.b_h)?;

    let mut h = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut outputs = Vec::with_capacity(if keep { steps } else { 0 });
    for t in 0..steps {
        let (lo, hi) = (t * batch, (t + 1) * batch);
        let xz_t = tape.slice(xz, 0, lo, hi)?;
        let xr_t = tape.slice(xr, 0, lo, hi)?;
        let xh_t = tape.slice(xh, 0, lo, hi)?;

        let hu_z = tape.matmul(h, p.u_z)?;
        let a_z = tape.add(xz_t, hu_z)?;
        let z = tape.sigmoid(a_z)?;

        let hu_r = tape.matmul(h, p.u_r)?;
        let a_r = tape.add(xr_t, hu_r)?;
        let r = tape.sigmoid(a_r)?;

        let rh = tape.mul(r, h)?;
        let rhu = tape.matmul(rh, p.u_h)?;
        let a_h = tape.add(xh_t, rhu)?;
        let cand = tape.tanh(a_h)?;

        let keep_gate = tape.affine(z, -F::one(), F::one())?;
        let kept = tape.mul(keep_gate, h)?;
        let fresh = tape.mul(z, cand)?;
        h = tape.add(kept, fresh)?;
        if keep {
            outputs.push(tape.reshape(h, &[batch, 1, hidden])?);
        }
    }
    let all = if keep {
        Some(tape.concat(&outputs, 1)?)
    } else {
        None
    };
    Ok((h, all))
}
