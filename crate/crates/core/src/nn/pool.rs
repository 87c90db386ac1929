use crate::tensor::{Backward, Result, Scalar, Tape, Tensor, TensorError, Var};

struct MaxPoolRule {
    /// Flat input index of the maximum feeding each output element.
    argmax: Vec<usize>,
}

impl<F: Scalar> Backward<F> for MaxPoolRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        grad: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let mut dx = vec![F::zero(); inputs[0].len()];
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            dx[src] += g;
        }
        vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), dx))]
    }
}

/// Max pooling over the last two axes of `(B,C,H,W)`. Ties route the
/// gradient to the first maximum in row-major window order.
pub fn maxpool2d<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 4 || window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool2d",
            lhs: xs,
            rhs: vec![window.0, window.1],
        });
    }
    let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
    if window.0 > h || window.1 > w {
        return Err(TensorError::WindowLargerThanInput {
            window: vec![window.0, window.1],
            input: vec![h, w],
        });
    }
    let oh = (h - window.0) / stride.0 + 1;
    let ow = (w - window.1) / stride.1 + 1;
    let src = tape.value(x).data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best_at = base + i * stride.0 * w + j * stride.1;
                for di in 0..window.0 {
                    for dj in 0..window.1 {
                        let at = base + (i * stride.0 + di) * w + j * stride.1 + dj;
                        if src[at] > src[best_at] {
                            best_at = at;
                        }
                    }
                }
                out.push(src[best_at]);
                argmax.push(best_at);
            }
        }
    }
    let out = Tensor::new(&[xs[0], xs[1], oh, ow], out)?;
    Ok(tape.record(out, &[x], MaxPoolRule { argmax }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_two_by_two() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = maxpool2d(&mut tape, x, (2, 2), (2, 2)).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn ramp_pools_to_lower_right_corners() {
        // x[i][j] = 10 i + j; the window maximum sits at its last row/column
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 4, 6], |k| {
            (10 * (k / 6) + k % 6) as f64
        }));
        let y = maxpool2d(&mut tape, x, (2, 2), (2, 2)).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 13.0, 15.0, 31.0, 33.0, 35.0]);
    }

    #[test]
    fn ties_route_to_first_index() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(&[1, 1, 2, 4], 7.0));
        let y = maxpool2d(&mut tape, x, (2, 2), (2, 2)).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0, 7.0]);
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(
            g.get(x).unwrap().data(),
            &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn window_larger_than_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 1, 1, 1]));
        assert!(matches!(
            maxpool2d(&mut tape, x, (1, 2), (1, 2)),
            Err(TensorError::WindowLargerThanInput { .. })
        ));
    }
}
