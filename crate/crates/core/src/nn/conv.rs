//! Grouped 2-D cross-correlation (no kernel flip). Standard convolution is
//! the one-group case; depthwise convolution uses one group per input channel.

use crate::tensor::{Backward, Result, Scalar, Tape, Tensor, TensorError, Var};

/// Zero padding applied to the spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Padding2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding2d {
    pub const VALID: Padding2d = Padding2d {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    /// "same" padding on both axes for a stride-1 kernel.
    pub fn same(kernel: (usize, usize)) -> Self {
        let (t, b) = same_split(kernel.0);
        let (l, r) = same_split(kernel.1);
        Padding2d {
            top: t,
            bottom: b,
            left: l,
            right: r,
        }
    }

    /// "valid" on each axis unless the kernel would not fit, in which case
    /// that axis gets "same" padding. Returns the padding and whether any
    /// fallback was applied.
    pub fn valid_or_same(input: (usize, usize), kernel: (usize, usize)) -> (Self, bool) {
        let mut pad = Padding2d::VALID;
        let mut fallback = false;
        if kernel.0 > input.0 {
            (pad.top, pad.bottom) = same_split(kernel.0);
            fallback = true;
        }
        if kernel.1 > input.1 {
            (pad.left, pad.right) = same_split(kernel.1);
            fallback = true;
        }
        (pad, fallback)
    }

    pub fn output_size(
        &self,
        input: (usize, usize),
        kernel: (usize, usize),
    ) -> Option<(usize, usize)> {
        let h = (input.0 + self.top + self.bottom).checked_sub(kernel.0)? + 1;
        let w = (input.1 + self.left + self.right).checked_sub(kernel.1)? + 1;
        Some((h, w))
    }
}

fn same_split(k: usize) -> (usize, usize) {
    let total = k - 1;
    (total / 2, total - total / 2)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    in_channels: usize,
    h: usize,
    w: usize,
    filters: usize,
    groups: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad: Padding2d,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.in_channels / self.groups
    }

    fn fout_g(&self) -> usize {
        self.filters / self.groups
    }

    /// Output rows `oh` whose input row `oh + kh - top` is inside the image.
    #[inline]
    fn rows(&self, kh: usize) -> std::ops::Range<usize> {
        range_for(kh, self.pad.top, self.h, self.oh)
    }

    #[inline]
    fn cols(&self, kw: usize) -> std::ops::Range<usize> {
        range_for(kw, self.pad.left, self.w, self.ow)
    }
}

/// Range of output positions `o` with `0 <= o + k - pad < len`.
#[inline]
fn range_for(k: usize, pad: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(out_len);
    lo..hi.max(lo)
}

fn geometry(
    x: &[usize],
    w: &[usize],
    b: &[usize],
    groups: usize,
    pad: Padding2d,
) -> Result<Geometry> {
    if x.len() != 4 || w.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    }
    let (batch, in_channels, h, wd) = (x[0], x[1], x[2], x[3]);
    let (filters, cin_g, kh, kw) = (w[0], w[1], w[2], w[3]);
    if groups == 0
        || in_channels % groups != 0
        || filters % groups != 0
        || cin_g != in_channels / groups
        || b != [filters]
    {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    }
    let (oh, ow) =
        pad.output_size((h, wd), (kh, kw))
            .ok_or_else(|| TensorError::KernelLargerThanInput {
                kernel: vec![kh, kw],
                input: vec![h + pad.top + pad.bottom, wd + pad.left + pad.right],
            })?;
    Ok(Geometry {
        batch,
        in_channels,
        h,
        w: wd,
        filters,
        groups,
        kh,
        kw,
        oh,
        ow,
        pad,
    })
}

fn forward<F: Scalar>(g: &Geometry, x: &[F], w: &[F], b: &[F]) -> Vec<F> {
    let (cin_g, fout_g) = (g.cin_g(), g.fout_g());
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut out = vec![F::zero(); g.batch * g.filters * plane_out];
    for n in 0..g.batch {
        for f in 0..g.filters {
            let group = f / fout_g;
            let o = &mut out[(n * g.filters + f) * plane_out..][..plane_out];
            o.iter_mut().for_each(|v| *v = b[f]);
            for ci in 0..cin_g {
                let c = group * cin_g + ci;
                let xp = &x[(n * g.in_channels + c) * plane_in..][..plane_in];
                let wk = &w[(f * cin_g + ci) * g.kh * g.kw..][..g.kh * g.kw];
                for kh in 0..g.kh {
                    for kw in 0..g.kw {
                        let wv = wk[kh * g.kw + kw];
                        let cols = g.cols(kw);
                        if cols.is_empty() {
                            continue;
                        }
                        for oh in g.rows(kh) {
                            let ih = oh + kh - g.pad.top;
                            let src = &xp[ih * g.w + cols.start + kw - g.pad.left..][..cols.len()];
                            let dst = &mut o[oh * g.ow + cols.start..][..cols.len()];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

struct ConvRule {
    geo: Geometry,
}

impl<F: Scalar> Backward<F> for ConvRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        grad: &Tensor<F>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let g = &self.geo;
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let gd = grad.data();
        let (cin_g, fout_g) = (g.cin_g(), g.fout_g());
        let plane_in = g.h * g.w;
        let plane_out = g.oh * g.ow;
        let ksz = g.kh * g.kw;

        let mut dx = needs[0].then(|| vec![F::zero(); x.len()]);
        let mut dw = needs[1].then(|| vec![F::zero(); w.len()]);
        let db = needs[2].then(|| {
            let mut db = vec![F::zero(); g.filters];
            for n in 0..g.batch {
                for (f, acc) in db.iter_mut().enumerate() {
                    *acc += gd[(n * g.filters + f) * plane_out..][..plane_out]
                        .iter()
                        .copied()
                        .sum::<F>();
                }
            }
            Tensor::from_parts(vec![g.filters], db)
        });

        for n in 0..g.batch {
            for f in 0..g.filters {
                let group = f / fout_g;
                let go = &gd[(n * g.filters + f) * plane_out..][..plane_out];
                for ci in 0..cin_g {
                    let c = group * cin_g + ci;
                    let base_in = (n * g.in_channels + c) * plane_in;
                    let wbase = (f * cin_g + ci) * ksz;
                    for kh in 0..g.kh {
                        for kw in 0..g.kw {
                            let cols = g.cols(kw);
                            if cols.is_empty() {
                                continue;
                            }
                            let wv = w[wbase + kh * g.kw + kw];
                            let mut acc = F::zero();
                            for oh in g.rows(kh) {
                                let ih = oh + kh - g.pad.top;
                                let src_at = base_in + ih * g.w + cols.start + kw - g.pad.left;
                                let grow = &go[oh * g.ow + cols.start..][..cols.len()];
                                if let Some(dx) = dx.as_mut() {
                                    for (d, &gv) in
                                        dx[src_at..src_at + cols.len()].iter_mut().zip(grow)
                                    {
                                        *d += wv * gv;
                                    }
                                }
                                if dw.is_some() {
                                    for (&xv, &gv) in
                                        x[src_at..src_at + cols.len()].iter().zip(grow)
                                    {
                                        acc += xv * gv;
                                    }
                                }
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw[wbase + kh * g.kw + kw] += acc;
                            }
                        }
                    }
                }
            }
        }
        vec![
            dx.map(|d| Tensor::from_parts(inputs[0].shape().to_vec(), d)),
            dw.map(|d| Tensor::from_parts(inputs[1].shape().to_vec(), d)),
            db,
        ]
    }
}

fn grouped<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    w: Var,
    b: Var,
    groups: usize,
    pad: Padding2d,
) -> Result<Var> {
    let geo = geometry(tape.shape(x), tape.shape(w), tape.shape(b), groups, pad)?;
    let data = forward(
        &geo,
        tape.value(x).data(),
        tape.value(w).data(),
        tape.value(b).data(),
    );
    let out = Tensor::new(&[geo.batch, geo.filters, geo.oh, geo.ow], data)?;
    Ok(tape.record(out, &[x, w, b], ConvRule { geo }))
}

/// `x: (B,C,H,W)`, `w: (F,C,kh,kw)`, `b: (F)` → `(B,F,H',W')`.
pub fn conv2d<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    w: Var,
    b: Var,
    pad: Padding2d,
) -> Result<Var> {
    grouped(tape, x, w, b, 1, pad)
}

/// Depthwise convolution with depth multiplier `m`.
///
/// `x: (B,C,H,W)`, `w: (C·m,1,kh,kw)`, `b: (C·m)`. Output channel `c·m + j`
/// is input channel `c` correlated with kernel `c·m + j`; channels never mix.
pub fn depthwise_conv2d<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    w: Var,
    b: Var,
    pad: Padding2d,
) -> Result<Var> {
    let channels = tape.shape(x).get(1).copied().unwrap_or(0);
    grouped(tape, x, w, b, channels.max(1), pad)
}

/// `x: (B,C,L)`, `w: (F,C,k)`, `b: (F)` → `(B,F,L')`, with `(left, right)` padding.
pub fn conv1d<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    w: Var,
    b: Var,
    pad: (usize, usize),
) -> Result<Var> {
    let (xs, ws) = (tape.shape(x).to_vec(), tape.shape(w).to_vec());
    if xs.len() != 3 || ws.len() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            lhs: xs,
            rhs: ws,
        });
    }
    let x4 = tape.reshape(x, &[xs[0], xs[1], 1, xs[2]])?;
    let w4 = tape.reshape(w, &[ws[0], ws[1], 1, ws[2]])?;
    let y = conv2d(
        tape,
        x4,
        w4,
        b,
        Padding2d {
            left: pad.0,
            right: pad.1,
            ..Padding2d::VALID
        },
    )?;
    let ys = tape.shape(y).to_vec();
    tape.reshape(y, &[ys[0], ys[1], ys[3]])
}
