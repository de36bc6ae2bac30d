//! Stride-1 2-D convolution (cross-correlation) with zero padding, via im2col.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
    /// Input had no batch axis.
    pub unbatched: bool,
}

pub(crate) fn conv_dims(input: &Tensor, weight: &Tensor, pad: usize) -> Result<ConvDims> {
    let (batch, c_in, h, w, unbatched) = match input.shape() {
        [c, h, w] => (1, *c, *h, *w, true),
        [n, c, h, w] => (*n, *c, *h, *w, false),
        s => {
            return Err(Error::shape(
                "conv2d",
                format!("input must be C x H x W or N x C x H x W, got {s:?}"),
            ))
        }
    };
    let [c_out, wc_in, kh, kw] = weight.shape() else {
        return Err(Error::shape(
            "conv2d",
            format!("weight must be Cout x Cin x kh x kw, got {:?}", weight.shape()),
        ));
    };
    if *wc_in != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c_in} channels, weight expects {wc_in}"),
        ));
    }
    if h + 2 * pad < *kh || w + 2 * pad < *kw {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
        ));
    }
    Ok(ConvDims {
        batch,
        c_in,
        h,
        w,
        c_out: *c_out,
        kh: *kh,
        kw: *kw,
        pad,
        ho: h + 2 * pad - kh + 1,
        wo: w + 2 * pad - kw + 1,
        unbatched,
    })
}

fn im2col(d: &ConvDims, x: &[f64], cols: &mut [f64]) {
    let n_out = d.ho * d.wo;
    for c in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                for oi in 0..d.ho {
                    let ii = oi as isize + ki as isize - d.pad as isize;
                    let line = &mut dst[oi * d.wo..(oi + 1) * d.wo];
                    if ii < 0 || ii >= d.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * d.h + ii as usize) * d.w..(c * d.h + ii as usize + 1) * d.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = oj as isize + kj as isize - d.pad as isize;
                        *v = if jj < 0 || jj >= d.w as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(d: &ConvDims, cols: &[f64], gx: &mut [f64]) {
    let n_out = d.ho * d.wo;
    for c in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * n_out..(row + 1) * n_out];
                for oi in 0..d.ho {
                    let ii = oi as isize + ki as isize - d.pad as isize;
                    if ii < 0 || ii >= d.h as isize {
                        continue;
                    }
                    let base = (c * d.h + ii as usize) * d.w;
                    for oj in 0..d.wo {
                        let jj = oj as isize + kj as isize - d.pad as isize;
                        if jj >= 0 && jj < d.w as isize {
                            gx[base + jj as usize] += src[oi * d.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    pad: usize,
) -> Result<Tensor> {
    let d = conv_dims(input, weight, pad)?;
    if let Some(b) = bias {
        if b.shape() != [d.c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias must have shape [{}], got {:?}", d.c_out, b.shape()),
            ));
        }
    }
    let k = d.c_in * d.kh * d.kw;
    let n_out = d.ho * d.wo;
    let in_sz = d.c_in * d.h * d.w;
    let out_sz = d.c_out * n_out;
    let mut out = vec![0.0; d.batch * out_sz];
    let mut cols = vec![0.0; k * n_out];
    for n in 0..d.batch {
        im2col(&d, &input.data()[n * in_sz..(n + 1) * in_sz], &mut cols);
        let o = &mut out[n * out_sz..(n + 1) * out_sz];
        gemm(d.c_out, k, n_out, weight.data(), false, &cols, false, o, 0.0);
        if let Some(b) = bias {
            for (co, bv) in b.data().iter().enumerate() {
                for v in &mut o[co * n_out..(co + 1) * n_out] {
                    *v += bv;
                }
            }
        }
    }
    let shape = if d.unbatched {
        vec![d.c_out, d.ho, d.wo]
    } else {
        vec![d.batch, d.c_out, d.ho, d.wo]
    };
    Tensor::new(shape, out)
}

/// Returns gradients for (input, weight, bias) as requested.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    pad: usize,
    grad_out: &Tensor,
    want: [bool; 3],
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let d = conv_dims(input, weight, pad).expect("validated in forward");
    let k = d.c_in * d.kh * d.kw;
    let n_out = d.ho * d.wo;
    let in_sz = d.c_in * d.h * d.w;
    let out_sz = d.c_out * n_out;
    let mut gx = want[0].then(|| vec![0.0; d.batch * in_sz]);
    let mut gw = want[1].then(|| vec![0.0; d.c_out * k]);
    let mut gb = want[2].then(|| vec![0.0; d.c_out]);
    let mut cols = vec![0.0; k * n_out];
    for n in 0..d.batch {
        let go = &grad_out.data()[n * out_sz..(n + 1) * out_sz];
        if let Some(gw) = gw.as_mut() {
            im2col(&d, &input.data()[n * in_sz..(n + 1) * in_sz], &mut cols);
            gemm(d.c_out, n_out, k, go, false, &cols, true, gw, 1.0);
        }
        if let Some(gb) = gb.as_mut() {
            for (co, b) in gb.iter_mut().enumerate() {
                *b += go[co * n_out..(co + 1) * n_out].iter().sum::<f64>();
            }
        }
        if let Some(gx) = gx.as_mut() {
            gemm(k, d.c_out, n_out, weight.data(), true, go, false, &mut cols, 0.0);
            col2im(&d, &cols, &mut gx[n * in_sz..(n + 1) * in_sz]);
        }
    }
    (
        gx.map(|v| Tensor::new(input.shape().to_vec(), v).expect("shape")),
        gw.map(|v| Tensor::new(weight.shape().to_vec(), v).expect("shape")),
        gb.map(|v| Tensor::new(vec![d.c_out], v).expect("shape")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::new(vec![1, 3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::vector(&[0.0]);
        assert_eq!(conv2d_forward(&x, &w, Some(&b), 0).unwrap(), x);
    }

    #[test]
    fn padding_grows_output() {
        let x = Tensor::full(&[2, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, None, 1).unwrap();
        assert_eq!(y.shape(), &[2, 1, 3, 3]);
        // Center sees all nine ones, corners see four.
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }
}
