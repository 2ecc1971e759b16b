//! Straight-line reference computations shared by unit tests. These stay
//! independent of the tape implementation so they can serve as oracles.
#![cfg(test)]

use crate::tensor::Tensor;

/// Direct nested-loop convolution, stride 1 with `pad` zero padding.
pub fn conv_ref(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (c_in, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    let (c_out, kh, kw) = (w.shape[0], w.shape[2], w.shape[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[c_out, oh, ow]);
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b.data[co];
                for ci in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                acc += x.at3(ci, iy as usize, ix as usize)
                                    * w.data[((co * c_in + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
                out.set3(co, oy, ox, acc);
            }
        }
    }
    out
}

pub fn leaky_ref(t: &Tensor, slope: f64) -> Tensor {
    let mut o = t.clone();
    o.data
        .iter_mut()
        .for_each(|v| *v = if *v >= 0.0 { *v } else { slope * *v });
    o
}

pub fn linear_ref(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, n) = (w.shape[0], w.shape[1]);
    (0..m)
        .map(|i| {
            let mut acc = b.data[i];
            for j in 0..n {
                acc += w.data[i * n + j] * x[j];
            }
            acc
        })
        .collect()
}
