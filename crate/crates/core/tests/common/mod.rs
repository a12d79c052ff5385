//! Test-side reference implementations, written without the library's
//! numerics so the two can be checked against each other.
#![allow(dead_code)]

use accelbridge_core::{FixedSpec, Shape, Tensor};

/// Round-half-even of `x * 2^frac`, clamped to the format, back to a real.
pub fn fx(x: f64, spec: FixedSpec) -> f64 {
    let scale = (spec.frac_bits() as f64).exp2();
    let lo = -((spec.width() - 1) as f64).exp2();
    let hi = ((spec.width() - 1) as f64).exp2() - 1.0;
    (x * scale).round_ties_even().clamp(lo, hi) / scale
}

pub struct Formats {
    pub weight: FixedSpec,
    pub act: FixedSpec,
    pub acc: FixedSpec,
}

/// Linear layer: operands rounded into their formats, exact dyadic
/// products (exact in f64 at these sizes), accumulator then activation
/// rounding.
pub fn linear(a: &Tensor, w: &Tensor, b: &Tensor, f: &Formats, relu: bool) -> Tensor {
    let (m, k) = (a.shape().dim(0), a.shape().dim(1));
    let n = w.shape().dim(0);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let mut s = fx(b.data()[j], f.act);
            for t in 0..k {
                s += fx(a.data()[i * k + t], f.act) * fx(w.data()[j * k + t], f.weight);
            }
            let y = fx(fx(s, f.acc), f.act);
            out.push(if relu { y.max(0.0) } else { y });
        }
    }
    Tensor::new(Shape::of(&[m, n]), out).unwrap()
}

/// Direct NCHW/OIHW convolution with zero padding, quantized like `linear`.
pub fn conv(d: &Tensor, w: &Tensor, stride: (usize, usize), pad: (usize, usize), f: &Formats) -> Tensor {
    let [n, c, h, wd] = d.shape().dims().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().dims().try_into().unwrap();
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = Vec::new();
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut s = 0.0;
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let (yy, xx) = ((y * stride.0 + i) as isize - pad.0 as isize, (x * stride.1 + j) as isize - pad.1 as isize);
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let dv = d.data()[((b * c + ic) * h + yy as usize) * wd + xx as usize];
                                let wv = w.data()[((oc * c + ic) * kh + i) * kw + j];
                                s += fx(dv, f.act) * fx(wv, f.weight);
                            }
                        }
                    }
                    out.push(fx(fx(s, f.acc), f.act));
                }
            }
        }
    }
    Tensor::new(Shape::of(&[n, o, oh, ow]), out).unwrap()
}

/// Frobenius relative error, straight from the definition.
pub fn rel_err(reference: &Tensor, actual: &Tensor) -> f64 {
    let num: f64 = reference.data().iter().zip(actual.data()).map(|(r, a)| (r - a).powi(2)).sum::<f64>().sqrt();
    let den: f64 = reference.data().iter().map(|r| r * r).sum::<f64>().sqrt();
    num / den
}
