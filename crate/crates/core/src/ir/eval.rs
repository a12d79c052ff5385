use std::collections::BTreeMap;

use super::infer::conv_geometry;
use super::{shape_of_op, ConvParams, Expr, IrError, Op, Shape, Tensor};
use crate::accel::AccelOp;

fn dense(a: &Tensor, b: &Tensor, out: Shape) -> Tensor {
    let (m, k) = (a.shape().dim(0), a.shape().dim(1));
    let n = b.shape().dim(0);
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += ad[i * k + t] * bd[j * k + t];
            }
            data.push(s);
        }
    }
    Tensor::new(out, data).expect("dense shape")
}

/// Elementwise `x + y` where `y` is either the same shape or a rank-1
/// tensor broadcast along the last axis.
fn broadcast_add(x: &Tensor, y: &Tensor) -> Tensor {
    if x.shape() == y.shape() {
        let data = x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect();
        return Tensor::new(x.shape().clone(), data).expect("same shape");
    }
    let (big, small) = if y.shape().rank() == 1 { (x, y) } else { (y, x) };
    let n = small.data().len();
    let data = big.data().iter().enumerate().map(|(i, &v)| v + small.data()[i % n]).collect();
    Tensor::new(big.shape().clone(), data).expect("broadcast shape")
}

fn conv2d(op: &Op, d: &Tensor, w: &Tensor, p: ConvParams, out: Shape) -> Result<Tensor, IrError> {
    let g = conv_geometry(op, d.shape(), w.shape(), p)?;
    let (oh, ow) = g.output_hw().expect("checked geometry");
    let (dd, wd) = (d.data(), w.data());
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..g.n {
        for o in 0..g.o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut s = 0.0;
                    for c in 0..g.c {
                        for i in 0..g.kh {
                            for j in 0..g.kw {
                                let iy = (y * p.stride.0 + i) as isize - p.pad.0 as isize;
                                let ix = (x * p.stride.1 + j) as isize - p.pad.1 as isize;
                                if iy < 0 || ix < 0 || iy as usize >= g.h || ix as usize >= g.w {
                                    continue;
                                }
                                s += dd[((n * g.c + c) * g.h + iy as usize) * g.w + ix as usize]
                                    * wd[((o * g.c + c) * g.kh + i) * g.kw + j];
                            }
                        }
                    }
                    data.push(s);
                }
            }
        }
    }
    Tensor::new(out, data)
}

/// Patch matrix: one row per output position (n, y, x), one column per
/// (c, i, j) window offset; padded positions read as zero.
fn im2col(d: &Tensor, kernel: (usize, usize), p: ConvParams, out: Shape) -> Tensor {
    let dims = d.shape().dims();
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let oh = (h + 2 * p.pad.0 - kernel.0) / p.stride.0 + 1;
    let ow = (w + 2 * p.pad.1 - kernel.1) / p.stride.1 + 1;
    let dd = d.data();
    let mut data = Vec::with_capacity(out.numel());
    for ni in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                for ci in 0..c {
                    for i in 0..kernel.0 {
                        for j in 0..kernel.1 {
                            let iy = (y * p.stride.0 + i) as isize - p.pad.0 as isize;
                            let ix = (x * p.stride.1 + j) as isize - p.pad.1 as isize;
                            let v = if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                0.0
                            } else {
                                dd[((ni * c + ci) * h + iy as usize) * w + ix as usize]
                            };
                            data.push(v);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out, data).expect("im2col shape")
}

/// Real-arithmetic value of a non-leaf operator applied to evaluated
/// arguments. `accel_call` evaluates the IR fragment it stands for.
fn apply(op: &Op, args: &[Tensor], out: Shape) -> Result<Tensor, IrError> {
    Ok(match op {
        Op::Var(_) | Op::Lit(_) => unreachable!("leaves are handled by the caller"),
        Op::Dense => dense(&args[0], &args[1], out),
        Op::BiasAdd | Op::Add => broadcast_add(&args[0], &args[1]),
        Op::Reshape(s) => args[0].reshape(s.clone())?,
        Op::Relu => args[0].map(|x| x.max(0.0)),
        Op::Conv2d(p) => conv2d(op, &args[0], &args[1], *p, out)?,
        Op::Im2col { kernel, params } => im2col(&args[0], *kernel, *params, out),
        Op::AccelCall { op: aop, conv, .. } => match aop {
            AccelOp::Linear | AccelOp::LinearRelu => {
                let lin = broadcast_add(&dense(&args[0], &args[1], out), &args[2]);
                if *aop == AccelOp::LinearRelu {
                    lin.map(|x| x.max(0.0))
                } else {
                    lin
                }
            }
            AccelOp::Conv2d => {
                let p = conv.ok_or_else(|| IrError::Call("conv2d call without stride/pad".into()))?;
                conv2d(op, &args[0], &args[1], p, out)?
            }
        },
    })
}

/// Reference semantics of an `accel_call`: the value of the IR fragment
/// that the mapping rule replaced.
pub fn reference_call(op: &Op, args: &[Tensor]) -> Result<Tensor, IrError> {
    let shapes: Vec<&Shape> = args.iter().map(Tensor::shape).collect();
    let out = shape_of_op(op, &shapes, &BTreeMap::new())?;
    apply(op, args, out)
}

/// Evaluate `expr`, delegating every `accel_call` to `call`.
pub fn eval_with<F>(expr: &Expr, env: &BTreeMap<String, Tensor>, call: &mut F) -> Result<Tensor, IrError>
where
    F: FnMut(&Op, &[Tensor]) -> Result<Tensor, IrError>,
{
    match &expr.op {
        Op::Var(n) => return env.get(n).cloned().ok_or_else(|| IrError::UnboundVar(n.clone())),
        Op::Lit(t) => return Ok(t.clone()),
        _ => {}
    }
    let args = expr.args.iter().map(|a| eval_with(a, env, call)).collect::<Result<Vec<_>, _>>()?;
    let shapes: Vec<&Shape> = args.iter().map(Tensor::shape).collect();
    let out = shape_of_op(&expr.op, &shapes, &BTreeMap::new())?;
    if let Op::AccelCall { .. } = expr.op {
        let t = call(&expr.op, &args)?;
        if *t.shape() != out {
            return Err(IrError::Call(format!("{} returned {}, expected {out}", expr.op, t.shape())));
        }
        return Ok(t);
    }
    apply(&expr.op, &args, out)
}

/// Host evaluation in f64 with reference semantics for `accel_call`.
pub fn eval_ref(expr: &Expr, env: &BTreeMap<String, Tensor>) -> Result<Tensor, IrError> {
    eval_with(expr, env, &mut reference_call)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_expr;
    use proptest::prelude::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(Shape::of(dims), data.to_vec()).unwrap()
    }

    fn env(pairs: Vec<(&str, Tensor)>) -> BTreeMap<String, Tensor> {
        pairs.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    }

    #[test]
    fn dense_identity() {
        let e = parse_expr("(dense %a %b)").unwrap();
        let r = eval_ref(&e, &env(vec![("a", t(&[1, 2], &[1., 2.])), ("b", t(&[2, 2], &[1., 0., 0., 1.]))])).unwrap();
        assert_eq!(r, t(&[1, 2], &[1., 2.]));
    }

    #[test]
    fn bias_add_broadcast() {
        let e = parse_expr("(bias_add %x %c)").unwrap();
        let r = eval_ref(&e, &env(vec![("x", t(&[1, 2], &[1., 2.])), ("c", t(&[2], &[0.5, -0.5]))])).unwrap();
        assert_eq!(r, t(&[1, 2], &[1.5, 1.5]));
    }

    #[test]
    fn conv_hand_values() {
        // 3x3 all-ones kernel over all-ones 4x4: every 2x2 output is 9.
        let e = parse_expr("(conv2d %d %w (stride 1 1) (pad 0 0))").unwrap();
        let r = eval_ref(&e, &env(vec![("d", Tensor::from_fn(Shape::of(&[1, 1, 4, 4]), |_| 1.0)), ("w", Tensor::from_fn(Shape::of(&[1, 1, 3, 3]), |_| 1.0))])).unwrap();
        assert_eq!(r, t(&[1, 1, 2, 2], &[9.; 4]));
        // With padding the corner only sees a 2x2 patch.
        let e = parse_expr("(conv2d %d %w (stride 1 1) (pad 1 1))").unwrap();
        let r = eval_ref(&e, &env(vec![("d", Tensor::from_fn(Shape::of(&[1, 1, 4, 4]), |_| 1.0)), ("w", Tensor::from_fn(Shape::of(&[1, 1, 3, 3]), |_| 1.0))])).unwrap();
        assert_eq!(r.data()[0], 4.0);
        assert_eq!(r.data()[5], 9.0);
    }

    #[test]
    fn im2col_layout() {
        let e = parse_expr("(im2col %d (kernel 2 2) (stride 1 1) (pad 0 0))").unwrap();
        let d = Tensor::from_fn(Shape::of(&[1, 1, 3, 3]), |i| i as f64);
        let r = eval_ref(&e, &env(vec![("d", d)])).unwrap();
        assert_eq!(r.shape(), &Shape::of(&[4, 4]));
        assert_eq!(&r.data()[..8], &[0., 1., 3., 4., 1., 2., 4., 5.]);
    }

    fn random(shape: &[usize], seed: &[f64]) -> Tensor {
        let s = Shape::of(shape);
        Tensor::from_fn(s, |i| seed[i % seed.len()])
    }

    proptest! {
        #[test]
        fn reshape_keeps_data(vals in proptest::collection::vec(-10f64..10., 12), pick in 0usize..4) {
            let target = [vec![12], vec![3, 4], vec![2, 2, 3], vec![1, 12]][pick].clone();
            let x = t(&[4, 3], &vals);
            let e = Expr::reshape(Expr::var("x"), Shape::of(&target));
            let r = eval_ref(&e, &env(vec![("x", x.clone())])).unwrap();
            prop_assert_eq!(r.shape(), &Shape::of(&target));
            prop_assert_eq!(r.data(), x.data());
            let same = eval_ref(&Expr::reshape(Expr::var("x"), Shape::of(&[4, 3])), &env(vec![("x", x.clone())])).unwrap();
            prop_assert_eq!(same, x);
        }

        #[test]
        fn im2col_dense_equals_conv(
            c in 1usize..3, h in 3usize..7, w in 3usize..7, o in 1usize..4, k in 1usize..4,
            s in 1usize..3, p in 0usize..2, seed in proptest::collection::vec(-1f64..1., 7..40),
        ) {
            let params = ConvParams::new((s, s), (p, p));
            let geom = crate::numerics::ConvGeometry { n: 1, c, h, w, o, kh: k, kw: k, stride: (s, s), pad: (p, p) };
            prop_assume!(geom.output_hw().is_some());
            let (oh, ow) = geom.output_hw().unwrap();
            let d = random(&[1, c, h, w], &seed);
            let wt = random(&[o, c, k, k], &seed[3..]);
            let direct = Expr::conv2d(Expr::var("d"), Expr::var("w"), params);
            let lowered = Expr::reshape(
                Expr::dense(
                    Expr::reshape(Expr::var("w"), Shape::of(&[o, c * k * k])),
                    Expr::im2col(Expr::var("d"), (k, k), params),
                ),
                Shape::of(&[1, o, oh, ow]),
            );
            let e = env(vec![("d", d), ("w", wt)]);
            let a = eval_ref(&direct, &e).unwrap();
            let b = eval_ref(&lowered, &e).unwrap();
            let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(diff <= 1e-9 * a.frobenius().max(1e-300));
        }
    }
}
