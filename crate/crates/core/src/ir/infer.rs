use std::collections::BTreeMap;

use super::{ConvParams, Expr, IrError, Op, Shape};
use crate::accel::AccelOp;
use crate::numerics::ConvGeometry;

/// Shapes of an expression tree, parallel to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTree {
    pub shape: Shape,
    pub children: Vec<ShapeTree>,
}

impl ShapeTree {
    pub fn at_path(&self, path: &[usize]) -> Option<&ShapeTree> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => self.children.get(i)?.at_path(rest),
        }
    }
}

fn mismatch(op: &Op, detail: impl Into<String>) -> IrError {
    IrError::ShapeMismatch { node: op.to_string(), detail: detail.into() }
}

fn rank(op: &Op, what: &str, s: &Shape, r: usize) -> Result<(), IrError> {
    if s.rank() != r {
        return Err(mismatch(op, format!("{what} must be rank {r}, found {s}")));
    }
    Ok(())
}

/// Geometry of a convolution given NCHW data and OIHW weight shapes.
pub(crate) fn conv_geometry(op: &Op, data: &Shape, weight: &Shape, p: ConvParams) -> Result<ConvGeometry, IrError> {
    rank(op, "conv data", data, 4)?;
    rank(op, "conv weight", weight, 4)?;
    let d = data.dims();
    let w = weight.dims();
    if d[1] != w[1] {
        return Err(mismatch(op, format!("data channels {} vs weight channels {}", d[1], w[1])));
    }
    let g = ConvGeometry { n: d[0], c: d[1], h: d[2], w: d[3], o: w[0], kh: w[2], kw: w[3], stride: p.stride, pad: p.pad };
    if g.output_hw().is_none() {
        return Err(mismatch(op, format!("window {}x{} does not tile {data} with {p}", g.kh, g.kw)));
    }
    Ok(g)
}

fn im2col_shape(op: &Op, data: &Shape, kernel: (usize, usize), p: ConvParams) -> Result<Shape, IrError> {
    rank(op, "im2col data", data, 4)?;
    let d = data.dims();
    let g = ConvGeometry { n: d[0], c: d[1], h: d[2], w: d[3], o: 1, kh: kernel.0, kw: kernel.1, stride: p.stride, pad: p.pad };
    let (oh, ow) = g.output_hw().ok_or_else(|| mismatch(op, format!("kernel {kernel:?} does not tile {data}")))?;
    Shape::new(vec![g.n * oh * ow, g.c * g.kh * g.kw]).map_err(|e| mismatch(op, e.to_string()))
}

fn linear_shape(op: &Op, a: &Shape, b: &Shape) -> Result<Shape, IrError> {
    rank(op, "dense data", a, 2)?;
    rank(op, "dense weight", b, 2)?;
    if a.dim(1) != b.dim(1) {
        return Err(mismatch(op, format!("contraction {a} x {b}")));
    }
    Ok(Shape::of(&[a.dim(0), b.dim(0)]))
}

fn bias_shape(op: &Op, x: &Shape, bias: &Shape) -> Result<(), IrError> {
    if x.rank() == 0 || bias.rank() != 1 || x.last() != bias.last() {
        return Err(mismatch(op, format!("bias {bias} does not match {x}")));
    }
    Ok(())
}

/// Result shape of `op` applied to children of the given shapes.
pub fn shape_of_op(op: &Op, children: &[&Shape], env: &BTreeMap<String, Shape>) -> Result<Shape, IrError> {
    if children.len() != op.arity() {
        return Err(mismatch(op, format!("expected {} operands, found {}", op.arity(), children.len())));
    }
    match op {
        Op::Var(n) => env.get(n).cloned().ok_or_else(|| IrError::UnboundVar(n.clone())),
        Op::Lit(t) => Ok(t.shape().clone()),
        Op::Dense => linear_shape(op, children[0], children[1]),
        Op::BiasAdd => {
            bias_shape(op, children[0], children[1])?;
            Ok(children[0].clone())
        }
        Op::Add => {
            let (x, y) = (children[0], children[1]);
            if x == y || (y.rank() == 1 && x.rank() >= 1 && x.last() == y.last()) {
                Ok(x.clone())
            } else if x.rank() == 1 && y.rank() >= 1 && x.last() == y.last() {
                Ok(y.clone())
            } else {
                Err(mismatch(op, format!("cannot broadcast {x} with {y}")))
            }
        }
        Op::Reshape(s) => {
            if s.numel() != children[0].numel() {
                return Err(mismatch(op, format!("{} elements into {s}", children[0].numel())));
            }
            Ok(s.clone())
        }
        Op::Relu => Ok(children[0].clone()),
        Op::Conv2d(p) => {
            let g = conv_geometry(op, children[0], children[1], *p)?;
            let (oh, ow) = g.output_hw().expect("checked geometry");
            Ok(Shape::of(&[g.n, g.o, oh, ow]))
        }
        Op::Im2col { kernel, params } => im2col_shape(op, children[0], *kernel, *params),
        Op::AccelCall { op: aop, conv, .. } => match aop {
            AccelOp::Linear | AccelOp::LinearRelu => {
                let out = linear_shape(op, children[0], children[1])?;
                bias_shape(op, &out, children[2])?;
                Ok(out)
            }
            AccelOp::Conv2d => {
                let p = conv.ok_or_else(|| mismatch(op, "missing stride/pad"))?;
                let g = conv_geometry(op, children[0], children[1], p)?;
                let (oh, ow) = g.output_hw().expect("checked geometry");
                Ok(Shape::of(&[g.n, g.o, oh, ow]))
            }
        },
    }
}

/// Shape every node of `expr` under the input shapes `env`.
pub fn infer_shapes(expr: &Expr, env: &BTreeMap<String, Shape>) -> Result<ShapeTree, IrError> {
    let children = expr.args.iter().map(|a| infer_shapes(a, env)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Shape> = children.iter().map(|c| &c.shape).collect();
    let shape = shape_of_op(&expr.op, &refs, env)?;
    Ok(ShapeTree { shape, children })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_expr;

    fn env(pairs: &[(&str, &[usize])]) -> BTreeMap<String, Shape> {
        pairs.iter().map(|(n, d)| (n.to_string(), Shape::of(d))).collect()
    }

    #[test]
    fn dense_contract() {
        let e = parse_expr("(dense %a %b)").unwrap();
        let t = infer_shapes(&e, &env(&[("a", &[2, 4]), ("b", &[3, 4])])).unwrap();
        assert_eq!(t.shape, Shape::of(&[2, 3]));
        assert!(infer_shapes(&e, &env(&[("a", &[2, 4]), ("b", &[3, 5])])).is_err());
    }

    #[test]
    fn conv_output() {
        let e = parse_expr("(conv2d %d %w (stride 1 1) (pad 0 0))").unwrap();
        let t = infer_shapes(&e, &env(&[("d", &[1, 2, 6, 6]), ("w", &[4, 2, 3, 3])])).unwrap();
        assert_eq!(t.shape, Shape::of(&[1, 4, 4, 4]));
        let e = parse_expr("(conv2d %d %w (stride 2 2) (pad 0 0))").unwrap();
        assert!(matches!(
            infer_shapes(&e, &env(&[("d", &[1, 2, 6, 6]), ("w", &[4, 2, 3, 3])])),
            Err(IrError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn bias_mismatch() {
        let e = parse_expr("(bias_add %x %b)").unwrap();
        assert!(matches!(
            infer_shapes(&e, &env(&[("x", &[2, 3]), ("b", &[4])])),
            Err(IrError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn im2col_and_broadcast() {
        let e = parse_expr("(im2col %d (kernel 3 3) (stride 1 1) (pad 1 1))").unwrap();
        let t = infer_shapes(&e, &env(&[("d", &[1, 2, 5, 5])])).unwrap();
        assert_eq!(t.shape, Shape::of(&[25, 18]));
        let e = parse_expr("(add %c %x)").unwrap();
        let t = infer_shapes(&e, &env(&[("x", &[2, 3]), ("c", &[3])])).unwrap();
        assert_eq!(t.shape, Shape::of(&[2, 3]));
        assert!(infer_shapes(&e, &env(&[("x", &[2, 3]), ("c", &[2])])).is_err());
        assert!(matches!(infer_shapes(&e, &env(&[("x", &[2, 3])])), Err(IrError::UnboundVar(_))));
    }
}
