//! Shaped tensor IR with S-expression syntax.
//!
//! An [`Expr`] is an operator applied to child expressions. Leaves are
//! program inputs (`%name`) and literals. Shapes are not stored in the tree;
//! [`infer_shapes`] computes them on demand, and the e-graph keeps them as
//! its class analysis.

mod eval;
mod infer;
mod parse;
mod tensor;

use std::fmt;

use thiserror::Error;

use crate::accel::{AccelId, AccelOp};

pub use eval::{eval_ref, eval_with, reference_call};
pub use infer::{infer_shapes, shape_of_op, ShapeTree};
pub use parse::{parse_expr, parse_program, print_program, ParsedProgram, Span};
pub use tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown operator `{name}` at {line}:{col}")]
    UnknownOperator { name: String, line: usize, col: usize },
    #[error("shape mismatch at {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("unbound variable `%{0}`")]
    UnboundVar(String),
    #[error("bad tensor: {0}")]
    BadTensor(String),
    #[error("accelerator call failed: {0}")]
    Call(String),
}

/// Stride and zero padding of a 2D window, (height, width) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConvParams {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvParams {
    pub fn new(stride: (usize, usize), pad: (usize, usize)) -> Self {
        Self { stride, pad }
    }
}

impl Default for ConvParams {
    fn default() -> Self {
        Self { stride: (1, 1), pad: (0, 0) }
    }
}

impl fmt::Display for ConvParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(stride {} {}) (pad {} {})", self.stride.0, self.stride.1, self.pad.0, self.pad.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Var(String),
    Lit(Tensor),
    /// data[M,K] x weight[N,K] -> [M,N]
    Dense,
    BiasAdd,
    Add,
    Reshape(Shape),
    Relu,
    Conv2d(ConvParams),
    Im2col { kernel: (usize, usize), params: ConvParams },
    AccelCall { accel: AccelId, op: AccelOp, conv: Option<ConvParams> },
}

/// Attribute-free operator tag, used by patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Var,
    Lit,
    Dense,
    BiasAdd,
    Add,
    Reshape,
    Relu,
    Conv2d,
    Im2col,
    AccelCall,
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Var(_) => OpKind::Var,
            Op::Lit(_) => OpKind::Lit,
            Op::Dense => OpKind::Dense,
            Op::BiasAdd => OpKind::BiasAdd,
            Op::Add => OpKind::Add,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Relu => OpKind::Relu,
            Op::Conv2d(_) => OpKind::Conv2d,
            Op::Im2col { .. } => OpKind::Im2col,
            Op::AccelCall { .. } => OpKind::AccelCall,
        }
    }

    /// Number of children this operator takes.
    pub fn arity(&self) -> usize {
        match self {
            Op::Var(_) | Op::Lit(_) => 0,
            Op::Reshape(_) | Op::Relu | Op::Im2col { .. } => 1,
            Op::Dense | Op::BiasAdd | Op::Add | Op::Conv2d(_) => 2,
            Op::AccelCall { op, .. } => op.arity(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Op::Var(_) | Op::Lit(_))
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Var(n) => write!(f, "%{n}"),
            Op::Lit(t) => write!(f, "lit{}", t.shape()),
            Op::Dense => write!(f, "dense"),
            Op::BiasAdd => write!(f, "bias_add"),
            Op::Add => write!(f, "add"),
            Op::Reshape(s) => write!(f, "reshape{s}"),
            Op::Relu => write!(f, "relu"),
            Op::Conv2d(p) => write!(f, "conv2d {p}"),
            Op::Im2col { kernel, params } => write!(f, "im2col (kernel {} {}) {params}", kernel.0, kernel.1),
            Op::AccelCall { accel, op, .. } => write!(f, "accel_call {accel} {op}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr {
    pub op: Op,
    pub args: Vec<Expr>,
}

impl Expr {
    pub fn new(op: Op, args: Vec<Expr>) -> Self {
        debug_assert_eq!(op.arity(), args.len(), "arity of {op}");
        Self { op, args }
    }

    pub fn var(name: &str) -> Self {
        Self::new(Op::Var(name.to_string()), vec![])
    }

    pub fn lit(t: Tensor) -> Self {
        Self::new(Op::Lit(t), vec![])
    }

    pub fn dense(data: Expr, weight: Expr) -> Self {
        Self::new(Op::Dense, vec![data, weight])
    }

    pub fn bias_add(x: Expr, bias: Expr) -> Self {
        Self::new(Op::BiasAdd, vec![x, bias])
    }

    pub fn add(x: Expr, y: Expr) -> Self {
        Self::new(Op::Add, vec![x, y])
    }

    pub fn reshape(x: Expr, shape: Shape) -> Self {
        Self::new(Op::Reshape(shape), vec![x])
    }

    pub fn relu(x: Expr) -> Self {
        Self::new(Op::Relu, vec![x])
    }

    pub fn conv2d(data: Expr, weight: Expr, params: ConvParams) -> Self {
        Self::new(Op::Conv2d(params), vec![data, weight])
    }

    pub fn im2col(data: Expr, kernel: (usize, usize), params: ConvParams) -> Self {
        Self::new(Op::Im2col { kernel, params }, vec![data])
    }

    pub fn accel_call(accel: AccelId, op: AccelOp, conv: Option<ConvParams>, args: Vec<Expr>) -> Self {
        Self::new(Op::AccelCall { accel, op, conv }, args)
    }

    /// Total number of nodes, leaves included.
    pub fn node_count(&self) -> usize {
        1 + self.args.iter().map(Expr::node_count).sum::<usize>()
    }

    /// Number of non-leaf nodes.
    pub fn op_count(&self) -> usize {
        let own = usize::from(!self.op.is_leaf());
        own + self.args.iter().map(Expr::op_count).sum::<usize>()
    }

    /// Variable names in first-occurrence order.
    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Op::Var(n) = &e.op {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        });
        out
    }

    /// Preorder traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for a in &self.args {
            a.visit(f);
        }
    }

    pub fn at_path(&self, path: &[usize]) -> Option<&Expr> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => self.args.get(i)?.at_path(rest),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.op {
            Op::Var(n) => return write!(f, "%{n}"),
            Op::Lit(t) => {
                write!(f, "(lit {}", t.shape())?;
                for v in t.data() {
                    write!(f, " {v}")?;
                }
                return write!(f, ")");
            }
            Op::Dense => write!(f, "(dense")?,
            Op::BiasAdd => write!(f, "(bias_add")?,
            Op::Add => write!(f, "(add")?,
            Op::Reshape(_) => write!(f, "(reshape")?,
            Op::Relu => write!(f, "(relu")?,
            Op::Conv2d(_) => write!(f, "(conv2d")?,
            Op::Im2col { .. } => write!(f, "(im2col")?,
            Op::AccelCall { accel, op, .. } => write!(f, "(accel_call {accel} {op}")?,
        }
        for a in &self.args {
            write!(f, " {a}")?;
        }
        match &self.op {
            Op::Reshape(s) => write!(f, " {s}")?,
            Op::Conv2d(p) | Op::AccelCall { conv: Some(p), .. } => write!(f, " {p}")?,
            Op::Im2col { kernel, params } => write!(f, " (kernel {} {}) {params}", kernel.0, kernel.1)?,
            _ => {}
        }
        write!(f, ")")
    }
}

/// A program: declared inputs and a body expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub inputs: Vec<(String, Shape)>,
    pub body: Expr,
}

impl Program {
    pub fn new(inputs: Vec<(String, Shape)>, body: Expr) -> Self {
        Self { inputs, body }
    }

    pub fn env(&self) -> std::collections::BTreeMap<String, Shape> {
        self.inputs.iter().cloned().collect()
    }

    pub fn input_shape(&self, name: &str) -> Option<&Shape> {
        self.inputs.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Shape of the program's result.
    pub fn output_shape(&self) -> Result<Shape, IrError> {
        Ok(infer_shapes(&self.body, &self.env())?.shape)
    }

    pub fn with_body(&self, body: Expr) -> Program {
        Program { inputs: self.inputs.clone(), body }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_program(self))
    }
}
