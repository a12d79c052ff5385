use std::str::FromStr;

use super::{ConvParams, Expr, IrError, Op, Program, Shape, Tensor};
use crate::accel::{AccelId, AccelOp};

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

/// A parsed program plus the source position of every body node, in
/// preorder.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedProgram {
    pub program: Program,
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone)]
enum Sexp {
    Atom(String, Span),
    List(Vec<Sexp>, Span),
}

impl Sexp {
    fn span(&self) -> Span {
        match self {
            Sexp::Atom(_, s) | Sexp::List(_, s) => *s,
        }
    }
}

fn syntax(span: Span, msg: impl Into<String>) -> IrError {
    IrError::Syntax { line: span.line, col: span.col, msg: msg.into() }
}

fn read_all(text: &str) -> Result<Vec<Sexp>, IrError> {
    let mut stack: Vec<(Vec<Sexp>, Span)> = vec![(Vec::new(), Span { line: 1, col: 1 })];
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let here = Span { line, col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            '(' => {
                chars.next();
                col += 1;
                stack.push((Vec::new(), here));
            }
            ')' => {
                chars.next();
                col += 1;
                if stack.len() == 1 {
                    return Err(syntax(here, "unbalanced `)`"));
                }
                let (items, span) = stack.pop().expect("non-empty stack");
                stack.last_mut().expect("outer frame").0.push(Sexp::List(items, span));
            }
            _ => {
                let mut atom = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    atom.push(c);
                    chars.next();
                    col += 1;
                }
                stack.last_mut().expect("frame").0.push(Sexp::Atom(atom, here));
            }
        }
    }
    if stack.len() > 1 {
        let (_, span) = stack.pop().expect("open frame");
        return Err(syntax(span, "unclosed `(`"));
    }
    Ok(stack.pop().expect("top frame").0)
}

fn head(items: &[Sexp]) -> Option<&str> {
    match items.first() {
        Some(Sexp::Atom(a, _)) => Some(a.as_str()),
        _ => None,
    }
}

fn int(s: &Sexp) -> Result<usize, IrError> {
    match s {
        Sexp::Atom(a, span) => a.parse::<usize>().map_err(|_| syntax(*span, format!("expected integer, found `{a}`"))),
        Sexp::List(_, span) => Err(syntax(*span, "expected integer")),
    }
}

/// `(kw INT INT)` as used by stride, pad and kernel.
fn pair(s: &Sexp, kw: &str) -> Result<(usize, usize), IrError> {
    match s {
        Sexp::List(items, span) if head(items) == Some(kw) => {
            if items.len() != 3 {
                return Err(syntax(*span, format!("`{kw}` takes two integers")));
            }
            Ok((int(&items[1])?, int(&items[2])?))
        }
        other => Err(syntax(other.span(), format!("expected ({kw} INT INT)"))),
    }
}

fn shape(s: &Sexp) -> Result<Shape, IrError> {
    match s {
        Sexp::List(items, span) if head(items) == Some("shape") => {
            let dims = items[1..].iter().map(int).collect::<Result<Vec<_>, _>>()?;
            Shape::new(dims).map_err(|e| syntax(*span, e.to_string()))
        }
        other => Err(syntax(other.span(), "expected (shape INT...)")),
    }
}

const KEYWORDS: &[&str] = &["shape", "stride", "pad", "kernel", "inputs", "decl"];

struct Builder {
    spans: Vec<Span>,
}

impl Builder {
    fn expr(&mut self, s: &Sexp) -> Result<Expr, IrError> {
        let span = s.span();
        let slot = self.spans.len();
        self.spans.push(span);
        let items = match s {
            Sexp::Atom(a, _) => {
                let name = a.strip_prefix('%').ok_or_else(|| syntax(span, format!("expected expression, found `{a}`")))?;
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(syntax(span, format!("bad variable name `{a}`")));
                }
                return Ok(Expr::var(name));
            }
            Sexp::List(items, _) => items,
        };
        let name = head(items).ok_or_else(|| syntax(span, "expected operator name"))?;
        let args = &items[1..];
        let want = |n: usize| -> Result<(), IrError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(syntax(span, format!("`{name}` takes {n} arguments, found {}", args.len())))
            }
        };
        let e = match name {
            "dense" | "bias_add" | "add" => {
                want(2)?;
                let (a, b) = (self.expr(&args[0])?, self.expr(&args[1])?);
                let op = match name {
                    "dense" => Op::Dense,
                    "bias_add" => Op::BiasAdd,
                    _ => Op::Add,
                };
                Expr::new(op, vec![a, b])
            }
            "relu" => {
                want(1)?;
                Expr::relu(self.expr(&args[0])?)
            }
            "reshape" => {
                want(2)?;
                let x = self.expr(&args[0])?;
                Expr::reshape(x, shape(&args[1])?)
            }
            "conv2d" => {
                want(4)?;
                let (d, w) = (self.expr(&args[0])?, self.expr(&args[1])?);
                let params = ConvParams::new(pair(&args[2], "stride")?, pair(&args[3], "pad")?);
                Expr::conv2d(d, w, params)
            }
            "im2col" => {
                want(4)?;
                let d = self.expr(&args[0])?;
                let kernel = pair(&args[1], "kernel")?;
                let params = ConvParams::new(pair(&args[2], "stride")?, pair(&args[3], "pad")?);
                Expr::im2col(d, kernel, params)
            }
            "lit" => {
                let (first, values) = args.split_first().ok_or_else(|| syntax(span, "`lit` needs a shape"))?;
                let shape = shape(first)?;
                let data = values
                    .iter()
                    .map(|v| match v {
                        Sexp::Atom(a, sp) => a
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| syntax(*sp, format!("bad number `{a}`"))),
                        Sexp::List(_, sp) => Err(syntax(*sp, "expected number")),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Expr::lit(Tensor::new(shape, data).map_err(|e| syntax(span, e.to_string()))?)
            }
            "accel_call" => self.accel_call(args, span)?,
            kw if KEYWORDS.contains(&kw) => return Err(syntax(span, format!("`{kw}` is not an expression"))),
            other => {
                return Err(IrError::UnknownOperator { name: other.to_string(), line: span.line, col: span.col });
            }
        };
        debug_assert_eq!(self.spans[slot], span);
        Ok(e)
    }

    fn accel_call(&mut self, args: &[Sexp], span: Span) -> Result<Expr, IrError> {
        let atom = |s: Option<&Sexp>| match s {
            Some(Sexp::Atom(a, sp)) => Ok((a.clone(), *sp)),
            Some(other) => Err(syntax(other.span(), "expected identifier")),
            None => Err(syntax(span, "`accel_call` needs an accelerator and an operation")),
        };
        let (accel, sp) = atom(args.first())?;
        let accel = AccelId::from_str(&accel).map_err(|e| syntax(sp, e))?;
        let (op, sp) = atom(args.get(1))?;
        let op = AccelOp::from_str(&op).map_err(|e| syntax(sp, e))?;
        if !accel.supports(op) {
            return Err(syntax(sp, format!("{accel} has no `{op}` operation")));
        }
        let mut rest = &args[2..];
        let mut conv = None;
        if op.has_conv_params() {
            if rest.len() < 2 {
                return Err(syntax(span, format!("`{op}` call needs (stride ..) (pad ..)")));
            }
            let (operands, attrs) = rest.split_at(rest.len() - 2);
            conv = Some(ConvParams::new(pair(&attrs[0], "stride")?, pair(&attrs[1], "pad")?));
            rest = operands;
        }
        if rest.len() != op.arity() {
            return Err(syntax(span, format!("`{op}` takes {} operands, found {}", op.arity(), rest.len())));
        }
        let operands = rest.iter().map(|a| self.expr(a)).collect::<Result<Vec<_>, _>>()?;
        Ok(Expr::accel_call(accel, op, conv, operands))
    }
}

fn decls(items: &[Sexp]) -> Result<Vec<(String, Shape)>, IrError> {
    let mut out: Vec<(String, Shape)> = Vec::new();
    for d in &items[1..] {
        match d {
            Sexp::List(parts, span) if head(parts) == Some("decl") && parts.len() == 3 => {
                let name = match &parts[1] {
                    Sexp::Atom(a, _) => a.trim_start_matches('%').to_string(),
                    other => return Err(syntax(other.span(), "expected input name")),
                };
                if out.iter().any(|(n, _)| *n == name) {
                    return Err(syntax(*span, format!("input `{name}` declared twice")));
                }
                out.push((name, shape(&parts[2])?));
            }
            other => return Err(syntax(other.span(), "expected (decl NAME (shape ...))")),
        }
    }
    Ok(out)
}

/// Parse a program: an optional `(inputs ...)` form followed by exactly one
/// expression. `;` starts a comment.
pub fn parse_program(text: &str) -> Result<ParsedProgram, IrError> {
    let forms = read_all(text)?;
    let mut rest = forms.as_slice();
    let mut inputs = Vec::new();
    if let Some(Sexp::List(items, _)) = rest.first() {
        if head(items) == Some("inputs") {
            inputs = decls(items)?;
            rest = &rest[1..];
        }
    }
    let body = match rest {
        [one] => one,
        [] => return Err(syntax(Span { line: 1, col: 1 }, "missing program expression")),
        [_, extra, ..] => return Err(syntax(extra.span(), "more than one top-level expression")),
    };
    let mut b = Builder { spans: Vec::new() };
    let body = b.expr(body)?;
    Ok(ParsedProgram { program: Program { inputs, body }, spans: b.spans })
}

/// Parse a single expression.
pub fn parse_expr(text: &str) -> Result<Expr, IrError> {
    let parsed = parse_program(text)?;
    if !parsed.program.inputs.is_empty() {
        return Err(syntax(Span { line: 1, col: 1 }, "expected a bare expression"));
    }
    Ok(parsed.program.body)
}

/// Canonical text of a program; parses back to an equal program.
pub fn print_program(p: &Program) -> String {
    let mut out = String::from("(inputs");
    for (name, shape) in &p.inputs {
        out.push_str(&format!("\n  (decl {name} {shape})"));
    }
    out.push_str(")\n");
    out.push_str(&p.body.to_string());
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_linear() {
        let p = parse_program("(bias_add (dense %a %b) %c)").unwrap();
        let e = &p.program.body;
        assert_eq!(e.op, Op::BiasAdd);
        assert_eq!(e.args[0].op, Op::Dense);
        assert_eq!(e.op_count(), 2);
        assert_eq!(e.vars(), vec!["a", "b", "c"]);
        assert_eq!(p.spans.len(), e.node_count());
        assert_eq!(p.spans[1], Span { line: 1, col: 11 });
    }

    #[test]
    fn reshaped_linear() {
        let e = parse_expr("(add (reshape (dense %a %b) (shape 2 3)) %c)").unwrap();
        assert_eq!(e.op, Op::Add);
        assert_eq!(e.args[0].op, Op::Reshape(Shape::of(&[2, 3])));
        assert_eq!(e.op_count(), 3);
        assert_eq!(e.vars(), vec!["a", "b", "c"]);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_expr("(frobnicate %a)"), Err(IrError::UnknownOperator { name, .. }) if name == "frobnicate"));
        assert!(matches!(parse_expr("(dense %a"), Err(IrError::Syntax { .. })));
        assert!(matches!(parse_expr("(dense %a %b))"), Err(IrError::Syntax { .. })));
        assert!(matches!(parse_expr("(relu %a %b)"), Err(IrError::Syntax { .. })));
        assert!(matches!(parse_expr("(reshape %a (shape 0))"), Err(IrError::Syntax { .. })));
        assert!(matches!(parse_expr("(accel_call FXLIN conv2d %a %b)"), Err(IrError::Syntax { .. })));
        assert!(matches!(parse_expr("(accel_call NPU linear %a %b %c)"), Err(IrError::Syntax { .. })));
        match parse_expr("\n  (relu\n    (frob %x))") {
            Err(IrError::UnknownOperator { line, col, .. }) => assert_eq!((line, col), (3, 5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_program() {
        let text = "; conv then flatten\n(inputs (decl d (shape 1 2 6 6)) (decl w (shape 4 2 3 3)))\n\
                    (reshape (conv2d %d %w (stride 1 1) (pad 0 0)) (shape 1 64))";
        let p = parse_program(text).unwrap().program;
        assert_eq!(p.inputs.len(), 2);
        assert_eq!(parse_program(&print_program(&p)).unwrap().program, p);
    }

    #[test]
    fn accel_call_attrs() {
        let e = parse_expr("(accel_call FXCNN conv2d %d %w (stride 2 1) (pad 1 0))").unwrap();
        assert_eq!(
            e.op,
            Op::AccelCall { accel: AccelId::Fxcnn, op: AccelOp::Conv2d, conv: Some(ConvParams::new((2, 1), (1, 0))) }
        );
        assert_eq!(parse_expr(&e.to_string()).unwrap(), e);
    }

    fn arb_shape() -> impl Strategy<Value = Shape> {
        proptest::collection::vec(1usize..5, 0..4).prop_map(|d| Shape::new(d).unwrap())
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            "[a-z][a-z0-9_]{0,4}".prop_map(|n| Expr::var(&n)),
            arb_shape().prop_flat_map(|s| {
                let n = s.numel();
                proptest::collection::vec(-1e3f64..1e3, n).prop_map(move |d| Expr::lit(Tensor::new(s.clone(), d).unwrap()))
            }),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), 0..3usize).prop_map(|(a, b, k)| match k {
                    0 => Expr::dense(a, b),
                    1 => Expr::bias_add(a, b),
                    _ => Expr::add(a, b),
                }),
                inner.clone().prop_map(Expr::relu),
                (inner.clone(), arb_shape()).prop_map(|(a, s)| Expr::reshape(a, s)),
                (inner.clone(), inner.clone(), 1usize..3, 0usize..2)
                    .prop_map(|(a, b, s, p)| Expr::conv2d(a, b, ConvParams::new((s, 1), (p, 0)))),
                (inner.clone(), 1usize..4).prop_map(|(a, k)| Expr::im2col(a, (k, k), ConvParams::default())),
                (inner.clone(), inner.clone(), inner.clone())
                    .prop_map(|(a, b, c)| Expr::accel_call(AccelId::Fxlin, AccelOp::LinearRelu, None, vec![a, b, c])),
                (inner.clone(), inner).prop_map(|(a, b)| {
                    Expr::accel_call(AccelId::Fxcnn, AccelOp::Conv2d, Some(ConvParams::new((1, 2), (0, 1))), vec![a, b])
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr(), shapes in proptest::collection::vec(arb_shape(), 0..3)) {
            let inputs = shapes.into_iter().enumerate().map(|(i, s)| (format!("in{i}"), s)).collect();
            let p = Program { inputs, body: e };
            let back = parse_program(&print_program(&p)).unwrap().program;
            prop_assert_eq!(back, p);
        }
    }
}
