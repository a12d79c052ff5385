//! The shipped rewrite rules and the offload pipelines built on them.
//!
//! Generic rules are accelerator-agnostic IR identities; mapping rules turn
//! an IR fragment into an `accel_call` whose reference semantics is that
//! fragment. [`flexible_match`] saturates with both kinds and extracts the
//! program with the most calls; [`exact_offload`] only replaces fragments
//! that already match a mapping pattern verbatim.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::accel::{check_call_shapes, AccelId, AccelOp};
use crate::eqsat::{
    extract_with_cost, match_exact, saturate, Cost, CostModel, EGraph, EqsatError, ExactMatch, Instance, Limits, MatchCtx, Pattern, RewriteRule,
    RuleKind, SaturationReport, Template,
};
use crate::ir::{infer_shapes, ConvParams, Expr, Op, OpKind, Program, Shape, Tensor};

/// Relative tolerance for exact real-arithmetic identities.
pub const EXACT_TOLERANCE: f64 = 1e-9;
/// Tolerance for the reassociation rule, which changes float rounding.
pub const ASSOC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct RuleSet {
    pub generic: Vec<RewriteRule>,
    pub mappings: Vec<RewriteRule>,
}

impl RuleSet {
    /// Every rule, generic first.
    pub fn all(&self) -> impl Iterator<Item = &RewriteRule> {
        self.generic.iter().chain(&self.mappings)
    }

    pub fn get(&self, name: &str) -> Option<&RewriteRule> {
        self.all().find(|r| r.name == name)
    }

    /// Generic rules plus the mappings targeting `accels`.
    pub fn for_accels(&self, accels: &[AccelId]) -> Vec<RewriteRule> {
        self.generic.iter().cloned().chain(self.mappings_for(accels)).collect()
    }

    pub fn mappings_for(&self, accels: &[AccelId]) -> Vec<RewriteRule> {
        self.mappings.iter().filter(|r| matches!(r.kind, RuleKind::Mapping(a) if accels.contains(&a))).cloned().collect()
    }

    /// Enable add reassociation.
    pub fn with_assoc(mut self) -> Self {
        self.generic.push(add_assoc());
        self
    }
}

fn p(kind: OpKind, children: Vec<Pattern>) -> Pattern {
    Pattern::node(kind, children)
}

fn v(name: &str) -> Pattern {
    Pattern::var(name)
}

fn tv(name: &str) -> Template {
    Template::var(name)
}

fn op(ctx: &MatchCtx, label: &str) -> Op {
    ctx.op(label).cloned().expect("label bound by the pattern")
}

fn dense_bias_pattern() -> Pattern {
    p(OpKind::BiasAdd, vec![p(OpKind::Dense, vec![v("a"), v("b")]), v("c")])
}

fn rule(name: &str, kind: RuleKind, lhs: Pattern, guard: fn(&MatchCtx) -> bool, rhs: fn(&MatchCtx) -> Template, sample: fn(&mut ChaCha8Rng) -> Instance) -> RewriteRule {
    RewriteRule { name: name.into(), kind, lhs, guard, rhs, sample, tolerance: EXACT_TOLERANCE }
}

/// The shipped rule library (reassociation excluded).
pub fn builtin_rules() -> RuleSet {
    use RuleKind::{Generic, Mapping};
    let generic = vec![
        rule(
            "G1",
            Generic,
            Pattern::labeled(OpKind::Reshape, "s2", vec![Pattern::labeled(OpKind::Reshape, "s1", vec![v("x")])]),
            |_| true,
            |c| Template::node(op(c, "s2"), vec![tv("x")]),
            sample_g1,
        ),
        rule(
            "G2",
            Generic,
            Pattern::labeled(OpKind::Reshape, "s", vec![v("x")]),
            |c| matches!(c.op("s"), Some(Op::Reshape(s)) if c.shape("x") == Some(s)),
            |_| tv("x"),
            sample_g2,
        ),
        rule(
            "G3",
            Generic,
            p(OpKind::Add, vec![Pattern::labeled(OpKind::Reshape, "s", vec![p(OpKind::Dense, vec![v("a"), v("b")])]), v("c")]),
            g3_guard,
            g3_rhs,
            sample_g3,
        ),
        rule("G4", Generic, Pattern::labeled(OpKind::Conv2d, "conv", vec![v("d"), v("w")]), g4_guard, g4_rhs, sample_g4),
        rule(
            "G5",
            Generic,
            p(OpKind::Dense, vec![v("a"), v("b")]),
            |c| !c.root_is_bias_operand && c.dims("b").len() == 2,
            |c| {
                let zeros = Tensor::zeros(Shape::of(&[c.dims("b")[0]]));
                Template::node(Op::BiasAdd, vec![Template::node(Op::Dense, vec![tv("a"), tv("b")]), Template::node(Op::Lit(zeros), vec![])])
            },
            sample_g5,
        ),
        rule("G6", Generic, p(OpKind::Add, vec![v("x"), v("y")]), |_| true, |_| Template::node(Op::Add, vec![tv("y"), tv("x")]), sample_g6),
        rule(
            "G7",
            Generic,
            p(OpKind::Relu, vec![p(OpKind::Relu, vec![v("x")])]),
            |_| true,
            |_| Template::node(Op::Relu, vec![tv("x")]),
            sample_g7,
        ),
    ];
    let mappings = vec![
        rule("M-LIN", Mapping(AccelId::Fxlin), dense_bias_pattern(), |c| linear_fits(c, AccelOp::Linear), |_| linear_call(AccelOp::Linear), sample_mlin),
        rule(
            "M-LINR",
            Mapping(AccelId::Fxlin),
            p(OpKind::Relu, vec![dense_bias_pattern()]),
            |c| linear_fits(c, AccelOp::LinearRelu),
            |_| linear_call(AccelOp::LinearRelu),
            sample_mlinr,
        ),
        rule(
            "M-CONV",
            Mapping(AccelId::Fxcnn),
            Pattern::labeled(OpKind::Conv2d, "conv", vec![v("d"), v("w")]),
            |c| check_call_shapes(AccelId::Fxcnn, AccelOp::Conv2d, Some(conv_params(c)), &[&c.shapes["d"], &c.shapes["w"]]).is_ok(),
            |c| Template::node(Op::AccelCall { accel: AccelId::Fxcnn, op: AccelOp::Conv2d, conv: Some(conv_params(c)) }, vec![tv("d"), tv("w")]),
            sample_conv,
        ),
    ];
    RuleSet { generic, mappings }
}

/// `(add (add %x %y) %z) -> (add %x (add %y %z))` on equal shapes.
pub fn add_assoc() -> RewriteRule {
    RewriteRule {
        tolerance: ASSOC_TOLERANCE,
        ..rule(
            "ASSOC",
            RuleKind::Generic,
            p(OpKind::Add, vec![p(OpKind::Add, vec![v("x"), v("y")]), v("z")]),
            |c| c.shape("x").is_some() && c.shape("x") == c.shape("y") && c.shape("y") == c.shape("z"),
            |_| Template::node(Op::Add, vec![tv("x"), Template::node(Op::Add, vec![tv("y"), tv("z")])]),
            sample_assoc,
        )
    }
}

fn linear_fits(c: &MatchCtx, aop: AccelOp) -> bool {
    let (Some(a), Some(b), Some(bias)) = (c.shape("a"), c.shape("b"), c.shape("c")) else { return false };
    check_call_shapes(AccelId::Fxlin, aop, None, &[a, b, bias]).is_ok()
}

fn linear_call(aop: AccelOp) -> Template {
    Template::node(Op::AccelCall { accel: AccelId::Fxlin, op: aop, conv: None }, vec![tv("a"), tv("b"), tv("c")])
}

fn conv_params(c: &MatchCtx) -> ConvParams {
    match c.op("conv") {
        Some(Op::Conv2d(p)) => *p,
        _ => ConvParams::default(),
    }
}

fn g3_guard(c: &MatchCtx) -> bool {
    let (a, b, bias) = (c.dims("a"), c.dims("b"), c.dims("c"));
    let Some(Op::Reshape(s)) = c.op("s") else { return false };
    if a.len() != 2 || b.len() != 2 || bias.len() != 1 || bias[0] != b[0] {
        return false;
    }
    let (m, n) = (a[0], b[0]);
    s.dims() == [m, n] || (m == 1 && s.dims() == [n])
}

fn g3_rhs(c: &MatchCtx) -> Template {
    let linear = Template::node(Op::BiasAdd, vec![Template::node(Op::Dense, vec![tv("a"), tv("b")]), tv("c")]);
    match c.op("s") {
        Some(Op::Reshape(s)) if s.rank() == 1 => Template::node(Op::Reshape(s.clone()), vec![linear]),
        _ => linear,
    }
}

fn g4_guard(c: &MatchCtx) -> bool {
    let (d, w) = (c.dims("d"), c.dims("w"));
    d.len() == 4 && w.len() == 4 && d[0] == 1 && c.root_shape.rank() == 4
}

/// conv2d as a matrix product over image patches:
/// `reshape(dense(reshape(w, [O, C*kh*kw]), im2col(d)), [1, O, H', W'])`.
fn g4_rhs(c: &MatchCtx) -> Template {
    let w = c.dims("w");
    let params = conv_params(c);
    let flat_w = Template::node(Op::Reshape(Shape::of(&[w[0], w[1] * w[2] * w[3]])), vec![tv("w")]);
    let patches = Template::node(Op::Im2col { kernel: (w[2], w[3]), params }, vec![tv("d")]);
    Template::node(Op::Reshape(c.root_shape.clone()), vec![Template::node(Op::Dense, vec![flat_w, patches])])
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    Tensor::from_fn(Shape::of(dims), |_| rng.gen_range(-1.0..=1.0))
}

fn instance(expr: Expr, vars: Vec<(&str, Tensor)>) -> Instance {
    Instance { expr, env: vars.into_iter().map(|(k, t)| (k.to_string(), t)).collect() }
}

fn sample_g1(rng: &mut ChaCha8Rng) -> Instance {
    let d: Vec<usize> = (0..3).map(|_| rng.gen_range(1..=4)).collect();
    let s1 = Shape::of(&[d[0] * d[1], d[2]]);
    let s2 = if rng.gen_bool(0.5) { Shape::of(&[d[0] * d[1] * d[2]]) } else { Shape::of(&[d[2], d[1], d[0]]) };
    instance(Expr::reshape(Expr::reshape(Expr::var("x"), s1), s2), vec![("x", uniform(rng, &d))])
}

fn sample_g2(rng: &mut ChaCha8Rng) -> Instance {
    let d: Vec<usize> = (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(1..=5)).collect();
    instance(Expr::reshape(Expr::var("x"), Shape::of(&d)), vec![("x", uniform(rng, &d))])
}

fn sample_g3(rng: &mut ChaCha8Rng) -> Instance {
    let (k, n) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
    let flatten = rng.gen_bool(0.5);
    let m = if flatten { 1 } else { rng.gen_range(1..=5) };
    let s = if flatten { Shape::of(&[n]) } else { Shape::of(&[m, n]) };
    let e = Expr::add(Expr::reshape(Expr::dense(Expr::var("a"), Expr::var("b")), s), Expr::var("c"));
    instance(e, vec![("a", uniform(rng, &[m, k])), ("b", uniform(rng, &[n, k])), ("c", uniform(rng, &[n]))])
}

fn sample_conv_operands(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, ConvParams) {
    let (c, o) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
    let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let params = ConvParams::new((rng.gen_range(1..=2), rng.gen_range(1..=2)), (rng.gen_range(0..=1), rng.gen_range(0..=1)));
    // pick sizes the window tiles exactly: h + 2*pad - k is a stride multiple
    let fit = |k: usize, s: usize, pad: usize, rng: &mut ChaCha8Rng| (k + s * rng.gen_range(0..=3)).saturating_sub(2 * pad).max(k);
    let (h, w) = (fit(kh, params.stride.0, params.pad.0, rng), fit(kw, params.stride.1, params.pad.1, rng));
    (vec![1, c, h, w], vec![o, c, kh, kw], params)
}

fn sample_g4(rng: &mut ChaCha8Rng) -> Instance {
    let (d, w, params) = sample_conv_operands(rng);
    instance(Expr::conv2d(Expr::var("d"), Expr::var("w"), params), vec![("d", uniform(rng, &d)), ("w", uniform(rng, &w))])
}

fn sample_conv(rng: &mut ChaCha8Rng) -> Instance {
    let (mut d, w, params) = sample_conv_operands(rng);
    d[0] = rng.gen_range(1..=2);
    instance(Expr::conv2d(Expr::var("d"), Expr::var("w"), params), vec![("d", uniform(rng, &d)), ("w", uniform(rng, &w))])
}

fn sample_g5(rng: &mut ChaCha8Rng) -> Instance {
    let (m, k, n) = (rng.gen_range(1..=5), rng.gen_range(1..=6), rng.gen_range(1..=5));
    instance(Expr::dense(Expr::var("a"), Expr::var("b")), vec![("a", uniform(rng, &[m, k])), ("b", uniform(rng, &[n, k]))])
}

fn sample_g6(rng: &mut ChaCha8Rng) -> Instance {
    let d: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=4)).collect();
    let y = if rng.gen_bool(0.3) { vec![*d.last().expect("rank >= 1")] } else { d.clone() };
    instance(Expr::add(Expr::var("x"), Expr::var("y")), vec![("x", uniform(rng, &d)), ("y", uniform(rng, &y))])
}

fn sample_g7(rng: &mut ChaCha8Rng) -> Instance {
    let d = [rng.gen_range(1..=4), rng.gen_range(1..=4)];
    instance(Expr::relu(Expr::relu(Expr::var("x"))), vec![("x", uniform(rng, &d))])
}

fn sample_assoc(rng: &mut ChaCha8Rng) -> Instance {
    let d = [rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let e = Expr::add(Expr::add(Expr::var("x"), Expr::var("y")), Expr::var("z"));
    instance(e, vec![("x", uniform(rng, &d)), ("y", uniform(rng, &d)), ("z", uniform(rng, &d))])
}

fn linear_operands(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Tensor)> {
    let (m, k, n) = (rng.gen_range(1..=6), rng.gen_range(1..=8), rng.gen_range(1..=6));
    vec![("a", uniform(rng, &[m, k])), ("b", uniform(rng, &[n, k])), ("c", uniform(rng, &[n]))]
}

fn linear_expr() -> Expr {
    Expr::bias_add(Expr::dense(Expr::var("a"), Expr::var("b")), Expr::var("c"))
}

fn sample_mlin(rng: &mut ChaCha8Rng) -> Instance {
    instance(linear_expr(), linear_operands(rng))
}

fn sample_mlinr(rng: &mut ChaCha8Rng) -> Instance {
    instance(Expr::relu(linear_expr()), linear_operands(rng))
}

/// Static number of `accel_call` nodes per accelerator.
pub fn count_offloads(expr: &Expr) -> BTreeMap<AccelId, usize> {
    let mut out = BTreeMap::new();
    expr.visit(&mut |e| {
        if let Op::AccelCall { accel, .. } = e.op {
            *out.entry(accel).or_insert(0) += 1;
        }
    });
    out
}

/// Replace every exact mapping match by its call. Returns the rewritten
/// program and the matches.
pub fn exact_offload(program: &Program, rules: &RuleSet, accels: &[AccelId]) -> Result<(Program, Vec<ExactMatch>), EqsatError> {
    let mappings = rules.mappings_for(accels);
    let matches = match_exact(&program.body, &program.env(), &mappings)?;
    let by_path: BTreeMap<&[usize], &ExactMatch> = matches.iter().map(|m| (m.path.as_slice(), m)).collect();
    let body = rebuild(&program.body, &mut Vec::new(), &by_path, &mappings)?;
    Ok((program.with_body(body), matches))
}

fn rebuild(e: &Expr, path: &mut Vec<usize>, by_path: &BTreeMap<&[usize], &ExactMatch>, rules: &[RewriteRule]) -> Result<Expr, EqsatError> {
    if let Some(m) = by_path.get(path.as_slice()) {
        let rule = rules.iter().find(|r| r.name == m.rule).expect("match comes from these rules");
        let mut bindings = BTreeMap::new();
        for (name, sub_path) in &m.var_paths {
            let mut sub = e;
            for &i in &sub_path[path.len()..] {
                sub = &sub.args[i];
            }
            let mut sp = sub_path.clone();
            bindings.insert(name.clone(), rebuild(sub, &mut sp, by_path, rules)?);
        }
        return (rule.rhs)(&m.ctx).to_expr(&bindings).map_err(|detail| EqsatError::RuleFailed { rule: rule.name.clone(), detail });
    }
    let mut args = Vec::with_capacity(e.args.len());
    for (i, a) in e.args.iter().enumerate() {
        path.push(i);
        args.push(rebuild(a, path, by_path, rules)?);
        path.pop();
    }
    Ok(Expr::new(e.op.clone(), args))
}

/// Exact and flexible offload results for one program.
#[derive(Debug, Clone)]
pub struct OffloadReport {
    pub accels: Vec<AccelId>,
    pub exact: BTreeMap<AccelId, usize>,
    pub flexible: BTreeMap<AccelId, usize>,
    pub before: Program,
    /// Program after exact offloading.
    pub exact_program: Program,
    /// Program extracted after saturation.
    pub after: Program,
    pub saturation: SaturationReport,
    pub cost: Cost,
}

impl OffloadReport {
    pub fn exact_count(&self, a: AccelId) -> usize {
        self.exact.get(&a).copied().unwrap_or(0)
    }

    pub fn flexible_count(&self, a: AccelId) -> usize {
        self.flexible.get(&a).copied().unwrap_or(0)
    }

    /// Table rows (program, accelerator, exact, flexible), one per enabled
    /// accelerator.
    pub fn table_rows(&self, program: &str) -> Vec<String> {
        self.accels.iter().map(|&a| format!("| {program} | {a} | {} | {} |", self.exact_count(a), self.flexible_count(a))).collect()
    }
}

pub const OFFLOAD_HEADER: &str = "| Program | Accelerator | Exact | Flexible |\n|---|---|---|---|";

impl fmt::Display for OffloadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{OFFLOAD_HEADER}")?;
        for row in self.table_rows("program") {
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

fn counts_for(expr: &Expr, accels: &[AccelId]) -> BTreeMap<AccelId, usize> {
    let mut c = count_offloads(expr);
    for &a in accels {
        c.entry(a).or_insert(0);
    }
    c
}

/// Saturate the program with the generic rules and the mappings for
/// `accels`, then extract; the exact baseline is reported alongside.
pub fn flexible_match(program: &Program, rules: &RuleSet, accels: &[AccelId], limits: Limits) -> Result<OffloadReport, EqsatError> {
    let mut accels = accels.to_vec();
    accels.sort();
    accels.dedup();
    infer_shapes(&program.body, &program.env())?;
    let (exact_program, _) = exact_offload(program, rules, &accels)?;
    let mut g = EGraph::new(program.env());
    let root = g.add_expr(&program.body)?;
    let saturation = saturate(&mut g, &rules.for_accels(&accels), limits)?;
    log::debug!("{saturation}");
    let (body, cost) = extract_with_cost(&g, root, &CostModel::default())?;
    Ok(OffloadReport {
        exact: counts_for(&exact_program.body, &accels),
        flexible: counts_for(&body, &accels),
        accels,
        before: program.clone(),
        exact_program,
        after: program.with_body(body),
        saturation,
        cost,
    })
}

#[cfg(test)]
mod tests;
