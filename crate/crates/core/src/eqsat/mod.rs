//! Equality saturation over the tensor IR.
//!
//! [`EGraph`] stores equivalence classes of operators with a shape per
//! class. [`saturate`] applies [`RewriteRule`]s until nothing changes or a
//! resource limit is hit, and [`extract`] picks one program per class.
//! [`match_exact`] is the rewrite-free baseline that only looks at the
//! program as written.

mod egraph;
mod exact;
mod extract;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::accel::AccelId;
use crate::ir::{Expr, IrError, Op, OpKind, Shape, Tensor};

pub use egraph::{EClass, EGraph, ENode, Id};
pub use exact::{check_rule_soundness, match_exact, match_root, ExactMatch, SoundnessReport};
pub use extract::{extract, extract_with_cost, Cost, CostModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EqsatError {
    #[error("analysis conflict{}: shapes {left} and {right} merged", rule.as_ref().map(|r| format!(" in rule {r}")).unwrap_or_default())]
    AnalysisConflict { rule: Option<String>, left: Shape, right: Shape },
    #[error("rule {rule}: {detail}")]
    RuleFailed { rule: String, detail: String },
    #[error("class {0} has no finite extraction")]
    Unextractable(Id),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Left-hand side of a rule. Variables bind whole classes (or subtrees);
/// a label binds the matched operator so attributes such as a reshape
/// target are available to guards and right-hand sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    Var(String),
    Node { kind: OpKind, label: Option<String>, children: Vec<Pattern> },
}

impl Pattern {
    pub fn var(name: &str) -> Self {
        Pattern::Var(name.to_string())
    }

    pub fn node(kind: OpKind, children: Vec<Pattern>) -> Self {
        Pattern::Node { kind, label: None, children }
    }

    pub fn labeled(kind: OpKind, label: &str, children: Vec<Pattern>) -> Self {
        Pattern::Node { kind, label: Some(label.to_string()), children }
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Pattern::Var(v) => {
                out.insert(v.clone());
            }
            Pattern::Node { children, .. } => children.iter().for_each(|c| c.collect_vars(out)),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Var(v) => write!(f, "%{v}"),
            Pattern::Node { kind, label, children } => {
                write!(f, "({}", format!("{kind:?}").to_lowercase())?;
                for c in children {
                    write!(f, " {c}")?;
                }
                if let Some(l) = label {
                    write!(f, " %{l}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Right-hand side built from a match: pattern variables and fresh
/// operators (which may carry synthesized literals).
#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    Var(String),
    Node(Op, Vec<Template>),
}

impl Template {
    pub fn var(name: &str) -> Self {
        Template::Var(name.to_string())
    }

    pub fn node(op: Op, children: Vec<Template>) -> Self {
        Template::Node(op, children)
    }

    /// Instantiate with variables bound to expressions.
    pub fn to_expr(&self, bindings: &BTreeMap<String, Expr>) -> Result<Expr, String> {
        match self {
            Template::Var(v) => bindings.get(v).cloned().ok_or_else(|| format!("unbound template variable %{v}")),
            Template::Node(op, ch) => Ok(Expr::new(op.clone(), ch.iter().map(|c| c.to_expr(bindings)).collect::<Result<_, _>>()?)),
        }
    }

    /// Instantiate into `g` with variables bound to classes.
    pub fn add_to(&self, g: &mut EGraph, bindings: &BTreeMap<String, Id>) -> Result<Id, EqsatError> {
        match self {
            Template::Var(v) => bindings
                .get(v)
                .copied()
                .ok_or_else(|| EqsatError::RuleFailed { rule: String::new(), detail: format!("unbound template variable %{v}") }),
            Template::Node(op, ch) => {
                let children = ch.iter().map(|c| c.add_to(g, bindings)).collect::<Result<Vec<_>, _>>()?;
                g.add(ENode::new(op.clone(), children))
            }
        }
    }
}

/// What guards and right-hand sides see of a match: shapes of the bound
/// variables, the labeled operators, and facts about the matched root.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchCtx {
    pub shapes: BTreeMap<String, Shape>,
    pub ops: BTreeMap<String, Op>,
    pub root_shape: Shape,
    /// The matched root is already the first operand of a `bias_add`.
    pub root_is_bias_operand: bool,
}

impl MatchCtx {
    pub fn shape(&self, var: &str) -> Option<&Shape> {
        self.shapes.get(var)
    }

    pub fn op(&self, label: &str) -> Option<&Op> {
        self.ops.get(label)
    }

    /// Dimensions of `var`, or an empty slice when it is unbound (which
    /// every guard treats as a failed check).
    pub fn dims(&self, var: &str) -> &[usize] {
        self.shapes.get(var).map(Shape::dims).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleKind {
    /// Accelerator-agnostic IR identity.
    Generic,
    /// Replaces an IR fragment by a call on the given accelerator.
    Mapping(AccelId),
}

/// A concrete, guard-satisfying left-hand side with input values.
#[derive(Debug, Clone)]
pub struct Instance {
    pub expr: Expr,
    pub env: BTreeMap<String, Tensor>,
}

impl Instance {
    pub fn shape_env(&self) -> BTreeMap<String, Shape> {
        self.env.iter().map(|(k, v)| (k.clone(), v.shape().clone())).collect()
    }
}

pub type Guard = fn(&MatchCtx) -> bool;
pub type Rhs = fn(&MatchCtx) -> Template;
pub type Sampler = fn(&mut ChaCha8Rng) -> Instance;

#[derive(Clone)]
pub struct RewriteRule {
    pub name: String,
    pub kind: RuleKind,
    pub lhs: Pattern,
    pub guard: Guard,
    pub rhs: Rhs,
    /// Random guard-satisfying instances for the soundness check.
    pub sample: Sampler,
    /// Relative error allowed between lhs and rhs values.
    pub tolerance: f64,
}

impl fmt::Debug for RewriteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewriteRule").field("name", &self.name).field("kind", &self.kind).field("lhs", &self.lhs.to_string()).finish()
    }
}

/// Bindings produced while matching a pattern in the e-graph.
#[derive(Debug, Clone, Default)]
struct Subst {
    vars: BTreeMap<String, Id>,
    ops: BTreeMap<String, Op>,
}

fn match_class(g: &EGraph, pat: &Pattern, id: Id, subst: Subst, out: &mut Vec<Subst>) {
    let id = g.find(id);
    match pat {
        Pattern::Var(v) => {
            let mut s = subst;
            match s.vars.get(v) {
                Some(&bound) if g.find(bound) != id => {}
                Some(_) => out.push(s),
                None => {
                    s.vars.insert(v.clone(), id);
                    out.push(s);
                }
            }
        }
        Pattern::Node { kind, label, children } => {
            for node in &g.class(id).nodes {
                if node.op.kind() != *kind || node.children.len() != children.len() {
                    continue;
                }
                let mut s = subst.clone();
                if let Some(l) = label {
                    match s.ops.get(l) {
                        Some(op) if *op != node.op => continue,
                        Some(_) => {}
                        None => {
                            s.ops.insert(l.clone(), node.op.clone());
                        }
                    }
                }
                let mut partial = vec![s];
                for (p, &c) in children.iter().zip(&node.children) {
                    let mut next = Vec::new();
                    for s in partial {
                        match_class(g, p, c, s, &mut next);
                    }
                    partial = next;
                }
                out.extend(partial);
            }
        }
    }
}

/// Matches of `rule` rooted at class `id`, after the guard.
fn search(g: &EGraph, rule: &RewriteRule, id: Id, bias_operands: &BTreeSet<Id>) -> Vec<(MatchCtx, BTreeMap<String, Id>)> {
    let mut raw = Vec::new();
    match_class(g, &rule.lhs, id, Subst::default(), &mut raw);
    raw.into_iter()
        .filter_map(|s| {
            let ctx = MatchCtx {
                shapes: s.vars.iter().map(|(k, &v)| (k.clone(), g.shape(v).clone())).collect(),
                ops: s.ops,
                root_shape: g.shape(id).clone(),
                root_is_bias_operand: bias_operands.contains(&g.find(id)),
            };
            (rule.guard)(&ctx).then_some((ctx, s.vars))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_nodes: usize,
    pub max_iters: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_nodes: 10_000, max_iters: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Fixpoint,
    NodeCap,
    IterCap,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Fixpoint => "fixpoint",
            StopReason::NodeCap => "node_cap",
            StopReason::IterCap => "iter_cap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaturationReport {
    /// Iterations that changed the graph.
    pub iterations: usize,
    pub nodes: usize,
    pub classes: usize,
    pub stop_reason: StopReason,
}

impl fmt::Display for SaturationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "saturation: iterations={} nodes={} classes={} stop={}", self.iterations, self.nodes, self.classes, self.stop_reason)
    }
}

/// Apply `rules` until fixpoint or a limit. Each iteration searches every
/// rule (in order) over every class (in id order), then applies all
/// matches, then rebuilds.
pub fn saturate(g: &mut EGraph, rules: &[RewriteRule], limits: Limits) -> Result<SaturationReport, EqsatError> {
    g.rebuild()?;
    let mut iterations = 0;
    let stop_reason = loop {
        if iterations >= limits.max_iters {
            break StopReason::IterCap;
        }
        let bias_operands = g.bias_operands();
        let ids = g.class_ids();
        let mut matches = Vec::new();
        for rule in rules {
            for &id in &ids {
                for (ctx, vars) in search(g, rule, id, &bias_operands) {
                    matches.push((rule, id, ctx, vars));
                }
            }
        }
        let nodes_before = g.num_nodes();
        let mut changed = false;
        for (rule, id, ctx, vars) in matches {
            let tag = |e: EqsatError| match e {
                EqsatError::AnalysisConflict { left, right, .. } => EqsatError::AnalysisConflict { rule: Some(rule.name.clone()), left, right },
                EqsatError::RuleFailed { detail, .. } => EqsatError::RuleFailed { rule: rule.name.clone(), detail },
                EqsatError::Ir(e) => EqsatError::RuleFailed { rule: rule.name.clone(), detail: e.to_string() },
                other => other,
            };
            let new = (rule.rhs)(&ctx).add_to(g, &vars).map_err(tag)?;
            changed |= g.union(id, new).map_err(tag)?;
        }
        g.rebuild()?;
        changed |= g.num_nodes() != nodes_before;
        if !changed {
            break StopReason::Fixpoint;
        }
        iterations += 1;
        log::debug!("iteration {iterations}: {} nodes, {} classes", g.num_nodes(), g.num_classes());
        if g.num_nodes() > limits.max_nodes {
            break StopReason::NodeCap;
        }
    };
    Ok(SaturationReport { iterations, nodes: g.num_nodes(), classes: g.num_classes(), stop_reason })
}
