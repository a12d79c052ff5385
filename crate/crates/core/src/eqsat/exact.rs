use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EqsatError, MatchCtx, Pattern, RewriteRule, RuleKind};
use crate::cosim::rel_error;
use crate::ir::{eval_ref, infer_shapes, Expr, Op, Shape, ShapeTree};

#[derive(Debug, Default, Clone)]
struct TreeSubst<'e> {
    vars: BTreeMap<String, (&'e Expr, &'e ShapeTree, Vec<usize>)>,
    ops: BTreeMap<String, Op>,
}

fn match_tree<'e>(pat: &Pattern, e: &'e Expr, s: &'e ShapeTree, path: &mut Vec<usize>, out: &mut TreeSubst<'e>) -> bool {
    match pat {
        Pattern::Var(v) => match out.vars.get(v) {
            Some((bound, _, _)) => *bound == e,
            None => {
                out.vars.insert(v.clone(), (e, s, path.clone()));
                true
            }
        },
        Pattern::Node { kind, label, children } => {
            if e.op.kind() != *kind || e.args.len() != children.len() {
                return false;
            }
            if let Some(l) = label {
                if let Some(op) = out.ops.get(l) {
                    if *op != e.op {
                        return false;
                    }
                }
                out.ops.insert(l.clone(), e.op.clone());
            }
            children.iter().zip(e.args.iter().zip(&s.children)).enumerate().all(|(i, (p, (ce, cs)))| {
                path.push(i);
                let ok = match_tree(p, ce, cs, path, out);
                path.pop();
                ok
            })
        }
    }
}

/// A syntactic match of a rule in a program.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMatch {
    pub rule: String,
    pub kind: RuleKind,
    /// Child indices from the program root to the matched node.
    pub path: Vec<usize>,
    pub bindings: BTreeMap<String, Expr>,
    /// Absolute path of each bound subtree.
    pub var_paths: BTreeMap<String, Vec<usize>>,
    pub ctx: MatchCtx,
}

fn try_rule(rule: &RewriteRule, e: &Expr, s: &ShapeTree, path: &[usize], under_bias: bool) -> Option<ExactMatch> {
    let mut sub = TreeSubst::default();
    let mut p = path.to_vec();
    if !match_tree(&rule.lhs, e, s, &mut p, &mut sub) {
        return None;
    }
    let ctx = MatchCtx {
        shapes: sub.vars.iter().map(|(k, (_, t, _))| (k.clone(), t.shape.clone())).collect(),
        ops: sub.ops,
        root_shape: s.shape.clone(),
        root_is_bias_operand: under_bias,
    };
    if !(rule.guard)(&ctx) {
        return None;
    }
    let bindings = sub.vars.iter().map(|(k, (x, _, _))| (k.clone(), (*x).clone())).collect();
    let var_paths = sub.vars.into_iter().map(|(k, (_, _, p))| (k, p)).collect();
    Some(ExactMatch { rule: rule.name.clone(), kind: rule.kind, path: path.to_vec(), bindings, var_paths, ctx })
}

/// Match `rule` at the root of `expr` only.
pub fn match_root(rule: &RewriteRule, expr: &Expr, env: &BTreeMap<String, Shape>) -> Result<Option<ExactMatch>, EqsatError> {
    let shapes = infer_shapes(expr, env)?;
    Ok(try_rule(rule, expr, &shapes, &[], false))
}

/// Non-overlapping syntactic matches in preorder, no rewriting. At each
/// node the first rule (in order) whose pattern and guard succeed wins;
/// the search then continues inside the subtrees bound to its variables.
pub fn match_exact(expr: &Expr, env: &BTreeMap<String, Shape>, rules: &[RewriteRule]) -> Result<Vec<ExactMatch>, EqsatError> {
    let shapes = infer_shapes(expr, env)?;
    let mut out = Vec::new();
    walk(expr, &shapes, &mut Vec::new(), false, rules, &mut out);
    Ok(out)
}

fn walk(e: &Expr, s: &ShapeTree, path: &mut Vec<usize>, under_bias: bool, rules: &[RewriteRule], out: &mut Vec<ExactMatch>) {
    if let Some(m) = rules.iter().find_map(|r| try_rule(r, e, s, path, under_bias)) {
        let mut var_paths: Vec<Vec<usize>> = m.var_paths.values().cloned().collect();
        var_paths.sort();
        out.push(m);
        for vp in var_paths {
            let rel = &vp[path.len()..];
            let (mut sub_e, mut sub_s) = (e, s);
            let mut parent_bias = under_bias;
            for &i in rel {
                parent_bias = sub_e.op == Op::BiasAdd && i == 0;
                sub_e = &sub_e.args[i];
                sub_s = &sub_s.children[i];
            }
            let mut p = vp.clone();
            walk(sub_e, sub_s, &mut p, parent_bias && !rel.is_empty(), rules, out);
        }
        return;
    }
    for (i, (ce, cs)) in e.args.iter().zip(&s.children).enumerate() {
        path.push(i);
        walk(ce, cs, path, e.op == Op::BiasAdd && i == 0, rules, out);
        path.pop();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundnessReport {
    pub rule: String,
    pub instances: usize,
    pub max_rel_err: f64,
    /// Instances whose error exceeded the rule's tolerance.
    pub failures: usize,
}

impl SoundnessReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Evaluate lhs and rhs of `rule` on `n` random guard-satisfying instances.
pub fn check_rule_soundness(rule: &RewriteRule, n: usize, seed: u64) -> Result<SoundnessReport, EqsatError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SoundnessReport { rule: rule.name.clone(), instances: n, max_rel_err: 0.0, failures: 0 };
    let fail = |detail: String| EqsatError::RuleFailed { rule: rule.name.clone(), detail };
    for _ in 0..n {
        let inst = (rule.sample)(&mut rng);
        let m = match_root(rule, &inst.expr, &inst.shape_env())?.ok_or_else(|| fail(format!("sampled instance does not match: {}", inst.expr)))?;
        let rhs = (rule.rhs)(&m.ctx).to_expr(&m.bindings).map_err(fail)?;
        let lhs_val = eval_ref(&inst.expr, &inst.env)?;
        let rhs_val = eval_ref(&rhs, &inst.env)?;
        let err = rel_error(&lhs_val, &rhs_val).map_err(|e| fail(e.to_string()))?;
        report.max_rel_err = report.max_rel_err.max(err);
        // NaN errors count as failures
        if err.is_nan() || err > rule.tolerance {
            report.failures += 1;
        }
    }
    Ok(report)
}
