use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{EGraph, ENode, EqsatError, Id};
use crate::ir::{Expr, Op};

/// Per-operator costs. With `prefer_offloads` the number of accelerator
/// calls is compared first, so an offload is never traded for a cheaper
/// host-only tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    pub accel_call: u64,
    pub op: u64,
    pub leaf: u64,
    pub prefer_offloads: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { accel_call: 1, op: 1000, leaf: 0, prefer_offloads: true }
    }
}

/// Lexicographic extraction key; smaller is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Cost {
    /// Negated accelerator-call count (zero when calls are not preferred).
    pub neg_calls: i64,
    pub weighted: u64,
    pub nodes: u64,
}

impl Cost {
    pub fn calls(&self) -> u64 {
        self.neg_calls.unsigned_abs()
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "calls={} cost={} nodes={}", self.calls(), self.weighted, self.nodes)
    }
}

impl CostModel {
    fn own(&self, op: &Op) -> Cost {
        let (calls, weighted) = match op {
            Op::AccelCall { .. } => (1, self.accel_call),
            Op::Var(_) | Op::Lit(_) => (0, self.leaf),
            _ => (0, self.op),
        };
        Cost { neg_calls: if self.prefer_offloads { -calls } else { 0 }, weighted, nodes: 1 }
    }
}

fn node_cost(model: &CostModel, node: &ENode, best: &BTreeMap<Id, (Cost, ENode)>, g: &EGraph) -> Option<Cost> {
    let mut c = model.own(&node.op);
    for &ch in &node.children {
        let (k, _) = best.get(&g.find(ch))?;
        c.neg_calls += k.neg_calls;
        c.weighted = c.weighted.saturating_add(k.weighted);
        c.nodes = c.nodes.saturating_add(k.nodes);
    }
    Some(c)
}

/// Best (cost, node) per class by fixpoint iteration.
fn best_nodes(g: &EGraph, model: &CostModel) -> Result<BTreeMap<Id, (Cost, ENode)>, EqsatError> {
    let mut best: BTreeMap<Id, (Cost, ENode)> = BTreeMap::new();
    // Costs only improve; a pass without improvement is the fixpoint. The
    // bound catches a cycle that would keep adding calls.
    let bound = 2 * g.num_classes() + 8;
    for _ in 0..bound {
        let mut changed = false;
        for (id, class) in g.classes() {
            for node in &class.nodes {
                let Some(c) = node_cost(model, node, &best, g) else { continue };
                let better = match best.get(&id) {
                    None => true,
                    Some((old, old_node)) => (c, node) < (*old, old_node),
                };
                if better {
                    best.insert(id, (c, node.clone()));
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(best);
        }
    }
    let culprit = g.class_ids().into_iter().next().unwrap_or(Id(0));
    Err(EqsatError::Unextractable(culprit))
}

fn build(g: &EGraph, id: Id, best: &BTreeMap<Id, (Cost, ENode)>, open: &mut BTreeSet<Id>) -> Result<Expr, EqsatError> {
    let id = g.find(id);
    let (_, node) = best.get(&id).ok_or(EqsatError::Unextractable(id))?;
    if !open.insert(id) {
        return Err(EqsatError::Unextractable(id));
    }
    let args = node.children.iter().map(|&c| build(g, c, best, open)).collect::<Result<Vec<_>, _>>()?;
    open.remove(&id);
    Ok(Expr::new(node.op.clone(), args))
}

/// Cheapest tree for `root` together with its cost.
pub fn extract_with_cost(g: &EGraph, root: Id, model: &CostModel) -> Result<(Expr, Cost), EqsatError> {
    let best = best_nodes(g, model)?;
    let root = g.find(root);
    let cost = best.get(&root).map(|(c, _)| *c).ok_or(EqsatError::Unextractable(root))?;
    Ok((build(g, root, &best, &mut BTreeSet::new())?, cost))
}

pub fn extract(g: &EGraph, root: Id, model: &CostModel) -> Result<Expr, EqsatError> {
    extract_with_cost(g, root, model).map(|(e, _)| e)
}
