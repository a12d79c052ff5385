use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use super::EqsatError;
use crate::ir::{shape_of_op, Expr, Op, Shape};

/// Identifier of an e-class. Only canonical ids (see [`EGraph::find`]) name
/// live classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Id(pub u32);

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ENode {
    pub op: Op,
    pub children: Vec<Id>,
}

impl ENode {
    pub fn new(op: Op, children: Vec<Id>) -> Self {
        Self { op, children }
    }
}

#[derive(Debug, Clone)]
pub struct EClass {
    /// Sorted and deduplicated after every rebuild.
    pub nodes: Vec<ENode>,
    pub shape: Shape,
}

/// E-graph over IR operators with a shape analysis.
#[derive(Debug, Clone)]
pub struct EGraph {
    parent: Vec<u32>,
    classes: BTreeMap<Id, EClass>,
    memo: HashMap<ENode, Id>,
    env: BTreeMap<String, Shape>,
}

impl EGraph {
    /// An empty graph whose variables have the shapes in `env`.
    pub fn new(env: BTreeMap<String, Shape>) -> Self {
        Self { parent: Vec::new(), classes: BTreeMap::new(), memo: HashMap::new(), env }
    }

    pub fn env(&self) -> &BTreeMap<String, Shape> {
        &self.env
    }

    pub fn find(&self, id: Id) -> Id {
        let mut i = id.0;
        while self.parent[i as usize] != i {
            i = self.parent[i as usize];
        }
        Id(i)
    }

    fn find_compress(&mut self, id: Id) -> Id {
        let root = self.find(id);
        let mut i = id.0;
        while self.parent[i as usize] != root.0 {
            let next = self.parent[i as usize];
            self.parent[i as usize] = root.0;
            i = next;
        }
        root
    }

    pub fn canonicalize(&self, node: &ENode) -> ENode {
        ENode { op: node.op.clone(), children: node.children.iter().map(|&c| self.find(c)).collect() }
    }

    pub fn class(&self, id: Id) -> &EClass {
        &self.classes[&self.find(id)]
    }

    pub fn shape(&self, id: Id) -> &Shape {
        &self.class(id).shape
    }

    /// Canonical class ids in ascending order.
    pub fn class_ids(&self) -> Vec<Id> {
        self.classes.keys().copied().collect()
    }

    pub fn classes(&self) -> impl Iterator<Item = (Id, &EClass)> {
        self.classes.iter().map(|(&id, c)| (id, c))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.classes.values().map(|c| c.nodes.len()).sum()
    }

    /// Class containing `node`, if present.
    pub fn lookup(&self, node: &ENode) -> Option<Id> {
        self.memo.get(&self.canonicalize(node)).map(|&id| self.find(id))
    }

    /// Hashconsed insertion of one node.
    pub fn add(&mut self, node: ENode) -> Result<Id, EqsatError> {
        let node = self.canonicalize(&node);
        if let Some(&id) = self.memo.get(&node) {
            return Ok(self.find(id));
        }
        let shapes: Vec<&Shape> = node.children.iter().map(|&c| self.shape(c)).collect();
        let shape = shape_of_op(&node.op, &shapes, &self.env)?;
        let id = Id(self.parent.len() as u32);
        self.parent.push(id.0);
        self.memo.insert(node.clone(), id);
        self.classes.insert(id, EClass { nodes: vec![node], shape });
        Ok(id)
    }

    pub fn add_expr(&mut self, expr: &Expr) -> Result<Id, EqsatError> {
        let children = expr.args.iter().map(|a| self.add_expr(a)).collect::<Result<Vec<_>, _>>()?;
        self.add(ENode::new(expr.op.clone(), children))
    }

    /// Merge two classes. Returns whether anything changed. The smaller id
    /// becomes the representative.
    pub fn union(&mut self, a: Id, b: Id) -> Result<bool, EqsatError> {
        let (a, b) = (self.find_compress(a), self.find_compress(b));
        if a == b {
            return Ok(false);
        }
        let (sa, sb) = (&self.classes[&a].shape, &self.classes[&b].shape);
        if sa != sb {
            return Err(EqsatError::AnalysisConflict { rule: None, left: sa.clone(), right: sb.clone() });
        }
        let (root, child) = if a < b { (a, b) } else { (b, a) };
        self.parent[child.0 as usize] = root.0;
        let moved = self.classes.remove(&child).expect("live class");
        self.classes.get_mut(&root).expect("live class").nodes.extend(moved.nodes);
        Ok(true)
    }

    /// Restore the hashcons and congruence invariants: canonicalize every
    /// node and merge classes that end up holding the same node.
    pub fn rebuild(&mut self) -> Result<(), EqsatError> {
        loop {
            let mut memo: HashMap<ENode, Id> = HashMap::with_capacity(self.memo.len());
            let mut merges = Vec::new();
            let ids = self.class_ids();
            for id in ids {
                let mut nodes: Vec<ENode> = self.classes[&id].nodes.iter().map(|n| self.canonicalize(n)).collect();
                nodes.sort();
                nodes.dedup();
                for n in &nodes {
                    match memo.get(n) {
                        Some(&other) if other != id => merges.push((other, id)),
                        Some(_) => {}
                        None => {
                            memo.insert(n.clone(), id);
                        }
                    }
                }
                self.classes.get_mut(&id).expect("live class").nodes = nodes;
            }
            self.memo = memo;
            if merges.is_empty() {
                return Ok(());
            }
            for (a, b) in merges {
                self.union(a, b)?;
            }
        }
    }

    /// Classes appearing as the first operand of some `bias_add` node.
    pub fn bias_operands(&self) -> BTreeSet<Id> {
        self.classes
            .values()
            .flat_map(|c| c.nodes.iter())
            .filter(|n| n.op == Op::BiasAdd)
            .map(|n| self.find(n.children[0]))
            .collect()
    }

    /// Every canonical node paired with its class, in class order.
    pub fn nodes(&self) -> impl Iterator<Item = (Id, &ENode)> {
        self.classes.iter().flat_map(|(&id, c)| c.nodes.iter().map(move |n| (id, n)))
    }

    /// Congruence check: no node occurs in two classes.
    pub fn is_congruent(&self) -> bool {
        let mut seen: HashMap<ENode, Id> = HashMap::new();
        for (id, n) in self.nodes() {
            if let Some(&other) = seen.get(&self.canonicalize(n)) {
                if other != id {
                    return false;
                }
            }
            seen.insert(self.canonicalize(n), id);
        }
        true
    }
}
