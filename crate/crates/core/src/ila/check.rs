//! Static checks on an [`IlaModel`].
//!
//! Decode determinism (at most one instruction decodes for any command) is
//! checked in two passes: an interval abstraction of each decode condition
//! over the interface inputs proves most pairs disjoint, and random command
//! sampling, biased towards the addresses the decodes mention, searches for
//! concrete overlap witnesses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::expr::{eval_expr, typecheck_expr, BinOp, Expr, VarKind};
use super::model::IlaModel;
use super::value::{mask, Sort, Valuation, Value};

pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    DuplicateName(String),
    TypeError { instr: String, detail: String },
    DecodeNotBool { instr: String },
    UnknownStateTarget { instr: String, target: String },
    DuplicateUpdate { instr: String, target: String },
    UpdateSortMismatch { instr: String, target: String, expected: Sort, found: Sort },
    WrongVarKind { instr: String, var: String },
    DecodeOverlap { first: String, second: String, wr: u64, addr: u64, data: u64 },
    ReadMapCollision { addr: u32, instr: String },
    BadReadMapEntry { addr: u32, detail: String },
    BadPort { port: String, detail: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DuplicateName(n) => write!(f, "duplicate name `{n}`"),
            Finding::TypeError { instr, detail } => write!(f, "{instr}: type error: {detail}"),
            Finding::DecodeNotBool { instr } => write!(f, "{instr}: decode is not boolean"),
            Finding::UnknownStateTarget { instr, target } => {
                write!(f, "{instr}: update targets undeclared state `{target}`")
            }
            Finding::DuplicateUpdate { instr, target } => write!(f, "{instr}: `{target}` updated twice"),
            Finding::UpdateSortMismatch { instr, target, expected, found } => {
                write!(f, "{instr}: update of `{target}` has sort {found}, expected {expected}")
            }
            Finding::WrongVarKind { instr, var } => write!(f, "{instr}: `{var}` referenced with the wrong kind"),
            Finding::DecodeOverlap { first, second, wr, addr, data } => write!(
                f,
                "decode overlap: `{first}` and `{second}` both fire on wr={wr} addr=0x{addr:08x} data=0x{data:08x}"
            ),
            Finding::ReadMapCollision { addr, instr } => {
                write!(f, "read address 0x{addr:08x} is also decoded by `{instr}`")
            }
            Finding::BadReadMapEntry { addr, detail } => write!(f, "read_map 0x{addr:08x}: {detail}"),
            Finding::BadPort { port, detail } => write!(f, "port `{port}`: {detail}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub findings: Vec<Finding>,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "no findings");
        }
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Inclusive interval over an input's unsigned value.
type Interval = (u64, u64);

/// Over-approximation of the inputs for which a decode can hold: input name
/// → allowed interval. `None` means provably unsatisfiable.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Footprint(Option<BTreeMap<String, Interval>>);

impl Footprint {
    fn top() -> Self {
        Footprint(Some(BTreeMap::new()))
    }

    fn single(name: &str, iv: Interval) -> Self {
        if iv.0 > iv.1 {
            return Footprint(None);
        }
        Footprint(Some(BTreeMap::from([(name.to_string(), iv)])))
    }

    fn meet(&self, other: &Footprint) -> Footprint {
        let (Some(a), Some(b)) = (&self.0, &other.0) else {
            return Footprint(None);
        };
        let mut out = a.clone();
        for (name, &(lo, hi)) in b {
            let merged = match out.get(name) {
                Some(&(l, h)) => (l.max(lo), h.min(hi)),
                None => (lo, hi),
            };
            if merged.0 > merged.1 {
                return Footprint(None);
            }
            out.insert(name.clone(), merged);
        }
        Footprint(Some(out))
    }

    fn interval(&self, name: &str, width: u32) -> Option<Interval> {
        self.0.as_ref().map(|m| m.get(name).copied().unwrap_or((0, mask(width))))
    }
}

fn input_const(a: &Expr, b: &Expr) -> Option<(String, u64, bool)> {
    match (a, b) {
        (Expr::Var { name, kind: VarKind::Input }, Expr::Const(Value::Bv(c))) => Some((name.clone(), c.bits(), true)),
        (Expr::Const(Value::Bv(c)), Expr::Var { name, kind: VarKind::Input }) => Some((name.clone(), c.bits(), false)),
        _ => None,
    }
}

fn footprint(e: &Expr, sorts: &BTreeMap<String, Sort>) -> Footprint {
    let width = |n: &str| match sorts.get(n) {
        Some(Sort::BitVec(w)) => *w,
        _ => 64,
    };
    match e {
        Expr::Const(Value::Bool(false)) => Footprint(None),
        Expr::Bin(BinOp::And, a, b) => footprint(a, sorts).meet(&footprint(b, sorts)),
        Expr::Bin(BinOp::Eq, a, b) => match input_const(a, b) {
            Some((n, c, _)) => Footprint::single(&n, (c, c)),
            None => Footprint::top(),
        },
        Expr::Bin(BinOp::Ult, a, b) => match input_const(a, b) {
            Some((n, 0, true)) => Footprint::single(&n, (1, 0)),
            Some((n, c, true)) => Footprint::single(&n, (0, c - 1)),
            Some((n, c, false)) => Footprint::single(&n, (c.saturating_add(1), mask(width(&n)))),
            None => Footprint::top(),
        },
        Expr::Not(inner) => match inner.as_ref() {
            Expr::Bin(BinOp::Ult, a, b) => match input_const(a, b) {
                Some((n, c, true)) => Footprint::single(&n, (c, mask(width(&n)))),
                Some((n, c, false)) => Footprint::single(&n, (0, c)),
                None => Footprint::top(),
            },
            _ => Footprint::top(),
        },
        _ => Footprint::top(),
    }
}

fn check_vars(model: &IlaModel, instr: &str, e: &Expr, findings: &mut Vec<Finding>) {
    let inputs: BTreeSet<&str> = model.inputs.iter().map(|(n, _)| n.as_str()).collect();
    let mut bad = BTreeSet::new();
    e.for_each_var(&mut |name, kind| {
        let ok = match kind {
            VarKind::Input => inputs.contains(name),
            VarKind::State => model.state(name).is_some(),
        };
        // unbound names are reported by the type checker instead
        let known = inputs.contains(name) || model.state(name).is_some();
        if !ok && known {
            bad.insert(name.to_string());
        }
    });
    for var in bad {
        findings.push(Finding::WrongVarKind { instr: instr.to_string(), var });
    }
}

/// Run every static check with the default sample budget.
pub fn check_wellformed(model: &IlaModel) -> Report {
    check_wellformed_with(model, DEFAULT_SAMPLES, 0)
}

pub fn check_wellformed_with(model: &IlaModel, samples: usize, seed: u64) -> Report {
    let mut findings = Vec::new();
    let ctx = model.sort_ctx();

    // names
    let mut seen = BTreeSet::new();
    for name in model
        .inputs
        .iter()
        .map(|(n, _)| n)
        .chain(model.states.iter().map(|s| &s.name))
    {
        if !seen.insert(name.clone()) {
            findings.push(Finding::DuplicateName(name.clone()));
        }
    }
    let mut instr_names = BTreeSet::new();
    for instr in &model.instructions {
        if !instr_names.insert(instr.name.clone()) {
            findings.push(Finding::DuplicateName(instr.name.clone()));
        }
    }

    for (port, expected) in [(&model.ports.wr, Sort::bv(1)), (&model.ports.addr, Sort::bv(32)), (&model.ports.data, Sort::bv(32))] {
        match model.inputs.iter().find(|(n, _)| n == port) {
            None => findings.push(Finding::BadPort { port: port.clone(), detail: "not declared as an input".into() }),
            Some((_, s)) if *s != expected => {
                findings.push(Finding::BadPort { port: port.clone(), detail: format!("sort {s}, expected {expected}") })
            }
            _ => {}
        }
    }

    for s in &model.states {
        if let Some(v) = &s.reset_value {
            if v.sort() != s.sort {
                findings.push(Finding::UpdateSortMismatch {
                    instr: "<reset>".into(),
                    target: s.name.clone(),
                    expected: s.sort,
                    found: v.sort(),
                });
            }
        }
    }

    // per-instruction typing
    for instr in &model.instructions {
        let name = &instr.name;
        match typecheck_expr(&instr.decode, &ctx) {
            Ok(Sort::Bool) => {}
            Ok(_) => findings.push(Finding::DecodeNotBool { instr: name.clone() }),
            Err(e) => findings.push(Finding::TypeError { instr: name.clone(), detail: e.to_string() }),
        }
        check_vars(model, name, &instr.decode, &mut findings);

        let mut written = BTreeSet::new();
        let mut targets: Vec<(String, Option<Sort>)> = Vec::new();
        for (target, rhs) in &instr.updates {
            check_vars(model, name, rhs, &mut findings);
            match typecheck_expr(rhs, &ctx) {
                Ok(s) => targets.push((target.clone(), Some(s))),
                Err(e) => {
                    findings.push(Finding::TypeError { instr: name.clone(), detail: e.to_string() });
                    targets.push((target.clone(), None));
                }
            }
        }
        if let Some(m) = &instr.macro_update {
            targets.extend(m.writes().into_iter().map(|(n, s)| (n, Some(s))));
        }
        for (target, sort) in targets {
            if !written.insert(target.clone()) {
                findings.push(Finding::DuplicateUpdate { instr: name.clone(), target: target.clone() });
            }
            match (model.state(&target), sort) {
                (None, _) => findings.push(Finding::UnknownStateTarget { instr: name.clone(), target }),
                (Some(sv), Some(found)) if sv.sort != found => findings.push(Finding::UpdateSortMismatch {
                    instr: name.clone(),
                    target,
                    expected: sv.sort,
                    found,
                }),
                _ => {}
            }
        }
    }

    // read map: must be bv32 and state-only
    let state_ctx: BTreeMap<String, Sort> = model.states.iter().map(|s| (s.name.clone(), s.sort)).collect();
    for (&addr, e) in &model.read_map {
        match typecheck_expr(e, &state_ctx) {
            Ok(Sort::BitVec(32)) => {}
            Ok(s) => findings.push(Finding::BadReadMapEntry { addr, detail: format!("sort {s}, expected bv32") }),
            Err(err) => findings.push(Finding::BadReadMapEntry { addr, detail: err.to_string() }),
        }
    }

    let prints: Vec<Footprint> = model.instructions.iter().map(|i| footprint(&i.decode, &ctx)).collect();

    // A read address collides when some command at that address (read or
    // write, a few data values) also decodes an instruction.
    let init = model.initial_state();
    for &addr in model.read_map.keys() {
        for (instr, fp) in model.instructions.iter().zip(&prints) {
            let Some((lo, hi)) = fp.interval(&model.ports.addr, 32) else { continue };
            if !(lo..=hi).contains(&(addr as u64)) {
                continue;
            }
            let fires = [0u64, 1].iter().any(|&wr| {
                [0u64, 1, 0xffff_ffff].iter().any(|&data| {
                    let inputs: Valuation = [
                        (model.ports.wr.clone(), Value::bv(1, wr)),
                        (model.ports.addr.clone(), Value::bv(32, addr as u64)),
                        (model.ports.data.clone(), Value::bv(32, data)),
                    ]
                    .into_iter()
                    .collect();
                    matches!(eval_expr(&instr.decode, &init, &inputs), Ok(Value::Bool(true)))
                })
            });
            if fires {
                findings.push(Finding::ReadMapCollision { addr, instr: instr.name.clone() });
            }
        }
    }

    // Typing problems make sampling meaningless.
    if findings.is_empty() {
        findings.extend(sample_overlaps(model, &prints, samples, seed));
    }
    findings.dedup();
    Report { findings }
}

fn sample_overlaps(model: &IlaModel, prints: &[Footprint], samples: usize, seed: u64) -> Vec<Finding> {
    let ports = &model.ports;
    let n = model.instructions.len();

    // Addresses worth probing: the boundaries of every pair intersection
    // the interval analysis could not rule out.
    let mut hot: BTreeSet<u64> = BTreeSet::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let meet = prints[i].meet(&prints[j]);
            if let Some((lo, hi)) = meet.interval(&ports.addr, 32) {
                hot.extend([lo, hi, lo + (hi - lo) / 2]);
            }
        }
        if let Some((lo, hi)) = prints[i].interval(&ports.addr, 32) {
            hot.extend([lo, hi]);
        }
    }
    let hot: Vec<u64> = hot.into_iter().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_state = model.initial_state();
    let mut pairs: BTreeMap<(usize, usize), (u64, u64, u64)> = BTreeMap::new();

    for _ in 0..samples {
        let wr = if rng.gen_bool(0.8) { 1 } else { 0 };
        let addr = if !hot.is_empty() && rng.gen_bool(0.6) {
            hot[rng.gen_range(0..hot.len())]
        } else {
            rng.gen::<u32>() as u64
        };
        let data = match rng.gen_range(0..4) {
            0 => 0,
            1 => 1,
            _ => rng.gen::<u32>() as u64,
        };
        let mut state = base_state.clone();
        if rng.gen_bool(0.5) {
            for sv in &model.states {
                if let Sort::BitVec(w) = sv.sort {
                    state.insert(sv.name.clone(), Value::bv(w, rng.gen()));
                }
            }
        }
        let inputs: Valuation = [
            (ports.wr.clone(), Value::bv(1, wr)),
            (ports.addr.clone(), Value::bv(32, addr)),
            (ports.data.clone(), Value::bv(32, data)),
        ]
        .into_iter()
        .collect();
        let firing: Vec<usize> = model
            .instructions
            .iter()
            .enumerate()
            .filter(|(_, instr)| matches!(eval_expr(&instr.decode, &state, &inputs), Ok(Value::Bool(true))))
            .map(|(k, _)| k)
            .collect();
        for a in 0..firing.len() {
            for b in (a + 1)..firing.len() {
                pairs.entry((firing[a], firing[b])).or_insert((wr, addr, data));
            }
        }
    }

    pairs
        .into_iter()
        .map(|((i, j), (wr, addr, data))| Finding::DecodeOverlap {
            first: model.instructions[i].name.clone(),
            second: model.instructions[j].name.clone(),
            wr,
            addr,
            data,
        })
        .collect()
}
