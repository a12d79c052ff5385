//! Instruction-level simulator interpreting an [`IlaModel`] directly.
//!
//! Each host command is presented to the model as an input valuation of
//! its `wr`/`addr`/`data` ports. Writes trigger the unique instruction
//! whose decode holds; reads are answered from the model's read map and
//! never change state.

use std::fmt;

use thiserror::Error;

use crate::ila::{eval_expr, Expr, IlaError, IlaModel, Instruction, Valuation, Value, VarKind};

/// Architectural state: state-variable name to value.
pub type MachineState = Valuation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("no instruction decodes {0}")]
    UnmappedCommand(Command),
    #[error("read of unmapped address 0x{0:08x}")]
    UnmappedRead(u32),
    #[error("instructions `{first}` and `{second}` both decode {cmd}")]
    DecodeOverlap { first: String, second: String, cmd: Command },
    #[error("state `{name}` is missing or has the wrong sort")]
    BadState { name: String },
    #[error("read map entry 0x{0:08x} is not a 32-bit value")]
    BadReadValue(u32),
    #[error(transparent)]
    Ila(#[from] IlaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandKind {
    Write,
    Read,
}

/// One MMIO command at the accelerator interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Command {
    pub kind: CommandKind,
    pub addr: u32,
    /// Ignored (zero) for reads.
    pub data: u32,
}

impl Command {
    pub fn write(addr: u32, data: u32) -> Self {
        Self { kind: CommandKind::Write, addr, data }
    }

    pub fn read(addr: u32) -> Self {
        Self { kind: CommandKind::Read, addr, data: 0 }
    }

    pub fn is_write(&self) -> bool {
        self.kind == CommandKind::Write
    }

    /// The command as a valuation of the model's interface inputs.
    pub fn inputs(&self, model: &IlaModel) -> Valuation {
        let p = &model.ports;
        Valuation::from([
            (p.wr.clone(), Value::bv(1, u64::from(self.is_write()))),
            (p.addr.clone(), Value::bv(32, self.addr as u64)),
            (p.data.clone(), Value::bv(32, self.data as u64)),
        ])
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            CommandKind::Write => write!(f, "W 0x{:08x} 0x{:08x}", self.addr, self.data),
            CommandKind::Read => write!(f, "R 0x{:08x}", self.addr),
        }
    }
}

/// What to do with a command no instruction decodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// Fail with [`SimError::UnmappedCommand`] / [`SimError::UnmappedRead`].
    #[default]
    Strict,
    /// Treat it as a no-op and note the skip in the log.
    Permissive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Change {
    Bool { old: bool, new: bool },
    Bv { old: u64, new: u64 },
    /// Changed words as (address, old, new).
    Mem(Vec<(u64, u64, u64)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateDiff {
    pub name: String,
    pub change: Change,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub cmd: Command,
    pub instr: Option<String>,
    pub read: Option<u32>,
    pub diffs: Vec<StateDiff>,
    pub skipped: bool,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.cmd)?;
        if let Some(v) = self.read {
            write!(f, " -> 0x{v:08x}")?;
        }
        if self.skipped {
            return write!(f, "  ; skipped");
        }
        if let Some(i) = &self.instr {
            write!(f, "  ; {i}")?;
        }
        for d in &self.diffs {
            match &d.change {
                Change::Bool { old, new } => write!(f, " {}: {old}->{new}", d.name)?,
                Change::Bv { old, new } => write!(f, " {}: 0x{old:x}->0x{new:x}", d.name)?,
                Change::Mem(words) => write!(f, " {}: {} word(s)", d.name, words.len())?,
            }
        }
        Ok(())
    }
}

/// One record per submitted command.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepLog {
    pub records: Vec<StepRecord>,
}

impl StepLog {
    /// Instructions decoded, in order.
    pub fn decoded(&self) -> impl Iterator<Item = &str> {
        self.records.iter().filter_map(|r| r.instr.as_deref())
    }

    /// Data returned by read commands, in order.
    pub fn read_data(&self) -> Vec<u32> {
        self.records.iter().filter_map(|r| r.read).collect()
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// The instruction whose decode holds for `cmd` in `state`, if any.
pub fn decode<'m>(model: &'m IlaModel, state: &MachineState, cmd: &Command) -> Result<Option<&'m Instruction>, SimError> {
    let inputs = cmd.inputs(model);
    let mut found: Option<&Instruction> = None;
    for instr in &model.instructions {
        let fires = eval_expr(&instr.decode, state, &inputs)?
            .as_bool()
            .ok_or_else(|| IlaError::BadWidth(format!("decode of `{}` is not boolean", instr.name)))?;
        if fires {
            if let Some(first) = found {
                return Err(SimError::DecodeOverlap { first: first.name.clone(), second: instr.name.clone(), cmd: *cmd });
            }
            found = Some(instr);
        }
    }
    Ok(found)
}

/// Evaluate the read-map expression at `addr`. Pure.
pub fn mmio_read(model: &IlaModel, state: &MachineState, addr: u32) -> Result<u32, SimError> {
    let e = model.read_map.get(&addr).ok_or(SimError::UnmappedRead(addr))?;
    let v = eval_expr(e, state, &Valuation::new())?;
    match v.as_bv() {
        Some(b) if b.width() == 32 => Ok(b.bits() as u32),
        _ => Err(SimError::BadReadValue(addr)),
    }
}

enum Pending {
    Value(String, Value),
    /// `m <- store(m, a, d)`, applied in place.
    Store(String, u64, u64),
}

fn diff(name: &str, old: &Value, new: &Value) -> Option<StateDiff> {
    if old == new {
        return None;
    }
    let change = match (old, new) {
        (Value::Bool(o), Value::Bool(n)) => Change::Bool { old: *o, new: *n },
        (Value::Bv(o), Value::Bv(n)) => Change::Bv { old: o.bits(), new: n.bits() },
        (Value::Mem(o), Value::Mem(n)) => {
            let addrs: std::collections::BTreeSet<u64> = o.iter().chain(n.iter()).map(|(a, _)| a).collect();
            Change::Mem(
                addrs
                    .into_iter()
                    .filter(|&a| o.load(a) != n.load(a))
                    .map(|a| (a, o.load(a), n.load(a)))
                    .collect(),
            )
        }
        _ => return None,
    };
    Some(StateDiff { name: name.to_string(), change })
}

fn self_store<'e>(target: &str, rhs: &'e Expr) -> Option<(&'e Expr, &'e Expr)> {
    match rhs {
        Expr::MemStore { mem, addr, data } => match mem.as_ref() {
            Expr::Var { name, kind: VarKind::State } if name == target => Some((addr, data)),
            _ => None,
        },
        _ => None,
    }
}

/// Apply `instr` to `state` in place: every right-hand side is evaluated
/// against the pre-state before any target is written.
fn execute(model: &IlaModel, instr: &Instruction, state: &mut MachineState, inputs: &Valuation) -> Result<Vec<StateDiff>, SimError> {
    let mut pending = Vec::with_capacity(instr.updates.len());
    for (target, rhs) in &instr.updates {
        if let Some((a, d)) = self_store(target, rhs) {
            let a = eval_expr(a, state, inputs)?.as_bv().ok_or_else(|| SimError::BadState { name: target.clone() })?;
            let d = eval_expr(d, state, inputs)?.as_bv().ok_or_else(|| SimError::BadState { name: target.clone() })?;
            pending.push(Pending::Store(target.clone(), a.bits(), d.bits()));
        } else {
            pending.push(Pending::Value(target.clone(), eval_expr(rhs, state, inputs)?));
        }
    }
    if let Some(m) = &instr.macro_update {
        for (name, v) in m.apply(state, inputs)? {
            pending.push(Pending::Value(name, v));
        }
    }
    let mut diffs = Vec::new();
    for p in pending {
        match p {
            Pending::Store(name, a, d) => {
                let mem = state
                    .get_mut(&name)
                    .and_then(Value::as_mem_mut)
                    .ok_or_else(|| SimError::BadState { name: name.clone() })?;
                let old = mem.load(a);
                mem.store(a, d);
                let new = mem.load(a);
                if old != new {
                    diffs.push(StateDiff { name, change: Change::Mem(vec![(a, old, new)]) });
                }
            }
            Pending::Value(name, v) => {
                let decl = model.state(&name).ok_or_else(|| SimError::BadState { name: name.clone() })?;
                if v.sort() != decl.sort {
                    return Err(SimError::BadState { name });
                }
                let old = state.insert(name.clone(), v).ok_or_else(|| SimError::BadState { name: name.clone() })?;
                if let Some(d) = diff(&name, &old, &state[&name]) {
                    diffs.push(d);
                }
            }
        }
    }
    Ok(diffs)
}

/// A simulation in progress: a model, its current state and the log.
#[derive(Debug, Clone)]
pub struct Simulator<'m> {
    model: &'m IlaModel,
    state: MachineState,
    policy: Policy,
    log: StepLog,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m IlaModel, init: MachineState, policy: Policy) -> Result<Self, SimError> {
        for sv in &model.states {
            match init.get(&sv.name) {
                Some(v) if v.sort() == sv.sort => {}
                _ => return Err(SimError::BadState { name: sv.name.clone() }),
            }
        }
        if init.len() != model.states.len() {
            let extra = init.keys().find(|k| model.state(k).is_none()).cloned().unwrap_or_default();
            return Err(SimError::BadState { name: extra });
        }
        Ok(Self { model, state: init, policy, log: StepLog::default() })
    }

    /// Start from the model's reset values.
    pub fn reset(model: &'m IlaModel, policy: Policy) -> Self {
        Self { model, state: model.initial_state(), policy, log: StepLog::default() }
    }

    pub fn state(&self) -> &MachineState {
        &self.state
    }

    pub fn log(&self) -> &StepLog {
        &self.log
    }

    pub fn into_parts(self) -> (MachineState, StepLog) {
        (self.state, self.log)
    }

    /// Execute one command, appending its record to the log.
    pub fn submit(&mut self, cmd: Command) -> Result<&StepRecord, SimError> {
        let instr = decode(self.model, &self.state, &cmd)?;
        let mut rec = StepRecord { cmd, instr: instr.map(|i| i.name.clone()), read: None, diffs: vec![], skipped: false };
        match instr {
            Some(instr) => {
                let inputs = cmd.inputs(self.model);
                rec.diffs = execute(self.model, instr, &mut self.state, &inputs)?;
                if !cmd.is_write() {
                    rec.read = self.read_or_skip(cmd, &mut rec.skipped)?;
                }
            }
            None if cmd.is_write() => match self.policy {
                Policy::Strict => return Err(SimError::UnmappedCommand(cmd)),
                Policy::Permissive => {
                    log::debug!("skipping unmapped {cmd}");
                    rec.skipped = true;
                }
            },
            None => rec.read = self.read_or_skip(cmd, &mut rec.skipped)?,
        }
        self.log.records.push(rec);
        Ok(self.log.records.last().expect("just pushed"))
    }

    fn read_or_skip(&self, cmd: Command, skipped: &mut bool) -> Result<Option<u32>, SimError> {
        match mmio_read(self.model, &self.state, cmd.addr) {
            Ok(v) => Ok(Some(v)),
            Err(SimError::UnmappedRead(a)) if self.policy == Policy::Permissive => {
                log::debug!("skipping unmapped read 0x{a:08x}");
                *skipped = true;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// Pure single step.
pub fn step(model: &IlaModel, state: &MachineState, cmd: Command, policy: Policy) -> Result<(MachineState, StepRecord), SimError> {
    let mut sim = Simulator { model, state: state.clone(), policy, log: StepLog::default() };
    sim.submit(cmd)?;
    let (state, mut log) = sim.into_parts();
    Ok((state, log.records.pop().expect("one record")))
}

/// Failure of [`run`] with the log of the commands that completed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("command {index}: {error}")]
pub struct RunError {
    pub index: usize,
    pub error: SimError,
    pub log: StepLog,
}

/// Left fold of [`step`] over `trace`.
pub fn run(model: &IlaModel, init: MachineState, trace: &[Command], policy: Policy) -> Result<(MachineState, StepLog), RunError> {
    let mut sim = Simulator::new(model, init, policy).map_err(|error| RunError { index: 0, error, log: StepLog::default() })?;
    for (index, cmd) in trace.iter().enumerate() {
        if let Err(error) = sim.submit(*cmd) {
            return Err(RunError { index, error, log: sim.log.clone() });
        }
    }
    Ok(sim.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ila::{Sort, StateVar};
    use proptest::prelude::*;
    use std::collections::hash_map::DefaultHasher;
    use std::hash::{Hash, Hasher};

    fn at(addr: u64) -> Expr {
        Expr::input("wr").eq(Expr::bv(1, 1)).and(Expr::input("addr").eq(Expr::bv(32, addr)))
    }

    /// x, y registers; a swap instruction; a scratch memory.
    fn toy() -> IlaModel {
        let mut m = IlaModel::new("toy");
        m.states.push(StateVar::new("x", Sort::bv(32)));
        m.states.push(StateVar::new("y", Sort::bv(32)));
        m.states.push(StateVar::new("z", Sort::bv(8)));
        m.states.push(StateVar::new("mem", Sort::mem(8, 32)));
        m.instructions.push(Instruction::new("set_x", at(0x10)).update("x", Expr::input("data")));
        m.instructions.push(Instruction::new("set_y", at(0x14)).update("y", Expr::input("data")));
        m.instructions.push(
            Instruction::new("swap", at(0x18))
                .update("x", Expr::state("y"))
                .update("y", Expr::state("x"))
                .update("z", Expr::state("z").add(Expr::bv(8, 1))),
        );
        m.instructions.push(
            Instruction::new("poke", Expr::input("wr").eq(Expr::bv(1, 1)).and(Expr::input("addr").extract(31, 8).eq(Expr::bv(24, 2))))
                .update("mem", Expr::state("mem").store(Expr::input("addr").extract(7, 0), Expr::input("data"))),
        );
        m.read_map.insert(0x100, Expr::state("x"));
        m.read_map.insert(0x104, Expr::state("mem").select(Expr::bv(8, 4)));
        m
    }

    #[test]
    fn model_is_wellformed() {
        let r = crate::ila::check_wellformed(&toy());
        assert!(r.is_clean(), "{r}");
    }

    #[test]
    fn simultaneous_swap() {
        let m = toy();
        let (s, _) = run(&m, m.initial_state(), &[Command::write(0x10, 1), Command::write(0x14, 2), Command::write(0x18, 0)], Policy::Strict).unwrap();
        assert_eq!(s["x"], Value::bv(32, 2));
        assert_eq!(s["y"], Value::bv(32, 1));
        assert_eq!(s["z"], Value::bv(8, 1));
    }

    #[test]
    fn decode_cases() {
        let m = toy();
        let s = m.initial_state();
        assert_eq!(decode(&m, &s, &Command::write(0x10, 5)).unwrap().unwrap().name, "set_x");
        assert!(decode(&m, &s, &Command::write(0xdead_0000, 5)).unwrap().is_none());
        assert!(decode(&m, &s, &Command::read(0x100)).unwrap().is_none());
    }

    #[test]
    fn unmapped_policies() {
        let m = toy();
        let err = step(&m, &m.initial_state(), Command::write(0xdead_0000, 1), Policy::Strict).unwrap_err();
        assert!(matches!(err, SimError::UnmappedCommand(_)));
        let with = [Command::write(0x10, 7), Command::write(0xdead_0000, 1), Command::write(0x14, 9)];
        let without = [Command::write(0x10, 7), Command::write(0x14, 9)];
        let (a, log) = run(&m, m.initial_state(), &with, Policy::Permissive).unwrap();
        let (b, _) = run(&m, m.initial_state(), &without, Policy::Permissive).unwrap();
        assert_eq!(a, b);
        assert_eq!(log.records.len(), 3);
        assert!(log.records[1].skipped);
    }

    #[test]
    fn reads() {
        let m = toy();
        let s = m.initial_state();
        assert_eq!(mmio_read(&m, &s, 0x104).unwrap(), 0);
        assert_eq!(mmio_read(&m, &s, 0x108), Err(SimError::UnmappedRead(0x108)));
        let (s, log) = run(&m, s, &[Command::write(0x204, 0xabc), Command::read(0x104), Command::read(0x100)], Policy::Strict).unwrap();
        assert_eq!(log.read_data(), vec![0xabc, 0]);
        assert_eq!(mmio_read(&m, &s, 0x104).unwrap(), 0xabc);
        assert!(log.to_text().contains("R 0x00000104 -> 0x00000abc"));
        let err = run(&m, m.initial_state(), &[Command::write(0x10, 1), Command::read(0x999)], Policy::Strict).unwrap_err();
        assert_eq!(err.index, 1);
        assert_eq!(err.log.records.len(), 1);
    }

    #[test]
    fn empty_trace() {
        let m = toy();
        let (s, log) = run(&m, m.initial_state(), &[], Policy::Strict).unwrap();
        assert_eq!(s, m.initial_state());
        assert!(log.records.is_empty());
    }

    #[test]
    fn overlap_at_runtime() {
        let mut m = toy();
        m.instructions.push(Instruction::new("also_x", at(0x10)).update("y", Expr::input("data")));
        assert!(matches!(step(&m, &m.initial_state(), Command::write(0x10, 1), Policy::Strict), Err(SimError::DecodeOverlap { .. })));
    }

    fn arb_cmd() -> impl Strategy<Value = Command> {
        let addr = prop_oneof![
            Just(0x10u32), Just(0x14), Just(0x18), (0x200u32..0x2ff), Just(0x100), Just(0x104), any::<u32>()
        ];
        (addr, any::<u32>(), any::<bool>()).prop_map(|(a, d, w)| if w { Command::write(a, d) } else { Command::read(a) })
    }

    fn hash(s: &MachineState) -> u64 {
        let mut h = DefaultHasher::new();
        s.hash(&mut h);
        h.finish()
    }

    proptest! {
        #[test]
        fn deterministic_and_framed(trace in proptest::collection::vec(arb_cmd(), 0..40)) {
            let m = toy();
            let a = run(&m, m.initial_state(), &trace, Policy::Permissive).unwrap();
            let b = run(&m, m.initial_state(), &trace, Policy::Permissive).unwrap();
            prop_assert_eq!(&a, &b);
            // frame condition, replayed step by step
            let mut s = m.initial_state();
            for cmd in &trace {
                let (next, rec) = step(&m, &s, *cmd, Policy::Permissive).unwrap();
                let written: Vec<String> = rec.instr.as_ref()
                    .map(|i| m.instruction(i).unwrap().targets())
                    .unwrap_or_default();
                for sv in &m.states {
                    if !written.contains(&sv.name) {
                        prop_assert_eq!(&s[&sv.name], &next[&sv.name]);
                    }
                }
                s = next;
            }
        }

        #[test]
        fn update_order_irrelevant(x in any::<u32>(), y in any::<u32>(), z in any::<u8>(), perm in 0usize..6) {
            let m = toy();
            let mut permuted = m.clone();
            let swap = permuted.instructions.iter_mut().find(|i| i.name == "swap").unwrap();
            let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let orig = swap.updates.clone();
            swap.updates = orders[perm].iter().map(|&k| orig[k].clone()).collect();
            let mut s = m.initial_state();
            s.insert("x".into(), Value::bv(32, x as u64));
            s.insert("y".into(), Value::bv(32, y as u64));
            s.insert("z".into(), Value::bv(8, z as u64));
            let (a, _) = step(&m, &s, Command::write(0x18, 0), Policy::Strict).unwrap();
            let (b, _) = step(&permuted, &s, Command::write(0x18, 0), Policy::Strict).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn read_purity(trace in proptest::collection::vec(arb_cmd(), 0..20), addr in prop_oneof![Just(0x100u32), Just(0x104)]) {
            let m = toy();
            let (s, _) = run(&m, m.initial_state(), &trace, Policy::Permissive).unwrap();
            let before = hash(&s);
            mmio_read(&m, &s, addr).unwrap();
            prop_assert_eq!(before, hash(&s));
            let (after, _) = step(&m, &s, Command::read(addr), Policy::Strict).unwrap();
            prop_assert_eq!(before, hash(&after));
        }
    }
}
