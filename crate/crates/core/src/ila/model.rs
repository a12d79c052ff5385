use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::expr::Expr;
use super::value::{Sort, Valuation, Value};
use super::IlaError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateVar {
    pub name: String,
    pub sort: Sort,
    pub reset_value: Option<Value>,
}

impl StateVar {
    pub fn new(name: &str, sort: Sort) -> Self {
        Self { name: name.to_string(), sort, reset_value: None }
    }

    pub fn initial(&self) -> Value {
        self.reset_value.clone().unwrap_or_else(|| self.sort.zero())
    }
}

/// A coarse-grained state update computed natively rather than as an
/// expression tree. It reads the pre-state and returns the new values of
/// the states it declares in [`MacroUpdate::writes`].
pub trait MacroUpdate: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn writes(&self) -> Vec<(String, Sort)>;

    fn apply(&self, state: &Valuation, inputs: &Valuation) -> Result<Vec<(String, Value)>, IlaError>;
}

#[derive(Debug, Clone)]
pub struct Instruction {
    pub name: String,
    pub decode: Expr,
    /// Update functions in textual order. All right-hand sides read the
    /// pre-state; targets are written simultaneously.
    pub updates: Vec<(String, Expr)>,
    pub macro_update: Option<Arc<dyn MacroUpdate>>,
    pub semantics_note: String,
}

impl Instruction {
    pub fn new(name: &str, decode: Expr) -> Self {
        Self {
            name: name.to_string(),
            decode,
            updates: Vec::new(),
            macro_update: None,
            semantics_note: String::new(),
        }
    }

    pub fn update(mut self, target: &str, rhs: Expr) -> Self {
        self.updates.push((target.to_string(), rhs));
        self
    }

    pub fn with_macro(mut self, m: Arc<dyn MacroUpdate>) -> Self {
        self.macro_update = Some(m);
        self
    }

    pub fn note(mut self, note: &str) -> Self {
        self.semantics_note = note.to_string();
        self
    }

    /// Every state this instruction may write.
    pub fn targets(&self) -> Vec<String> {
        let mut t: Vec<String> = self.updates.iter().map(|(n, _)| n.clone()).collect();
        if let Some(m) = &self.macro_update {
            t.extend(m.writes().into_iter().map(|(n, _)| n));
        }
        t
    }
}

/// Names of the interface inputs a host command drives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmioPorts {
    /// bv1: 1 for a write command
    pub wr: String,
    /// bv32
    pub addr: String,
    /// bv32
    pub data: String,
}

impl Default for MmioPorts {
    fn default() -> Self {
        Self { wr: "wr".into(), addr: "addr".into(), data: "data".into() }
    }
}

#[derive(Debug, Clone)]
pub struct IlaModel {
    pub name: String,
    pub inputs: Vec<(String, Sort)>,
    pub states: Vec<StateVar>,
    pub instructions: Vec<Instruction>,
    /// MMIO read address → bv32 state expression.
    pub read_map: BTreeMap<u32, Expr>,
    pub ports: MmioPorts,
}

impl IlaModel {
    /// An empty model with the standard `wr`/`addr`/`data` interface inputs.
    pub fn new(name: &str) -> Self {
        let ports = MmioPorts::default();
        Self {
            name: name.to_string(),
            inputs: vec![
                (ports.wr.clone(), Sort::bv(1)),
                (ports.addr.clone(), Sort::bv(32)),
                (ports.data.clone(), Sort::bv(32)),
            ],
            states: Vec::new(),
            instructions: Vec::new(),
            read_map: BTreeMap::new(),
            ports,
        }
    }

    pub fn state(&self, name: &str) -> Option<&StateVar> {
        self.states.iter().find(|s| s.name == name)
    }

    pub fn instruction(&self, name: &str) -> Option<&Instruction> {
        self.instructions.iter().find(|i| i.name == name)
    }

    /// Sort environment of inputs and states, for type checking.
    pub fn sort_ctx(&self) -> BTreeMap<String, Sort> {
        self.inputs
            .iter()
            .cloned()
            .chain(self.states.iter().map(|s| (s.name.clone(), s.sort)))
            .collect()
    }

    /// State built from reset values (all-zero where none is given).
    pub fn initial_state(&self) -> Valuation {
        self.states.iter().map(|s| (s.name.clone(), s.initial())).collect()
    }
}

impl fmt::Display for IlaModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ila {}", self.name)?;
        for (name, sort) in &self.inputs {
            writeln!(f, "  input {name}: {sort}")?;
        }
        for s in &self.states {
            write!(f, "  state {}: {}", s.name, s.sort)?;
            if let Some(v) = &s.reset_value {
                write!(f, " = {v}")?;
            }
            writeln!(f)?;
        }
        for instr in &self.instructions {
            writeln!(f, "  instr {}", instr.name)?;
            writeln!(f, "    decode {}", instr.decode)?;
            for (target, rhs) in &instr.updates {
                writeln!(f, "    {target} <- {rhs}")?;
            }
            if let Some(m) = &instr.macro_update {
                let writes: Vec<String> = m.writes().into_iter().map(|(n, _)| n).collect();
                writeln!(f, "    {} <- macro {}", writes.join(", "), m.name())?;
            }
            if !instr.semantics_note.is_empty() {
                writeln!(f, "    ; {}", instr.semantics_note)?;
            }
        }
        if let (Some(lo), Some(hi)) = (self.read_map.keys().next(), self.read_map.keys().next_back()) {
            writeln!(f, "  read_map: {} addresses in [0x{lo:08x}, 0x{hi:08x}]", self.read_map.len())?;
        }
        Ok(())
    }
}
