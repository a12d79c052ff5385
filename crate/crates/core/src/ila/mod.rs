//! Instruction-level accelerator models: sorts, expressions, architectural
//! state, and instructions with decode conditions and update functions.

mod check;
mod expr;
mod model;
mod value;

use thiserror::Error;

pub use check::{check_wellformed, check_wellformed_with, Finding, Report, DEFAULT_SAMPLES};
pub use expr::{eval_expr, typecheck_expr, BinOp, Expr, VarKind};
pub use model::{IlaModel, Instruction, MacroUpdate, MmioPorts, StateVar};
pub use value::{BvValue, MemValue, Sort, Valuation, Value, MAX_BV_WIDTH};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IlaError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("sort mismatch at {node}: expected {expected}, found {found}")]
    SortMismatch { node: String, expected: String, found: Sort },
    #[error("bad extract range [{hi}:{lo}] on a {width}-bit operand")]
    BadExtractRange { hi: u32, lo: u32, width: u32 },
    #[error("bad width: {0}")]
    BadWidth(String),
    #[error("macro update `{name}` failed: {detail}")]
    Macro { name: String, detail: String },
}
