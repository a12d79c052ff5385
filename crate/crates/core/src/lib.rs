//! Compile small tensor programs onto synthetic accelerators described as
//! instruction-level models.
//!
//! The pipeline is:
//!
//! 1. [`ir`]: parse and shape-check a tensor program.
//! 2. [`eqsat`] + [`rewrites`]: equality saturation with generic IR rewrites
//!    and IR-to-accelerator mapping rules ("flexible matching"), then
//!    extraction of the program with the most accelerator calls.
//! 3. [`codegen`]: lower each `accel_call` to the accelerator's instruction
//!    sequence and its MMIO command trace.
//! 4. [`cosim`]: run the host part of the program with the reference
//!    evaluator and replay each trace on the instruction-level simulator
//!    ([`sim`]) built from the accelerator model ([`ila`], [`accel`]).

pub mod accel;
pub mod codegen;
pub mod corpus;
pub mod cosim;
pub mod eqsat;
pub mod ila;
pub mod ir;
pub mod numerics;
pub mod rewrites;
pub mod sim;

pub use accel::{AccelId, AcceleratorDef};
pub use ir::{Expr, Op, Program, Shape, Tensor};
pub use numerics::{AccelNumerics, FixedSpec};
