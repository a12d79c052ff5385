//! Lowering of `accel_call` nodes to instruction sequences and MMIO traces.
//!
//! A call becomes an [`IlaFragment`]: data-in writes (weights, bias,
//! inputs), configuration writes, the `fn_start` trigger, then one read per
//! output element in row-major order. Each fragment entry is exactly one
//! MMIO command, so the fragment and its [`MmioTrace`] are in bijection.

use std::fmt;

use thiserror::Error;

use crate::accel::{addr, encode_word, quantize_all, AccelError, AccelId, AccelOp, AcceleratorDef, CallShape};
use crate::ir::{ConvParams, Op, Shape, Tensor};
use crate::numerics::FixedSpec;
use crate::sim::{run, Command, CommandKind, Policy, RunError, StepLog};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodegenError {
    #[error(transparent)]
    Accel(#[from] AccelError),
    #[error("`{0}` is not an accelerator call")]
    NotACall(String),
    #[error("call targets {call} but the accelerator is {def}")]
    WrongAccelerator { call: AccelId, def: AccelId },
    #[error("replay failed at {0}")]
    Replay(Box<RunError>),
    #[error("expected {expected} read responses, got {found}")]
    ReadCount { expected: usize, found: usize },
}

/// Trace text that does not follow the line grammar.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace syntax error on line {line}: {msg}")]
pub struct TraceSyntaxError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    DataIn,
    Configure,
    Trigger,
    ReadOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    /// A write that must decode the named instruction.
    Instr(String),
    /// A read served by the read map.
    Read,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragEntry {
    pub phase: Phase,
    pub action: Action,
    pub cmd: Command,
}

/// The instruction sequence for one accelerator call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IlaFragment {
    pub accel: AccelId,
    pub op: AccelOp,
    pub call: CallShape,
    /// Format of the output words.
    pub out_spec: FixedSpec,
    pub entries: Vec<FragEntry>,
}

impl IlaFragment {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn commands(&self) -> Vec<Command> {
        self.entries.iter().map(|e| e.cmd).collect()
    }

    pub fn output_shape(&self) -> Shape {
        self.call.output_shape()
    }

    pub fn phase_count(&self, phase: Phase) -> usize {
        self.entries.iter().filter(|e| e.phase == phase).count()
    }
}

struct Emitter {
    entries: Vec<FragEntry>,
}

impl Emitter {
    fn write(&mut self, phase: Phase, instr: &str, addr: u32, data: u32) {
        self.entries.push(FragEntry { phase, action: Action::Instr(instr.to_string()), cmd: Command::write(addr, data) });
    }

    fn buffer(&mut self, instr: &str, base: u32, raw: &[i64], spec: FixedSpec) {
        for (i, &r) in raw.iter().enumerate() {
            self.write(Phase::DataIn, instr, base + 4 * i as u32, encode_word(r, spec));
        }
    }

    fn reads(&mut self, count: usize) {
        for i in 0..count {
            self.entries.push(FragEntry { phase: Phase::ReadOut, action: Action::Read, cmd: Command::read(addr::OUTPUT_BASE + 4 * i as u32) });
        }
    }
}

/// Decompose an `accel_call` operator.
pub fn call_parts(op: &Op) -> Result<(AccelId, AccelOp, Option<ConvParams>), CodegenError> {
    match op {
        Op::AccelCall { accel, op, conv } => Ok((*accel, *op, *conv)),
        other => Err(CodegenError::NotACall(other.to_string())),
    }
}

/// Build the fragment for `call` applied to fully evaluated `args`.
pub fn lower_call(call: &Op, args: &[Tensor], def: &AcceleratorDef) -> Result<IlaFragment, CodegenError> {
    let (accel, op, conv) = call_parts(call)?;
    if accel != def.id {
        return Err(CodegenError::WrongAccelerator { call: accel, def: def.id });
    }
    let shapes: Vec<&Shape> = args.iter().map(Tensor::shape).collect();
    let shape = def.check_call(op, conv, &shapes)?;
    let num = &def.numerics;
    let mut e = Emitter { entries: Vec::new() };
    match shape {
        CallShape::Linear { m, k, n, relu } => {
            e.buffer("wr_weight", addr::WEIGHT_BASE, &quantize_all(&args[1], num.weight), num.weight);
            e.buffer("wr_bias", addr::BIAS_BASE, &quantize_all(&args[2], num.act), num.act);
            e.buffer("wr_input", addr::INPUT_BASE, &quantize_all(&args[0], num.act), num.act);
            e.write(Phase::Configure, "cfg_dims", addr::CFG0, (m | k << 8 | n << 16) as u32);
            e.write(Phase::Configure, "cfg_mode", addr::CFG1, relu as u32);
            e.write(Phase::Trigger, "fn_start", addr::FN_START, 1);
            e.reads(m * n);
        }
        CallShape::Conv(g) => {
            e.buffer("wr_weight", addr::WEIGHT_BASE, &quantize_all(&args[1], num.weight), num.weight);
            e.buffer("wr_input", addr::INPUT_BASE, &quantize_all(&args[0], num.act), num.act);
            e.write(Phase::Configure, "cfg_shape", addr::CFG0, (g.n | g.c << 8 | g.h << 16 | g.w << 24) as u32);
            e.write(Phase::Configure, "cfg_kernel", addr::CFG1, (g.o | g.kh << 8 | g.kw << 16 | g.stride.0 << 24) as u32);
            e.write(Phase::Configure, "cfg_pad", addr::CFG2, (g.pad.0 | g.pad.1 << 8 | g.stride.1 << 16) as u32);
            e.write(Phase::Trigger, "fn_start", addr::FN_START, 1);
            e.reads(g.output_len().expect("validated geometry"));
        }
    }
    Ok(IlaFragment { accel, op, call: shape, out_spec: num.act, entries: e.entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceLine {
    pub cmd: Command,
    /// Read response; `None` until the trace has been replayed.
    pub expected: Option<u32>,
}

/// Ordered MMIO commands in the one-command-per-line text format.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MmioTrace {
    pub lines: Vec<TraceLine>,
}

impl MmioTrace {
    pub fn commands(&self) -> Vec<Command> {
        self.lines.iter().map(|l| l.cmd).collect()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Fill read responses in order.
    pub fn fill_reads(&mut self, responses: &[u32]) -> Result<(), CodegenError> {
        let reads = self.lines.iter().filter(|l| !l.cmd.is_write()).count();
        if reads != responses.len() {
            return Err(CodegenError::ReadCount { expected: reads, found: responses.len() });
        }
        let mut it = responses.iter();
        for l in self.lines.iter_mut().filter(|l| !l.cmd.is_write()) {
            l.expected = it.next().copied();
        }
        Ok(())
    }

    pub fn read_responses(&self) -> Vec<Option<u32>> {
        self.lines.iter().filter(|l| !l.cmd.is_write()).map(|l| l.expected).collect()
    }
}

impl fmt::Display for MmioTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            match (l.cmd.kind, l.expected) {
                (CommandKind::Write, _) => writeln!(f, "W 0x{:08x} 0x{:08x}", l.cmd.addr, l.cmd.data)?,
                (CommandKind::Read, Some(v)) => writeln!(f, "R 0x{:08x} -> 0x{v:08x}", l.cmd.addr)?,
                (CommandKind::Read, None) => writeln!(f, "R 0x{:08x} -> ?", l.cmd.addr)?,
            }
        }
        Ok(())
    }
}

/// One trace line per fragment entry; read responses left unknown.
pub fn emit_mmio(frag: &IlaFragment) -> MmioTrace {
    MmioTrace { lines: frag.entries.iter().map(|e| TraceLine { cmd: e.cmd, expected: None }).collect() }
}

fn hex(tok: Option<&str>, line: usize, what: &str) -> Result<u32, TraceSyntaxError> {
    let err = |msg: String| TraceSyntaxError { line, msg };
    let tok = tok.ok_or_else(|| err(format!("missing {what}")))?;
    let digits = tok.strip_prefix("0x").ok_or_else(|| err(format!("{what} `{tok}` lacks 0x prefix")))?;
    if digits.is_empty() || digits.len() > 8 || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(err(format!("malformed hex {what} `{tok}`")));
    }
    u32::from_str_radix(digits, 16).map_err(|e| err(e.to_string()))
}

/// Parse trace text. Blank lines and `#` comments are ignored.
pub fn parse_trace(text: &str) -> Result<MmioTrace, TraceSyntaxError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let line = match toks.next() {
            Some("W") => {
                let a = hex(toks.next(), n, "address")?;
                let d = hex(toks.next(), n, "data")?;
                TraceLine { cmd: Command::write(a, d), expected: None }
            }
            Some("R") => {
                let a = hex(toks.next(), n, "address")?;
                if toks.next() != Some("->") {
                    return Err(TraceSyntaxError { line: n, msg: "expected `->` after read address".into() });
                }
                let expected = match toks.next() {
                    Some("?") => None,
                    tok => Some(hex(tok, n, "read data")?),
                };
                TraceLine { cmd: Command::read(a), expected }
            }
            Some(other) => return Err(TraceSyntaxError { line: n, msg: format!("unknown command `{other}`") }),
            None => unreachable!("non-empty line"),
        };
        if let Some(extra) = toks.next() {
            return Err(TraceSyntaxError { line: n, msg: format!("unexpected `{extra}`") });
        }
        lines.push(line);
    }
    Ok(MmioTrace { lines })
}

/// Replay `trace` in strict mode from reset. Returns the trace with its
/// read responses filled in, plus the simulator log.
pub fn replay(trace: &MmioTrace, def: &AcceleratorDef) -> Result<(MmioTrace, StepLog), CodegenError> {
    let (_, log) = run(&def.model, def.model.initial_state(), &trace.commands(), Policy::Strict).map_err(|e| CodegenError::Replay(Box::new(e)))?;
    let mut filled = trace.clone();
    filled.fill_reads(&log.read_data())?;
    Ok((filled, log))
}

/// Decode the read responses of a replayed trace into a real tensor.
pub fn readback(frag: &IlaFragment, responses: &[u32]) -> Result<Tensor, CodegenError> {
    let shape = frag.output_shape();
    if responses.len() != shape.numel() {
        return Err(CodegenError::ReadCount { expected: shape.numel(), found: responses.len() });
    }
    let raw: Vec<i64> = responses.iter().map(|&w| crate::accel::decode_word(w, frag.out_spec)).collect();
    Ok(crate::accel::dequantize_all(&raw, frag.out_spec, shape)?)
}

/// Everything produced by running one call through the simulator.
#[derive(Debug, Clone)]
pub struct CallExecution {
    pub fragment: IlaFragment,
    pub trace: MmioTrace,
    pub log: StepLog,
    pub output: Tensor,
}

/// lower_call, emit_mmio, strict replay, readback.
pub fn execute_call(call: &Op, args: &[Tensor], def: &AcceleratorDef) -> Result<CallExecution, CodegenError> {
    let fragment = lower_call(call, args, def)?;
    let (trace, log) = replay(&emit_mmio(&fragment), def)?;
    let responses: Vec<u32> = log.read_data();
    let output = readback(&fragment, &responses)?;
    Ok(CallExecution { fragment, trace, log, output })
}
