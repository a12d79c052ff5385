//! Co-simulation: the host part of a program runs on the reference
//! evaluator, every `accel_call` is lowered, replayed on the accelerator's
//! instruction-level simulator, and read back.
//!
//! Also holds the validation metrics built on top of it: Frobenius relative
//! error per operator, error statistics over random inputs, and end-to-end
//! classification accuracy.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::accel::{AccelId, AccelOp, AcceleratorDef};
use crate::codegen::{call_parts, execute_call, CodegenError, MmioTrace};
use crate::eqsat::{match_root, EqsatError, RewriteRule};
use crate::ir::{eval_ref, eval_with, Expr, IrError, Op, Program, Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CosimError {
    #[error("shape mismatch: reference {reference} vs accelerated {actual}")]
    ShapeMismatch { reference: Shape, actual: Shape },
    #[error("program calls {0}, which is not enabled")]
    MissingAccel(AccelId),
    #[error("call {index}: {error}")]
    Call { index: usize, error: CodegenError },
    #[error("rule {0} does not match the validation fragment")]
    NoMatch(String),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Eqsat(#[from] EqsatError),
}

/// Frobenius relative error `|ref - acc| / |ref|`. A zero reference gives 0
/// when `acc` is also all zero and infinity otherwise.
pub fn rel_error(reference: &Tensor, actual: &Tensor) -> Result<f64, CosimError> {
    if reference.shape() != actual.shape() {
        return Err(CosimError::ShapeMismatch { reference: reference.shape().clone(), actual: actual.shape().clone() });
    }
    let diff: f64 = reference.data().iter().zip(actual.data()).map(|(r, a)| (r - a) * (r - a)).sum::<f64>().sqrt();
    let norm = reference.frobenius();
    Ok(if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / norm
    })
}

/// A program after offload selection, with the accelerators its calls run on.
#[derive(Debug, Clone)]
pub struct Placement {
    pub program: Program,
    pub defs: BTreeMap<AccelId, AcceleratorDef>,
}

impl Placement {
    pub fn new(program: Program, defs: impl IntoIterator<Item = AcceleratorDef>) -> Result<Self, CosimError> {
        let defs: BTreeMap<AccelId, AcceleratorDef> = defs.into_iter().map(|d| (d.id, d)).collect();
        let mut missing = None;
        program.body.visit(&mut |e| {
            if let Op::AccelCall { accel, .. } = e.op {
                if !defs.contains_key(&accel) {
                    missing.get_or_insert(accel);
                }
            }
        });
        match missing {
            Some(a) => Err(CosimError::MissingAccel(a)),
            None => Ok(Self { program, defs }),
        }
    }

    /// Everything on the host.
    pub fn host(program: Program) -> Self {
        Self { program, defs: BTreeMap::new() }
    }
}

/// Value ranges seen by one accelerator invocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallRange {
    pub index: usize,
    pub accel: AccelId,
    pub op: AccelOp,
    pub in_min: f64,
    pub in_max: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl fmt::Display for CallRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "call {:03} {} {} in [{:.6}, {:.6}] out [{:.6}, {:.6}]",
            self.index, self.accel, self.op, self.in_min, self.in_max, self.out_min, self.out_max
        )
    }
}

#[derive(Debug, Clone)]
pub struct CallRecord {
    pub range: CallRange,
    /// The replayed trace, read responses filled in.
    pub trace: MmioTrace,
    pub fragment_len: usize,
    pub decoded: usize,
}

#[derive(Debug, Clone)]
pub struct CosimRun {
    pub output: Tensor,
    pub calls: Vec<CallRecord>,
}

fn min_max_all(ts: &[Tensor]) -> (f64, f64) {
    ts.iter().map(Tensor::min_max).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)))
}

/// Evaluate the placement: host ops in f64, calls on the simulators.
pub fn run_cosim(p: &Placement, env: &BTreeMap<String, Tensor>) -> Result<CosimRun, CosimError> {
    let calls = RefCell::new(Vec::new());
    let failure = RefCell::new(None);
    let mut on_call = |op: &Op, args: &[Tensor]| -> Result<Tensor, IrError> {
        let index = calls.borrow().len();
        let fail = |error: CosimError| {
            let msg = error.to_string();
            failure.borrow_mut().get_or_insert(error);
            IrError::Call(msg)
        };
        let (accel, aop, _) = call_parts(op).map_err(|error| fail(CosimError::Call { index, error }))?;
        let def = p.defs.get(&accel).ok_or_else(|| fail(CosimError::MissingAccel(accel)))?;
        let ex = execute_call(op, args, def).map_err(|error| fail(CosimError::Call { index, error }))?;
        let (in_min, in_max) = min_max_all(args);
        let (out_min, out_max) = ex.output.min_max();
        calls.borrow_mut().push(CallRecord {
            range: CallRange { index, accel, op: aop, in_min, in_max, out_min, out_max },
            fragment_len: ex.fragment.len(),
            decoded: ex.log.decoded().count(),
            trace: ex.trace,
        });
        log::trace!("call {index}: {accel} {aop} -> {}", ex.output.shape());
        Ok(ex.output)
    };
    let result = eval_with(&p.program.body, env, &mut on_call);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(CosimRun { output: result?, calls: calls.into_inner() })
}

/// Element distribution for random validation inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputDist {
    Uniform { lo: f64, hi: f64 },
    /// Integers drawn uniformly from `lo..=hi`.
    IntegerGrid { lo: i64, hi: i64 },
}

impl InputDist {
    pub fn sample(&self, shape: &Shape, rng: &mut ChaCha8Rng) -> Tensor {
        match *self {
            InputDist::Uniform { lo, hi } => Tensor::from_fn(shape.clone(), |_| rng.gen_range(lo..=hi)),
            InputDist::IntegerGrid { lo, hi } => Tensor::from_fn(shape.clone(), |_| rng.gen_range(lo..=hi) as f64),
        }
    }
}

/// A host fragment with the shapes of its inputs. Inputs in `fixed` keep
/// their given value; the others are drawn from `dist` per sample.
#[derive(Debug, Clone)]
pub struct ValidationCase {
    pub lhs: Expr,
    pub inputs: Vec<(String, Shape)>,
    pub fixed: BTreeMap<String, Tensor>,
    pub dist: InputDist,
}

impl ValidationCase {
    pub fn shape_env(&self) -> BTreeMap<String, Shape> {
        self.inputs.iter().cloned().collect()
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> BTreeMap<String, Tensor> {
        self.inputs
            .iter()
            .map(|(n, s)| (n.clone(), self.fixed.get(n).cloned().unwrap_or_else(|| self.dist.sample(s, rng))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationStats {
    pub avg_rel_err: f64,
    pub std_dev: f64,
    pub n_samples: usize,
    pub errors: Vec<f64>,
    /// Samples whose reference was zero while the accelerator output was not.
    pub infinite: usize,
}

impl ValidationStats {
    pub fn from_errors(errors: Vec<f64>) -> Self {
        let n = errors.len();
        let infinite = errors.iter().filter(|e| e.is_infinite()).count();
        let avg = if n == 0 { 0.0 } else { errors.iter().sum::<f64>() / n as f64 };
        let var = if n == 0 { 0.0 } else { errors.iter().map(|e| (e - avg) * (e - avg)).sum::<f64>() / n as f64 };
        Self { avg_rel_err: avg, std_dev: var.sqrt(), n_samples: n, errors, infinite }
    }

    /// Machine-readable form.
    pub fn key_values(&self, mapping: &str) -> String {
        format!(
            "mapping={mapping}\navg_rel_err={:.6e}\nstd_dev={:.6e}\nn_samples={}\ninfinite={}\n",
            self.avg_rel_err, self.std_dev, self.n_samples, self.infinite
        )
    }

    /// One row of the error table: mapping, avg %, std-dev %.
    pub fn table_row(&self, mapping: &str) -> String {
        format!("| {mapping} | {:.2}% | {:.2}% |", 100.0 * self.avg_rel_err, 100.0 * self.std_dev)
    }
}

pub const STATS_HEADER: &str = "| Mapping | Avg. Err. | Std. Dev. |\n|---|---|---|";

/// Compare the host fragment against the mapped accelerator path over `n`
/// seeded samples.
pub fn validate_mapping(rule: &RewriteRule, def: &AcceleratorDef, case: &ValidationCase, n: usize, seed: u64) -> Result<ValidationStats, CosimError> {
    let m = match_root(rule, &case.lhs, &case.shape_env())?.ok_or_else(|| CosimError::NoMatch(rule.name.clone()))?;
    let mapped = (rule.rhs)(&m.ctx).to_expr(&m.bindings).map_err(|detail| EqsatError::RuleFailed { rule: rule.name.clone(), detail })?;
    let placement = Placement::new(Program::new(case.inputs.clone(), mapped), [def.clone()])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(n);
    for _ in 0..n {
        let env = case.draw(&mut rng);
        let reference = eval_ref(&case.lhs, &env)?;
        let acc = run_cosim(&placement, &env)?.output;
        errors.push(rel_error(&reference, &acc)?);
    }
    Ok(ValidationStats::from_errors(errors))
}

/// Labeled inputs for one program input.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub input: String,
    pub samples: Vec<(Tensor, usize)>,
}

#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub correct: usize,
    pub total: usize,
    pub ranges: Vec<CallRange>,
}

impl AccuracyReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Argmax accuracy of the placement on `data`. `weights` binds every
/// program input except the dataset's.
pub fn accuracy_eval(p: &Placement, weights: &BTreeMap<String, Tensor>, data: &Dataset) -> Result<AccuracyReport, CosimError> {
    let mut env = weights.clone();
    let mut report = AccuracyReport { correct: 0, total: 0, ranges: Vec::new() };
    for (x, label) in &data.samples {
        env.insert(data.input.clone(), x.clone());
        let run = run_cosim(p, &env)?;
        let base = report.ranges.len();
        report.ranges.extend(run.calls.iter().enumerate().map(|(i, c)| CallRange { index: base + i, ..c.range }));
        report.correct += usize::from(run.output.argmax() == *label);
        report.total += 1;
    }
    Ok(report)
}
