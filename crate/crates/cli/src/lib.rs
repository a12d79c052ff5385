//! Command implementations behind the `accelbridge` binary.
//!
//! Every `cmd_*` function writes its report to the given writer and
//! returns a [`CliError`] that maps onto the process exit code: 1 for bad
//! input (unparsable files, shape errors, calls that exceed an
//! accelerator's buffers), 2 when an internal invariant breaks.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info};

use accelbridge_core::codegen::CodegenError;
use accelbridge_core::corpus::{adversarial_conv_case, classifier, classifier_dataset, integer_linear_case, random_inputs, validation_case};
use accelbridge_core::cosim::{accuracy_eval, rel_error, run_cosim, validate_mapping, CosimError, Placement, STATS_HEADER};
use accelbridge_core::eqsat::{EqsatError, Limits};
use accelbridge_core::ila::check_wellformed;
use accelbridge_core::ir::{eval_ref, infer_shapes, parse_program, print_program, IrError};
use accelbridge_core::rewrites::{builtin_rules, exact_offload, flexible_match, OFFLOAD_HEADER};
use accelbridge_core::{AccelId, AccelNumerics, AcceleratorDef, Program, Tensor};

/// Environment variable holding the `env_logger` filter.
pub const LOG_ENV: &str = "ACCELBRIDGE_LOG";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<IrError> for CliError {
    fn from(e: IrError) -> Self {
        match e {
            IrError::Call(_) => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<EqsatError> for CliError {
    fn from(e: EqsatError) -> Self {
        match e {
            EqsatError::Ir(ir) => ir.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<CosimError> for CliError {
    fn from(e: CosimError) -> Self {
        let user = match &e {
            CosimError::Call { error: CodegenError::Accel(_), .. } => true,
            CosimError::Ir(IrError::Call(_)) => false,
            CosimError::Ir(_) | CosimError::MissingAccel(_) | CosimError::NoMatch(_) => true,
            CosimError::Eqsat(EqsatError::Ir(_)) => true,
            _ => false,
        };
        if user {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "accelbridge", version, about = "Offload tensor programs onto instruction-level accelerator models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Flex,
}

#[derive(Debug, Clone, Args)]
pub struct AccelArgs {
    /// Comma-separated accelerators; empty string for none.
    #[arg(long, default_value = "FXLIN,FXCNN")]
    pub accels: String,
}

impl AccelArgs {
    pub fn parse(&self) -> Result<Vec<AccelId>, CliError> {
        self.accels.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| s.parse().map_err(CliError::User)).collect()
    }
}

#[derive(Debug, Clone, Args)]
pub struct NumericsArg {
    /// `v1`, `v2`, `exact`, or a weight,act,acc triple like `fx<8,6>,fx<16,8>,fx<32,14>`.
    #[arg(long, default_value = "v2")]
    pub numerics: String,
}

impl NumericsArg {
    pub fn parse(&self) -> Result<AccelNumerics, CliError> {
        self.numerics.parse().map_err(|e| CliError::User(format!("--numerics: {e}")))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory with one `<input>.tensor` file per program input.
    /// Without it, inputs are drawn uniformly from [-1, 1].
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and shape-check a program.
    Check { program: PathBuf },
    /// Count and apply accelerator offloads.
    Offload {
        program: PathBuf,
        #[command(flatten)]
        accels: AccelArgs,
        #[arg(long, value_enum, default_value_t = Mode::Flex)]
        mode: Mode,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = Limits::default().max_nodes)]
        max_nodes: usize,
        #[arg(long, default_value_t = Limits::default().max_iters)]
        max_iters: usize,
    },
    /// Write one MMIO trace per accelerator call of a rewritten program.
    Codegen {
        program: PathBuf,
        #[command(flatten)]
        numerics: NumericsArg,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run a rewritten program with its calls on the simulators and
    /// compare against the host reference.
    Cosim {
        program: PathBuf,
        #[command(flatten)]
        numerics: NumericsArg,
        #[command(flatten)]
        data: DataArgs,
        /// Also write `output.tensor` and `cosim.txt` here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Error statistics of a mapping rule over random fragments.
    Validate {
        /// M-LIN, M-LINR or M-CONV.
        rule: String,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[command(flatten)]
        numerics: NumericsArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Integer-valued inputs in [-8, 8] (the default under `exact` numerics).
        #[arg(long)]
        integer: bool,
        /// Hold the convolution weights at the shipped wide-range fixture.
        #[arg(long)]
        adversarial: bool,
    },
    /// Accuracy of the shipped classifier with its convolution on FXCNN.
    Accuracy {
        #[command(flatten)]
        numerics: NumericsArg,
        /// Run everything on the host.
        #[arg(long)]
        host: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the MMIO address maps as markdown.
    Addrmap {
        #[command(flatten)]
        numerics: NumericsArg,
    },
    /// Static checks on the accelerator models.
    Wellformed {
        #[command(flatten)]
        numerics: NumericsArg,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Check { program } => cmd_check(&program, out),
        Command::Offload { program, accels, mode, out_dir, max_nodes, max_iters } => {
            cmd_offload(&program, &accels.parse()?, mode, &out_dir, Limits { max_nodes, max_iters }, out).map(|_| ())
        }
        Command::Codegen { program, numerics, data, out_dir } => {
            cmd_codegen(&program, numerics.parse()?, data.inputs.as_deref(), data.seed, &out_dir, out).map(|_| ())
        }
        Command::Cosim { program, numerics, data, out_dir } => {
            cmd_cosim(&program, numerics.parse()?, data.inputs.as_deref(), data.seed, out_dir.as_deref(), out).map(|_| ())
        }
        Command::Validate { rule, samples, numerics, seed, integer, adversarial } => {
            cmd_validate(&rule, samples, numerics.parse()?, seed, integer, adversarial, out).map(|_| ())
        }
        Command::Accuracy { numerics, host, seed } => {
            let placement = if host { None } else { Some(numerics.parse()?) };
            cmd_accuracy(placement, seed, out).map(|_| ())
        }
        Command::Addrmap { numerics } => cmd_addrmap(numerics.parse()?, out),
        Command::Wellformed { numerics } => cmd_wellformed(numerics.parse()?, out).map(|_| ()),
    }
}

pub fn load_program(path: &Path) -> Result<Program, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    let parsed = parse_program(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    Ok(parsed.program)
}

/// Write `contents` to `path` through a sibling temporary file and a rename,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| CliError::User(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    debug!("wrote {}", path.display());
    Ok(())
}

fn load_inputs(program: &Program, dir: Option<&Path>, seed: u64) -> Result<BTreeMap<String, Tensor>, CliError> {
    let Some(dir) = dir else {
        return Ok(random_inputs(program, seed));
    };
    let mut env = BTreeMap::new();
    for (name, shape) in &program.inputs {
        let path = dir.join(format!("{name}.tensor"));
        let text = fs::read_to_string(&path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        let t = Tensor::parse_file(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        if t.shape() != shape {
            return Err(CliError::User(format!("{}: shape {} but `%{name}` is declared {shape}", path.display(), t.shape())));
        }
        env.insert(name.clone(), t);
    }
    Ok(env)
}

fn defs(numerics: AccelNumerics) -> Vec<AcceleratorDef> {
    [AccelId::Fxlin, AccelId::Fxcnn].into_iter().map(|id| AcceleratorDef::build(id, numerics)).collect()
}

pub fn cmd_check(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let program = load_program(path)?;
    let shapes = infer_shapes(&program.body, &program.env()).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    writeln!(out, "ok: {} inputs, {} operators, output {}", program.inputs.len(), program.body.op_count(), shapes.shape)?;
    Ok(())
}

/// Per-accelerator offload counts plus the rewritten program.
#[derive(Debug, Clone)]
pub struct OffloadOutcome {
    pub exact: BTreeMap<AccelId, usize>,
    pub flexible: Option<BTreeMap<AccelId, usize>>,
    pub program: Program,
    pub written: PathBuf,
}

pub fn cmd_offload(path: &Path, accels: &[AccelId], mode: Mode, out_dir: &Path, limits: Limits, out: &mut dyn Write) -> Result<OffloadOutcome, CliError> {
    let program = load_program(path)?;
    infer_shapes(&program.body, &program.env())?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "program".into());
    let rules = builtin_rules();
    let outcome = match mode {
        Mode::Exact => {
            let (rewritten, matches) = exact_offload(&program, &rules, accels)?;
            let mut exact: BTreeMap<AccelId, usize> = accels.iter().map(|&a| (a, 0)).collect();
            for m in &matches {
                if let accelbridge_core::eqsat::RuleKind::Mapping(a) = m.kind {
                    *exact.entry(a).or_insert(0) += 1;
                }
            }
            writeln!(out, "| Program | Accelerator | Exact |\n|---|---|---|")?;
            for (a, n) in &exact {
                writeln!(out, "| {stem} | {a} | {n} |")?;
            }
            OffloadOutcome { exact, flexible: None, program: rewritten, written: PathBuf::new() }
        }
        Mode::Flex => {
            let report = flexible_match(&program, &rules, accels, limits)?;
            writeln!(out, "{OFFLOAD_HEADER}")?;
            for row in report.table_rows(&stem) {
                writeln!(out, "{row}")?;
            }
            writeln!(out, "{}", report.saturation)?;
            if report.saturation.stop_reason != accelbridge_core::eqsat::StopReason::Fixpoint {
                writeln!(out, "warning: saturation stopped early, counts are from the partial e-graph")?;
            }
            info!("extraction cost {}", report.cost);
            OffloadOutcome { exact: report.exact, flexible: Some(report.flexible), program: report.after, written: PathBuf::new() }
        }
    };
    let written = out_dir.join(format!("{stem}.offload.prog"));
    write_atomic(&written, &print_program(&outcome.program))?;
    writeln!(out, "wrote {}", written.display())?;
    Ok(OffloadOutcome { written, ..outcome })
}

pub fn cmd_codegen(path: &Path, numerics: AccelNumerics, inputs: Option<&Path>, seed: u64, out_dir: &Path, out: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let program = load_program(path)?;
    let env = load_inputs(&program, inputs, seed)?;
    let placement = Placement::new(program, defs(numerics))?;
    let run = run_cosim(&placement, &env)?;
    let mut files = Vec::new();
    for (i, call) in run.calls.iter().enumerate() {
        if call.fragment_len != call.trace.len() || call.decoded + call.trace.read_responses().len() != call.trace.len() {
            return Err(CliError::Internal(format!(
                "call {i}: {} fragment entries, {} commands, {} decoded",
                call.fragment_len,
                call.trace.len(),
                call.decoded
            )));
        }
        let file = out_dir.join(format!("call_{i:03}.trace"));
        write_atomic(&file, &call.trace.to_string())?;
        writeln!(out, "{} ({} commands)", file.display(), call.trace.len())?;
        files.push(file);
    }
    if files.is_empty() {
        writeln!(out, "no accelerator calls")?;
    }
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct CosimOutcome {
    pub output: Tensor,
    pub rel_err: f64,
    pub calls: usize,
}

pub fn cmd_cosim(path: &Path, numerics: AccelNumerics, inputs: Option<&Path>, seed: u64, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<CosimOutcome, CliError> {
    let program = load_program(path)?;
    let env = load_inputs(&program, inputs, seed)?;
    let reference = eval_ref(&program.body, &env)?;
    let placement = Placement::new(program, defs(numerics))?;
    let run = run_cosim(&placement, &env)?;
    let err = rel_error(&reference, &run.output)?;
    let mut report = String::new();
    for call in &run.calls {
        report.push_str(&format!("{}\n", call.range));
    }
    report.push_str(&format!("numerics={numerics}\ncalls={}\nrel_error={err:.6e}\n", run.calls.len()));
    out.write_all(report.as_bytes())?;
    writeln!(out, "output:\n{}", run.output.to_file_string().trim_end())?;
    if let Some(dir) = out_dir {
        write_atomic(&dir.join("output.tensor"), &run.output.to_file_string())?;
        write_atomic(&dir.join("cosim.txt"), &report)?;
    }
    Ok(CosimOutcome { output: run.output, rel_err: err, calls: run.calls.len() })
}

pub fn cmd_validate(
    rule_name: &str,
    samples: usize,
    numerics: AccelNumerics,
    seed: u64,
    integer: bool,
    adversarial: bool,
    out: &mut dyn Write,
) -> Result<accelbridge_core::cosim::ValidationStats, CliError> {
    let rules = builtin_rules();
    let rule = rules.get(rule_name).filter(|r| validation_case(&r.name).is_some()).ok_or_else(|| CliError::User(format!("unknown mapping rule `{rule_name}` (expected M-LIN, M-LINR or M-CONV)")))?;
    let accel = match rule.kind {
        accelbridge_core::eqsat::RuleKind::Mapping(a) => a,
        accelbridge_core::eqsat::RuleKind::Generic => unreachable!("validation cases exist only for mapping rules"),
    };
    let case = match (rule.name.as_str(), adversarial) {
        ("M-CONV", true) => adversarial_conv_case(),
        (_, true) => return Err(CliError::User("--adversarial applies to M-CONV only".into())),
        ("M-CONV", false) => validation_case("M-CONV").expect("known rule"),
        (name, false) if integer || numerics == AccelNumerics::exact_integer() => {
            if name != "M-LIN" {
                return Err(CliError::User("integer inputs are provided for M-LIN only".into()));
            }
            integer_linear_case()
        }
        (name, false) => validation_case(name).expect("known rule"),
    };
    let def = AcceleratorDef::build(accel, numerics);
    let stats = validate_mapping(rule, &def, &case, samples, seed)?;
    writeln!(out, "{STATS_HEADER}\n{}", stats.table_row(&rule.name))?;
    out.write_all(stats.key_values(&rule.name).as_bytes())?;
    Ok(stats)
}

pub fn cmd_accuracy(numerics: Option<AccelNumerics>, seed: u64, out: &mut dyn Write) -> Result<accelbridge_core::cosim::AccuracyReport, CliError> {
    let c = classifier();
    let data = classifier_dataset(seed);
    let (label, placement) = match numerics {
        None => ("host".to_string(), Placement::host(c.program.clone())),
        Some(num) => {
            let offloaded = flexible_match(&c.program, &builtin_rules(), &[AccelId::Fxcnn], Limits::default())?.after;
            (format!("FXCNN {num}"), Placement::new(offloaded, [AcceleratorDef::build(AccelId::Fxcnn, num)])?)
        }
    };
    let report = accuracy_eval(&placement, &c.weights, &data)?;
    writeln!(out, "| Placement | Accuracy |\n|---|---|\n| {label} | {:.2}% |", 100.0 * report.accuracy())?;
    writeln!(out, "correct={} total={}", report.correct, report.total)?;
    for r in &report.ranges {
        writeln!(out, "{r}")?;
    }
    Ok(report)
}

pub fn cmd_addrmap(numerics: AccelNumerics, out: &mut dyn Write) -> Result<(), CliError> {
    for def in defs(numerics) {
        writeln!(out, "{}", def.address_map_markdown())?;
    }
    Ok(())
}

/// Number of findings over both models.
pub fn cmd_wellformed(numerics: AccelNumerics, out: &mut dyn Write) -> Result<usize, CliError> {
    let mut total = 0;
    for def in defs(numerics) {
        let report = check_wellformed(&def.model);
        write!(out, "{}: {report}", def.id)?;
        total += report.findings.len();
    }
    if total > 0 {
        return Err(CliError::Internal(format!("{total} model findings")));
    }
    Ok(total)
}
