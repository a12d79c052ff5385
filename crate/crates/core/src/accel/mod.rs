//! The two synthetic accelerators, FXLIN and FXCNN, as instruction-level
//! models with MMIO address maps, plus the fixed-point oracle every
//! simulated call must agree with bit for bit.

mod common;
mod fxcnn;
mod fxlin;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ila::IlaModel;
use crate::ir::{ConvParams, Shape, Tensor};
use crate::numerics::{dequantize, fx_conv2d, fx_linear, quantize, AccelNumerics, ConvGeometry, FixedSpec, NumericsError, RawMatrix};

pub use fxcnn::build_fxcnn;
pub use fxlin::build_fxlin;

/// MMIO addresses shared by both accelerators.
pub mod addr {
    pub const CFG0: u32 = 0x0000_0010;
    pub const CFG1: u32 = 0x0000_0014;
    pub const CFG2: u32 = 0x0000_0018;
    pub const FN_START: u32 = 0x0000_0020;
    pub const WEIGHT_BASE: u32 = 0x0001_0000;
    pub const INPUT_BASE: u32 = 0x0002_0000;
    pub const OUTPUT_BASE: u32 = 0x0003_0000;
    /// FXLIN only.
    pub const BIAS_BASE: u32 = 0x0004_0000;
    /// Bytes per buffer region.
    pub const REGION_BYTES: u32 = 0x0001_0000;
    /// Words per buffer region.
    pub const REGION_WORDS: usize = (REGION_BYTES / 4) as usize;
    /// Address bits of a buffer word index.
    pub const INDEX_BITS: u32 = 14;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccelId {
    Fxlin,
    Fxcnn,
}

impl AccelId {
    pub const ALL: [AccelId; 2] = [AccelId::Fxlin, AccelId::Fxcnn];

    pub fn supports(&self, op: AccelOp) -> bool {
        match self {
            AccelId::Fxlin => matches!(op, AccelOp::Linear | AccelOp::LinearRelu),
            AccelId::Fxcnn => op == AccelOp::Conv2d,
        }
    }
}

impl fmt::Display for AccelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccelId::Fxlin => "FXLIN",
            AccelId::Fxcnn => "FXCNN",
        })
    }
}

impl FromStr for AccelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "FXLIN" => Ok(AccelId::Fxlin),
            "FXCNN" => Ok(AccelId::Fxcnn),
            _ => Err(format!("unknown accelerator `{s}` (expected FXLIN or FXCNN)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccelOp {
    Linear,
    LinearRelu,
    Conv2d,
}

impl AccelOp {
    pub fn arity(&self) -> usize {
        match self {
            AccelOp::Linear | AccelOp::LinearRelu => 3,
            AccelOp::Conv2d => 2,
        }
    }

    pub fn has_conv_params(&self) -> bool {
        *self == AccelOp::Conv2d
    }
}

impl fmt::Display for AccelOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccelOp::Linear => "linear",
            AccelOp::LinearRelu => "linear_relu",
            AccelOp::Conv2d => "conv2d",
        })
    }
}

impl FromStr for AccelOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(AccelOp::Linear),
            "linear_relu" => Ok(AccelOp::LinearRelu),
            "conv2d" => Ok(AccelOp::Conv2d),
            _ => Err(format!("unknown accelerator operation `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccelError {
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{accel} does not implement `{op}`")]
    Unsupported { accel: AccelId, op: AccelOp },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Largest problem each accelerator accepts in one call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacities {
    Linear { max_m: usize, max_k: usize, max_n: usize },
    Conv { max_c: usize, max_o: usize, max_h: usize, max_w: usize, max_kh: usize, max_kw: usize },
}

impl Capacities {
    pub fn of(id: AccelId) -> Capacities {
        match id {
            AccelId::Fxlin => Capacities::Linear { max_m: fxlin::MAX_M, max_k: fxlin::MAX_K, max_n: fxlin::MAX_N },
            AccelId::Fxcnn => Capacities::Conv {
                max_c: fxcnn::MAX_C,
                max_o: fxcnn::MAX_O,
                max_h: fxcnn::MAX_H,
                max_w: fxcnn::MAX_W,
                max_kh: fxcnn::MAX_KH,
                max_kw: fxcnn::MAX_KW,
            },
        }
    }
}

/// A validated call: the problem size in accelerator terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallShape {
    Linear { m: usize, k: usize, n: usize, relu: bool },
    Conv(ConvGeometry),
}

impl CallShape {
    pub fn output_shape(&self) -> Shape {
        match *self {
            CallShape::Linear { m, n, .. } => Shape::of(&[m, n]),
            CallShape::Conv(g) => {
                let (oh, ow) = g.output_hw().expect("validated geometry");
                Shape::of(&[g.n, g.o, oh, ow])
            }
        }
    }
}

/// An accelerator: its model, the numerics baked into `fn_start`, and its
/// capacity limits.
#[derive(Debug, Clone)]
pub struct AcceleratorDef {
    pub id: AccelId,
    pub model: IlaModel,
    pub numerics: AccelNumerics,
    pub caps: Capacities,
}

fn too_big(what: &str, v: usize, max: usize) -> Result<(), AccelError> {
    if v == 0 || v > max {
        return Err(AccelError::CapacityExceeded(format!("{what} = {v} (allowed 1..={max})")));
    }
    Ok(())
}

impl AcceleratorDef {
    pub fn build(id: AccelId, numerics: AccelNumerics) -> AcceleratorDef {
        match id {
            AccelId::Fxlin => build_fxlin(numerics),
            AccelId::Fxcnn => build_fxcnn(numerics),
        }
    }

    /// Check operand shapes of `op` against the operation contract and the
    /// capacities.
    pub fn check_call(&self, op: AccelOp, conv: Option<ConvParams>, shapes: &[&Shape]) -> Result<CallShape, AccelError> {
        check_call_shapes(self.id, op, conv, shapes)
    }

    /// Markdown reference of the MMIO address map and instruction set.
    pub fn address_map_markdown(&self) -> String {
        let mut out = format!("## {}\n\nNumerics: weights {}, activations {}, accumulator {}.\n\n", self.id, self.numerics.weight, self.numerics.act, self.numerics.acc);
        out.push_str("| Address | Access | Instruction / state | Fields |\n|---|---|---|---|\n");
        let rows: Vec<(String, &str, &str, String)> = match self.id {
            AccelId::Fxlin => vec![
                (format!("0x{:08x}", addr::CFG0), "W", "cfg_dims", "M[7:0] K[15:8] N[23:16]".into()),
                (format!("0x{:08x}", addr::CFG1), "W", "cfg_mode", "relu_enable[0]".into()),
                (format!("0x{:08x}", addr::FN_START), "W", "fn_start", "data = 1 triggers".into()),
                (region(addr::WEIGHT_BASE), "W", "wr_weight", format!("weight[N,K] row-major, {}", self.numerics.weight)),
                (region(addr::INPUT_BASE), "W", "wr_input", format!("input[M,K] row-major, {}", self.numerics.act)),
                (region(addr::BIAS_BASE), "W", "wr_bias", format!("bias[N], {}", self.numerics.act)),
                (region(addr::OUTPUT_BASE), "R", "out_buf", format!("output[M,N] row-major, {}", self.numerics.act)),
            ],
            AccelId::Fxcnn => vec![
                (format!("0x{:08x}", addr::CFG0), "W", "cfg_shape", "N[7:0] C[15:8] H[23:16] W[31:24]".into()),
                (format!("0x{:08x}", addr::CFG1), "W", "cfg_kernel", "O[7:0] kh[15:8] kw[23:16] sh[31:24]".into()),
                (format!("0x{:08x}", addr::CFG2), "W", "cfg_pad", "ph[7:0] pw[15:8] sw[23:16]".into()),
                (format!("0x{:08x}", addr::FN_START), "W", "fn_start", "data = 1 triggers".into()),
                (region(addr::WEIGHT_BASE), "W", "wr_weight", format!("weight[O,C,kh,kw] row-major, {}", self.numerics.weight)),
                (region(addr::INPUT_BASE), "W", "wr_input", format!("input[N,C,H,W] row-major, {}", self.numerics.act)),
                (region(addr::OUTPUT_BASE), "R", "out_buf", format!("output[N,O,H',W'] row-major, {}", self.numerics.act)),
            ],
        };
        for (a, acc, name, fields) in rows {
            out.push_str(&format!("| {a} | {acc} | {name} | {fields} |\n"));
        }
        out.push_str("\nOne element per 32-bit word: raw two's-complement bits in the low 16 bits (32 for formats wider than 16), upper bits zero.\n");
        out
    }
}

/// Shape and capacity check for a call on accelerator `id`, without
/// building its model.
pub fn check_call_shapes(id: AccelId, op: AccelOp, conv: Option<ConvParams>, shapes: &[&Shape]) -> Result<CallShape, AccelError> {
    if !id.supports(op) {
        return Err(AccelError::Unsupported { accel: id, op });
    }
    if shapes.len() != op.arity() {
        return Err(AccelError::ShapeMismatch(format!("{op} takes {} operands", op.arity())));
    }
    let bad = || AccelError::ShapeMismatch(format!("{op} operands {shapes:?}"));
    match (op, Capacities::of(id)) {
        (AccelOp::Linear | AccelOp::LinearRelu, Capacities::Linear { max_m, max_k, max_n }) => {
            let (a, b, c) = (shapes[0].dims(), shapes[1].dims(), shapes[2].dims());
            if a.len() != 2 || b.len() != 2 || c.len() != 1 || a[1] != b[1] || c[0] != b[0] {
                return Err(bad());
            }
            too_big("M", a[0], max_m)?;
            too_big("K", a[1], max_k)?;
            too_big("N", b[0], max_n)?;
            Ok(CallShape::Linear { m: a[0], k: a[1], n: b[0], relu: op == AccelOp::LinearRelu })
        }
        (AccelOp::Conv2d, Capacities::Conv { max_c, max_o, max_h, max_w, max_kh, max_kw }) => {
            let p = conv.ok_or_else(bad)?;
            let (d, w) = (shapes[0].dims(), shapes[1].dims());
            if d.len() != 4 || w.len() != 4 || d[1] != w[1] {
                return Err(bad());
            }
            let g = ConvGeometry { n: d[0], c: d[1], h: d[2], w: d[3], o: w[0], kh: w[2], kw: w[3], stride: p.stride, pad: p.pad };
            too_big("C", g.c, max_c)?;
            too_big("O", g.o, max_o)?;
            too_big("H", g.h, max_h)?;
            too_big("W", g.w, max_w)?;
            too_big("kh", g.kh, max_kh)?;
            too_big("kw", g.kw, max_kw)?;
            too_big("N", g.n, 255)?;
            too_big("stride h", p.stride.0, 255)?;
            too_big("stride w", p.stride.1, 255)?;
            if p.pad.0 > 255 || p.pad.1 > 255 {
                return Err(AccelError::CapacityExceeded(format!("pad {:?}", p.pad)));
            }
            let out = g.output_len().ok_or_else(bad)?;
            too_big("input words", g.input_len(), addr::REGION_WORDS)?;
            too_big("weight words", g.weight_len(), addr::REGION_WORDS)?;
            too_big("output words", out, addr::REGION_WORDS)?;
            Ok(CallShape::Conv(g))
        }
        _ => Err(AccelError::Unsupported { accel: id, op }),
    }
}

fn region(base: u32) -> String {
    format!("0x{:08x} + 4i", base)
}

/// Bits of the data lane a format occupies inside a 32-bit word.
pub fn lane_bits(spec: FixedSpec) -> u32 {
    if spec.width() <= 16 {
        16
    } else {
        32
    }
}

/// Pack a raw fixed-point value into an MMIO data word.
pub fn encode_word(raw: i64, spec: FixedSpec) -> u32 {
    let lane = lane_bits(spec);
    let bits = raw as u32;
    if lane == 32 {
        bits
    } else {
        bits & ((1u32 << lane) - 1)
    }
}

/// Inverse of [`encode_word`]: sign-extend the lane, then clamp to the
/// format's range.
pub fn decode_word(word: u32, spec: FixedSpec) -> i64 {
    let lane = lane_bits(spec);
    let v = if lane == 32 { word as i32 as i64 } else { word as u16 as i16 as i64 };
    spec.saturate(v as i128)
}

pub(crate) fn quantize_all(t: &Tensor, spec: FixedSpec) -> Vec<i64> {
    t.data().iter().map(|&x| quantize(x, spec)).collect()
}

pub(crate) fn dequantize_all(raw: &[i64], spec: FixedSpec, shape: Shape) -> Result<Tensor, AccelError> {
    let data = raw.iter().map(|&r| dequantize(r, spec)).collect::<Result<Vec<_>, _>>()?;
    Tensor::new(shape, data).map_err(|e| AccelError::ShapeMismatch(e.to_string()))
}

/// Quantize, compute with the fixed-point kernels, dequantize. The
/// reference every simulated call is checked against.
pub fn accel_oracle(def: &AcceleratorDef, op: AccelOp, conv: Option<ConvParams>, args: &[Tensor]) -> Result<Tensor, AccelError> {
    let shapes: Vec<&Shape> = args.iter().map(Tensor::shape).collect();
    let call = def.check_call(op, conv, &shapes)?;
    let num = &def.numerics;
    let raw = match call {
        CallShape::Linear { m, k, n, relu } => {
            let a = RawMatrix::new(m, k, quantize_all(&args[0], num.act))?;
            let w = RawMatrix::new(n, k, quantize_all(&args[1], num.weight))?;
            let b = quantize_all(&args[2], num.act);
            let mut out = fx_linear(&a, &w, &b, num)?.data;
            if relu {
                out.iter_mut().for_each(|v| *v = (*v).max(0));
            }
            out
        }
        CallShape::Conv(g) => fx_conv2d(&quantize_all(&args[0], num.act), &quantize_all(&args[1], num.weight), &g, num)?,
    };
    dequantize_all(&raw, num.act, call.output_shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ila::check_wellformed;
    use crate::numerics::FixedSpec;
    use proptest::prelude::*;

    #[test]
    fn shipped_models_are_wellformed() {
        for id in AccelId::ALL {
            for num in [AccelNumerics::v1(), AccelNumerics::v2()] {
                let def = AcceleratorDef::build(id, num);
                let r = check_wellformed(&def.model);
                assert!(r.is_clean(), "{id}: {r}");
            }
        }
    }

    #[test]
    fn linear_oracle_example() {
        let def = build_fxlin(AccelNumerics::v2());
        let a = Tensor::new(Shape::of(&[1, 2]), vec![1., 2.]).unwrap();
        let w = Tensor::new(Shape::of(&[2, 2]), vec![1., 0., 0., 1.]).unwrap();
        let b = Tensor::new(Shape::of(&[2]), vec![0.5, -0.5]).unwrap();
        let out = accel_oracle(&def, AccelOp::Linear, None, &[a, w, b]).unwrap();
        assert_eq!(out.data(), &[1.5, 1.5]);
    }

    #[test]
    fn capacity_guard() {
        let def = build_fxlin(AccelNumerics::v2());
        let a = Tensor::zeros(Shape::of(&[65, 2]));
        let w = Tensor::zeros(Shape::of(&[2, 2]));
        let b = Tensor::zeros(Shape::of(&[2]));
        assert!(matches!(accel_oracle(&def, AccelOp::Linear, None, &[a, w, b]), Err(AccelError::CapacityExceeded(_))));
        let cnn = build_fxcnn(AccelNumerics::v2());
        let d = Tensor::zeros(Shape::of(&[1, 17, 4, 4]));
        let w = Tensor::zeros(Shape::of(&[1, 17, 1, 1]));
        assert!(matches!(accel_oracle(&cnn, AccelOp::Conv2d, Some(ConvParams::default()), &[d, w]), Err(AccelError::CapacityExceeded(_))));
        assert!(matches!(
            cnn.check_call(AccelOp::Linear, None, &[]),
            Err(AccelError::Unsupported { .. })
        ));
    }

    #[test]
    fn conv_identity_echo() {
        let def = build_fxcnn(AccelNumerics::v2());
        let d = Tensor::from_fn(Shape::of(&[1, 2, 3, 3]), |i| (i as f64 - 9.0) / 8.0);
        let mut w = Tensor::zeros(Shape::of(&[2, 2, 1, 1]));
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let out = accel_oracle(&def, AccelOp::Conv2d, Some(ConvParams::default()), &[d.clone(), w]).unwrap();
        assert_eq!(out.data(), d.data());
    }

    #[test]
    fn word_encoding() {
        let s8 = FixedSpec::new(8, 6).unwrap();
        assert_eq!(encode_word(-1, s8), 0x0000_ffff);
        assert_eq!(decode_word(0x0000_ffff, s8), -1);
        assert_eq!(decode_word(0x0000_7fff, s8), 127);
        let s32 = FixedSpec::new(32, 14).unwrap();
        assert_eq!(encode_word(-2, s32), 0xffff_fffe);
        assert_eq!(decode_word(0xffff_fffe, s32), -2);
    }

    proptest! {
        #[test]
        fn word_round_trip(raw in any::<i64>(), w in 4u32..=32, f in 0u32..4) {
            let spec = FixedSpec::new(w, f.min(w - 1)).unwrap();
            let raw = spec.saturate(raw as i128);
            prop_assert_eq!(decode_word(encode_word(raw, spec), spec), raw);
            if lane_bits(spec) == 16 {
                prop_assert_eq!(encode_word(raw, spec) >> 16, 0);
            }
        }
    }
}
