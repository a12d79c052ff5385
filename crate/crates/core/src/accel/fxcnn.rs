use std::sync::Arc;

use super::common::{buffer_sort, buffer_write, field, load_raw, mem, readback, reg, reg_decode, regs, start_decode, store_raw};
use super::{addr, AccelId, AcceleratorDef, Capacities};
use crate::ila::{IlaError, IlaModel, Instruction, MacroUpdate, Sort, StateVar, Valuation, Value};
use crate::numerics::{fx_conv2d, AccelNumerics, ConvGeometry};

pub const MAX_C: usize = 16;
pub const MAX_O: usize = 16;
pub const MAX_H: usize = 32;
pub const MAX_W: usize = 32;
pub const MAX_KH: usize = 7;
pub const MAX_KW: usize = 7;

const NAME: &str = "fxcnn_conv2d";

#[derive(Debug)]
struct ConvStart {
    numerics: AccelNumerics,
}

impl ConvStart {
    fn geometry(state: &Valuation) -> Result<ConvGeometry, IlaError> {
        let r = |n: &str| reg(state, n, NAME);
        let g = ConvGeometry {
            n: r("n_dim")?,
            c: r("c_dim")?,
            h: r("h_dim")?,
            w: r("w_dim")?,
            o: r("o_dim")?,
            kh: r("kh")?,
            kw: r("kw")?,
            stride: (r("sh")?, r("sw")?),
            pad: (r("ph")?, r("pw")?),
        };
        let bad = |detail: String| IlaError::Macro { name: NAME.into(), detail };
        let within = [(g.c, MAX_C), (g.o, MAX_O), (g.h, MAX_H), (g.w, MAX_W), (g.kh, MAX_KH), (g.kw, MAX_KW)]
            .iter()
            .all(|&(v, max)| (1..=max).contains(&v));
        if !within || g.n == 0 {
            return Err(bad(format!("configuration {g:?} out of range")));
        }
        let out = g.output_len().ok_or_else(|| bad(format!("window does not tile: {g:?}")))?;
        if g.input_len() > addr::REGION_WORDS || g.weight_len() > addr::REGION_WORDS || out > addr::REGION_WORDS {
            return Err(bad(format!("buffers overflow for {g:?}")));
        }
        Ok(g)
    }
}

impl MacroUpdate for ConvStart {
    fn name(&self) -> &str {
        NAME
    }

    fn writes(&self) -> Vec<(String, Sort)> {
        vec![("out_buf".into(), buffer_sort())]
    }

    fn apply(&self, state: &Valuation, _inputs: &Valuation) -> Result<Vec<(String, Value)>, IlaError> {
        let g = Self::geometry(state)?;
        let num = &self.numerics;
        let input = load_raw(mem(state, "input_buf", NAME)?, g.input_len(), num.act);
        let weight = load_raw(mem(state, "weight_buf", NAME)?, g.weight_len(), num.weight);
        let out = fx_conv2d(&input, &weight, &g, num).map_err(|e| IlaError::Macro { name: NAME.into(), detail: e.to_string() })?;
        Ok(vec![("out_buf".into(), store_raw(&out, num.act))])
    }
}

/// The direct-convolution engine (NCHW data, OIHW weights).
pub fn build_fxcnn(numerics: AccelNumerics) -> AcceleratorDef {
    let mut model = IlaModel::new("FXCNN");
    model.states.extend(regs(&["n_dim", "c_dim", "h_dim", "w_dim", "o_dim", "kh", "kw", "sh", "sw", "ph", "pw"], 8));
    for buf in ["weight_buf", "input_buf", "out_buf"] {
        model.states.push(StateVar::new(buf, buffer_sort()));
    }
    model.instructions = vec![
        Instruction::new("cfg_shape", reg_decode(addr::CFG0))
            .update("n_dim", field(7, 0))
            .update("c_dim", field(15, 8))
            .update("h_dim", field(23, 16))
            .update("w_dim", field(31, 24)),
        Instruction::new("cfg_kernel", reg_decode(addr::CFG1))
            .update("o_dim", field(7, 0))
            .update("kh", field(15, 8))
            .update("kw", field(23, 16))
            .update("sh", field(31, 24)),
        Instruction::new("cfg_pad", reg_decode(addr::CFG2))
            .update("ph", field(7, 0))
            .update("pw", field(15, 8))
            .update("sw", field(23, 16))
            .note("also carries the horizontal stride"),
        Instruction::new("fn_start", start_decode())
            .with_macro(Arc::new(ConvStart { numerics }))
            .note("run the configured convolution"),
        buffer_write("wr_weight", "weight_buf", addr::WEIGHT_BASE),
        buffer_write("wr_input", "input_buf", addr::INPUT_BASE),
    ];
    model.read_map = readback("out_buf", addr::OUTPUT_BASE);
    AcceleratorDef {
        id: AccelId::Fxcnn,
        model,
        numerics,
        caps: Capacities::of(AccelId::Fxcnn),
    }
}
