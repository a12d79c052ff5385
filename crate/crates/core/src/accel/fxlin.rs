use std::sync::Arc;

use super::common::{buffer_sort, buffer_write, field, load_raw, mem, readback, reg, reg_decode, regs, start_decode, store_raw};
use super::{addr, AccelId, AcceleratorDef, Capacities};
use crate::ila::{IlaError, IlaModel, Instruction, MacroUpdate, Sort, StateVar, Valuation, Value};
use crate::numerics::{fx_linear, AccelNumerics, RawMatrix};

pub const MAX_M: usize = 64;
pub const MAX_K: usize = 64;
pub const MAX_N: usize = 64;

const NAME: &str = "fxlin_linear";

/// `fn_start`: out_buf <- act(input[M,K] * weight[N,K]^T + bias[N]),
/// with an elementwise ReLU on the quantized result when relu_en is set.
#[derive(Debug)]
struct LinearStart {
    numerics: AccelNumerics,
}

impl MacroUpdate for LinearStart {
    fn name(&self) -> &str {
        NAME
    }

    fn writes(&self) -> Vec<(String, Sort)> {
        vec![("out_buf".into(), buffer_sort())]
    }

    fn apply(&self, state: &Valuation, _inputs: &Valuation) -> Result<Vec<(String, Value)>, IlaError> {
        let (m, k, n) = (reg(state, "m_dim", NAME)?, reg(state, "k_dim", NAME)?, reg(state, "n_dim", NAME)?);
        let relu = reg(state, "relu_en", NAME)? == 1;
        if !(1..=MAX_M).contains(&m) || !(1..=MAX_K).contains(&k) || !(1..=MAX_N).contains(&n) {
            return Err(IlaError::Macro { name: NAME.into(), detail: format!("dims M={m} K={k} N={n} out of range") });
        }
        let num = &self.numerics;
        let err = |e: crate::numerics::NumericsError| IlaError::Macro { name: NAME.into(), detail: e.to_string() };
        let a = RawMatrix::new(m, k, load_raw(mem(state, "input_buf", NAME)?, m * k, num.act)).map_err(err)?;
        let w = RawMatrix::new(n, k, load_raw(mem(state, "weight_buf", NAME)?, n * k, num.weight)).map_err(err)?;
        let b = load_raw(mem(state, "bias_buf", NAME)?, n, num.act);
        let mut out = fx_linear(&a, &w, &b, num).map_err(err)?.data;
        if relu {
            out.iter_mut().for_each(|v| *v = (*v).max(0));
        }
        Ok(vec![("out_buf".into(), store_raw(&out, num.act))])
    }
}

/// The linear-layer engine.
pub fn build_fxlin(numerics: AccelNumerics) -> AcceleratorDef {
    let mut model = IlaModel::new("FXLIN");
    model.states.extend(regs(&["m_dim", "k_dim", "n_dim"], 8));
    model.states.push(StateVar::new("relu_en", Sort::bv(1)));
    for buf in ["weight_buf", "input_buf", "bias_buf", "out_buf"] {
        model.states.push(StateVar::new(buf, buffer_sort()));
    }
    model.instructions = vec![
        Instruction::new("cfg_dims", reg_decode(addr::CFG0))
            .update("m_dim", field(7, 0))
            .update("k_dim", field(15, 8))
            .update("n_dim", field(23, 16))
            .note("latch problem size"),
        Instruction::new("cfg_mode", reg_decode(addr::CFG1))
            .update("relu_en", field(0, 0))
            .note("bit 0 enables the fused ReLU"),
        Instruction::new("fn_start", start_decode())
            .with_macro(Arc::new(LinearStart { numerics }))
            .note("run the configured linear layer"),
        buffer_write("wr_weight", "weight_buf", addr::WEIGHT_BASE),
        buffer_write("wr_input", "input_buf", addr::INPUT_BASE),
        buffer_write("wr_bias", "bias_buf", addr::BIAS_BASE),
    ];
    model.read_map = readback("out_buf", addr::OUTPUT_BASE);
    AcceleratorDef {
        id: AccelId::Fxlin,
        model,
        numerics,
        caps: Capacities::of(AccelId::Fxlin),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::{decode_word, encode_word};
    use crate::numerics::quantize;
    use crate::sim::{mmio_read, run, Command, Policy};

    #[test]
    fn cfg_dims_fields() {
        let def = build_fxlin(AccelNumerics::v2());
        let (s, log) = run(&def.model, def.model.initial_state(), &[Command::write(0x10, 0x0003_0202)], Policy::Strict).unwrap();
        assert_eq!(log.decoded().collect::<Vec<_>>(), vec!["cfg_dims"]);
        assert_eq!(s["m_dim"], Value::bv(8, 2));
        assert_eq!(s["k_dim"], Value::bv(8, 2));
        assert_eq!(s["n_dim"], Value::bv(8, 3));
    }

    fn program(num: &AccelNumerics, relu: bool, a: &[f64], w: &[f64], b: &[f64], m: u32, k: u32, n: u32) -> Vec<Command> {
        let mut t = Vec::new();
        for (i, &x) in w.iter().enumerate() {
            t.push(Command::write(addr::WEIGHT_BASE + 4 * i as u32, encode_word(quantize(x, num.weight), num.weight)));
        }
        for (i, &x) in b.iter().enumerate() {
            t.push(Command::write(addr::BIAS_BASE + 4 * i as u32, encode_word(quantize(x, num.act), num.act)));
        }
        for (i, &x) in a.iter().enumerate() {
            t.push(Command::write(addr::INPUT_BASE + 4 * i as u32, encode_word(quantize(x, num.act), num.act)));
        }
        t.push(Command::write(addr::CFG0, m | k << 8 | n << 16));
        t.push(Command::write(addr::CFG1, relu as u32));
        t.push(Command::write(addr::FN_START, 1));
        t
    }

    #[test]
    fn start_computes_linear() {
        let num = AccelNumerics::v2();
        let def = build_fxlin(num);
        let trace = program(&num, false, &[1., 2.], &[1., 0., 0., 1.], &[0.5, -0.5], 1, 2, 2);
        let (s, _) = run(&def.model, def.model.initial_state(), &trace, Policy::Strict).unwrap();
        let out: Vec<i64> = (0..2).map(|i| decode_word(mmio_read(&def.model, &s, addr::OUTPUT_BASE + 4 * i).unwrap(), num.act)).collect();
        assert_eq!(out, vec![384, 384]); // 1.5 * 256
    }

    #[test]
    fn relu_clamps() {
        let num = AccelNumerics::v2();
        let def = build_fxlin(num);
        let trace = program(&num, true, &[1., -2.], &[1., 0., 0., 1.], &[0., 0.], 1, 2, 2);
        let (s, _) = run(&def.model, def.model.initial_state(), &trace, Policy::Strict).unwrap();
        assert_eq!(mmio_read(&def.model, &s, addr::OUTPUT_BASE).unwrap(), 256);
        assert_eq!(mmio_read(&def.model, &s, addr::OUTPUT_BASE + 4).unwrap(), 0);
    }

    #[test]
    fn start_without_config_fails() {
        let def = build_fxlin(AccelNumerics::v2());
        assert!(run(&def.model, def.model.initial_state(), &[Command::write(addr::FN_START, 1)], Policy::Strict).is_err());
    }
}
