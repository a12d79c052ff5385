//! The simulated path (lower, emit, replay, read back) against the
//! fixed-point oracle, bit for bit, on random calls.

mod common;

use accelbridge_core::accel::{accel_oracle, AccelOp};
use accelbridge_core::codegen::{emit_mmio, execute_call, parse_trace, Action};
use accelbridge_core::ir::ConvParams;
use accelbridge_core::{AccelId, AccelNumerics, AcceleratorDef, Op, Shape, Tensor};
use common::Formats;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(rng: &mut ChaCha8Rng, dims: &[usize], range: f64) -> Tensor {
    Tensor::from_fn(Shape::of(dims), |_| rng.gen_range(-range..=range))
}

fn numerics(rng: &mut ChaCha8Rng) -> AccelNumerics {
    [AccelNumerics::v1(), AccelNumerics::v2(), AccelNumerics::exact_integer()][rng.gen_range(0..3)]
}

fn check(def: &AcceleratorDef, op: &Op, args: &[Tensor], expected: &Tensor) {
    let Op::AccelCall { op: aop, conv, .. } = op else { unreachable!() };
    let ex = execute_call(op, args, def).unwrap();
    let oracle = accel_oracle(def, *aop, *conv, args).unwrap();
    assert_eq!(ex.output, oracle);
    assert_eq!(&ex.output, expected, "test-side oracle disagrees for {op}");
    // one command per fragment entry; every write decodes its instruction
    assert_eq!(ex.trace.len(), ex.fragment.len());
    let writes = ex.fragment.entries.iter().filter(|e| matches!(e.action, Action::Instr(_))).count();
    assert_eq!(ex.log.decoded().count(), writes);
    let names: Vec<&str> = ex.fragment.entries.iter().filter_map(|e| if let Action::Instr(n) = &e.action { Some(n.as_str()) } else { None }).collect();
    assert_eq!(ex.log.decoded().collect::<Vec<_>>(), names);
    let text = emit_mmio(&ex.fragment).to_string();
    assert_eq!(parse_trace(&text).unwrap().to_string(), text);
}

#[test]
fn linear_calls_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for relu in [false, true] {
        for _ in 0..100 {
            let num = numerics(&mut rng);
            let def = AcceleratorDef::build(AccelId::Fxlin, num);
            let (m, k, n) = (rng.gen_range(1..=8), rng.gen_range(1..=16), rng.gen_range(1..=8));
            let range = if num == AccelNumerics::exact_integer() { 20.0 } else { 2.5 };
            let args = [tensor(&mut rng, &[m, k], range), tensor(&mut rng, &[n, k], range), tensor(&mut rng, &[n], range)];
            let aop = if relu { AccelOp::LinearRelu } else { AccelOp::Linear };
            let f = Formats { weight: num.weight, act: num.act, acc: num.acc };
            let expected = common::linear(&args[0], &args[1], &args[2], &f, relu);
            check(&def, &Op::AccelCall { accel: AccelId::Fxlin, op: aop, conv: None }, &args, &expected);
        }
    }
}

#[test]
fn conv_calls_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let num = numerics(&mut rng);
        let def = AcceleratorDef::build(AccelId::Fxcnn, num);
        let (c, o, kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let pad = (rng.gen_range(0..=1), rng.gen_range(0..=1));
        let h = kh + stride.0 * rng.gen_range(1..=3);
        let w = kw + stride.1 * rng.gen_range(1..=3);
        let range = if num == AccelNumerics::exact_integer() { 6.0 } else { 3.5 };
        let batch = rng.gen_range(1..=2);
        let args = [tensor(&mut rng, &[batch, c, h, w], range), tensor(&mut rng, &[o, c, kh, kw], range)];
        let f = Formats { weight: num.weight, act: num.act, acc: num.acc };
        let expected = common::conv(&args[0], &args[1], stride, pad, &f);
        let p = ConvParams::new(stride, pad);
        check(&def, &Op::AccelCall { accel: AccelId::Fxcnn, op: AccelOp::Conv2d, conv: Some(p) }, &args, &expected);
    }
}
