//! The P1 call lowered under v2 with the shipped inputs, against a trace
//! written out by hand from the address map and the word encoding.

use accelbridge_core::codegen::{emit_mmio, execute_call, lower_call, parse_trace};
use accelbridge_core::corpus::{corpus_entry, p1_inputs, FIXTURES_DIR};
use accelbridge_core::eqsat::Limits;
use accelbridge_core::rewrites::{builtin_rules, flexible_match};
use accelbridge_core::{AccelId, AccelNumerics, AcceleratorDef, Op};

fn golden() -> String {
    std::fs::read_to_string(format!("{FIXTURES_DIR}/golden/p1_call_000.trace")).unwrap()
}

#[test]
fn p1_trace_matches_golden_bytes() {
    let p1 = corpus_entry("P1").unwrap().program();
    let r = flexible_match(&p1, &builtin_rules(), &[AccelId::Fxlin], Limits::default()).unwrap();
    let call = &r.after.body;
    assert!(matches!(call.op, Op::AccelCall { .. }));
    let inputs = p1_inputs();
    let args: Vec<_> = call
        .args
        .iter()
        .map(|a| match &a.op {
            Op::Var(n) => inputs[n].clone(),
            other => panic!("unexpected operand {other}"),
        })
        .collect();
    let def = AcceleratorDef::build(AccelId::Fxlin, AccelNumerics::v2());
    let ex = execute_call(&call.op, &args, &def).unwrap();
    assert_eq!(ex.trace.to_string(), golden());
    // 0.5*1 + -1*-0.5 - 1 = 0 ; 0.5*0.5 + -1*1 + 0.5 = -0.25
    assert_eq!(ex.output.data(), &[0.0, -0.25]);
}

#[test]
fn golden_round_trips() {
    let text = golden();
    let parsed = parse_trace(&text).unwrap();
    assert_eq!(parsed.to_string(), text);
    assert_eq!(parsed.len(), 13);
}

#[test]
fn unreplayed_trace_leaves_reads_open() {
    let inputs = p1_inputs();
    let p1 = corpus_entry("P1").unwrap().program();
    let r = flexible_match(&p1, &builtin_rules(), &[AccelId::Fxlin], Limits::default()).unwrap();
    let args: Vec<_> = ["a", "b", "c"].iter().map(|n| inputs[*n].clone()).collect();
    let def = AcceleratorDef::build(AccelId::Fxlin, AccelNumerics::v2());
    let frag = lower_call(&r.after.body.op, &args, &def).unwrap();
    let text = emit_mmio(&frag).to_string();
    assert!(text.ends_with("R 0x00030004 -> ?\n"));
    let g = golden();
    let prefix_len = g.lines().take(11).map(|l| l.len() + 1).sum::<usize>();
    assert_eq!(&text[..prefix_len], &g[..prefix_len]);
}
