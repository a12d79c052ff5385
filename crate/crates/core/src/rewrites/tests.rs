use super::*;
use crate::eqsat::{check_rule_soundness, match_root, Limits};
use crate::ir::{eval_ref, parse_program};

fn prog(text: &str) -> Program {
    parse_program(text).unwrap().program
}

const BOTH: [AccelId; 2] = [AccelId::Fxlin, AccelId::Fxcnn];

#[test]
fn rule_inventory() {
    let r = builtin_rules();
    let names: Vec<&str> = r.all().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["G1", "G2", "G3", "G4", "G5", "G6", "G7", "M-LIN", "M-LINR", "M-CONV"]);
    assert!(r.generic.iter().all(|r| r.kind == RuleKind::Generic));
    assert_eq!(r.mappings_for(&[AccelId::Fxcnn]).len(), 1);
    assert_eq!(r.clone().with_assoc().generic.last().unwrap().tolerance, ASSOC_TOLERANCE);
}

#[test]
fn every_rule_is_sound() {
    for rule in builtin_rules().with_assoc().all() {
        let rep = check_rule_soundness(rule, 50, 7).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn g3_turns_the_reshaped_variant_canonical() {
    let p2 = prog("(inputs (decl a (shape 2 3)) (decl b (shape 4 3)) (decl c (shape 4)))\n(add (reshape (dense %a %b) (shape 2 4)) %c)");
    let g3 = builtin_rules().get("G3").unwrap().clone();
    let m = match_root(&g3, &p2.body, &p2.env()).unwrap().unwrap();
    let rhs = (g3.rhs)(&m.ctx).to_expr(&m.bindings).unwrap();
    assert_eq!(rhs.to_string(), "(bias_add (dense %a %b) %c)");
}

#[test]
fn g2_merges_identity_reshape() {
    let p = prog("(inputs (decl x (shape 2 3)))\n(relu (reshape %x (shape 2 3)))");
    let mut g = EGraph::new(p.env());
    let root = g.add_expr(&p.body).unwrap();
    let x = g.add_expr(&Expr::var("x")).unwrap();
    let reshaped = g.add_expr(&p.body.args[0]).unwrap();
    saturate(&mut g, &[builtin_rules().get("G2").unwrap().clone()], Limits::default()).unwrap();
    assert_eq!(g.find(x), g.find(reshaped));
    assert_eq!(extract_with_cost(&g, root, &CostModel::default()).unwrap().0.to_string(), "(relu %x)");
}

#[test]
fn conv_offloads_onto_fxlin() {
    let p4 = prog("(inputs (decl d (shape 1 2 6 6)) (decl w (shape 4 2 3 3)))\n(conv2d %d %w (stride 1 1) (pad 0 0))");
    let r = flexible_match(&p4, &builtin_rules(), &[AccelId::Fxlin], Limits::default()).unwrap();
    assert_eq!((r.exact_count(AccelId::Fxlin), r.flexible_count(AccelId::Fxlin)), (0, 1));
    let call = r.after.body.args[0].clone();
    assert!(matches!(call.op, Op::AccelCall { accel: AccelId::Fxlin, op: AccelOp::Linear, .. }));
}

#[test]
fn offload_counts() {
    let p1 = prog("(inputs (decl a (shape 1 2)) (decl b (shape 2 2)) (decl c (shape 2)))\n(bias_add (dense %a %b) %c)");
    let r = flexible_match(&p1, &builtin_rules(), &[AccelId::Fxlin], Limits::default()).unwrap();
    assert_eq!((r.exact_count(AccelId::Fxlin), r.flexible_count(AccelId::Fxlin)), (1, 1));
    assert_eq!(r.table_rows("P1"), vec!["| P1 | FXLIN | 1 | 1 |"]);
    assert!(count_offloads(&p1.body).is_empty());
    assert_eq!(count_offloads(&r.after.body), BTreeMap::from([(AccelId::Fxlin, 1)]));

    let none = flexible_match(&p1, &builtin_rules(), &[], Limits::default()).unwrap();
    assert!(none.flexible.is_empty() && none.exact.is_empty());
    assert_eq!(none.after, p1);
}

#[test]
fn exact_offload_rewrites_matches_only() {
    let text = "(inputs (decl x (shape 1 4)) (decl w1 (shape 3 4)) (decl b1 (shape 3)) (decl w2 (shape 2 3)) (decl b2 (shape 2)))\n\
                (relu (bias_add (dense (bias_add (dense %x %w1) %b1) %w2) %b2))";
    let p = prog(text);
    let (out, m) = exact_offload(&p, &builtin_rules(), &BOTH).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(out.body.to_string(), "(accel_call FXLIN linear_relu (accel_call FXLIN linear %x %w1 %b1) %w2 %b2)");
}

#[test]
fn extraction_preserves_value_and_dominates() {
    use rand::{Rng, SeedableRng};
    let p = prog(
        "(inputs (decl d (shape 1 2 5 5)) (decl w (shape 3 2 3 3)) (decl v (shape 4 27)) (decl c (shape 4)))\n\
         (relu (add (reshape (dense (reshape (conv2d %d %w (stride 1 1) (pad 0 0)) (shape 1 27)) %v) (shape 4)) %c))",
    );
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let env: BTreeMap<String, Tensor> = p.inputs.iter().map(|(n, s)| (n.clone(), Tensor::from_fn(s.clone(), |_| rng.gen_range(-1.0..1.0)))).collect();
    for accels in [vec![], vec![AccelId::Fxlin], vec![AccelId::Fxcnn], BOTH.to_vec()] {
        let r = flexible_match(&p, &builtin_rules(), &accels, Limits::default()).unwrap();
        for &a in &accels {
            assert!(r.flexible_count(a) >= r.exact_count(a));
        }
        let err = crate::cosim::rel_error(&eval_ref(&p.body, &env).unwrap(), &eval_ref(&r.after.body, &env).unwrap()).unwrap();
        assert!(err <= 1e-9, "{accels:?}: {err}");
    }
    let both = flexible_match(&p, &builtin_rules(), &BOTH, Limits::default()).unwrap();
    assert_eq!(both.flexible, BTreeMap::from([(AccelId::Fxlin, 1), (AccelId::Fxcnn, 1)]));
    assert_eq!(both.after.body.op, Op::Relu);
}
