use std::collections::BTreeMap;
use std::fmt;

use super::value::{mask, BvValue, Sort, Valuation, Value, MAX_BV_WIDTH};
use super::IlaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    State,
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Eq,
    Ult,
    Slt,
    Shl,
    Lshr,
    Concat,
}

impl BinOp {
    fn name(&self) -> &'static str {
        match self {
            BinOp::Add => "bvadd",
            BinOp::Sub => "bvsub",
            BinOp::Mul => "bvmul",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Eq => "=",
            BinOp::Ult => "bvult",
            BinOp::Slt => "bvslt",
            BinOp::Shl => "bvshl",
            BinOp::Lshr => "bvlshr",
            BinOp::Concat => "concat",
        }
    }
}

/// ILA expression language. Closed set of operators.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(Value),
    Var { name: String, kind: VarKind },
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Extract { hi: u32, lo: u32, arg: Box<Expr> },
    ZeroExt { width: u32, arg: Box<Expr> },
    SignExt { width: u32, arg: Box<Expr> },
    Ite(Box<Expr>, Box<Expr>, Box<Expr>),
    MemSelect { mem: Box<Expr>, addr: Box<Expr> },
    MemStore { mem: Box<Expr>, addr: Box<Expr>, data: Box<Expr> },
    SelectBit { arg: Box<Expr>, index: u32 },
}

// Builders. Named after the ILAng / SMT-LIB operators they stand for.
impl Expr {
    pub fn bv(width: u32, bits: u64) -> Expr {
        Expr::Const(Value::bv(width, bits))
    }

    pub fn bool(b: bool) -> Expr {
        Expr::Const(Value::Bool(b))
    }

    pub fn state(name: &str) -> Expr {
        Expr::Var { name: name.to_string(), kind: VarKind::State }
    }

    pub fn input(name: &str) -> Expr {
        Expr::Var { name: name.to_string(), kind: VarKind::Input }
    }

    fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn add(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Add, self, rhs)
    }

    pub fn sub(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Sub, self, rhs)
    }

    pub fn mul(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Mul, self, rhs)
    }

    pub fn and(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::And, self, rhs)
    }

    pub fn or(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Or, self, rhs)
    }

    pub fn xor(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Xor, self, rhs)
    }

    pub fn eq(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Eq, self, rhs)
    }

    pub fn ult(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Ult, self, rhs)
    }

    pub fn slt(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Slt, self, rhs)
    }

    pub fn shl(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Shl, self, rhs)
    }

    pub fn lshr(self, rhs: Expr) -> Expr {
        Self::bin(BinOp::Lshr, self, rhs)
    }

    pub fn concat(self, low: Expr) -> Expr {
        Self::bin(BinOp::Concat, self, low)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Expr {
        Expr::Not(Box::new(self))
    }

    pub fn extract(self, hi: u32, lo: u32) -> Expr {
        Expr::Extract { hi, lo, arg: Box::new(self) }
    }

    pub fn zext(self, width: u32) -> Expr {
        Expr::ZeroExt { width, arg: Box::new(self) }
    }

    pub fn sext(self, width: u32) -> Expr {
        Expr::SignExt { width, arg: Box::new(self) }
    }

    pub fn ite(cond: Expr, then: Expr, otherwise: Expr) -> Expr {
        Expr::Ite(Box::new(cond), Box::new(then), Box::new(otherwise))
    }

    pub fn select(self, addr: Expr) -> Expr {
        Expr::MemSelect { mem: Box::new(self), addr: Box::new(addr) }
    }

    pub fn store(self, addr: Expr, data: Expr) -> Expr {
        Expr::MemStore { mem: Box::new(self), addr: Box::new(addr), data: Box::new(data) }
    }

    pub fn select_bit(self, index: u32) -> Expr {
        Expr::SelectBit { arg: Box::new(self), index }
    }

    /// Visit every variable occurrence.
    pub fn for_each_var(&self, f: &mut impl FnMut(&str, VarKind)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var { name, kind } => f(name, *kind),
            Expr::Not(a)
            | Expr::Extract { arg: a, .. }
            | Expr::ZeroExt { arg: a, .. }
            | Expr::SignExt { arg: a, .. }
            | Expr::SelectBit { arg: a, .. } => a.for_each_var(f),
            Expr::Bin(_, a, b) | Expr::MemSelect { mem: a, addr: b } => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
            Expr::Ite(a, b, c) | Expr::MemStore { mem: a, addr: b, data: c } => {
                a.for_each_var(f);
                b.for_each_var(f);
                c.for_each_var(f);
            }
        }
    }

    fn short(&self) -> String {
        let s = self.to_string();
        if s.len() > 60 {
            format!("{}...", &s[..57])
        } else {
            s
        }
    }
}

fn mismatch(node: &Expr, expected: impl fmt::Display, found: Sort) -> IlaError {
    IlaError::SortMismatch { node: node.short(), expected: expected.to_string(), found }
}

fn expect_bv(node: &Expr, s: Sort) -> Result<u32, IlaError> {
    match s {
        Sort::BitVec(w) => Ok(w),
        other => Err(mismatch(node, "bitvector", other)),
    }
}

/// Sort of `expr` under `ctx`, or the first error found.
pub fn typecheck_expr(expr: &Expr, ctx: &BTreeMap<String, Sort>) -> Result<Sort, IlaError> {
    let tc = |e: &Expr| typecheck_expr(e, ctx);
    match expr {
        Expr::Const(v) => {
            let s = v.sort();
            if !s.is_valid() {
                return Err(IlaError::BadWidth(s.to_string()));
            }
            Ok(s)
        }
        Expr::Var { name, .. } => ctx.get(name).copied().ok_or_else(|| IlaError::UnboundVariable(name.clone())),
        Expr::Not(a) => match tc(a)? {
            s @ (Sort::Bool | Sort::BitVec(_)) => Ok(s),
            other => Err(mismatch(expr, "bool or bitvector", other)),
        },
        Expr::Bin(op, a, b) => {
            let (sa, sb) = (tc(a)?, tc(b)?);
            match op {
                BinOp::And | BinOp::Or | BinOp::Xor => {
                    if matches!(sa, Sort::Mem { .. }) {
                        return Err(mismatch(expr, "bool or bitvector", sa));
                    }
                    if sa != sb {
                        return Err(mismatch(expr, sa, sb));
                    }
                    Ok(sa)
                }
                BinOp::Eq => {
                    if matches!(sa, Sort::Mem { .. }) {
                        return Err(mismatch(expr, "bool or bitvector", sa));
                    }
                    if sa != sb {
                        return Err(mismatch(expr, sa, sb));
                    }
                    Ok(Sort::Bool)
                }
                BinOp::Concat => {
                    let (wa, wb) = (expect_bv(a, sa)?, expect_bv(b, sb)?);
                    if wa + wb > MAX_BV_WIDTH {
                        return Err(IlaError::BadWidth(format!("concat of {wa}+{wb} bits")));
                    }
                    Ok(Sort::BitVec(wa + wb))
                }
                BinOp::Ult | BinOp::Slt => {
                    expect_bv(a, sa)?;
                    if sa != sb {
                        return Err(mismatch(expr, sa, sb));
                    }
                    Ok(Sort::Bool)
                }
                _ => {
                    expect_bv(a, sa)?;
                    if sa != sb {
                        return Err(mismatch(expr, sa, sb));
                    }
                    Ok(sa)
                }
            }
        }
        Expr::Extract { hi, lo, arg } => {
            let w = expect_bv(arg, tc(arg)?)?;
            if hi < lo || *hi >= w {
                return Err(IlaError::BadExtractRange { hi: *hi, lo: *lo, width: w });
            }
            Ok(Sort::BitVec(hi - lo + 1))
        }
        Expr::ZeroExt { width, arg } | Expr::SignExt { width, arg } => {
            let w = expect_bv(arg, tc(arg)?)?;
            if *width < w || *width > MAX_BV_WIDTH {
                return Err(IlaError::BadWidth(format!("extend bv{w} to bv{width}")));
            }
            Ok(Sort::BitVec(*width))
        }
        Expr::Ite(c, t, e) => {
            let sc = tc(c)?;
            if sc != Sort::Bool {
                return Err(mismatch(c, Sort::Bool, sc));
            }
            let (st, se) = (tc(t)?, tc(e)?);
            if st != se {
                return Err(mismatch(expr, st, se));
            }
            Ok(st)
        }
        Expr::MemSelect { mem, addr } => match tc(mem)? {
            Sort::Mem { addr_width, data_width } => {
                let sa = tc(addr)?;
                if sa != Sort::BitVec(addr_width) {
                    return Err(mismatch(addr, Sort::BitVec(addr_width), sa));
                }
                Ok(Sort::BitVec(data_width))
            }
            other => Err(mismatch(mem, "memory", other)),
        },
        Expr::MemStore { mem, addr, data } => match tc(mem)? {
            s @ Sort::Mem { addr_width, data_width } => {
                let sa = tc(addr)?;
                if sa != Sort::BitVec(addr_width) {
                    return Err(mismatch(addr, Sort::BitVec(addr_width), sa));
                }
                let sd = tc(data)?;
                if sd != Sort::BitVec(data_width) {
                    return Err(mismatch(data, Sort::BitVec(data_width), sd));
                }
                Ok(s)
            }
            other => Err(mismatch(mem, "memory", other)),
        },
        Expr::SelectBit { arg, index } => {
            let w = expect_bv(arg, tc(arg)?)?;
            if *index >= w {
                return Err(IlaError::BadExtractRange { hi: *index, lo: *index, width: w });
            }
            Ok(Sort::BitVec(1))
        }
    }
}

fn bv_of(node: &Expr, v: Value) -> Result<BvValue, IlaError> {
    let s = v.sort();
    v.as_bv().ok_or_else(|| mismatch(node, "bitvector", s))
}

/// Evaluate `expr`. Bitvector arithmetic wraps at the operand width; a
/// memory read of an address that was never written yields zero.
pub fn eval_expr(expr: &Expr, state: &Valuation, inputs: &Valuation) -> Result<Value, IlaError> {
    let ev = |e: &Expr| eval_expr(e, state, inputs);
    match expr {
        Expr::Const(v) => Ok(v.clone()),
        Expr::Var { name, kind } => {
            let src = match kind {
                VarKind::State => state,
                VarKind::Input => inputs,
            };
            src.get(name).cloned().ok_or_else(|| IlaError::UnboundVariable(name.clone()))
        }
        Expr::Not(a) => match ev(a)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            Value::Bv(b) => Ok(Value::bv(b.width(), !b.bits())),
            other => Err(mismatch(expr, "bool or bitvector", other.sort())),
        },
        Expr::Bin(op, a, b) => {
            let (va, vb) = (ev(a)?, ev(b)?);
            if let (Value::Bool(x), Value::Bool(y)) = (&va, &vb) {
                let r = match op {
                    BinOp::And => x & y,
                    BinOp::Or => x | y,
                    BinOp::Xor => x ^ y,
                    BinOp::Eq => x == y,
                    _ => return Err(mismatch(expr, "bitvector", Sort::Bool)),
                };
                return Ok(Value::Bool(r));
            }
            let (x, y) = (bv_of(a, va)?, bv_of(b, vb)?);
            if *op == BinOp::Concat {
                let w = x.width() + y.width();
                return Ok(Value::bv(w, (x.bits() << y.width()) | y.bits()));
            }
            if x.width() != y.width() {
                return Err(mismatch(expr, Sort::BitVec(x.width()), Sort::BitVec(y.width())));
            }
            let w = x.width();
            let bv = |bits: u64| Ok(Value::bv(w, bits));
            match op {
                BinOp::Add => bv(x.bits().wrapping_add(y.bits())),
                BinOp::Sub => bv(x.bits().wrapping_sub(y.bits())),
                BinOp::Mul => bv(x.bits().wrapping_mul(y.bits())),
                BinOp::And => bv(x.bits() & y.bits()),
                BinOp::Or => bv(x.bits() | y.bits()),
                BinOp::Xor => bv(x.bits() ^ y.bits()),
                BinOp::Eq => Ok(Value::Bool(x.bits() == y.bits())),
                BinOp::Ult => Ok(Value::Bool(x.bits() < y.bits())),
                BinOp::Slt => Ok(Value::Bool(x.signed() < y.signed())),
                BinOp::Shl => bv(if y.bits() >= w as u64 { 0 } else { x.bits() << y.bits() }),
                BinOp::Lshr => bv(if y.bits() >= w as u64 { 0 } else { x.bits() >> y.bits() }),
                BinOp::Concat => unreachable!(),
            }
        }
        Expr::Extract { hi, lo, arg } => {
            let x = bv_of(arg, ev(arg)?)?;
            if hi < lo || *hi >= x.width() {
                return Err(IlaError::BadExtractRange { hi: *hi, lo: *lo, width: x.width() });
            }
            Ok(Value::bv(hi - lo + 1, x.bits() >> lo))
        }
        Expr::ZeroExt { width, arg } => {
            let x = bv_of(arg, ev(arg)?)?;
            Ok(Value::bv(*width, x.bits()))
        }
        Expr::SignExt { width, arg } => {
            let x = bv_of(arg, ev(arg)?)?;
            Ok(Value::bv(*width, x.signed() as u64 & mask(*width)))
        }
        Expr::Ite(c, t, e) => match ev(c)? {
            Value::Bool(true) => ev(t),
            Value::Bool(false) => ev(e),
            other => Err(mismatch(c, Sort::Bool, other.sort())),
        },
        Expr::MemSelect { mem, addr } => {
            let m = ev(mem)?;
            let a = bv_of(addr, ev(addr)?)?;
            let s = m.sort();
            let m = m.as_mem().ok_or_else(|| mismatch(mem, "memory", s))?;
            Ok(Value::bv(m.data_width(), m.load(a.bits())))
        }
        Expr::MemStore { mem, addr, data } => {
            let mut m = ev(mem)?;
            let a = bv_of(addr, ev(addr)?)?;
            let d = bv_of(data, ev(data)?)?;
            let s = m.sort();
            m.as_mem_mut().ok_or_else(|| mismatch(mem, "memory", s))?.store(a.bits(), d.bits());
            Ok(m)
        }
        Expr::SelectBit { arg, index } => {
            let x = bv_of(arg, ev(arg)?)?;
            if *index >= x.width() {
                return Err(IlaError::BadExtractRange { hi: *index, lo: *index, width: x.width() });
            }
            Ok(Value::bv(1, x.bits() >> index))
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Var { name, .. } => write!(f, "{name}"),
            Expr::Not(a) => write!(f, "(not {a})"),
            Expr::Bin(op, a, b) => write!(f, "({} {a} {b})", op.name()),
            Expr::Extract { hi, lo, arg } => write!(f, "(extract {hi} {lo} {arg})"),
            Expr::ZeroExt { width, arg } => write!(f, "(zext {width} {arg})"),
            Expr::SignExt { width, arg } => write!(f, "(sext {width} {arg})"),
            Expr::Ite(c, t, e) => write!(f, "(ite {c} {t} {e})"),
            Expr::MemSelect { mem, addr } => write!(f, "(select {mem} {addr})"),
            Expr::MemStore { mem, addr, data } => write!(f, "(store {mem} {addr} {data})"),
            Expr::SelectBit { arg, index } => write!(f, "(select_bit {arg} {index})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(vars: &[(&str, Sort)]) -> BTreeMap<String, Sort> {
        vars.iter().map(|(n, s)| (n.to_string(), *s)).collect()
    }

    fn empty() -> Valuation {
        Valuation::new()
    }

    #[test]
    fn typecheck_examples() {
        let c = ctx(&[("x", Sort::bv(32)), ("a", Sort::bv(8)), ("b", Sort::bv(8)), ("w", Sort::bv(16))]);
        assert_eq!(typecheck_expr(&Expr::input("x").extract(7, 0), &c).unwrap(), Sort::bv(8));
        assert_eq!(typecheck_expr(&Expr::input("a").concat(Expr::input("b")), &c).unwrap(), Sort::bv(16));
        assert!(matches!(
            typecheck_expr(&Expr::input("a").add(Expr::input("w")), &c),
            Err(IlaError::SortMismatch { .. })
        ));
        assert!(matches!(
            typecheck_expr(&Expr::input("x").extract(3, 4), &c),
            Err(IlaError::BadExtractRange { .. })
        ));
        assert!(matches!(
            typecheck_expr(&Expr::input("x").extract(32, 0), &c),
            Err(IlaError::BadExtractRange { .. })
        ));
        assert!(matches!(typecheck_expr(&Expr::input("nope"), &c), Err(IlaError::UnboundVariable(_))));
    }

    #[test]
    fn eval_examples() {
        let v = eval_expr(&Expr::bv(8, 0xff).add(Expr::bv(8, 1)), &empty(), &empty()).unwrap();
        assert_eq!(v, Value::bv(8, 0));
        let v = eval_expr(&Expr::bv(4, 0b1010).select_bit(1), &empty(), &empty()).unwrap();
        assert_eq!(v, Value::bv(1, 1));
        let mut st = Valuation::new();
        st.insert("m".into(), Sort::mem(8, 32).zero());
        let e = Expr::state("m").store(Expr::bv(8, 5), Expr::bv(32, 42)).select(Expr::bv(8, 5));
        assert_eq!(eval_expr(&e, &st, &empty()).unwrap(), Value::bv(32, 42));
        let e = Expr::state("m").select(Expr::bv(8, 9));
        assert_eq!(eval_expr(&e, &st, &empty()).unwrap(), Value::bv(32, 0));
    }

    #[test]
    fn signed_ops() {
        let e = Expr::bv(8, 0x80).slt(Expr::bv(8, 1));
        assert_eq!(eval_expr(&e, &empty(), &empty()).unwrap(), Value::Bool(true));
        let e = Expr::bv(8, 0x80).sext(16);
        assert_eq!(eval_expr(&e, &empty(), &empty()).unwrap(), Value::bv(16, 0xff80));
        let e = Expr::bv(8, 0x80).zext(16);
        assert_eq!(eval_expr(&e, &empty(), &empty()).unwrap(), Value::bv(16, 0x80));
        let e = Expr::bv(8, 1).shl(Expr::bv(8, 9));
        assert_eq!(eval_expr(&e, &empty(), &empty()).unwrap(), Value::bv(8, 0));
    }

    /// Random well-typed expressions over inputs x:bv8, y:bv8, z:bv16, m:mem[4->8].
    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            any::<u8>().prop_map(|v| Expr::bv(8, v as u64)),
            Just(Expr::input("x")),
            Just(Expr::input("y")),
            Just(Expr::input("z").extract(11, 4)),
            Just(Expr::input("m").select(Expr::input("x").extract(3, 0))),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), 0..9usize).prop_map(|(a, b, k)| match k {
                    0 => a.add(b),
                    1 => a.sub(b),
                    2 => a.mul(b),
                    3 => a.and(b),
                    4 => a.or(b),
                    5 => a.xor(b),
                    6 => a.shl(b),
                    7 => a.lshr(b),
                    _ => a.concat(b).extract(11, 4),
                }),
                inner.clone().prop_map(Expr::not),
                (inner.clone(), inner.clone(), inner.clone())
                    .prop_map(|(c, t, e)| Expr::ite(c.clone().ult(t.clone()), t, e)),
                (inner.clone(), 0u32..8).prop_map(|(a, i)| a.select_bit(i).zext(8)),
                inner.clone().prop_map(|a| a.sext(16).extract(15, 8)),
                (inner.clone(), inner).prop_map(|(a, d)| Expr::input("m")
                    .store(a.extract(3, 0), d)
                    .select(Expr::bv(4, 3))),
            ]
        })
    }

    proptest! {
        #[test]
        fn type_preservation(e in arb_expr(), x in any::<u8>(), y in any::<u8>(), z in any::<u16>(),
                             words in proptest::collection::vec(any::<u8>(), 16)) {
            let c = ctx(&[("x", Sort::bv(8)), ("y", Sort::bv(8)), ("z", Sort::bv(16)), ("m", Sort::mem(4, 8))]);
            let sort = typecheck_expr(&e, &c).unwrap();
            let mut m = super::super::value::MemValue::new(4, 8);
            for (i, w) in words.iter().enumerate() {
                m.store(i as u64, *w as u64);
            }
            let mut inputs = Valuation::new();
            inputs.insert("x".into(), Value::bv(8, x as u64));
            inputs.insert("y".into(), Value::bv(8, y as u64));
            inputs.insert("z".into(), Value::bv(16, z as u64));
            inputs.insert("m".into(), Value::Mem(m));
            let v = eval_expr(&e, &Valuation::new(), &inputs).unwrap();
            prop_assert_eq!(v.sort(), sort);
        }

        #[test]
        fn modular_arithmetic(a in any::<u64>(), b in any::<u64>(), w in 1u32..=64) {
            let (a, b) = (a & mask(w), b & mask(w));
            let m = 1u128 << w;
            for (op, expect) in [
                (BinOp::Add, (a as u128 + b as u128) % m),
                (BinOp::Sub, (a as u128 + m - b as u128) % m),
                (BinOp::Mul, (a as u128 * b as u128) % m),
            ] {
                let e = Expr::Bin(op, Box::new(Expr::bv(w, a)), Box::new(Expr::bv(w, b)));
                let v = eval_expr(&e, &Valuation::new(), &Valuation::new()).unwrap();
                prop_assert_eq!(v, Value::bv(w, expect as u64));
            }
        }

        #[test]
        fn store_select_axioms(a in 0u64..256, b in 0u64..256, d in any::<u32>(), seed in any::<u32>()) {
            let mut st = Valuation::new();
            let mut m = super::super::value::MemValue::new(8, 32);
            m.store(b, seed as u64);
            st.insert("m".into(), Value::Mem(m));
            let stored = Expr::state("m").store(Expr::bv(8, a), Expr::bv(32, d as u64));
            let hit = eval_expr(&stored.clone().select(Expr::bv(8, a)), &st, &Valuation::new()).unwrap();
            prop_assert_eq!(hit, Value::bv(32, d as u64));
            if a != b {
                let other = eval_expr(&stored.select(Expr::bv(8, b)), &st, &Valuation::new()).unwrap();
                let orig = eval_expr(&Expr::state("m").select(Expr::bv(8, b)), &st, &Valuation::new()).unwrap();
                prop_assert_eq!(other, orig);
            }
        }
    }
}
