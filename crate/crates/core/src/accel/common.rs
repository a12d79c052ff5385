//! Building blocks shared by the two accelerator models.

use std::collections::BTreeMap;

use super::addr;
use super::decode_word;
use crate::ila::{Expr, IlaError, Instruction, MemValue, Sort, StateVar, Valuation, Value};
use crate::numerics::FixedSpec;

pub(crate) fn buffer_sort() -> Sort {
    Sort::mem(addr::INDEX_BITS, 32)
}

fn is_write() -> Expr {
    Expr::input("wr").eq(Expr::bv(1, 1))
}

/// Write to a single register address.
pub(crate) fn reg_decode(address: u32) -> Expr {
    is_write().and(Expr::input("addr").eq(Expr::bv(32, address as u64)))
}

/// Write of exactly `1` to `fn_start`.
pub(crate) fn start_decode() -> Expr {
    reg_decode(addr::FN_START).and(Expr::input("data").eq(Expr::bv(32, 1)))
}

/// Word-aligned write inside `[base, base + REGION_BYTES)`.
fn region_decode(base: u32) -> Expr {
    let a = || Expr::input("addr");
    is_write()
        .and(a().ult(Expr::bv(32, base as u64)).not())
        .and(a().ult(Expr::bv(32, (base + addr::REGION_BYTES) as u64)))
        .and(a().extract(1, 0).eq(Expr::bv(2, 0)))
}

/// `buf[addr[15:2]] <- data` for writes inside the region at `base`.
pub(crate) fn buffer_write(name: &str, buf: &str, base: u32) -> Instruction {
    let index = Expr::input("addr").extract(addr::INDEX_BITS + 1, 2);
    Instruction::new(name, region_decode(base))
        .update(buf, Expr::state(buf).store(index, Expr::input("data")))
        .note(&format!("store one element into `{buf}`"))
}

/// Read map exposing every word of `buf` at `base + 4i`.
pub(crate) fn readback(buf: &str, base: u32) -> BTreeMap<u32, Expr> {
    (0..addr::REGION_WORDS)
        .map(|i| (base + 4 * i as u32, Expr::state(buf).select(Expr::bv(addr::INDEX_BITS, i as u64))))
        .collect()
}

/// An 8-bit register field `data[hi:lo]`.
pub(crate) fn field(hi: u32, lo: u32) -> Expr {
    Expr::input("data").extract(hi, lo)
}

pub(crate) fn regs(names: &[&str], width: u32) -> Vec<StateVar> {
    names.iter().map(|n| StateVar::new(n, Sort::bv(width))).collect()
}

pub(crate) fn reg(state: &Valuation, name: &str, macro_name: &str) -> Result<usize, IlaError> {
    state
        .get(name)
        .and_then(Value::as_bv)
        .map(|b| b.bits() as usize)
        .ok_or_else(|| IlaError::Macro { name: macro_name.into(), detail: format!("register `{name}` missing") })
}

pub(crate) fn mem<'s>(state: &'s Valuation, name: &str, macro_name: &str) -> Result<&'s MemValue, IlaError> {
    state
        .get(name)
        .and_then(Value::as_mem)
        .ok_or_else(|| IlaError::Macro { name: macro_name.into(), detail: format!("buffer `{name}` missing") })
}

/// First `len` words of `buf` decoded as raw values of `spec`.
pub(crate) fn load_raw(buf: &MemValue, len: usize, spec: FixedSpec) -> Vec<i64> {
    (0..len).map(|i| decode_word(buf.load(i as u64) as u32, spec)).collect()
}

/// A fresh output buffer holding `raw` encoded in `spec`.
pub(crate) fn store_raw(raw: &[i64], spec: FixedSpec) -> Value {
    let mut m = MemValue::new(addr::INDEX_BITS, 32);
    for (i, &r) in raw.iter().enumerate() {
        m.store(i as u64, super::encode_word(r, spec) as u64);
    }
    Value::Mem(m)
}
