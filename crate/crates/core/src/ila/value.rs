use std::collections::BTreeMap;
use std::fmt;

/// Sort of an ILA expression or state variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sort {
    Bool,
    BitVec(u32),
    Mem { addr_width: u32, data_width: u32 },
}

pub const MAX_BV_WIDTH: u32 = 64;

impl Sort {
    pub fn bv(width: u32) -> Sort {
        Sort::BitVec(width)
    }

    pub fn mem(addr_width: u32, data_width: u32) -> Sort {
        Sort::Mem { addr_width, data_width }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Sort::Bool => true,
            Sort::BitVec(w) => (1..=MAX_BV_WIDTH).contains(&w),
            Sort::Mem { addr_width, data_width } => {
                (1..=MAX_BV_WIDTH).contains(&addr_width) && (1..=MAX_BV_WIDTH).contains(&data_width)
            }
        }
    }

    /// The all-zero value of this sort.
    pub fn zero(&self) -> Value {
        match *self {
            Sort::Bool => Value::Bool(false),
            Sort::BitVec(w) => Value::Bv(BvValue::new(w, 0)),
            Sort::Mem { addr_width, data_width } => Value::Mem(MemValue::new(addr_width, data_width)),
        }
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sort::Bool => write!(f, "bool"),
            Sort::BitVec(w) => write!(f, "bv{w}"),
            Sort::Mem { addr_width, data_width } => write!(f, "mem[{addr_width}->{data_width}]"),
        }
    }
}

pub(crate) fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// A bitvector; `bits` is always masked to `width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BvValue {
    width: u32,
    bits: u64,
}

impl BvValue {
    pub fn new(width: u32, bits: u64) -> Self {
        Self { width, bits: bits & mask(width) }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Two's-complement interpretation.
    pub fn signed(&self) -> i64 {
        if self.width >= 64 {
            return self.bits as i64;
        }
        let shift = 64 - self.width;
        ((self.bits << shift) as i64) >> shift
    }
}

/// A total memory with all-zero default. Only non-zero words are stored,
/// so two memories with the same contents compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemValue {
    addr_width: u32,
    data_width: u32,
    words: BTreeMap<u64, u64>,
}

impl MemValue {
    pub fn new(addr_width: u32, data_width: u32) -> Self {
        Self { addr_width, data_width, words: BTreeMap::new() }
    }

    pub fn sort(&self) -> Sort {
        Sort::mem(self.addr_width, self.data_width)
    }

    pub fn addr_width(&self) -> u32 {
        self.addr_width
    }

    pub fn data_width(&self) -> u32 {
        self.data_width
    }

    pub fn load(&self, addr: u64) -> u64 {
        self.words.get(&(addr & mask(self.addr_width))).copied().unwrap_or(0)
    }

    pub fn store(&mut self, addr: u64, data: u64) {
        let addr = addr & mask(self.addr_width);
        let data = data & mask(self.data_width);
        if data == 0 {
            self.words.remove(&addr);
        } else {
            self.words.insert(addr, data);
        }
    }

    /// Stored (non-zero) words in address order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.words.iter().map(|(&a, &d)| (a, d))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Bool(bool),
    Bv(BvValue),
    Mem(MemValue),
}

impl Value {
    pub fn bv(width: u32, bits: u64) -> Value {
        Value::Bv(BvValue::new(width, bits))
    }

    pub fn sort(&self) -> Sort {
        match self {
            Value::Bool(_) => Sort::Bool,
            Value::Bv(b) => Sort::BitVec(b.width),
            Value::Mem(m) => m.sort(),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_bv(&self) -> Option<BvValue> {
        match self {
            Value::Bv(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_mem(&self) -> Option<&MemValue> {
        match self {
            Value::Mem(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_mem_mut(&mut self) -> Option<&mut MemValue> {
        match self {
            Value::Mem(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Bv(b) => write!(f, "{}'h{:x}", b.width, b.bits),
            Value::Mem(m) => write!(f, "mem[{} words set]", m.words.len()),
        }
    }
}

/// Name → value binding for state variables or inputs.
pub type Valuation = BTreeMap<String, Value>;
