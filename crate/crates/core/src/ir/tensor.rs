use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use super::IrError;

/// Ordered list of positive dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Shape(Vec<usize>);

const MAX_ELEMENTS: usize = 1 << 31;

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self, IrError> {
        if dims.contains(&0) {
            return Err(IrError::BadTensor(format!("zero dimension in {dims:?}")));
        }
        let mut n: usize = 1;
        for &d in &dims {
            n = n
                .checked_mul(d)
                .filter(|&n| n < MAX_ELEMENTS)
                .ok_or_else(|| IrError::BadTensor(format!("shape {dims:?} too large")))?;
        }
        Ok(Shape(dims))
    }

    /// Panics on invalid dims; for literals in code and tests.
    pub fn of(dims: &[usize]) -> Self {
        Self::new(dims.to_vec()).expect("valid shape")
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(shape")?;
        for d in &self.0 {
            write!(f, " {d}")?;
        }
        write!(f, ")")
    }
}

/// Dense row-major tensor of `f64`.
///
/// Equality, hashing and ordering compare the bit patterns of the values,
/// so literals can live in hash-consed e-graph nodes.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, IrError> {
        if data.len() != shape.numel() {
            return Err(IrError::BadTensor(format!("{} values for {shape}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..shape.numel()).map(&mut f).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor, IrError> {
        if shape.numel() != self.shape.numel() {
            return Err(IrError::BadTensor(format!("cannot reshape {} to {shape}", self.shape)));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    }

    /// Index of the largest element (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Parse the tensor file format: a `shape:` header line followed by
    /// whitespace-separated row-major values. `#` starts a comment.
    pub fn parse_file(text: &str) -> Result<Tensor, IrError> {
        let mut lines = text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| IrError::BadTensor("empty tensor file".into()))?;
        let dims = header
            .strip_prefix("shape:")
            .ok_or_else(|| IrError::BadTensor(format!("expected `shape:` header, found `{header}`")))?;
        let dims = dims
            .split_whitespace()
            .map(|d| d.parse::<usize>().map_err(|_| IrError::BadTensor(format!("bad dimension `{d}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let shape = Shape::new(dims)?;
        let mut data = Vec::with_capacity(shape.numel());
        for line in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| IrError::BadTensor(format!("bad value `{tok}`")))?;
                if !v.is_finite() {
                    return Err(IrError::BadTensor(format!("non-finite value `{tok}`")));
                }
                data.push(v);
            }
        }
        Tensor::new(shape, data)
    }

    /// Render in the tensor file format, one innermost row per line.
    pub fn to_file_string(&self) -> String {
        let mut out = String::from("shape:");
        for d in self.shape.dims() {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
        let row = self.shape.last().unwrap_or(1).max(1);
        for chunk in self.data.chunks(row) {
            let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for Tensor {}

impl Hash for Tensor {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.shape.hash(state);
        for v in &self.data {
            v.to_bits().hash(state);
        }
    }
}

impl PartialOrd for Tensor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Tensor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.shape.cmp(&other.shape).then_with(|| {
            for (a, b) in self.data.iter().zip(&other.data) {
                match a.total_cmp(b) {
                    Ordering::Equal => {}
                    o => return o,
                }
            }
            self.data.len().cmp(&other.data.len())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let t = Tensor::new(Shape::of(&[2, 3]), vec![1.0, -2.5, 0.125, 3.0, 0.1, -0.0]).unwrap();
        let back = Tensor::parse_file(&t.to_file_string()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn file_errors() {
        assert!(Tensor::parse_file("").is_err());
        assert!(Tensor::parse_file("shape: 2\n1").is_err());
        assert!(Tensor::parse_file("dims: 2\n1 2").is_err());
        assert!(Tensor::parse_file("shape: 2\n1 x").is_err());
        let t = Tensor::parse_file("# weights\nshape: 2  \n 1 2 # trailing\n").unwrap();
        assert_eq!(t.data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_validation() {
        assert!(Shape::new(vec![2, 0]).is_err());
        assert!(Shape::new(vec![1 << 16, 1 << 16]).is_err());
        assert_eq!(Shape::of(&[]).numel(), 1);
    }

    #[test]
    fn bitwise_identity() {
        let a = Tensor::new(Shape::of(&[1]), vec![0.0]).unwrap();
        let b = Tensor::new(Shape::of(&[1]), vec![-0.0]).unwrap();
        assert_ne!(a, b);
    }
}
