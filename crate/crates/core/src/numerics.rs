//! Signed fixed-point arithmetic used by the synthetic accelerators.
//!
//! All conversions round half-to-even and saturate; nothing ever wraps.
//! Raw values are carried as `i64` so that every supported width (4..=32)
//! and every exact accumulation in [`fx_linear`] / [`fx_conv2d`] fits
//! without overflow.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumericsError {
    #[error("invalid fixed-point spec fx<{width},{frac_bits}>: {reason}")]
    InvalidSpec {
        width: u32,
        frac_bits: u32,
        reason: &'static str,
    },
    #[error("raw value {raw} is outside the range of {spec}")]
    OutOfRange { raw: i64, spec: FixedSpec },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cannot parse numerics `{0}`")]
    Parse(String),
}

/// A signed fixed-point format `fx<width,frac_bits>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FixedSpec {
    width: u32,
    frac_bits: u32,
}

impl FixedSpec {
    pub const MIN_WIDTH: u32 = 4;
    pub const MAX_WIDTH: u32 = 32;

    pub fn new(width: u32, frac_bits: u32) -> Result<Self, NumericsError> {
        if !(Self::MIN_WIDTH..=Self::MAX_WIDTH).contains(&width) {
            return Err(NumericsError::InvalidSpec {
                width,
                frac_bits,
                reason: "width must be in 4..=32",
            });
        }
        if frac_bits >= width {
            return Err(NumericsError::InvalidSpec {
                width,
                frac_bits,
                reason: "frac_bits must be below width",
            });
        }
        Ok(Self { width, frac_bits })
    }

    /// For constants known to be valid.
    pub(crate) const fn new_unchecked(width: u32, frac_bits: u32) -> Self {
        Self { width, frac_bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.width - 1))
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.width - 1)) - 1
    }

    pub fn resolution(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.min_raw() as f64 * self.resolution()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.resolution()
    }

    pub fn saturate(&self, raw: i128) -> i64 {
        raw.clamp(self.min_raw() as i128, self.max_raw() as i128) as i64
    }

    pub fn contains_raw(&self, raw: i64) -> bool {
        (self.min_raw()..=self.max_raw()).contains(&raw)
    }
}

impl fmt::Display for FixedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fx<{},{}>", self.width, self.frac_bits)
    }
}

impl FromStr for FixedSpec {
    type Err = NumericsError;

    /// Parses `fx<width,frac>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NumericsError::Parse(s.to_string());
        let inner = s
            .trim()
            .strip_prefix("fx<")
            .and_then(|r| r.strip_suffix('>'))
            .ok_or_else(bad)?;
        let (w, f) = inner.split_once(',').ok_or_else(bad)?;
        let width = w.trim().parse().map_err(|_| bad())?;
        let frac = f.trim().parse().map_err(|_| bad())?;
        FixedSpec::new(width, frac)
    }
}

/// Per-accelerator numeric formats: weights, activations (inputs, bias and
/// outputs) and the accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccelNumerics {
    pub weight: FixedSpec,
    pub act: FixedSpec,
    pub acc: FixedSpec,
}

impl AccelNumerics {
    pub fn new(weight: FixedSpec, act: FixedSpec, acc: FixedSpec) -> Result<Self, NumericsError> {
        if acc.width < act.width {
            return Err(NumericsError::InvalidSpec {
                width: acc.width,
                frac_bits: acc.frac_bits,
                reason: "accumulator must be at least as wide as activations",
            });
        }
        if acc.frac_bits < act.frac_bits {
            return Err(NumericsError::InvalidSpec {
                width: acc.width,
                frac_bits: acc.frac_bits,
                reason: "accumulator needs at least the activation fractional bits",
            });
        }
        Ok(Self { weight, act, acc })
    }

    /// Narrow 8-bit weights: the configuration that loses dynamic range.
    pub const fn v1() -> Self {
        Self {
            weight: FixedSpec::new_unchecked(8, 6),
            act: FixedSpec::new_unchecked(16, 8),
            acc: FixedSpec::new_unchecked(32, 14),
        }
    }

    /// 16-bit weights with re-placed binary points.
    pub const fn v2() -> Self {
        Self {
            weight: FixedSpec::new_unchecked(16, 8),
            act: FixedSpec::new_unchecked(16, 8),
            acc: FixedSpec::new_unchecked(32, 16),
        }
    }

    /// Pure integer arithmetic. Host and accelerator agree exactly on
    /// integer-valued inputs as long as nothing saturates.
    pub const fn exact_integer() -> Self {
        Self {
            weight: FixedSpec::new_unchecked(8, 0),
            act: FixedSpec::new_unchecked(16, 0),
            acc: FixedSpec::new_unchecked(32, 0),
        }
    }
}

impl fmt::Display for AccelNumerics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.weight, self.act, self.acc)
    }
}

impl FromStr for AccelNumerics {
    type Err = NumericsError;

    /// Accepts `v1`, `v2`, `exact`, or a `weight,act,acc` triple such as
    /// `fx<8,6>,fx<16,8>,fx<32,14>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "v1" => return Ok(Self::v1()),
            "v2" => return Ok(Self::v2()),
            "exact" => return Ok(Self::exact_integer()),
            _ => {}
        }
        let parts: Vec<&str> = s.split('>').map(str::trim).filter(|p| !p.is_empty()).collect();
        if parts.len() != 3 {
            return Err(NumericsError::Parse(s.to_string()));
        }
        let specs = parts
            .iter()
            .map(|p| format!("{}>", p.trim_start_matches(',').trim()).parse::<FixedSpec>())
            .collect::<Result<Vec<_>, _>>()?;
        AccelNumerics::new(specs[0], specs[1], specs[2])
    }
}

/// Round-half-to-even of `x * 2^frac_bits`, saturated to the range of `spec`.
pub fn quantize(x: f64, spec: FixedSpec) -> i64 {
    debug_assert!(x.is_finite(), "quantize of non-finite value");
    if x.is_nan() {
        return 0;
    }
    let scaled = (x * (spec.frac_bits as f64).exp2()).round_ties_even();
    if scaled >= spec.max_raw() as f64 {
        spec.max_raw()
    } else if scaled <= spec.min_raw() as f64 {
        spec.min_raw()
    } else {
        scaled as i64
    }
}

pub fn dequantize(raw: i64, spec: FixedSpec) -> Result<f64, NumericsError> {
    if !spec.contains_raw(raw) {
        return Err(NumericsError::OutOfRange { raw, spec });
    }
    Ok(raw as f64 * spec.resolution())
}

/// Integer shift from `from_frac` fractional bits to `to_frac`, rounding
/// half-to-even when bits are dropped. Exact when widening.
pub fn rescale(value: i128, from_frac: u32, to_frac: u32) -> i128 {
    if to_frac >= from_frac {
        return value << (to_frac - from_frac);
    }
    let shift = from_frac - to_frac;
    let floor = value >> shift;
    let rem = value - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Requantize an exact value held at `from_frac` into `spec`.
pub fn requantize(value: i128, from_frac: u32, spec: FixedSpec) -> i64 {
    spec.saturate(rescale(value, from_frac, spec.frac_bits))
}

/// The accumulator pipeline shared by every "start" macro: exact sum at
/// `frac`, requantized into the accumulator spec, then into activations.
fn finish(sum: i128, frac: u32, num: &AccelNumerics) -> i64 {
    let acc = requantize(sum, frac, num.acc);
    requantize(acc as i128, num.acc.frac_bits, num.act)
}

/// Raw row-major matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

impl RawMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }
}

/// Mixed-precision linear layer: `out[m,n] = sum_k a[m,k]*w[n,k] + b[n]`.
///
/// `a` and `b` are raw in `num.act`, `w` is raw in `num.weight`. The sum is
/// exact; bias is aligned to the product binary point before adding.
pub fn fx_linear(
    a: &RawMatrix,
    w: &RawMatrix,
    b: &[i64],
    num: &AccelNumerics,
) -> Result<RawMatrix, NumericsError> {
    if a.cols != w.cols || b.len() != w.rows {
        return Err(NumericsError::ShapeMismatch(format!(
            "a[{},{}] w[{},{}] b[{}]",
            a.rows,
            a.cols,
            w.rows,
            w.cols,
            b.len()
        )));
    }
    let prod_frac = num.act.frac_bits + num.weight.frac_bits;
    let mut out = Vec::with_capacity(a.rows * w.rows);
    for m in 0..a.rows {
        for n in 0..w.rows {
            let mut sum: i128 = 0;
            for k in 0..a.cols {
                sum += a.get(m, k) as i128 * w.get(n, k) as i128;
            }
            sum += rescale(b[n] as i128, num.act.frac_bits, prod_frac);
            out.push(finish(sum, prod_frac, num));
        }
    }
    RawMatrix::new(a.rows, w.rows, out)
}

/// Geometry of a 2D convolution in NCHW / OIHW layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeometry {
    /// Output spatial dims, or `None` if the window does not tile evenly.
    pub fn output_hw(&self) -> Option<(usize, usize)> {
        let (sh, sw) = self.stride;
        if sh == 0 || sw == 0 {
            return None;
        }
        let ph = self.h + 2 * self.pad.0;
        let pw = self.w + 2 * self.pad.1;
        if ph < self.kh || pw < self.kw {
            return None;
        }
        if (ph - self.kh) % sh != 0 || (pw - self.kw) % sw != 0 {
            return None;
        }
        Some(((ph - self.kh) / sh + 1, (pw - self.kw) / sw + 1))
    }

    pub fn input_len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn weight_len(&self) -> usize {
        self.o * self.c * self.kh * self.kw
    }

    pub fn output_len(&self) -> Option<usize> {
        self.output_hw().map(|(oh, ow)| self.n * self.o * oh * ow)
    }
}

/// Direct fixed-point convolution (cross-correlation, zero padding).
/// Input raw in `num.act`, weights raw in `num.weight`, output in `num.act`.
pub fn fx_conv2d(
    input: &[i64],
    weight: &[i64],
    geom: &ConvGeometry,
    num: &AccelNumerics,
) -> Result<Vec<i64>, NumericsError> {
    let (oh, ow) = geom
        .output_hw()
        .ok_or_else(|| NumericsError::ShapeMismatch(format!("bad conv geometry {geom:?}")))?;
    if input.len() != geom.input_len() || weight.len() != geom.weight_len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "conv input {} / weight {} words for {geom:?}",
            input.len(),
            weight.len()
        )));
    }
    let prod_frac = num.act.frac_bits + num.weight.frac_bits;
    let ConvGeometry { n, c, h, w, o, kh, kw, stride, pad } = *geom;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut sum: i128 = 0;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride.0 + i) as isize - pad.0 as isize;
                                let ix = (x * stride.1 + j) as isize - pad.1 as isize;
                                if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                    continue;
                                }
                                let xv = input[((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((oi * c + ci) * kh + i) * kw + j];
                                sum += xv as i128 * wv as i128;
                            }
                        }
                    }
                    out.push(finish(sum, prod_frac, num));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fx(w: u32, f: u32) -> FixedSpec {
        FixedSpec::new(w, f).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(1.75, fx(8, 6)), 112);
        assert_eq!(quantize(3.0, fx(8, 6)), 127);
        assert_eq!(quantize(-3.0, fx(8, 6)), -128);
        assert_eq!(quantize(0.0, fx(8, 6)), 0);
        assert_eq!(quantize(0.0, fx(32, 31)), 0);
    }

    #[test]
    fn quantize_ties_to_even() {
        // 0.5 / 2^-1 boundaries at frac 0
        assert_eq!(quantize(0.5, fx(8, 0)), 0);
        assert_eq!(quantize(1.5, fx(8, 0)), 2);
        assert_eq!(quantize(2.5, fx(8, 0)), 2);
        assert_eq!(quantize(-2.5, fx(8, 0)), -2);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(127, fx(8, 6)).unwrap(), 1.984375);
        assert_eq!(dequantize(0, fx(12, 3)).unwrap(), 0.0);
        let s = fx(16, 8);
        assert_eq!(dequantize(quantize(0.5, s), s).unwrap(), 0.5);
        assert!(matches!(dequantize(128, fx(8, 6)), Err(NumericsError::OutOfRange { .. })));
    }

    #[test]
    fn spec_validation_and_parsing() {
        assert!(FixedSpec::new(3, 0).is_err());
        assert!(FixedSpec::new(33, 0).is_err());
        assert!(FixedSpec::new(8, 8).is_err());
        assert_eq!("fx<8,6>".parse::<FixedSpec>().unwrap(), fx(8, 6));
        assert_eq!(fx(16, 8).to_string(), "fx<16,8>");
        assert!("fx8,6".parse::<FixedSpec>().is_err());
        assert_eq!("v1".parse::<AccelNumerics>().unwrap(), AccelNumerics::v1());
        let triple: AccelNumerics = "fx<8,6>,fx<16,8>,fx<32,14>".parse().unwrap();
        assert_eq!(triple, AccelNumerics::v1());
        assert_eq!(AccelNumerics::v2().to_string().parse::<AccelNumerics>().unwrap(), AccelNumerics::v2());
        assert!("fx<8,6>,fx<16,8>,fx<8,2>".parse::<AccelNumerics>().is_err());
    }

    #[test]
    fn rescale_rounds_half_even() {
        assert_eq!(rescale(3, 1, 0), 2); // 1.5 -> 2
        assert_eq!(rescale(5, 1, 0), 2); // 2.5 -> 2
        assert_eq!(rescale(-3, 1, 0), -2); // -1.5 -> -2
        assert_eq!(rescale(-5, 1, 0), -2); // -2.5 -> -2
        assert_eq!(rescale(7, 2, 0), 2); // 1.75 -> 2
        assert_eq!(rescale(3, 0, 4), 48);
    }

    #[test]
    fn fx_linear_example() {
        let num = AccelNumerics::new(fx(16, 8), fx(16, 8), fx(32, 16)).unwrap();
        let q = |x: f64| quantize(x, num.act);
        let a = RawMatrix::new(1, 2, vec![q(1.0), q(2.0)]).unwrap();
        let w = RawMatrix::new(2, 2, vec![q(1.0), 0, 0, q(1.0)]).unwrap();
        let out = fx_linear(&a, &w, &[q(0.5), q(-0.5)], &num).unwrap();
        let deq: Vec<f64> = out.data.iter().map(|&r| dequantize(r, num.act).unwrap()).collect();
        assert_eq!(deq, vec![1.5, 1.5]);
    }

    #[test]
    fn fx_linear_zero_and_identity() {
        let num = AccelNumerics::v2();
        let a = RawMatrix::new(2, 3, vec![1, -2, 300, 4, 5, -600]).unwrap();
        let zero_w = RawMatrix::new(4, 3, vec![0; 12]).unwrap();
        assert_eq!(fx_linear(&a, &zero_w, &[0; 4], &num).unwrap().data, vec![0; 8]);
        let one = quantize(1.0, num.weight);
        let eye = RawMatrix::new(3, 3, vec![one, 0, 0, 0, one, 0, 0, 0, one]).unwrap();
        assert_eq!(fx_linear(&a, &eye, &[0; 3], &num).unwrap(), a);
        assert!(fx_linear(&a, &eye, &[0; 2], &num).is_err());
    }

    #[test]
    fn fx_conv_all_ones() {
        let num = AccelNumerics::v2();
        let one_a = quantize(1.0, num.act);
        let one_w = quantize(1.0, num.weight);
        let geom = ConvGeometry { n: 1, c: 1, h: 4, w: 4, o: 1, kh: 3, kw: 3, stride: (1, 1), pad: (0, 0) };
        let out = fx_conv2d(&[one_a; 16], &[one_w; 9], &geom, &num).unwrap();
        assert_eq!(out, vec![quantize(9.0, num.act); 4]);
    }

    proptest! {
        #[test]
        fn round_trip_bound(width in 4u32..=32, frac_seed in 0u32..32, t in 0.0f64..1.0) {
            let frac = frac_seed % width;
            let s = fx(width, frac);
            let x = s.min_value() + t * (s.max_value() - s.min_value());
            let err = (dequantize(quantize(x, s), s).unwrap() - x).abs();
            prop_assert!(err <= (-(frac as f64) - 1.0).exp2());
        }

        #[test]
        fn saturation_monotone(x in -1e4f64..1e4, y in -1e4f64..1e4, width in 4u32..=16, frac_seed in 0u32..16) {
            let s = fx(width, frac_seed % width);
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(quantize(lo, s) <= quantize(hi, s));
        }

        #[test]
        fn wider_never_hurts(x in -300.0f64..300.0, w1 in 4u32..=31, extra in 1u32..=8, frac in 0u32..4) {
            let w2 = (w1 + extra).min(32);
            prop_assume!(w2 > w1);
            let (s1, s2) = (fx(w1, frac), fx(w2, frac));
            let e1 = (dequantize(quantize(x, s1), s1).unwrap() - x).abs();
            let e2 = (dequantize(quantize(x, s2), s2).unwrap() - x).abs();
            prop_assert!(e2 <= e1);
        }

        #[test]
        fn wide_linear_is_exact(
            a in proptest::collection::vec(-64i64..64, 6),
            w in proptest::collection::vec(-64i64..64, 9),
            b in proptest::collection::vec(-64i64..64, 3),
        ) {
            // integer weights keep every product on the activation grid
            let num = AccelNumerics::new(fx(16, 0), fx(24, 4), fx(32, 4)).unwrap();
            let am = RawMatrix::new(2, 3, a.clone()).unwrap();
            let wm = RawMatrix::new(3, 3, w.clone()).unwrap();
            let out = fx_linear(&am, &wm, &b, &num).unwrap();
            for m in 0..2 {
                for n in 0..3 {
                    let real: f64 = (0..3)
                        .map(|k| (a[m * 3 + k] as f64 / 16.0) * w[n * 3 + k] as f64)
                        .sum::<f64>() + b[n] as f64 / 16.0;
                    prop_assert_eq!(dequantize(out.get(m, n), num.act).unwrap(), real);
                }
            }
        }
    }
}
