//! Shipped programs and data: the six-program offload corpus, the
//! validation fragments, the wide-range convolution weights and the
//! synthetic classifier with its dataset.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::accel::AccelId;
use crate::cosim::{Dataset, InputDist, ValidationCase};
use crate::ir::{parse_program, ConvParams, Expr, Program, Shape, Tensor};

/// Root of the fixture tree in the source checkout.
pub const FIXTURES_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

#[derive(Debug, Clone, Copy)]
pub struct CorpusEntry {
    pub name: &'static str,
    /// File name under `fixtures/corpus`.
    pub file: &'static str,
    pub source: &'static str,
    /// Accelerators the program is evaluated against.
    pub accels: &'static [AccelId],
}

impl CorpusEntry {
    pub fn program(&self) -> Program {
        parse_program(self.source).expect("shipped corpus parses").program
    }

    pub fn path(&self) -> String {
        format!("{FIXTURES_DIR}/corpus/{}", self.file)
    }
}

const FXLIN: &[AccelId] = &[AccelId::Fxlin];
const BOTH: &[AccelId] = &[AccelId::Fxlin, AccelId::Fxcnn];

macro_rules! entry {
    ($name:literal, $file:literal, $accels:expr) => {
        CorpusEntry { name: $name, file: $file, source: include_str!(concat!("../fixtures/corpus/", $file)), accels: $accels }
    };
}

pub fn corpus() -> Vec<CorpusEntry> {
    vec![
        entry!("P1", "p1_linear.prog", FXLIN),
        entry!("P2", "p2_reshaped_linear.prog", FXLIN),
        entry!("P3", "p3_relu_linear.prog", FXLIN),
        entry!("P4", "p4_conv.prog", FXLIN),
        entry!("P5", "p5_mixed.prog", BOTH),
        entry!("P6", "p6_host_only.prog", BOTH),
    ]
}

pub fn corpus_entry(name: &str) -> Option<CorpusEntry> {
    corpus().into_iter().find(|e| e.name.eq_ignore_ascii_case(name))
}

fn tensor(text: &str) -> Tensor {
    Tensor::parse_file(text).expect("shipped tensor parses")
}

/// Inputs of P1 whose values every shipped format represents exactly.
pub fn p1_inputs() -> BTreeMap<String, Tensor> {
    [
        ("a", include_str!("../fixtures/corpus/p1_inputs/a.tensor")),
        ("b", include_str!("../fixtures/corpus/p1_inputs/b.tensor")),
        ("c", include_str!("../fixtures/corpus/p1_inputs/c.tensor")),
    ]
    .into_iter()
    .map(|(n, t)| (n.to_string(), tensor(t)))
    .collect()
}

/// Conv weights `[8, 4, 3, 3]` with magnitudes up to 3.5.
pub fn adversarial_conv_weights() -> Tensor {
    tensor(include_str!("../fixtures/adversarial_conv_w.tensor"))
}

/// Seeded uniform `[-1, 1]` values for every declared input.
pub fn random_inputs(program: &Program, seed: u64) -> BTreeMap<String, Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    program.inputs.iter().map(|(n, s)| (n.clone(), InputDist::Uniform { lo: -1.0, hi: 1.0 }.sample(s, &mut rng))).collect()
}

fn linear_lhs() -> Expr {
    Expr::bias_add(Expr::dense(Expr::var("a"), Expr::var("b")), Expr::var("c"))
}

/// The fragment and operand shapes used to validate a mapping rule, with
/// uniform `[-1, 1]` inputs.
pub fn validation_case(rule: &str) -> Option<ValidationCase> {
    let uniform = InputDist::Uniform { lo: -1.0, hi: 1.0 };
    let lin_inputs = vec![("a".to_string(), Shape::of(&[4, 16])), ("b".to_string(), Shape::of(&[8, 16])), ("c".to_string(), Shape::of(&[8]))];
    let case = match rule {
        "M-LIN" => ValidationCase { lhs: linear_lhs(), inputs: lin_inputs, fixed: BTreeMap::new(), dist: uniform },
        "M-LINR" => ValidationCase { lhs: Expr::relu(linear_lhs()), inputs: lin_inputs, fixed: BTreeMap::new(), dist: uniform },
        "M-CONV" => ValidationCase {
            lhs: Expr::conv2d(Expr::var("d"), Expr::var("w"), ConvParams::new((1, 1), (1, 1))),
            inputs: vec![("d".to_string(), Shape::of(&[1, 4, 8, 8])), ("w".to_string(), Shape::of(&[8, 4, 3, 3]))],
            fixed: BTreeMap::new(),
            dist: uniform,
        },
        _ => return None,
    };
    Some(case)
}

/// The M-CONV case with the wide-range weights held fixed.
pub fn adversarial_conv_case() -> ValidationCase {
    let mut case = validation_case("M-CONV").expect("known rule");
    case.fixed.insert("w".to_string(), adversarial_conv_weights());
    case
}

/// The M-LIN case on small integers, exact under integer formats.
pub fn integer_linear_case() -> ValidationCase {
    ValidationCase { dist: InputDist::IntegerGrid { lo: -8, hi: 8 }, ..validation_case("M-LIN").expect("known rule") }
}

/// Mean pixel intensity of each class.
pub const CLASS_MEANS: [f64; 4] = [0.15, 0.38, 0.62, 0.85];
/// Half-width of the per-pixel uniform noise.
pub const PIXEL_NOISE: f64 = 0.1;
pub const DATASET_SIZE: usize = 200;

/// Hand-built four-class classifier: conv (4 constant 3x3 filters), relu,
/// flatten, linear. Scores grow linearly in the mean intensity with
/// class-dependent slopes; biases put the decision boundaries between the
/// class means. The filter weights (2 to 3.5) exceed the range of 8-bit
/// weights with 6 fractional bits.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub program: Program,
    /// Values for every input except `x`.
    pub weights: BTreeMap<String, Tensor>,
}

pub fn classifier() -> Classifier {
    let program = parse_program(include_str!("../fixtures/classifier/classifier.prog")).expect("shipped classifier parses").program;
    let weights = [
        ("wc", include_str!("../fixtures/classifier/wc.tensor")),
        ("wf", include_str!("../fixtures/classifier/wf.tensor")),
        ("bf", include_str!("../fixtures/classifier/bf.tensor")),
    ]
    .into_iter()
    .map(|(n, t)| (n.to_string(), tensor(t)))
    .collect();
    Classifier { program, weights }
}

/// `DATASET_SIZE` images `[1, 1, 6, 6]`, labels cycling through the
/// classes, pixels uniform within `PIXEL_NOISE` of the class mean.
pub fn classifier_dataset(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..DATASET_SIZE)
        .map(|i| {
            let label = i % CLASS_MEANS.len();
            let mu = CLASS_MEANS[label];
            (Tensor::from_fn(Shape::of(&[1, 1, 6, 6]), |_| mu + rng.gen_range(-PIXEL_NOISE..=PIXEL_NOISE)), label)
        })
        .collect();
    Dataset { input: "x".to_string(), samples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{eval_ref, infer_shapes};

    #[test]
    fn corpus_is_well_typed() {
        let c = corpus();
        assert_eq!(c.len(), 6);
        for e in &c {
            let p = e.program();
            infer_shapes(&p.body, &p.env()).unwrap();
            assert!(std::path::Path::new(&e.path()).exists());
        }
        assert_eq!(corpus_entry("p3").unwrap().file, "p3_relu_linear.prog");
    }

    #[test]
    fn fixtures_have_expected_shapes() {
        let w = adversarial_conv_weights();
        assert_eq!(w.shape(), &Shape::of(&[8, 4, 3, 3]));
        let (lo, hi) = w.min_max();
        assert!(lo >= -3.5 && hi <= 3.5 && (lo < -2.0 || hi > 2.0));
        assert_eq!(p1_inputs()["b"].data(), &[1.0, -0.5, 0.5, 1.0]);
        for rule in ["M-LIN", "M-LINR", "M-CONV"] {
            let case = validation_case(rule).unwrap();
            infer_shapes(&case.lhs, &case.shape_env()).unwrap();
        }
    }

    #[test]
    fn classifier_separates_the_dataset() {
        let c = classifier();
        let data = classifier_dataset(0);
        let mut env = c.weights.clone();
        let mut correct = 0;
        for (x, label) in &data.samples {
            env.insert("x".into(), x.clone());
            correct += usize::from(eval_ref(&c.program.body, &env).unwrap().argmax() == *label);
        }
        assert_eq!(correct, DATASET_SIZE);
    }
}
