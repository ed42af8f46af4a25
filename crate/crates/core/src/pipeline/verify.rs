//! Finite-difference checks of every layer kind and of the full networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::align::{encode_alignment, CANONICAL_HEIGHT, SYMBOL_WIDTH};
use crate::error::Result;
use crate::lexicon::SymbolLexicon;
use crate::models::{build_length_cnn, build_symbol_cnn, build_vocab_cnn, SymbolNet, SymbolProblem};
use crate::nn::gradcheck::NetworkProblem;
use crate::nn::{run_grad_check, Coverage, GradCheckReport, LayerSpec, Mode, Network, NetworkSpec, Objective};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct NamedReport {
    pub name: String,
    pub report: GradCheckReport,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("non-empty shape")
}

/// One tiny network per layer kind, every coordinate checked.
pub fn layer_checks(tolerance: f64, seed: u64) -> Result<Vec<NamedReport>> {
    let cases: Vec<(&str, Vec<LayerSpec>, Vec<usize>)> = vec![
        ("conv3x3", vec![LayerSpec::conv3(3)], vec![2, 5, 6]),
        (
            "conv_strided",
            vec![LayerSpec::Conv { depth: 2, kernel: [2, 3], stride: [1, 2], padding: [0, 1] }],
            vec![2, 4, 7],
        ),
        ("batchnorm", vec![LayerSpec::BatchNorm], vec![3, 4, 5]),
        ("relu", vec![LayerSpec::ReLU], vec![2, 3, 4]),
        ("maxpool", vec![LayerSpec::MaxPool], vec![2, 4, 6]),
        ("maxout", vec![LayerSpec::MaxOut { pieces: 2 }], vec![4, 3, 3]),
        ("fully_connected", vec![LayerSpec::FullyConnected { outputs: 4 }], vec![2, 3, 3]),
        ("softmax", vec![LayerSpec::FullyConnected { outputs: 5 }, LayerSpec::Softmax], vec![3]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, layers, shape) in cases {
        let spec = NetworkSpec::new(name, layers, shape.clone())?;
        let net = Network::<f64>::init(spec, rng.random());
        let input: Vec<Tensor<f64>> = (0..3).map(|_| random(&shape, &mut rng)).collect();
        let out_shape = net.spec.output_shape.clone();
        // a projection keeps the explicit softmax backward in the loop
        let weights = (0..3).map(|_| random(&out_shape, &mut rng)).collect();
        let mut problem = NetworkProblem { net, input, objective: Objective::Projection(weights), mode: Mode::Train };
        out.push(NamedReport { name: name.into(), report: run_grad_check(&mut problem, tolerance, Coverage::All)? });
    }
    Ok(out)
}

/// The vocabulary, length and symbol networks at `width_mult`, each on a
/// batch of two random images, `samples` coordinates per tensor.
pub fn network_checks(width_mult: f64, samples: usize, tolerance: f64, seed: u64) -> Result<Vec<NamedReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coverage = |rng: &mut ChaCha8Rng| Coverage::Sampled { count: samples, seed: rng.random() };
    let fixed = [1, CANONICAL_HEIGHT, SYMBOL_WIDTH];
    let mut out = Vec::new();
    for (name, spec, classes) in [
        ("vocab_cnn", build_vocab_cnn(40, width_mult)?, 40),
        ("length_cnn", build_length_cnn(6, width_mult)?, 6),
    ] {
        let net = Network::<f64>::init(spec, rng.random());
        let input = vec![random(&fixed, &mut rng), random(&fixed, &mut rng)];
        let targets = vec![vec![rng.random_range(0..classes)], vec![rng.random_range(0..classes)]];
        let mut problem = NetworkProblem { net, input, objective: Objective::CrossEntropy(targets), mode: Mode::Train };
        let c = coverage(&mut rng);
        out.push(NamedReport { name: name.into(), report: run_grad_check(&mut problem, tolerance, c)? });
    }
    let lexicon = SymbolLexicon::new("acdehilnorst".chars())?;
    let net = SymbolNet::<f64>::init(build_symbol_cnn(&lexicon, width_mult)?, rng.random());
    let labels = ["to", "a"];
    let blocks = labels
        .iter()
        .map(|l| random(&[1, CANONICAL_HEIGHT, SYMBOL_WIDTH * l.len()], &mut rng))
        .collect();
    let contexts = vec![random(&fixed, &mut rng), random(&fixed, &mut rng)];
    let targets = labels
        .iter()
        .map(|l| encode_alignment(l, &lexicon).map(|t| t.classes().to_vec()))
        .collect::<Result<_>>()?;
    let mut problem = SymbolProblem { net, blocks, contexts, targets, mode: Mode::Train };
    let c = coverage(&mut rng);
    out.push(NamedReport { name: "symbol_cnn".into(), report: run_grad_check(&mut problem, tolerance, c)? });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_passes() {
        for r in layer_checks(1e-4, 1).unwrap() {
            assert!(r.report.passed(), "{}: {:?}", r.name, r.report.failures());
        }
    }
}
