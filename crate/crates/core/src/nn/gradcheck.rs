//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{softmax_cross_entropy, Mode};
use super::network::Network;
use crate::error::Result;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-6;
/// Fallback step when [`FD_STEP`] carries a nonsmooth unit across its switch
/// point. Round-off of the difference is still about 1e-8 here.
pub const FD_STEP_FINE: f64 = 1e-7;
/// Denominator floor of the relative error; gradients smaller than this are
/// compared in absolute terms. Sits above the f64 round-off of the central
/// difference on full-size networks (about 1e-8).
pub const REL_FLOOR: f64 = 1e-3;

/// A scalar loss over a set of tensors with an analytic gradient for each.
pub trait GradCheckable {
    /// Loss and gradient of every checked tensor, in a fixed order.
    fn loss_and_grads(&self) -> Result<(f64, Vec<(String, Tensor<f64>)>)>;

    fn loss(&self) -> Result<f64>;

    /// Loss and a hash of the branch every nonsmooth unit takes, when the
    /// model can report it. Coordinates whose step changes the hash are
    /// skipped as kinks.
    fn loss_and_branches(&self) -> Result<(f64, Option<u64>)> {
        Ok((self.loss()?, None))
    }

    /// Adds `delta` to element `index` of checked tensor `tensor`.
    fn perturb(&mut self, tensor: usize, index: usize, delta: f64);
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    /// Coordinates skipped because the step window straddles a kink.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> Vec<&GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed).collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Which coordinates of each tensor to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// `count` coordinates per tensor drawn with the given seed.
    Sampled { count: usize, seed: u64 },
}

/// Compares analytic gradients with central differences of step [`FD_STEP`],
/// or [`FD_STEP_FINE`] where the larger step straddles a kink.
///
/// `scale` multiplies analytic gradients before comparison; it exists so
/// tests can inject a known fault.
pub fn run_grad_check(
    model: &mut impl GradCheckable,
    tolerance: f64,
    coverage: Coverage,
) -> Result<GradCheckReport> {
    run_grad_check_scaled(model, tolerance, coverage, &|_| 1.0)
}

pub fn run_grad_check_scaled(
    model: &mut impl GradCheckable,
    tolerance: f64,
    coverage: Coverage,
    scale: &dyn Fn(&str) -> f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grads()?;
    let (_, base) = model.loss_and_branches()?;
    let mut entries = Vec::with_capacity(grads.len());
    let mut rng = match coverage {
        Coverage::Sampled { seed, .. } => ChaCha8Rng::seed_from_u64(seed),
        Coverage::All => ChaCha8Rng::seed_from_u64(0),
    };
    for (ti, (name, grad)) in grads.iter().enumerate() {
        // sampled coverage replaces kink coordinates, up to four draws per slot
        let (want, draws) = match coverage {
            Coverage::All => (grad.len(), grad.len()),
            Coverage::Sampled { count, .. } => (count.min(grad.len()), 4 * count.min(grad.len())),
        };
        let factor = scale(name);
        let (mut checked, mut kinks, mut max_err) = (0, 0, 0.0f64);
        for d in 0..draws {
            if checked == want {
                break;
            }
            let i = match coverage {
                Coverage::All => d,
                Coverage::Sampled { .. } => rng.random_range(0..grad.len()),
            };
            let mut numeric = None;
            for h in [FD_STEP, FD_STEP_FINE] {
                model.perturb(ti, i, h);
                let (plus, hp) = model.loss_and_branches()?;
                model.perturb(ti, i, -2.0 * h);
                let (minus, hm) = model.loss_and_branches()?;
                model.perturb(ti, i, h);
                if hp == base && hm == base {
                    numeric = Some((plus - minus) / (2.0 * h));
                    break;
                }
            }
            let Some(numeric) = numeric else {
                kinks += 1;
                continue;
            };
            checked += 1;
            max_err = max_err.max(relative_error(grad.data()[i] * factor, numeric));
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            checked,
            kinks,
            max_rel_error: max_err,
            passed: max_err <= tolerance && (checked > 0 || want == 0),
        });
    }
    Ok(GradCheckReport { tolerance, entries })
}

/// Scalar objective applied to a network's output.
#[derive(Clone, Debug)]
pub enum Objective {
    /// Softmax cross-entropy on the logits (a trailing softmax layer is
    /// folded into the loss). One target class per output row, per sample.
    CrossEntropy(Vec<Vec<usize>>),
    /// `sum(weights * output)`, for networks without a classifier head.
    Projection(Vec<Tensor<f64>>),
}

/// A network, a batch, and an objective. Checks every parameter tensor and
/// the input batch.
pub struct NetworkProblem {
    pub net: Network<f64>,
    pub input: Vec<Tensor<f64>>,
    pub objective: Objective,
    pub mode: Mode,
}

impl NetworkProblem {
    fn upto(&self) -> usize {
        match self.objective {
            Objective::CrossEntropy(_) => self.net.spec.logit_layers(),
            Objective::Projection(_) => self.net.layers.len(),
        }
    }

    fn loss_of(&self, output: &[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>) {
        match &self.objective {
            Objective::CrossEntropy(targets) => {
                let mut total = 0.0;
                let mut grads = Vec::new();
                for (y, t) in output.iter().zip(targets) {
                    let classes = *y.shape().last().unwrap();
                    let (l, g) = softmax_cross_entropy(y.data(), classes, t);
                    total += l;
                    grads.push(Tensor::from_vec(y.shape(), g).unwrap());
                }
                (total, grads)
            }
            Objective::Projection(weights) => {
                let total = output
                    .iter()
                    .zip(weights)
                    .map(|(y, w)| y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>())
                    .sum();
                (total, weights.clone())
            }
        }
    }
}

impl GradCheckable for NetworkProblem {
    fn loss_and_grads(&self) -> Result<(f64, Vec<(String, Tensor<f64>)>)> {
        let trace = self.net.forward_trace(self.input.clone(), self.mode, self.upto())?;
        let (loss, upstream) = self.loss_of(trace.output());
        let (dx, grads) = self.net.backward(&trace, upstream, true)?;
        let mut named: Vec<(String, Tensor<f64>)> =
            self.net.param_names().into_iter().zip(grads.into_iter().flatten()).collect();
        for (i, g) in dx.unwrap().into_iter().enumerate() {
            named.push((format!("input.{i}"), g));
        }
        Ok((loss, named))
    }

    fn loss(&self) -> Result<f64> {
        Ok(self.loss_and_branches()?.0)
    }

    fn loss_and_branches(&self) -> Result<(f64, Option<u64>)> {
        let (out, h) = self.net.forward_branches(&self.input, self.mode, self.upto())?;
        Ok((self.loss_of(&out).0, Some(h)))
    }

    fn perturb(&mut self, tensor: usize, index: usize, delta: f64) {
        let mut k = tensor;
        for layer in &mut self.net.layers {
            if k < layer.params.len() {
                layer.params[k].data_mut()[index] += delta;
                return;
            }
            k -= layer.params.len();
        }
        self.input[k].data_mut()[index] += delta;
    }
}

/// Checks every coordinate of a small network.
pub fn grad_check(
    net: &Network<f64>,
    input: &[Tensor<f64>],
    objective: Objective,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut problem = NetworkProblem {
        net: net.clone(),
        input: input.to_vec(),
        objective,
        mode: Mode::Train,
    };
    run_grad_check(&mut problem, tolerance, Coverage::All)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::LayerSpec;
    use crate::nn::network::NetworkSpec;

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn toy_problem() -> NetworkProblem {
        let spec = NetworkSpec::new(
            "toy",
            vec![
                LayerSpec::conv3(4),
                LayerSpec::BatchNorm,
                LayerSpec::ReLU,
                LayerSpec::FullyConnected { outputs: 3 },
                LayerSpec::Softmax,
            ],
            vec![1, 8, 8],
        )
        .unwrap();
        NetworkProblem {
            net: Network::init(spec, 3),
            input: vec![random_input(&[1, 8, 8], 1), random_input(&[1, 8, 8], 2)],
            objective: Objective::CrossEntropy(vec![vec![0], vec![2]]),
            mode: Mode::Train,
        }
    }

    #[test]
    fn relu_network_is_exact_away_from_kink() {
        let spec = NetworkSpec::new("relu", vec![LayerSpec::ReLU], vec![1, 2, 3]).unwrap();
        let net = Network::<f64>::init(spec, 0);
        let x = Tensor::from_vec(&[1, 2, 3], vec![-0.5, 0.5, 1.0, -1.0, 2.0, 0.25]).unwrap();
        let w = random_input(&[1, 2, 3], 9);
        let report = grad_check(&net, &[x], Objective::Projection(vec![w]), 1e-4).unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-8, "{}", report.max_rel_error());
    }

    #[test]
    fn toy_conv_bn_fc_network_passes() {
        let mut problem = toy_problem();
        let report = run_grad_check(&mut problem, 1e-4, Coverage::All).unwrap();
        assert!(report.passed(), "{:?}", report.failures());
        assert_eq!(report.entries.len(), 6 + 2);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut problem = toy_problem();
        let report =
            run_grad_check_scaled(&mut problem, 1e-4, Coverage::All, &|n| if n == "toy.3.weight" { 2.0 } else { 1.0 })
                .unwrap();
        let failures: Vec<_> = report.failures().iter().map(|e| e.name.clone()).collect();
        assert_eq!(failures, vec!["toy.3.weight".to_string()]);
    }

    #[test]
    fn straddled_kink_is_skipped_not_compared() {
        // 5e-8 is within both steps of the ReLU kink at zero, 5e-7 only within the coarse one
        let spec = NetworkSpec::new("relu", vec![LayerSpec::ReLU], vec![1, 1, 3]).unwrap();
        let net = Network::<f64>::init(spec, 0);
        let x = Tensor::from_vec(&[1, 1, 3], vec![5e-8, 5e-7, 0.5]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let report = grad_check(&net, &[x], Objective::Projection(vec![w]), 1e-4).unwrap();
        let input = report.entries.iter().find(|e| e.name == "input.0").unwrap();
        assert_eq!((input.checked, input.kinks), (2, 1));
        assert!(report.passed());
    }
}
