//! Sequential networks: a validated layer list plus its parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{backward_layer, forward_layer, hash_branches, update_running_stats, LayerParams, LayerSpec, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// An ordered layer list with a declared per-sample input and output shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    /// `[C, H, W]` per sample.
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// When set, the input width may be any positive multiple of this value
    /// (fully convolutional networks); otherwise the input shape is fixed.
    #[serde(default)]
    pub width_multiple: Option<usize>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>, input_shape: Vec<usize>) -> Result<Self> {
        for layer in &layers {
            layer.validate()?;
        }
        let mut spec = NetworkSpec {
            name: name.into(),
            layers,
            input_shape,
            output_shape: Vec::new(),
            width_multiple: None,
        };
        spec.output_shape = spec.shapes_for(&spec.input_shape.clone())?.pop().unwrap();
        Ok(spec)
    }

    pub fn fully_convolutional(mut self, width_multiple: usize) -> Self {
        self.width_multiple = Some(width_multiple);
        self
    }

    /// Shapes before the first layer and after every layer.
    pub fn shapes_for(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        self.check_input(input)?;
        let mut shapes = vec![input.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.output_shape(i, shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape_for(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(self.shapes_for(input)?.pop().unwrap())
    }

    fn check_input(&self, input: &[usize]) -> Result<()> {
        let ok = match self.width_multiple {
            None => input == self.input_shape.as_slice(),
            Some(m) => {
                input.len() == 3
                    && input[..2] == self.input_shape[..2]
                    && input[2] > 0
                    && input[2] % m == 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::LayerShape {
                index: 0,
                kind: "input",
                expected: self.input_shape.clone(),
                actual: input.to_vec(),
            })
        }
    }

    /// SHA-256 over the canonical JSON form of the spec.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("network spec serializes");
        Sha256::digest(&json).into()
    }

    pub fn param_count(&self) -> usize {
        let shapes = self.shapes_for(&self.input_shape).expect("validated spec");
        self.layers
            .iter()
            .zip(&shapes)
            .flat_map(|(l, s)| l.param_shapes(s))
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Number of leading layers that produce logits (drops a trailing softmax).
    pub fn logit_layers(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Softmax) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }
}

/// Per-layer gradients aligned with [`Network::layers`].
pub type Gradients<T> = Vec<Vec<Tensor<T>>>;

/// Saved layer inputs from a forward pass, consumed by backward.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// `inputs[i]` is the batch fed to layer `i`; the final entry is the output.
    pub activations: Vec<Vec<Tensor<T>>>,
    pub mode: Mode,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[Tensor<T>] {
        self.activations.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> Network<T> {
    /// Centered uniform weights with half-width `1/sqrt(fan_in)`, zero biases,
    /// unit batch-norm scale.
    pub fn init(spec: NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = spec.shapes_for(&spec.input_shape).expect("validated spec");
        let layers = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, input)| {
                let params = layer
                    .param_shapes(input)
                    .into_iter()
                    .map(|(name, shape)| match name {
                        "weight" => {
                            let fan_in: usize = shape[1..].iter().product();
                            let bound = 1.0 / (fan_in as f64).sqrt();
                            let n = shape.iter().product();
                            let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
                            Tensor::from_vec(&shape, data).unwrap()
                        }
                        "gamma" => Tensor::filled(&shape, T::one()),
                        _ => Tensor::zeros(&shape),
                    })
                    .collect();
                let buffers = layer
                    .buffer_shapes(input)
                    .into_iter()
                    .map(|(name, shape)| match name {
                        "running_var" => Tensor::filled(&shape, T::one()),
                        _ => Tensor::zeros(&shape),
                    })
                    .collect();
                LayerParams { params, buffers }
            })
            .collect();
        Network { spec, layers }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layers: self.layers.iter().map(LayerParams::cast).collect(),
        }
    }

    fn check_batch(&self, input: &[Tensor<T>]) -> Result<()> {
        if input.is_empty() {
            return Err(Error::Shape(format!("{}: empty batch", self.spec.name)));
        }
        for x in input {
            self.spec.check_input(x.shape())?;
        }
        Ok(())
    }

    /// Runs every layer, including a trailing softmax.
    pub fn forward(&self, input: &[Tensor<T>], mode: Mode) -> Result<Vec<Tensor<T>>> {
        self.forward_range(input, mode, self.layers.len())
    }

    /// Runs the first `upto` layers.
    pub fn forward_range(&self, input: &[Tensor<T>], mode: Mode, upto: usize) -> Result<Vec<Tensor<T>>> {
        self.check_batch(input)?;
        let mut x = input.to_vec();
        for (i, (layer, params)) in self.spec.layers.iter().zip(&self.layers).take(upto).enumerate() {
            x = forward_layer(i, layer, params, &x, mode)?;
        }
        Ok(x)
    }

    /// Output of the first `upto` layers and a hash of the branch taken by
    /// every nonsmooth unit on the way. Equal hashes mean the same smooth piece.
    pub fn forward_branches(&self, input: &[Tensor<T>], mode: Mode, upto: usize) -> Result<(Vec<Tensor<T>>, u64)> {
        self.check_batch(input)?;
        let mut h = std::hash::DefaultHasher::new();
        let mut x = input.to_vec();
        for (i, (layer, params)) in self.spec.layers.iter().zip(&self.layers).take(upto).enumerate() {
            hash_branches(i, layer, &x, &mut h)?;
            x = forward_layer(i, layer, params, &x, mode)?;
        }
        Ok((x, std::hash::Hasher::finish(&h)))
    }

    /// Runs the first `upto` layers keeping every intermediate batch.
    pub fn forward_trace(&self, input: Vec<Tensor<T>>, mode: Mode, upto: usize) -> Result<Trace<T>> {
        self.check_batch(&input)?;
        let mut activations = vec![input];
        for (i, (layer, params)) in self.spec.layers.iter().zip(&self.layers).take(upto).enumerate() {
            let next = forward_layer(i, layer, params, activations.last().unwrap(), mode)?;
            activations.push(next);
        }
        Ok(Trace { activations, mode })
    }

    /// Backpropagates `upstream` (gradient of the trace output) through the
    /// traced layers. Returns the input gradient when `want_input` is set.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        upstream: Vec<Tensor<T>>,
        want_input: bool,
    ) -> Result<(Option<Vec<Tensor<T>>>, Gradients<T>)> {
        let depth = trace.activations.len() - 1;
        let mut grads: Gradients<T> = vec![Vec::new(); self.layers.len()];
        let mut g = upstream;
        for i in (0..depth).rev() {
            let need = i > 0 || want_input;
            let out = backward_layer(
                i,
                &self.spec.layers[i],
                &self.layers[i],
                &trace.activations[i],
                &g,
                trace.mode,
                need,
            )?;
            grads[i] = out.params;
            g = out.input.unwrap_or_default();
        }
        // layers past the trace still get zero gradients so optimizers see aligned lists
        for (grad, params) in grads.iter_mut().zip(&self.layers) {
            if grad.is_empty() {
                *grad = params.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            }
        }
        Ok((want_input.then_some(g), grads))
    }

    /// Folds the traced batch statistics into every batch-norm layer.
    pub fn update_running_stats(&mut self, trace: &Trace<T>) {
        for (i, layer) in self.spec.layers.iter().enumerate() {
            if matches!(layer, LayerSpec::BatchNorm) && i + 1 < trace.activations.len() {
                update_running_stats(&mut self.layers[i], &trace.activations[i]);
            }
        }
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        self.layers
            .iter()
            .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect()
    }

    /// Parameter and buffer names in a fixed order: `{net}.{layer}.{kind}`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let shapes = self.spec.shapes_for(&self.spec.input_shape).expect("validated spec");
        let mut out = Vec::new();
        for (i, (layer, params)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            let names = layer.param_shapes(&shapes[i]).into_iter().map(|(n, _)| n);
            for (name, t) in names.zip(&params.params) {
                out.push((format!("{}.{i}.{name}", self.spec.name), t));
            }
            let names = layer.buffer_shapes(&shapes[i]).into_iter().map(|(n, _)| n);
            for (name, t) in names.zip(&params.buffers) {
                out.push((format!("{}.{i}.{name}", self.spec.name), t));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let shapes = self.spec.shapes_for(&self.spec.input_shape).expect("validated spec");
        let mut out = Vec::new();
        for (i, (layer, params)) in self.spec.layers.iter().zip(self.layers.iter_mut()).enumerate() {
            let pnames: Vec<_> = layer.param_shapes(&shapes[i]).into_iter().map(|(n, _)| n).collect();
            let bnames: Vec<_> = layer.buffer_shapes(&shapes[i]).into_iter().map(|(n, _)| n).collect();
            let LayerParams { params, buffers } = params;
            for (name, t) in pnames.into_iter().zip(params.iter_mut()) {
                out.push((format!("{}.{i}.{name}", self.spec.name), t));
            }
            for (name, t) in bnames.into_iter().zip(buffers.iter_mut()) {
                out.push((format!("{}.{i}.{name}", self.spec.name), t));
            }
        }
        out
    }

    /// Names of trainable tensors in [`Gradients`] order.
    pub fn param_names(&self) -> Vec<String> {
        let shapes = self.spec.shapes_for(&self.spec.input_shape).expect("validated spec");
        let mut out = Vec::new();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            for (name, _) in layer.param_shapes(&shapes[i]) {
                out.push(format!("{}.{i}.{name}", self.spec.name));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NetworkSpec {
        NetworkSpec::new(
            "toy",
            vec![
                LayerSpec::conv3(4),
                LayerSpec::BatchNorm,
                LayerSpec::ReLU,
                LayerSpec::MaxPool,
                LayerSpec::FullyConnected { outputs: 3 },
                LayerSpec::Softmax,
            ],
            vec![1, 8, 8],
        )
        .unwrap()
    }

    #[test]
    fn shapes_chain_to_declared_output() {
        let spec = toy();
        assert_eq!(spec.output_shape, vec![3]);
        let shapes = spec.shapes_for(&[1, 8, 8]).unwrap();
        assert_eq!(shapes[4], vec![4, 4, 4]);
        assert!(spec.shapes_for(&[1, 8, 9]).is_err());
    }

    #[test]
    fn fully_convolutional_width() {
        let spec = NetworkSpec::new("fcn", vec![LayerSpec::conv3(2), LayerSpec::MaxPool], vec![1, 4, 8])
            .unwrap()
            .fully_convolutional(8);
        assert_eq!(spec.output_shape_for(&[1, 4, 24]).unwrap(), vec![2, 2, 12]);
        assert!(spec.output_shape_for(&[1, 4, 12]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::<f32>::init(toy(), 5);
        let b = Network::<f32>::init(toy(), 5);
        let c = Network::<f32>::init(toy(), 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.param_names().len(), 6);
        assert_eq!(a.named_tensors().len(), 8);
    }

    #[test]
    fn forward_backward_are_deterministic() {
        let net = Network::<f64>::init(toy(), 1);
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let batch = vec![Tensor::from_vec(&[1, 8, 8], x).unwrap(); 2];
        let run = || {
            let trace = net.forward_trace(batch.clone(), Mode::Train, 5).unwrap();
            let up: Vec<_> = trace.output().iter().map(|t| Tensor::filled(t.shape(), 0.1)).collect();
            net.backward(&trace, up, true).unwrap()
        };
        let (a_in, a_g) = run();
        let (b_in, b_g) = run();
        assert_eq!(a_in, b_in);
        assert_eq!(a_g, b_g);
    }
}
