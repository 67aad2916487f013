use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

/// Named parameters of a fully connected network. Layer `i` owns
/// `l{i}.weight` (`[input, output]`) and `l{i}.bias` (`[1, output]`),
/// stored in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    layers: Vec<LayerSpec>,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParameterSet {
    /// MLP with `sizes = [in, h1, ..., out]`, `hidden` activation between
    /// layers and `last` on the output. Uniform init in `±1/sqrt(fan_in)`.
    pub fn mlp(sizes: &[usize], hidden: Activation, last: Activation, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers: Vec<LayerSpec> = (0..n)
            .map(|i| LayerSpec {
                input: sizes[i],
                output: sizes[i + 1],
                activation: if i + 1 == n { last } else { hidden },
            })
            .collect();
        let mut tensors = Vec::with_capacity(2 * n);
        for l in &layers {
            let bound = 1.0 / (l.input as f64).sqrt();
            let mut sample = |len: usize| (0..len).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
            let w = sample(l.input * l.output);
            let b = sample(l.output);
            tensors.push(Tensor::new(l.input, l.output, w)?);
            tensors.push(Tensor::new(1, l.output, b)?);
        }
        Self::from_parts(layers, tensors)
    }

    pub fn from_parts(layers: Vec<LayerSpec>, tensors: Vec<Tensor>) -> Result<Self> {
        if layers.is_empty() || tensors.len() != 2 * layers.len() {
            return Err(Error::Config(format!(
                "{} layers need {} tensors, got {}",
                layers.len(),
                2 * layers.len(),
                tensors.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if i > 0 && layers[i - 1].output != l.input {
                return Err(Error::Config(format!("layer {i} input {} does not chain", l.input)));
            }
            if tensors[2 * i].shape() != [l.input, l.output] || tensors[2 * i + 1].shape() != [1, l.output] {
                return Err(Error::Config(format!("layer {i} tensors do not match {l:?}")));
            }
        }
        let names = (0..layers.len())
            .flat_map(|i| [format!("l{i}.weight"), format!("l{i}.bias")])
            .collect();
        Ok(Self { layers, names, tensors })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
    }

    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.layers == other.layers
    }

    /// Records the parameters on `tape`. With `trainable = false` they are
    /// constants: gradients still flow through them to the inputs.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        BoundParams { layers: self.layers.clone(), vars }
    }
}

/// A [`ParameterSet`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    layers: Vec<LayerSpec>,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn forward(&self, tape: &Tape, input: Var) -> Result<Var> {
        let [_, cols] = tape.shape(input);
        if cols != self.layers[0].input {
            return Err(Error::Config(format!(
                "network expects {} input columns, got {cols}",
                self.layers[0].input
            )));
        }
        let mut h = input;
        for (i, l) in self.layers.iter().enumerate() {
            h = tape.affine(h, self.vars[2 * i], self.vars[2 * i + 1]);
            h = match l.activation {
                Activation::Identity => h,
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
            };
        }
        Ok(h)
    }

    /// Gradients in parameter order.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// Plain evaluation; runs the same kernels as the tape path.
pub fn forward_mlp(params: &ParameterSet, input: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let x = tape.constant(input.clone());
    let y = bound.forward(&tape, x)?;
    Ok(tape.value(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loop_forward(p: &ParameterSet, x: &Tensor) -> Tensor {
        let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row_slice(r).to_vec()).collect();
        for (i, l) in p.layers().iter().enumerate() {
            let w = &p.tensors()[2 * i];
            let b = &p.tensors()[2 * i + 1];
            h = h
                .iter()
                .map(|row| {
                    (0..l.output)
                        .map(|o| {
                            let mut s = b.get(0, o);
                            for (k, v) in row.iter().enumerate() {
                                s += v * w.get(k, o);
                            }
                            match l.activation {
                                Activation::Identity => s,
                                Activation::Relu => s.max(0.0),
                                Activation::Tanh => s.tanh(),
                            }
                        })
                        .collect()
                })
                .collect();
        }
        Tensor::from_rows(&h).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParameterSet::mlp(&[3, 5, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let y = forward_mlp(&p, &Tensor::row(&[1.0, -2.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_is_identity() {
        let layers = vec![LayerSpec { input: 3, output: 3, activation: Activation::Identity }];
        let p = ParameterSet::from_parts(layers, vec![Tensor::identity(3), Tensor::zeros(1, 3)]).unwrap();
        let x = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.0, 0.5]).unwrap();
        assert_eq!(forward_mlp(&p, &x).unwrap(), x);
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = ParameterSet::mlp(&[4, 16, 3], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let x = Tensor::new(5, 4, (0..20).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let a = forward_mlp(&p, &x).unwrap();
        let b = loop_forward(&p, &x);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn wrong_input_width_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ParameterSet::mlp(&[3, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        assert!(matches!(forward_mlp(&p, &Tensor::row(&[1.0, 2.0])), Err(Error::Config(_))));
    }

    #[test]
    fn mlp_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ParameterSet::mlp(&[3, 8, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::new(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let loss = |p: &ParameterSet| -> (f64, Vec<Tensor>) {
            let tape = Tape::new();
            let b = p.bind(&tape, true);
            let xv = tape.constant(x.clone());
            let y = b.forward(&tape, xv).unwrap();
            let l = tape.mean(tape.square(y));
            let g = tape.backward(l).unwrap();
            (tape.value(l).item(), b.grads(&g))
        };
        let (_, grads) = loss(&p);
        let h = 1e-5;
        for (ti, g) in grads.iter().enumerate() {
            for k in 0..g.len() {
                let mut plus = p.clone();
                plus.tensors_mut()[ti].data_mut()[k] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[ti].data_mut()[k] -= h;
                let fd = (loss(&plus).0 - loss(&minus).0) / (2.0 * h);
                let an = g.data()[k];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4 || (fd - an).abs() < 1e-9, "tensor {ti}[{k}]: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn frozen_parameters_pass_input_gradient_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ParameterSet::mlp(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let x = tape.leaf(Tensor::row(&[0.3, -0.2]));
        let y = b.forward(&tape, x).unwrap();
        let g = tape.backward(tape.sum(y)).unwrap();
        assert!(b.vars().iter().all(|&v| !g.is_reached(v)));
        assert!(g.is_reached(x));
    }
}
