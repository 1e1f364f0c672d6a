//! Multilayer perceptrons over the tape.

use crate::rng::{gaussian, SeededRng};
use crate::tensor::{self, Scalar, Tape, Tensor, Var};

/// Negative slope of every leaky ReLU in the model zoo.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Fully connected layer `x · weight + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Scalar = f32> {
    /// `[in, out]`
    pub weight: Tensor<T>,
    /// `[1, out]`
    pub bias: Tensor<T>,
}

impl Linear<f32> {
    /// Kaiming-normal weights for a leaky-ReLU network, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt() as f32;
        let std = gain / (fan_in as f32).sqrt();
        let data = (0..fan_in * fan_out).map(|_| gaussian(rng) * std).collect();
        Self {
            weight: Tensor::new([fan_in, fan_out], data).unwrap(),
            bias: Tensor::zeros([1, fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros([fan_in, fan_out]),
            bias: Tensor::zeros([1, fan_out]),
        }
    }
}

impl<T: Scalar> Linear<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Activation applied after the last layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputActivation {
    Identity,
    LeakyRelu,
    /// `scale * tanh(h)`
    Tanh { scale: f32 },
}

/// Linear layers with leaky ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Scalar = f32> {
    pub layers: Vec<Linear<T>>,
    pub output: OutputActivation,
}

impl Mlp<f32> {
    /// `widths = [in, h1, ..., out]`. With `zero_last` the final layer starts
    /// at zero so the network initially outputs `output(0)`.
    pub fn init(
        widths: &[usize],
        output: OutputActivation,
        zero_last: bool,
        rng: &mut SeededRng,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                if zero_last && i == n - 1 {
                    Linear::zeros(widths[i], widths[i + 1])
                } else {
                    Linear::init(widths[i], widths[i + 1], rng)
                }
            })
            .collect();
        Self { layers, output }
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Parameters in `weight, bias` order per layer.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// `(prefix.i.weight, prefix.i.bias)` names matching [`Mlp::params`].
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            output: self.output,
        }
    }

    /// Record the parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundMlp {
        let params = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        BoundMlp {
            params,
            output: self.output,
        }
    }

    /// Forward pass on a private tape.
    pub fn eval(&self, x: &Tensor<T>) -> tensor::Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = bound.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    params: Vec<(Var, Var)>,
    output: OutputActivation,
}

impl BoundMlp {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> tensor::Result<Var> {
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        let last = self.params.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.params.iter().enumerate() {
            h = tape.affine(h, w, b)?;
            if i < last {
                h = tape.leaky_relu(h, slope)?;
            }
        }
        match self.output {
            OutputActivation::Identity => Ok(h),
            OutputActivation::LeakyRelu => tape.leaky_relu(h, slope),
            OutputActivation::Tanh { scale } => {
                let t = tape.tanh(h)?;
                if scale == 1.0 {
                    Ok(t)
                } else {
                    tape.scale(t, T::from_f64_lossy(scale as f64))
                }
            }
        }
    }

    /// Parameter handles in `weight, bias` order per layer.
    pub fn vars(&self) -> Vec<Var> {
        self.params.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Handle of the first layer's weight.
    pub fn first_weight(&self) -> Var {
        self.params[0].0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::grad_check;

    #[test]
    fn zero_weights_output_bias() {
        let mut m = Mlp::init(&[3, 4, 2], OutputActivation::Identity, true, &mut stream(0, 0));
        m.layers[1].bias = Tensor::row(&[0.5, -1.5]);
        let y = m.eval(&Tensor::ones([5, 3])).unwrap();
        for i in 0..5 {
            assert_eq!(y.row_slice(i), &[0.5, -1.5]);
        }
    }

    #[test]
    fn tanh_output_is_scaled_and_bounded() {
        let m = Mlp::init(&[2, 8, 2], OutputActivation::Tanh { scale: 2.5 }, false, &mut stream(1, 0));
        let x = Tensor::new([1, 2], vec![30.0, -40.0]).unwrap();
        let y = m.eval(&x).unwrap();
        assert!(y.data().iter().all(|v| v.abs() <= 2.5));
    }

    #[test]
    fn gradient_through_mlp_matches_finite_differences() {
        let m = Mlp::init(&[3, 5, 5, 2], OutputActivation::Tanh { scale: 1.0 }, false, &mut stream(2, 0))
            .cast::<f64>();
        let x = Tensor::<f64>::new([4, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let err = grad_check(
            |t, xv| -> tensor::Result<Var> {
                let b = m.bind(t);
                let y = b.forward(t, xv)?;
                let s = t.square(y)?;
                t.mean(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }
}
