use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Elu,
    /// tanh approximation
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Gelu => {
                let u = T::from_f64(GELU_C) * (x + T::from_f64(GELU_A) * x * x * x);
                T::from_f64(0.5) * x * (T::one() + u.tanh())
            }
            Activation::Relu => x.max(T::zero()),
        }
    }

    /// Derivative at input `x` with output `y`.
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Elu => {
                if x > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
            Activation::Gelu => {
                let c = T::from_f64(GELU_C);
                let a = T::from_f64(GELU_A);
                let half = T::from_f64(0.5);
                let t = (c * (x + a * x * x * x)).tanh();
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * a * x * x)
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "elu" => Ok(Activation::Elu),
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::InvalidConfig(format!("unknown activation '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub n_layers: usize,
    pub hidden_width: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden_width == 0 || self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidConfig(format!("degenerate MLP spec {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .map(|l| {
                let i = if l == 0 { self.in_dim } else { self.hidden_width };
                let o = if l + 1 == self.n_layers { self.out_dim } else { self.hidden_width };
                (i, o)
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Dense layers with an activation after all but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Real = f64> {
    pub spec: MlpSpec,
    pub weights: Vec<Arc<Tensor<T>>>,
    pub biases: Vec<Arc<Tensor<T>>>,
}

/// Parameters of an [`Mlp`] registered on a graph.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub activation: Activation,
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl<T: Real> Mlp<T> {
    /// He-style uniform init, `U(-√(6/fan_in), √(6/fan_in))`; the output
    /// layer is scaled by `out_gain`. Biases start at zero.
    pub fn init(spec: MlpSpec, seed: u64, out_gain: f64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = spec.layer_dims();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, &(i, o)) in dims.iter().enumerate() {
            let mut bound = (6.0 / i as f64).sqrt();
            if l + 1 == dims.len() {
                bound *= out_gain;
            }
            let w = Tensor::from_fn(i, o, |_, _| T::from_f64(rng.gen_range(-1.0..=1.0) * bound));
            weights.push(Arc::new(w));
            biases.push(Arc::new(Tensor::zeros(1, o)));
        }
        Ok(Mlp { spec, weights, biases })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        Ok(Mlp {
            spec,
            weights: dims.iter().map(|&(i, o)| Arc::new(Tensor::zeros(i, o))).collect(),
            biases: dims.iter().map(|&(_, o)| Arc::new(Tensor::zeros(1, o))).collect(),
        })
    }

    pub fn from_layers(spec: MlpSpec, weights: Vec<Tensor<T>>, biases: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if weights.len() != dims.len() || biases.len() != dims.len() {
            return Err(Error::Shape(format!("{} layers expected, got {}", dims.len(), weights.len())));
        }
        for (l, &(i, o)) in dims.iter().enumerate() {
            if weights[l].shape() != [i, o] || biases[l].shape() != [1, o] {
                return Err(Error::Shape(format!(
                    "layer {l}: expected {i}x{o} weight and 1x{o} bias, got {:?} and {:?}",
                    weights[l].shape(),
                    biases[l].shape()
                )));
            }
        }
        Ok(Mlp {
            spec,
            weights: weights.into_iter().map(Arc::new).collect(),
            biases: biases.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec,
            weights: self.weights.iter().map(|w| Arc::new(w.cast())).collect(),
            biases: self.biases.iter().map(|b| Arc::new(b.cast())).collect(),
        }
    }

    /// Weights and biases interleaved per layer.
    pub fn tensors(&self) -> Vec<&Arc<Tensor<T>>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Arc<Tensor<T>>> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    /// Registers the parameters; `trainable` decides whether they receive gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> MlpVars {
        let leaf = |g: &mut Graph<T>, t: &Arc<Tensor<T>>| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant_shared(t.clone())
            }
        };
        MlpVars {
            activation: self.spec.activation,
            weights: self.weights.iter().map(|w| leaf(g, w)).collect(),
            biases: self.biases.iter().map(|b| leaf(g, b)).collect(),
        }
    }

    /// Batched evaluation outside any graph.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.cols() != self.spec.in_dim {
            return Err(Error::Shape(format!("MLP expects {} inputs, got {}", self.spec.in_dim, input.cols())));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = vars.forward(&mut g, x);
        Ok(g.value(y).clone())
    }
}

impl MlpVars {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let n = self.weights.len();
        let mut h = x;
        for l in 0..n {
            h = g.linear(h, self.weights[l], self.biases[l]);
            if l + 1 < n {
                h = g.activation(h, self.activation);
            }
        }
        h
    }

    pub fn vars(&self) -> Vec<Var> {
        self.weights.iter().zip(&self.biases).flat_map(|(&w, &b)| [w, b]).collect()
    }
}
