//! Dense layers and shared-weight MLPs with manual backward passes.
//!
//! Rows are samples: a layer maps `X (rows × in)` to `act(X·W + b)` with
//! `W` stored as `in × out`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Turns `d(out)` into `d(pre-activation)` given the layer output.
    fn backward(self, out: &Array2<f64>, grad: &mut Array2<f64>) {
        if self == Activation::Relu {
            grad.zip_mut_with(out, |g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    /// He-normal weights, zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let std = (2.0 / input as f64).sqrt();
        let weight = Array2::from_shape_fn((input, output), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        });
        Self {
            weight,
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight);
        z += &self.bias;
        self.activation.apply(&mut z);
        z
    }

    /// Accumulates parameter gradients into `grad` and returns `d(input)`.
    ///
    /// `d_out` is consumed as scratch; `out` is this layer's forward output.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        out: &Array2<f64>,
        mut d_out: Array2<f64>,
        grad: &mut Dense,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        self.activation.backward(out, &mut d_out);
        grad.weight += &x.t().dot(&d_out);
        grad.bias += &d_out.sum_axis(Axis(0));
        need_input_grad.then(|| d_out.dot(&self.weight.t()))
    }
}

/// A stack of dense layers applied row-wise with shared weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Inputs and outputs of every layer from one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    pub activations: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds the input")
    }
}

impl Mlp {
    /// Layers `widths[0] → widths[1] → ...`, ReLU everywhere except the last
    /// layer when `last_identity` is set.
    pub fn init(widths: &[usize], last_identity: bool, rng: &mut impl Rng) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if last_identity && i == n - 1 {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Dense::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim(), l.activation))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").output_dim()
    }

    pub fn forward(&self, x: Array2<f64>) -> MlpCache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x);
        for layer in &self.layers {
            let next = layer.forward(activations.last().expect("non-empty"));
            activations.push(next);
        }
        MlpCache { activations }
    }

    /// Backward through every layer; returns `d(input)` if requested.
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: Array2<f64>,
        grad: &mut Mlp,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let mut d = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let want = need_input_grad || i > 0;
            d = layer.backward(&cache.activations[i], &cache.activations[i + 1], d, &mut grad.layers[i], want)?;
        }
        Some(d)
    }
}
