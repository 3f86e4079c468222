use serde::{Deserialize, Serialize};

use super::rng::Rng;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected layer `y = act(W x + b)`, `W` stored row-major
/// (`output` rows of length `input`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let output = weights.len();
        let input = weights.first().map_or(0, Vec::len);
        if output == 0 || input == 0 {
            return Err(Error::InvalidArgument("empty layer".into()));
        }
        for row in &weights {
            check_dim(input, row.len())?;
        }
        check_dim(output, bias.len())?;
        Ok(Self {
            input,
            output,
            activation,
            weights: weights.into_iter().flatten().collect(),
            bias,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 {
            return Err(Error::InvalidArgument("empty layer".into()));
        }
        check_dim(self.input * self.output, self.weights.len())?;
        check_dim(self.output, self.bias.len())
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn preactivation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.input)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Input of every layer, followed by the network output.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activation of every layer.
    pub preactivations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input")
    }
}

/// Fixed-topology multilayer perceptron.
///
/// Parameters are flattened layer by layer as `[W_1, b_1, W_2, b_2, ...]`;
/// [`Mlp::params`], [`Mlp::set_params`] and [`Mlp::grad_params`] share that
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct Mlp {
    layers: Vec<Dense>,
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    layers: Vec<Dense>,
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = Error;
    fn try_from(r: MlpRepr) -> Result<Self> {
        Mlp::from_layers(r.layers)
    }
}

impl From<Mlp> for MlpRepr {
    fn from(m: Mlp) -> Self {
        MlpRepr { layers: m.layers }
    }
}

impl Mlp {
    /// Randomly initialised network. Hidden layers use `activation`, the
    /// output layer is linear.
    pub fn new(input: usize, hidden: &[usize], output: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let last = i + 2 == dims.len();
                let act = if last { Activation::Identity } else { activation };
                let gain = match act {
                    Activation::Relu => 2.0,
                    _ => 1.0,
                };
                let std = (gain / fan_in as f64).sqrt();
                Dense {
                    input: fan_in,
                    output: fan_out,
                    activation: act,
                    weights: (0..fan_in * fan_out).map(|_| std * rng.gaussian()).collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for l in &layers {
            l.validate()?;
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].output, pair[1].input)?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.output).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.num_params(), params.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.preactivation(&h).into_iter().map(|p| l.activation.apply(p)).collect();
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_dim(self.input_dim(), x.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut preactivations = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for l in &self.layers {
            let pre = l.preactivation(activations.last().unwrap());
            activations.push(pre.iter().map(|&p| l.activation.apply(p)).collect());
            preactivations.push(pre);
        }
        Ok(ForwardTrace {
            activations,
            preactivations,
        })
    }

    /// Reverse pass of `upstream · output`. Adds parameter gradients into
    /// `param_grads` (when given) and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        mut param_grads: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        check_dim(self.output_dim(), upstream.len())?;
        if let Some(g) = param_grads.as_deref() {
            check_dim(self.num_params(), g.len())?;
        }
        let mut offset = self.num_params();
        let mut grad = upstream.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let pre = &trace.preactivations[i];
            let x = &trace.activations[i];
            let delta: Vec<f64> = grad
                .iter()
                .zip(pre)
                .map(|(g, &p)| g * l.activation.derivative(p))
                .collect();
            offset -= l.param_count();
            if let Some(g) = param_grads.as_deref_mut() {
                let (gw, gb) = g[offset..offset + l.param_count()].split_at_mut(l.weights.len());
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        for (gwij, xj) in gw[o * l.input..(o + 1) * l.input].iter_mut().zip(x) {
                            *gwij += d * xj;
                        }
                    }
                    gb[o] += d;
                }
            }
            let mut next = vec![0.0; l.input];
            for (row, &d) in l.weights.chunks_exact(l.input).zip(&delta) {
                if d != 0.0 {
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
            }
            grad = next;
        }
        Ok(grad)
    }

    /// Gradient of `upstream · f(x)` w.r.t. every parameter, in
    /// [`Mlp::params`] order.
    pub fn grad_params(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x)?;
        let mut g = vec![0.0; self.num_params()];
        self.backward(&trace, upstream, Some(&mut g))?;
        Ok(g)
    }

    /// Gradient of `upstream · f(x)` w.r.t. `x`.
    pub fn grad_input(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x)?;
        self.backward(&trace, upstream, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> Mlp {
        Mlp::from_layers(vec![Dense::new(w, b, act).unwrap()]).unwrap()
    }

    #[test]
    fn linear_layer_forward() {
        let m = linear(
            vec![vec![2.0, 0.0], vec![0.0, 3.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        );
        assert_eq!(m.forward(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn zero_weights_output_bias() {
        let m = linear(vec![vec![0.0; 3]; 2], vec![0.5, -1.5], Activation::Identity);
        assert_eq!(m.forward(&[4.0, -2.0, 9.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn tanh_is_odd() {
        let m = linear(vec![vec![1.3, -0.2]], vec![0.0], Activation::Tanh);
        assert_eq!(m.forward(&[0.0, 0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = linear(vec![vec![1.0, 1.0]], vec![0.0], Activation::Identity);
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(m.grad_input(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(Mlp::from_layers(vec![
            Dense::new(vec![vec![1.0, 1.0]], vec![0.0], Activation::Tanh).unwrap(),
            Dense::new(vec![vec![1.0, 1.0]], vec![0.0], Activation::Tanh).unwrap(),
        ])
        .is_err());
    }

    #[test]
    fn linear_layer_gradients_closed_form() {
        let w = vec![vec![1.0, -2.0, 0.5], vec![3.0, 0.25, -1.0]];
        let m = linear(w.clone(), vec![0.1, 0.2], Activation::Identity);
        let x = [0.3, -0.7, 2.0];
        let u = [1.5, -0.5];
        let gp = m.grad_params(&x, &u).unwrap();
        // dW_ij = u_i x_j, db_i = u_i
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(gp[i * 3 + j], u[i] * x[j]);
            }
            assert_eq!(gp[6 + i], u[i]);
        }
        // dx = W^T u
        let gx = m.grad_input(&x, &u).unwrap();
        for j in 0..3 {
            assert!((gx[j] - (w[0][j] * u[0] + w[1][j] * u[1])).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = Rng::new(1);
        let m = Mlp::new(4, &[8, 8], 3, Activation::Tanh, &mut rng).unwrap();
        let x = rng.gaussian_vec(4);
        assert!(m.grad_params(&x, &[0.0; 3]).unwrap().iter().all(|&g| g == 0.0));
        assert!(m.grad_input(&x, &[0.0; 3]).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = Rng::new(2);
        let mut m = Mlp::new(3, &[5], 2, Activation::Relu, &mut rng).unwrap();
        assert_eq!(m.num_params(), 3 * 5 + 5 + 5 * 2 + 2);
        let p: Vec<f64> = (0..m.num_params()).map(|i| i as f64).collect();
        m.set_params(&p).unwrap();
        assert_eq!(m.params(), p);
        assert_eq!(m.hidden_widths(), vec![5]);
        let json = serde_json::to_string(&m).unwrap();
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
