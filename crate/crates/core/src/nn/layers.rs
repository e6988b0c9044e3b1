use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

/// Fully connected layer, weights `[out, in]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.glorot(format!("{name}.w"), fan_out, fan_in, rng);
        let b = store.zeros(format!("{name}.b"), vec![fan_out]);
        Self {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        g.affine(self.w, Some(self.b), x)
    }
}

/// Stack of dense layers with an activation after every layer but the last
/// (unless `activate_last`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        activate_last: bool,
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activation,
            activate_last,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn forward(&self, g: &mut Graph<'_>, mut x: Var) -> Var {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x);
            if i + 1 < n || self.activate_last {
                x = self.activation.apply(g, x);
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph<'_>, hidden_dim: usize) -> Self {
        Self {
            hidden: g.zeros(hidden_dim),
            cell: g.zeros(hidden_dim),
        }
    }
}

/// Single-layer LSTM; gate rows ordered `[input, forget, candidate, output]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl Lstm {
    /// Glorot weights, zero biases except the forget gate (1.0).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.glorot(
            format!("{name}.w"),
            4 * hidden_dim,
            input_dim + hidden_dim,
            rng,
        );
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(1.0);
        let b = store.add(format!("{name}.b"), vec![4 * hidden_dim], bias);
        Self {
            w,
            b,
            input_dim,
            hidden_dim,
        }
    }

    pub fn step(&self, g: &mut Graph<'_>, input: Var, state: LstmState) -> (Var, LstmState) {
        let xh = g.concat(&[input, state.hidden]);
        let gates = g.affine(self.w, Some(self.b), xh);
        let hc = g.lstm_cell(gates, state.cell);
        let hidden = g.slice(hc, 0, self.hidden_dim);
        let cell = g.slice(hc, self.hidden_dim, self.hidden_dim);
        (hidden, LstmState { hidden, cell })
    }
}
