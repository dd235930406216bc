//! Dense layers and small multilayer perceptrons on top of the tape.

use rand::Rng;

use super::graph::{Graph, GraphScalar, NodeId};
use super::init::orthogonal;
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Ssp,
}

impl Activation {
    pub fn apply<F: GraphScalar>(&self, g: &mut Graph<F>, x: NodeId) -> NodeId {
        match self {
            Activation::Linear => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Ssp => g.ssp(x),
        }
    }
}

/// One affine layer `x W + b` (bias optional).
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<F: GraphScalar, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let data = orthogonal(in_dim, out_dim, gain, rng)
            .into_iter()
            .map(F::from_f64_c)
            .collect();
        let w = store.add(&format!("{name}.w"), in_dim, out_dim, data);
        let b = bias.then(|| {
            store.add(&format!("{name}.b"), 1, out_dim, vec![F::zero(); out_dim])
        });
        Dense { w, b, in_dim, out_dim }
    }

    pub fn forward<F: GraphScalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        x: NodeId,
    ) -> NodeId {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row_broadcast(y, b)
            }
            None => y,
        }
    }
}

/// Feed-forward stack; `hidden` activation between layers, `output`
/// activation after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new<F: GraphScalar, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = (0..dims.len() - 1)
            .map(|i| {
                // sqrt(2) gain for the relu-style hidden layers, 1 elsewhere
                let last = i == dims.len() - 2;
                let act = if last { output } else { hidden };
                let gain = if act == Activation::Relu { std::f64::consts::SQRT_2 } else { 1.0 };
                Dense::new(
                    store,
                    &format!("{name}.{i}"),
                    dims[i],
                    dims[i + 1],
                    gain,
                    true,
                    rng,
                )
            })
            .collect();
        Mlp { layers, hidden, output }
    }

    pub fn forward<F: GraphScalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        x: NodeId,
    ) -> NodeId {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(store, g, h);
            let act = if i + 1 == self.layers.len() { self.output } else { self.hidden };
            h = act.apply(g, h);
        }
        h
    }
}
