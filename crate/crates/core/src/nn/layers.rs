//! Parameter registration and small composite blocks.

use rand::Rng;

use super::{Graph, NnError, NodeId, ParamStore, Tensor};

pub fn init_linear<R: Rng>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) {
    store.insert_glorot(&format!("{name}.W"), &[inputs, outputs], inputs, outputs, rng);
    store.insert(&format!("{name}.b"), Tensor::zeros(&[outputs]));
}

pub fn init_conv<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    rng: &mut R,
) {
    let area = kernel * kernel;
    store.insert_glorot(
        &format!("{name}.K"),
        &[c_out, c_in, kernel, kernel],
        c_in * area,
        c_out * area,
        rng,
    );
    store.insert(&format!("{name}.b"), Tensor::zeros(&[c_out]));
}

/// Zeroes both the weights and bias of a linear layer.
pub fn zero_linear(store: &mut ParamStore, name: &str) {
    for suffix in [".W", ".b"] {
        if let Some(t) = store.get_mut(&format!("{name}{suffix}")) {
            t.fill(0.0);
        }
    }
}

/// Residual convolution tower: 3×3 stem, `blocks` residual blocks of two
/// 3×3 convolutions, a 1×1 projection, and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTower {
    pub in_channels: usize,
    pub channels: usize,
    pub blocks: usize,
    pub head_channels: usize,
    pub outputs: usize,
}

impl ConvTower {
    pub fn init<R: Rng>(&self, store: &mut ParamStore, name: &str, height: usize, width: usize, rng: &mut R) {
        init_conv(store, &format!("{name}.stem"), self.in_channels, self.channels, 3, rng);
        for b in 0..self.blocks {
            for c in 0..2 {
                init_conv(store, &format!("{name}.res{b}.conv{c}"), self.channels, self.channels, 3, rng);
            }
        }
        init_conv(store, &format!("{name}.proj"), self.channels, self.head_channels, 1, rng);
        init_linear(store, &format!("{name}.out"), self.head_channels * height * width, self.outputs, rng);
    }

    /// Maps a `[C, H, W]` input to a vector of `outputs` entries.
    pub fn forward(&self, g: &mut Graph, x: NodeId, name: &str) -> Result<NodeId, NnError> {
        let stem = g.conv3x3(x, &format!("{name}.stem"))?;
        let mut h = g.relu(stem);
        for b in 0..self.blocks {
            h = residual_block(g, h, &format!("{name}.res{b}"))?;
        }
        let proj = g.conv_named(h, &format!("{name}.proj"))?;
        let proj = g.relu(proj);
        let len = g.value(proj).len();
        let flat = g.reshape(proj, &[len])?;
        g.linear(flat, &format!("{name}.out"))
    }
}

/// `relu(conv1(relu(conv0(x))) + x)`.
pub fn residual_block(g: &mut Graph, x: NodeId, name: &str) -> Result<NodeId, NnError> {
    let a = g.conv3x3(x, &format!("{name}.conv0"))?;
    let a = g.relu(a);
    let b = g.conv3x3(a, &format!("{name}.conv1"))?;
    let sum = g.add(b, x)?;
    Ok(g.relu(sum))
}

/// Two-layer perceptron `out(relu(hidden(x)))`.
pub fn mlp2(g: &mut Graph, x: NodeId, name: &str) -> Result<NodeId, NnError> {
    let h = g.linear(x, &format!("{name}.hidden"))?;
    let h = g.relu(h);
    g.linear(h, &format!("{name}.out"))
}

pub fn init_mlp2<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    inputs: usize,
    hidden: usize,
    outputs: usize,
    rng: &mut R,
) {
    init_linear(store, &format!("{name}.hidden"), inputs, hidden, rng);
    init_linear(store, &format!("{name}.out"), hidden, outputs, rng);
}
