use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::tape::{Axis, Tape, Tensor, Var};
use super::{NeuralError, ParamId, ParamStore};
use crate::temporal_graph::StaticGraph;

/// Affine map `x W + b` with `W` stored as `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, NeuralError> {
        let y = tape.matmul(x, params[self.weight.0])?;
        match self.bias {
            Some(b) => tape.add(y, params[b.0]),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, dim)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, NeuralError> {
        tape.layer_norm(x, params[self.gain.0], params[self.bias.0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var, NeuralError> {
        match self {
            Self::Relu => tape.relu(x),
            Self::Identity => Ok(x),
        }
    }
}

/// One mean-aggregator GraphSAGE layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SageLayer {
    pub w_self: ParamId,
    pub w_neigh: ParamId,
    pub bias: ParamId,
}

impl SageLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            w_self: store.add_uniform(format!("{name}.w_self"), in_dim, out_dim, rng),
            w_neigh: store.add_uniform(format!("{name}.w_neigh"), in_dim, out_dim, rng),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim)),
        }
    }
}

/// Sorted neighbor lists of a static graph, shared with the tape.
pub fn neighbor_lists(graph: &StaticGraph) -> Arc<Vec<Vec<usize>>> {
    Arc::new((0..graph.num_nodes()).map(|v| graph.neighbors(v).to_vec()).collect())
}

/// `h'_v = act(h_v W_self + mean_{u in N(v)} h_u W_neigh + b)`, with a zero
/// mean for nodes without neighbors.
pub fn sage_layer(
    tape: &mut Tape,
    params: &[Var],
    features: Var,
    neighbors: &Arc<Vec<Vec<usize>>>,
    layer: &SageLayer,
    activation: Activation,
) -> Result<Var, NeuralError> {
    let self_part = tape.matmul(features, params[layer.w_self.0])?;
    let agg = tape.neighbor_mean(features, Arc::clone(neighbors))?;
    let neigh_part = tape.matmul(agg, params[layer.w_neigh.0])?;
    let sum = tape.add(self_part, neigh_part)?;
    let out = tape.add(sum, params[layer.bias.0])?;
    activation.apply(tape, out)
}

/// Mean over nodes of an `n x d` embedding matrix.
pub fn global_mean_pool(tape: &mut Tape, embeddings: Var) -> Result<Var, NeuralError> {
    if tape.value(embeddings).rows() == 0 {
        return Err(NeuralError::EmptyInput("graph has no nodes to pool".into()));
    }
    tape.mean_pool(embeddings, Axis::Rows)
}

/// Sinusoidal code: row `p` holds `sin(p / 10000^(2i/d))` at column `2i` and
/// the matching cosine at `2i + 1`.
pub fn time_embedding(len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in 0..d_model {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            data[pos * d_model + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(len, d_model, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_model: usize, heads: usize) -> Self {
        assert!(heads > 0 && d_model.is_multiple_of(heads), "d_model must split evenly across heads");
        Self {
            query: Linear::new(store, rng, &format!("{name}.query"), d_model, d_model, false),
            key: Linear::new(store, rng, &format!("{name}.key"), d_model, d_model, false),
            value: Linear::new(store, rng, &format!("{name}.value"), d_model, d_model, false),
            output: Linear::new(store, rng, &format!("{name}.output"), d_model, d_model, true),
            heads,
        }
    }

    /// Returns the attended tokens and one row-stochastic attention matrix per head.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<(Var, Vec<Var>), NeuralError> {
        let d_model = self.query.out_dim;
        let head_dim = d_model / self.heads;
        let q = self.query.forward(tape, params, x)?;
        let k = self.key.forward(tape, params, x)?;
        let v = self.value.forward(tape, params, x)?;
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt())?;
            let attn = tape.softmax(scores)?;
            outs.push(tape.matmul(attn, vh)?);
            maps.push(attn);
        }
        let merged = tape.concat(&outs, Axis::Cols)?;
        Ok((self.output.forward(tape, params, merged)?, maps))
    }
}

/// Pre-norm encoder block: attention and a two-layer feed-forward network,
/// each wrapped in a residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_model: usize, heads: usize, ffn_dim: usize) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model),
            attention: MultiHeadAttention::new(store, rng, &format!("{name}.attention"), d_model, heads),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model),
            ff_in: Linear::new(store, rng, &format!("{name}.ff_in"), d_model, ffn_dim, true),
            ff_out: Linear::new(store, rng, &format!("{name}.ff_out"), ffn_dim, d_model, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var, dropout: f64) -> Result<(Var, Vec<Var>), NeuralError> {
        let h = self.norm1.forward(tape, params, x)?;
        let (a, maps) = self.attention.forward(tape, params, h)?;
        let a = tape.dropout(a, dropout)?;
        let x = tape.add(x, a)?;
        let h = self.norm2.forward(tape, params, x)?;
        let f = self.ff_in.forward(tape, params, h)?;
        let f = tape.relu(f)?;
        let f = self.ff_out.forward(tape, params, f)?;
        let f = tape.dropout(f, dropout)?;
        Ok((tape.add(x, f)?, maps))
    }
}

/// Token stream encoder: input projection, time code, encoder blocks, mean
/// pooling over tokens and a projection to the view dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerEncoder {
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

impl TransformerEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_model: usize,
        heads: usize,
        layers: usize,
        ffn_dim: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            input: Linear::new(store, rng, &format!("{name}.input"), d_in, d_model, true),
            layers: (0..layers)
                .map(|i| EncoderLayer::new(store, rng, &format!("{name}.layer{i}"), d_model, heads, ffn_dim))
                .collect(),
            final_norm: LayerNorm::new(store, &format!("{name}.final_norm"), d_model),
            head: Linear::new(store, rng, &format!("{name}.head"), d_model, out_dim, true),
        }
    }

    /// Encodes `N x d_in` tokens into a `1 x out_dim` vector; also returns
    /// every attention map, layer by layer and head by head.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], tokens: Var, dropout: f64) -> Result<(Var, Vec<Var>), NeuralError> {
        let (n, d_in) = (tape.value(tokens).rows(), tape.value(tokens).cols());
        if n == 0 {
            return Err(NeuralError::EmptyInput("token stream is empty".into()));
        }
        if d_in != self.input.in_dim {
            return Err(NeuralError::ShapeMismatch(format!(
                "encoder expects {} features per token, got {d_in}",
                self.input.in_dim
            )));
        }
        let x = self.input.forward(tape, params, tokens)?;
        let mut x = tape.embedding_add(x, &time_embedding(n, self.input.out_dim))?;
        let mut maps = Vec::new();
        for layer in &self.layers {
            let (next, m) = layer.forward(tape, params, x, dropout)?;
            x = next;
            maps.extend(m);
        }
        let x = self.final_norm.forward(tape, params, x)?;
        let pooled = tape.mean_pool(x, Axis::Rows)?;
        Ok((self.head.forward(tape, params, pooled)?, maps))
    }
}

/// Single-head self-attention across the view tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl FusionAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize) -> Self {
        Self {
            query: Linear::new(store, rng, &format!("{name}.query"), dim, dim, false),
            key: Linear::new(store, rng, &format!("{name}.key"), dim, dim, false),
            value: Linear::new(store, rng, &format!("{name}.value"), dim, dim, false),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput {
    /// `1 x (views * dim)` concatenation of the attended view tokens.
    pub fused: Var,
    /// `views x views` attention matrix.
    pub attention: Var,
    /// Attention mass received by each view, normalized to sum to one.
    pub view_weights: Vec<f64>,
}

/// Attention mass received per column, averaged over query rows.
pub fn view_weights(attention: &Tensor) -> Vec<f64> {
    let (rows, cols) = (attention.rows(), attention.cols());
    (0..cols)
        .map(|j| (0..rows).map(|i| attention.get(i, j)).sum::<f64>() / rows as f64)
        .collect()
}

/// Self-attention over the stacked view vectors (structural, topological,
/// spectral); the attended tokens are concatenated.
pub fn fusion_attention(tape: &mut Tape, params: &[Var], views: Var, fusion: &FusionAttention) -> Result<FusionOutput, NeuralError> {
    let (n, d) = (tape.value(views).rows(), tape.value(views).cols());
    if d != fusion.query.in_dim || n == 0 {
        return Err(NeuralError::ShapeMismatch(format!(
            "fusion expects view tokens of width {}, got {n}x{d}",
            fusion.query.in_dim
        )));
    }
    let q = fusion.query.forward(tape, params, views)?;
    let k = fusion.key.forward(tape, params, views)?;
    let v = fusion.value.forward(tape, params, views)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let attention = tape.softmax(scores)?;
    let attended = tape.matmul(attention, v)?;
    let fused = tape.reshape(attended, 1, n * d)?;
    let view_weights = view_weights(tape.value(attention));
    Ok(FusionOutput {
        fused,
        attention,
        view_weights,
    })
}
