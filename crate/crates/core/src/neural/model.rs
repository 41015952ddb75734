use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{fusion_attention, global_mean_pool, sage_layer, Activation, FusionAttention, Linear, SageLayer, TransformerEncoder};
use super::tape::{Axis, Tape, Tensor, Var};
use super::{NeuralError, ParamStore};

/// Which branches feed the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMode {
    /// Structural, topological and spectral views fused by self-attention.
    Full,
    GsageOnly,
    TopoOnly,
    DosOnly,
    /// All three views concatenated without attention.
    ConcatFuse,
}

impl ModelMode {
    pub const ALL: [ModelMode; 5] = [Self::Full, Self::GsageOnly, Self::TopoOnly, Self::DosOnly, Self::ConcatFuse];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::GsageOnly => "gsage-only",
            Self::TopoOnly => "topo-only",
            Self::DosOnly => "dos-only",
            Self::ConcatFuse => "concat-fuse",
        }
    }

    fn uses_structural(&self) -> bool {
        matches!(self, Self::Full | Self::ConcatFuse | Self::GsageOnly)
    }

    fn uses_topo(&self) -> bool {
        matches!(self, Self::Full | Self::ConcatFuse | Self::TopoOnly)
    }

    fn uses_dos(&self) -> bool {
        matches!(self, Self::Full | Self::ConcatFuse | Self::DosOnly)
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown model mode `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ModelMode,
    /// Width of the node features fed to the structural branch.
    pub feature_dim: usize,
    pub topo_dim: usize,
    pub dos_bins: usize,
    pub hidden_dim: usize,
    pub sage_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub view_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: ModelMode::Full,
            feature_dim: 1,
            topo_dim: 4,
            dos_bins: 4,
            hidden_dim: 32,
            sage_layers: 2,
            d_model: 32,
            heads: 2,
            layers: 2,
            ffn_dim: 64,
            view_dim: 10,
            num_classes: 2,
            dropout: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct SageBranch {
    layers: Vec<SageLayer>,
    projection: Linear,
}

/// Model inputs for one temporal graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    /// One row per window.
    pub topo_tokens: Tensor,
    /// One row per window.
    pub dos_tokens: Tensor,
    /// One row per node.
    pub node_features: Tensor,
    pub neighbors: Arc<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Representation fed to the classifier.
    pub fused: Var,
    /// Attention mass per view: structural, topological, spectral.
    pub view_weights: [f64; 3],
    /// Every encoder attention map of both token streams.
    pub encoder_attention: Vec<Var>,
    pub fusion_attention: Option<Var>,
    /// Per-view vectors in branch order, for the branches in use.
    pub views: Vec<Var>,
}

/// Architecture description; the weights live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    sage: Option<SageBranch>,
    topo: Option<TransformerEncoder>,
    dos: Option<TransformerEncoder>,
    fusion: Option<FusionAttention>,
    classifier: Linear,
}

impl Model {
    /// Builds the architecture and draws its initial weights from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore), NeuralError> {
        validate(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let sage = c.mode.uses_structural().then(|| {
            let layers = (0..c.sage_layers)
                .map(|i| {
                    let in_dim = if i == 0 { c.feature_dim } else { c.hidden_dim };
                    SageLayer::new(&mut store, &mut rng, &format!("sage.layer{i}"), in_dim, c.hidden_dim)
                })
                .collect();
            let projection = Linear::new(&mut store, &mut rng, "sage.projection", c.hidden_dim, c.view_dim, true);
            SageBranch { layers, projection }
        });
        let encoder = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize| {
            TransformerEncoder::new(store, rng, name, d_in, c.d_model, c.heads, c.layers, c.ffn_dim, c.view_dim)
        };
        let topo = c.mode.uses_topo().then(|| encoder(&mut store, &mut rng, "topo", c.topo_dim));
        let dos = c.mode.uses_dos().then(|| encoder(&mut store, &mut rng, "dos", c.dos_bins));
        let fusion = (c.mode == ModelMode::Full).then(|| FusionAttention::new(&mut store, &mut rng, "fusion", c.view_dim));
        let classifier_in = match c.mode {
            ModelMode::Full | ModelMode::ConcatFuse => 3 * c.view_dim,
            _ => c.view_dim,
        };
        let classifier = Linear::new(&mut store, &mut rng, "classifier", classifier_in, c.num_classes, true);
        let model = Self {
            config,
            sage,
            topo,
            dos,
            fusion,
            classifier,
        };
        Ok((model, store))
    }

    /// Rebuilds the architecture for stored weights, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self, NeuralError> {
        let (model, fresh) = Self::new(config, 0)?;
        if !fresh.same_layout(params) {
            return Err(NeuralError::Checkpoint(
                "parameter names or shapes do not match the model configuration".into(),
            ));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    pub fn fusion(&self) -> Option<&FusionAttention> {
        self.fusion.as_ref()
    }

    pub fn topo_encoder(&self) -> Option<&TransformerEncoder> {
        self.topo.as_ref()
    }

    pub fn dos_encoder(&self) -> Option<&TransformerEncoder> {
        self.dos.as_ref()
    }

    /// Runs the model on one graph. `params` comes from [`ParamStore::bind`].
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: &GraphInput) -> Result<ForwardOutput, NeuralError> {
        let c = &self.config;
        let mut views = Vec::with_capacity(3);
        let mut encoder_attention = Vec::new();
        if let Some(sage) = &self.sage {
            let features = tape.leaf(input.node_features.clone())?;
            if tape.value(features).cols() != c.feature_dim {
                return Err(NeuralError::ShapeMismatch(format!(
                    "model expects {} node features, got {}",
                    c.feature_dim,
                    tape.value(features).cols()
                )));
            }
            let mut h = features;
            for layer in &sage.layers {
                h = sage_layer(tape, params, h, &input.neighbors, layer, Activation::Relu)?;
            }
            let pooled = global_mean_pool(tape, h)?;
            views.push(sage.projection.forward(tape, params, pooled)?);
        }
        for (encoder, tokens) in [(&self.topo, &input.topo_tokens), (&self.dos, &input.dos_tokens)] {
            if let Some(encoder) = encoder {
                let t = tape.leaf(tokens.clone())?;
                let (view, maps) = encoder.forward(tape, params, t, c.dropout)?;
                views.push(view);
                encoder_attention.extend(maps);
            }
        }

        let (fused, view_weights, fusion_attn) = match c.mode {
            ModelMode::Full => {
                let stacked = tape.concat(&views, Axis::Rows)?;
                let fusion = self.fusion.as_ref().expect("full mode has a fusion layer");
                let out = fusion_attention(tape, params, stacked, fusion)?;
                let w = [out.view_weights[0], out.view_weights[1], out.view_weights[2]];
                (out.fused, w, Some(out.attention))
            }
            ModelMode::ConcatFuse => (tape.concat(&views, Axis::Cols)?, [1.0 / 3.0; 3], None),
            ModelMode::GsageOnly => (views[0], [1.0, 0.0, 0.0], None),
            ModelMode::TopoOnly => (views[0], [0.0, 1.0, 0.0], None),
            ModelMode::DosOnly => (views[0], [0.0, 0.0, 1.0], None),
        };
        let dropped = tape.dropout(fused, c.dropout)?;
        let logits = self.classifier.forward(tape, params, dropped)?;
        Ok(ForwardOutput {
            logits,
            fused,
            view_weights,
            encoder_attention,
            fusion_attention: fusion_attn,
            views,
        })
    }

    /// Cross-entropy loss of one labelled graph.
    pub fn loss(&self, tape: &mut Tape, params: &[Var], input: &GraphInput, label: usize) -> Result<(Var, ForwardOutput), NeuralError> {
        let out = self.forward(tape, params, input)?;
        let loss = tape.cross_entropy_with_logits(out.logits, label)?;
        Ok((loss, out))
    }
}

fn validate(c: &ModelConfig) -> Result<(), NeuralError> {
    let bad = |msg: &str| Err(NeuralError::InvalidArgument(msg.to_string()));
    if c.num_classes < 2 {
        return bad("need at least two classes");
    }
    if c.d_model == 0 || c.heads == 0 || !c.d_model.is_multiple_of(c.heads) {
        return bad("d_model must be a positive multiple of heads");
    }
    if c.view_dim == 0 || c.hidden_dim == 0 || c.ffn_dim == 0 || c.feature_dim == 0 {
        return bad("layer widths must be positive");
    }
    if c.mode.uses_structural() && c.sage_layers == 0 {
        return bad("structural branch needs at least one GraphSAGE layer");
    }
    if !(0.0..1.0).contains(&c.dropout) {
        return bad("dropout must lie in [0, 1)");
    }
    Ok(())
}
