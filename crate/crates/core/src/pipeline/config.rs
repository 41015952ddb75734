use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::neural::{ModelConfig, ModelMode};
use crate::temporal_graph::WindowSpec;

/// Node features fed to the structural branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `log(1 + count)` of incident events per timestep.
    TemporalDegree,
    /// Activity indicator per timestep.
    Binary,
    /// Features read from `<graph file>.feat` sidecars.
    Provided,
}

impl FeatureMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TemporalDegree => "temporal_degree",
            Self::Binary => "binary",
            Self::Provided => "provided",
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "temporal_degree" => Ok(Self::TemporalDegree),
            "binary" => Ok(Self::Binary),
            "provided" => Ok(Self::Provided),
            other => Err(format!("unknown feature mode `{other}`")),
        }
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub delta: f64,
    pub sigma: f64,
    pub dos_bins: usize,
    pub sage_layers: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Graphs whose gradients are averaged per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub folds: usize,
    pub feature_mode: FeatureMode,
    pub mode: ModelMode,
    /// Count repeated events when reporting `|E|` in window descriptors.
    pub count_multiplicity: bool,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub view_dim: usize,
    /// Fraction of graphs held out by `train` for a test report; 0 trains on all.
    pub holdout: f64,
    /// Run the hyperparameter grid before cross-validation.
    pub grid_search: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            delta: 6.0,
            sigma: 4.0,
            dos_bins: 4,
            sage_layers: 2,
            hidden_dim: 32,
            lr: 0.005,
            dropout: 0.0,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 1,
            seed: 0,
            folds: 5,
            feature_mode: FeatureMode::TemporalDegree,
            mode: ModelMode::Full,
            count_multiplicity: false,
            d_model: 32,
            heads: 2,
            layers: 2,
            ffn_dim: 64,
            view_dim: 10,
            holdout: 0.0,
            grid_search: false,
        }
    }
}

impl RunConfig {
    pub const HIDDEN_GRID: [usize; 4] = [16, 32, 64, 128];
    pub const LR_GRID: [f64; 3] = [0.01, 0.005, 0.001];
    pub const DROPOUT_GRID: [f64; 3] = [0.0, 0.3, 0.5];

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| PipelineError::Parse {
                file: "config".into(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            config.set(key.trim(), value.trim()).map_err(err)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("bad value `{value}` for `{key}`"))
        }
        match key {
            "delta" => self.delta = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "dos_bins" => self.dos_bins = num(key, value)?,
            "sage_layers" => self.sage_layers = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "folds" => self.folds = num(key, value)?,
            "feature_mode" => self.feature_mode = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "count_multiplicity" => self.count_multiplicity = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "ffn_dim" => self.ffn_dim = num(key, value)?,
            "view_dim" => self.view_dim = num(key, value)?,
            "holdout" => self.holdout = num(key, value)?,
            "grid_search" => self.grid_search = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Serializes to the text format read by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        format!(
            "delta = {}\nsigma = {}\ndos_bins = {}\nsage_layers = {}\nhidden_dim = {}\nlr = {}\ndropout = {}\n\
             weight_decay = {}\nepochs = {}\nbatch_size = {}\nseed = {}\nfolds = {}\nfeature_mode = {}\nmode = {}\n\
             count_multiplicity = {}\nd_model = {}\nheads = {}\nlayers = {}\nffn_dim = {}\nview_dim = {}\n\
             holdout = {}\ngrid_search = {}\n",
            self.delta,
            self.sigma,
            self.dos_bins,
            self.sage_layers,
            self.hidden_dim,
            self.lr,
            self.dropout,
            self.weight_decay,
            self.epochs,
            self.batch_size,
            self.seed,
            self.folds,
            self.feature_mode,
            self.mode,
            self.count_multiplicity,
            self.d_model,
            self.heads,
            self.layers,
            self.ffn_dim,
            self.view_dim,
            self.holdout,
            self.grid_search,
        )
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if let Err(e) = self.window_spec() {
            return bad(e.to_string());
        }
        if self.dos_bins == 0 {
            return bad("dos_bins must be positive".into());
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad("holdout must lie in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        Ok(())
    }

    pub fn window_spec(&self) -> Result<WindowSpec, crate::temporal_graph::GraphError> {
        WindowSpec::new(self.delta, self.sigma)
    }

    pub fn model_config(&self, feature_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            feature_dim,
            topo_dim: 4,
            dos_bins: self.dos_bins,
            hidden_dim: self.hidden_dim,
            sage_layers: self.sage_layers,
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            ffn_dim: self.ffn_dim,
            view_dim: self.view_dim,
            num_classes,
            dropout: self.dropout,
        }
    }
}
