use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{extract_descriptors, feature_grid, GraphFeatures};
use super::{io_error, AttentionReport, Dataset, Metrics, PipelineError, RunConfig};
use crate::neural::{adam_step, AdamConfig, AdamState, Checkpoint, GraphInput, Model, ModelConfig, NeuralError, ParamStore, Tape};
use crate::stability::trial_seed;

/// A fitted model with its weights and per-epoch mean training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub params: ParamStore,
    pub loss_history: Vec<f64>,
}

fn neural_to_pipeline(err: NeuralError) -> PipelineError {
    match err {
        NeuralError::ShapeMismatch(m) => PipelineError::ShapeMismatch(m),
        other => PipelineError::Neural(other),
    }
}

/// Per-graph Adam updates over `epochs` passes in a seeded shuffled order.
pub fn fit(
    features: &[GraphFeatures],
    train_idx: &[usize],
    config: &RunConfig,
    model_config: ModelConfig,
    seed: u64,
) -> Result<TrainedModel, PipelineError> {
    if train_idx.is_empty() {
        return Err(PipelineError::TooFewGraphs { graphs: 0, folds: 1 });
    }
    let (model, mut params) = Model::new(model_config, seed)?;
    let adam = AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(adam, &params);
    let inputs: Vec<(GraphInput, usize)> = train_idx.iter().map(|&i| (features[i].input(), features[i].label)).collect();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, 0x5EED));
    let mut loss_history = Vec::with_capacity(config.epochs);
    let batch = config.batch_size.max(1);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            for &k in chunk {
                let (input, label) = &inputs[k];
                let diverged = |detail: String| PipelineError::NonFiniteLoss {
                    epoch,
                    graph: train_idx[k],
                    detail,
                };
                step += 1;
                let mut tape = Tape::new(trial_seed(seed, step));
                let vars = params.bind(&mut tape)?;
                let (loss, _) = match model.loss(&mut tape, &vars, input, *label) {
                    Ok(out) => out,
                    Err(NeuralError::NonFiniteValue(op)) => return Err(diverged(format!("non-finite output of {op}"))),
                    Err(e) => return Err(neural_to_pipeline(e)),
                };
                total += tape.value(loss).data()[0];
                tape.backward(loss)?;
                let g = params.gradients(&tape, &vars);
                if g.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(diverged("non-finite gradient".into()));
                }
                for (acc, g) in grads.iter_mut().zip(g) {
                    for (a, x) in acc.iter_mut().zip(g) {
                        *a += x / chunk.len() as f64;
                    }
                }
            }
            adam_step(&mut params, &grads, &mut state)?;
            if !params.all_finite() {
                return Err(PipelineError::NonFiniteLoss {
                    epoch,
                    graph: train_idx[chunk[0]],
                    detail: "non-finite parameter after update".into(),
                });
            }
        }
        loss_history.push(total / inputs.len() as f64);
    }
    Ok(TrainedModel {
        model,
        params,
        loss_history,
    })
}

/// Predictions and attention statistics on a set of graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Mean attention mass per view: structural, topological, spectral.
    pub view_weights: [f64; 3],
    /// Fused representation of each graph.
    pub embeddings: Vec<Vec<f64>>,
}

impl Evaluation {
    /// `graph_id,label,prediction,e0..` rows, ready for external embedding plots.
    pub fn embeddings_csv(&self, graph_ids: &[usize]) -> String {
        let dim = self.embeddings.first().map_or(0, Vec::len);
        let mut out = String::from("graph_id,label,prediction");
        for i in 0..dim {
            let _ = write!(out, ",e{i}");
        }
        out.push('\n');
        for (k, emb) in self.embeddings.iter().enumerate() {
            let _ = write!(out, "{},{},{}", graph_ids[k], self.labels[k], self.predictions[k]);
            for x in emb {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn evaluate(model: &Model, params: &ParamStore, features: &[GraphFeatures], idx: &[usize]) -> Result<Evaluation, PipelineError> {
    if idx.is_empty() {
        return Err(PipelineError::TooFewGraphs { graphs: 0, folds: 1 });
    }
    let c = model.config();
    let mut eval = Evaluation {
        accuracy: 0.0,
        predictions: Vec::with_capacity(idx.len()),
        labels: Vec::with_capacity(idx.len()),
        view_weights: [0.0; 3],
        embeddings: Vec::with_capacity(idx.len()),
    };
    for &i in idx {
        let f = &features[i];
        if f.dos.first().is_some_and(|h| h.bin_count() != c.dos_bins) {
            return Err(PipelineError::ShapeMismatch(format!(
                "model expects {} spectral bins, data has {}",
                c.dos_bins,
                f.dos[0].bin_count()
            )));
        }
        if f.label >= c.num_classes {
            return Err(PipelineError::ShapeMismatch(format!(
                "label {} outside the model's {} classes",
                f.label, c.num_classes
            )));
        }
        let mut tape = Tape::inference();
        let vars = params.bind(&mut tape)?;
        let out = model.forward(&mut tape, &vars, &f.input()).map_err(neural_to_pipeline)?;
        let logits = tape.value(out.logits).data();
        let pred = (0..logits.len()).fold(0, |best, k| if logits[k] > logits[best] { k } else { best });
        eval.predictions.push(pred);
        eval.labels.push(f.label);
        for (acc, w) in eval.view_weights.iter_mut().zip(out.view_weights) {
            *acc += w;
        }
        eval.embeddings.push(tape.value(out.fused).data().to_vec());
    }
    let n = idx.len() as f64;
    let correct = eval.predictions.iter().zip(&eval.labels).filter(|(p, l)| p == l).count();
    eval.accuracy = correct as f64 / n;
    for w in &mut eval.view_weights {
        *w /= n;
    }
    Ok(eval)
}

/// Stratified fold membership: each class is shuffled and dealt round-robin,
/// continuing the deal across classes. Returns sorted test indices per fold.
pub fn fold_assignment(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>, PipelineError> {
    if folds < 2 || labels.len() < folds {
        return Err(PipelineError::TooFewGraphs {
            graphs: labels.len(),
            folds,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, 0xF01D));
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            out[next % folds].push(i);
            next += 1;
        }
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| test.binary_search(i).is_err()).collect()
}

fn feature_dim(features: &[GraphFeatures]) -> Result<usize, PipelineError> {
    let dim = features.first().map_or(0, |f| f.node_features.cols());
    if features.iter().any(|f| f.node_features.cols() != dim) {
        return Err(PipelineError::ShapeMismatch("graphs disagree on node feature width".into()));
    }
    Ok(dim)
}

/// Cross-validation on already extracted features. Folds train concurrently;
/// each derives its own seed from `(config.seed, fold)`.
pub fn kfold_cv_features(features: &[GraphFeatures], num_classes: usize, config: &RunConfig) -> Result<Metrics, PipelineError> {
    let labels: Vec<usize> = features.iter().map(|f| f.label).collect();
    let folds = fold_assignment(&labels, config.folds, config.seed)?;
    let model_config = config.model_config(feature_dim(features)?, num_classes);
    let results = folds
        .par_iter()
        .enumerate()
        .map(|(k, test)| {
            let train = complement(features.len(), test);
            let trained = fit(features, &train, config, model_config.clone(), trial_seed(config.seed, k as u64))?;
            let eval = evaluate(&trained.model, &trained.params, features, test)?;
            Ok((eval.accuracy, trained.loss_history))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let (acc, losses) = results.into_iter().unzip();
    Ok(Metrics::from_folds(acc, losses))
}

/// Stratified k-fold cross-validation of `config` on `dataset`.
pub fn kfold_cv(dataset: &Dataset, config: &RunConfig) -> Result<Metrics, PipelineError> {
    config.validate()?;
    if dataset.len() < config.folds {
        return Err(PipelineError::TooFewGraphs {
            graphs: dataset.len(),
            folds: config.folds,
        });
    }
    let start = Instant::now();
    let grid = feature_grid(dataset);
    let features = extract_descriptors(dataset, config, &grid)?;
    let extracted = start.elapsed().as_secs_f64();
    let mut metrics = kfold_cv_features(&features, dataset.num_classes, config)?;
    metrics.timings = vec![
        ("extract".into(), extracted),
        ("cross_validation".into(), start.elapsed().as_secs_f64() - extracted),
    ];
    Ok(metrics)
}

/// Best configuration over the hidden width, learning rate and dropout grid,
/// scored by cross-validated accuracy; ties keep the earlier grid point.
pub fn grid_search(dataset: &Dataset, config: &RunConfig) -> Result<(RunConfig, Vec<(RunConfig, f64)>), PipelineError> {
    config.validate()?;
    let grid = feature_grid(dataset);
    let features = extract_descriptors(dataset, config, &grid)?;
    let mut scored = Vec::new();
    for hidden_dim in RunConfig::HIDDEN_GRID {
        for lr in RunConfig::LR_GRID {
            for dropout in RunConfig::DROPOUT_GRID {
                let candidate = RunConfig {
                    hidden_dim,
                    lr,
                    dropout,
                    ..config.clone()
                };
                let m = kfold_cv_features(&features, dataset.num_classes, &candidate)?;
                scored.push((candidate, m.mean_accuracy));
            }
        }
    }
    let best = scored
        .iter()
        .fold(&scored[0], |best, c| if c.1 > best.1 { c } else { best })
        .0
        .clone();
    Ok((best, scored))
}

pub const BUNDLE_FORMAT: &str = "t3former-model";
pub const BUNDLE_VERSION: u32 = 1;

/// Trained weights plus everything needed to featurize new data the same way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub run: RunConfig,
    pub feature_grid: Vec<f64>,
    pub checkpoint: Checkpoint,
}

impl ModelBundle {
    pub fn new(run: RunConfig, feature_grid: Vec<f64>, model: &Model, params: ParamStore) -> Self {
        Self {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            run,
            feature_grid,
            checkpoint: Checkpoint::new(model.config().clone(), params),
        }
    }

    pub fn model(&self) -> Result<Model, PipelineError> {
        Ok(Model::from_params(self.checkpoint.config.clone(), &self.checkpoint.params)?)
    }

    pub fn params(&self) -> &ParamStore {
        &self.checkpoint.params
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string(self).map_err(|e| io_error(path, e))?;
        std::fs::write(path, text).map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let bundle: Self = serde_json::from_str(&text).map_err(|e| io_error(path, e))?;
        if bundle.format != BUNDLE_FORMAT || bundle.version != BUNDLE_VERSION {
            return Err(io_error(path, format!("not a {BUNDLE_FORMAT} v{BUNDLE_VERSION} file")));
        }
        bundle.model()?;
        Ok(bundle)
    }

    /// Featurizes `dataset` with the stored settings and evaluates every graph.
    pub fn evaluate_dataset(&self, dataset: &Dataset) -> Result<(Evaluation, AttentionReport), PipelineError> {
        let model = self.model()?;
        let features = extract_descriptors(dataset, &self.run, &self.feature_grid)?;
        let idx: Vec<usize> = (0..features.len()).collect();
        let eval = evaluate(&model, self.params(), &features, &idx)?;
        let mut report = AttentionReport::default();
        report.push(dataset.name.clone(), eval.view_weights);
        Ok((eval, report))
    }
}

/// Stratified holdout: `ceil(fraction * n_c)` graphs of each class, shuffled by seed.
fn holdout_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, 0x401D));
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut test = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let take = ((fraction * members.len() as f64).ceil() as usize).min(members.len().saturating_sub(1));
        test.extend_from_slice(&members[..take]);
    }
    test.sort_unstable();
    (complement(labels.len(), &test), test)
}

/// Trains on the whole dataset, or on a stratified split when
/// `config.holdout > 0`. The metrics hold the held-out accuracy, or the
/// training accuracy when nothing is held out.
pub fn train(dataset: &Dataset, config: &RunConfig) -> Result<(ModelBundle, Metrics), PipelineError> {
    config.validate()?;
    let start = Instant::now();
    let grid = feature_grid(dataset);
    let features = extract_descriptors(dataset, config, &grid)?;
    let extracted = start.elapsed().as_secs_f64();
    let labels = dataset.labels();
    let (train_idx, test_idx) = if config.holdout > 0.0 {
        holdout_split(&labels, config.holdout, config.seed)
    } else {
        ((0..labels.len()).collect(), Vec::new())
    };
    let model_config = config.model_config(feature_dim(&features)?, dataset.num_classes);
    let trained = fit(&features, &train_idx, config, model_config, config.seed)?;
    let scored = if test_idx.is_empty() { &train_idx } else { &test_idx };
    let eval = evaluate(&trained.model, &trained.params, &features, scored)?;
    let mut metrics = Metrics::from_folds(vec![eval.accuracy], vec![trained.loss_history]);
    metrics.timings = vec![
        ("extract".into(), extracted),
        ("train".into(), start.elapsed().as_secs_f64() - extracted),
    ];
    Ok((ModelBundle::new(config.clone(), grid, &trained.model, trained.params), metrics))
}

/// Mean cross-validated accuracy per `(delta, sigma)` cell; cells with
/// `sigma >= delta` are skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `cells[i][j]` holds `(mean, std)` for `deltas[i]`, `sigmas[j]`.
    pub cells: Vec<Vec<Option<(f64, f64)>>>,
}

impl SweepResult {
    /// `delta,sigma,accuracy,std` rows, with `NaN` in skipped cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,sigma,accuracy,std\n");
        for (i, d) in self.deltas.iter().enumerate() {
            for (j, s) in self.sigmas.iter().enumerate() {
                match self.cells[i][j] {
                    Some((m, sd)) => writeln!(out, "{d},{s},{m},{sd}"),
                    None => writeln!(out, "{d},{s},NaN,NaN"),
                }
                .expect("writing to a String cannot fail");
            }
        }
        out
    }
}

pub fn sweep_windows(dataset: &Dataset, config: &RunConfig, deltas: &[f64], sigmas: &[f64]) -> Result<SweepResult, PipelineError> {
    let grid = feature_grid(dataset);
    let mut cells = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut row = Vec::with_capacity(sigmas.len());
        for &sigma in sigmas {
            let cell = RunConfig {
                delta,
                sigma,
                ..config.clone()
            };
            if cell.window_spec().is_err() {
                row.push(None);
                continue;
            }
            let features = extract_descriptors(dataset, &cell, &grid)?;
            let m = kfold_cv_features(&features, dataset.num_classes, &cell)?;
            row.push(Some((m.mean_accuracy, m.std_accuracy)));
        }
        cells.push(row);
    }
    Ok(SweepResult {
        deltas: deltas.to_vec(),
        sigmas: sigmas.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ModelMode;
    use crate::pipeline::{synth_generate, SynthSpec};

    fn small_dataset(n: usize) -> Dataset {
        synth_generate(
            &SynthSpec {
                num_graphs: n,
                nodes: 12,
                timesteps: 12,
                tree_size: 6,
                ..SynthSpec::default()
            },
            5,
        )
        .unwrap()
    }

    fn quick() -> RunConfig {
        RunConfig {
            hidden_dim: 8,
            d_model: 8,
            ffn_dim: 16,
            epochs: 3,
            ..RunConfig::default()
        }
    }

    #[test]
    fn folds_are_stratified_and_seeded() {
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let folds = fold_assignment(&labels, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        assert_eq!(folds, fold_assignment(&labels, 5, 1).unwrap());
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let labels: Vec<usize> = (0..47).map(|i| usize::from(i % 3 == 0)).collect();
        let ones = labels.iter().sum::<usize>() as f64 / labels.len() as f64;
        for fold in fold_assignment(&labels, 5, 9).unwrap() {
            let got = fold.iter().filter(|&&i| labels[i] == 1).count() as f64;
            assert!((got - ones * fold.len() as f64).abs() <= 1.0);
        }
        assert!(matches!(fold_assignment(&[0, 1], 5, 0), Err(PipelineError::TooFewGraphs { .. })));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let ds = small_dataset(6);
        let config = RunConfig {
            lr: 0.0,
            ..quick()
        };
        let features = extract_descriptors(&ds, &config, &feature_grid(&ds)).unwrap();
        let mc = config.model_config(features[0].node_features.cols(), 2);
        let (_, init) = Model::new(mc.clone(), 3).unwrap();
        let trained = fit(&features, &[0, 1, 2, 3, 4, 5], &config, mc, 3).unwrap();
        assert_eq!(trained.params, init);
        let h = &trained.loss_history;
        assert!(h.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12), "{h:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_dataset(8);
        let config = quick();
        let (a, ma) = train(&ds, &config).unwrap();
        let (b, mb) = train(&ds, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma.to_csv(), mb.to_csv());
    }

    #[test]
    fn bundle_round_trip_and_attention() {
        let ds = small_dataset(6);
        let (bundle, _) = train(&ds, &quick()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        bundle.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back, bundle);
        let (eval, report) = back.evaluate_dataset(&ds).unwrap();
        assert_eq!(eval.embeddings[0].len(), 30);
        let w = report.rows[0].1;
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let csv = eval.embeddings_csv(&(0..ds.len()).collect::<Vec<_>>());
        assert!(csv.starts_with("graph_id,label,prediction,e0,"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn constant_model_scores_half_on_balanced_data() {
        let ds = small_dataset(8);
        let config = quick();
        let features = extract_descriptors(&ds, &config, &feature_grid(&ds)).unwrap();
        let mc = config.model_config(features[0].node_features.cols(), 2);
        let (model, mut params) = Model::new(mc, 1).unwrap();
        let names: Vec<String> = params.names().to_vec();
        for (name, t) in names.iter().zip(params.tensors_mut()) {
            if name.starts_with("classifier") {
                t.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let eval = evaluate(&model, &params, &features, &(0..8).collect::<Vec<_>>()).unwrap();
        assert_eq!(eval.accuracy, 0.5);
    }

    #[test]
    fn shape_mismatch_between_model_and_data() {
        let ds = small_dataset(4);
        let config = quick();
        let features = extract_descriptors(&ds, &config, &feature_grid(&ds)).unwrap();
        let mc = config.model_config(features[0].node_features.cols() + 1, 2);
        let (model, params) = Model::new(mc, 1).unwrap();
        assert!(matches!(evaluate(&model, &params, &features, &[0]), Err(PipelineError::ShapeMismatch(_))));
    }

    #[test]
    fn sweep_marks_invalid_cells() {
        let ds = small_dataset(6);
        let config = RunConfig {
            folds: 2,
            epochs: 1,
            mode: ModelMode::TopoOnly,
            ..quick()
        };
        let sweep = sweep_windows(&ds, &config, &[4.0], &[2.0, 4.0]).unwrap();
        assert!(sweep.cells[0][0].is_some());
        assert!(sweep.cells[0][1].is_none());
        let csv = sweep.to_csv();
        assert!(csv.contains("4,4,NaN,NaN"));
        let single = kfold_cv(&ds, &RunConfig { delta: 4.0, sigma: 2.0, ..config }).unwrap();
        assert_eq!(sweep.cells[0][0], Some((single.mean_accuracy, single.std_accuracy)));
    }

    #[test]
    fn holdout_split_is_stratified() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let (train, test) = holdout_split(&labels, 0.2, 1);
        assert_eq!(test.len(), 4);
        assert_eq!(train.len() + test.len(), 20);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 2);
    }
}
