//! Perturbation campaigns that measure how far the descriptors move when the
//! input moves.
//!
//! Two experiments are supported. Timestamp jitter compares the
//! zero-dimensional Betti curves of the sublevel filtration before and after
//! the jitter; the ratio of curve distance to timestamp distance estimates the
//! topological stability constant. Edge edits compare density-of-states
//! histograms; the ratio of their Wasserstein distance to `k / n` estimates
//! the spectral constant. Constants are reported, never assumed.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::spectral::{spectral_descriptor, wasserstein1_hist, SpectralError};
use crate::temporal_graph::{window_sequence, Event, GraphError, TemporalGraph, WindowGraph, WindowSpec};
use crate::topology::{betti_curve, sublevel_persistence0, EdgeFiltration, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("cannot apply {k} edge modifications: only {applied} were feasible")]
    InfeasibleK { k: usize, applied: usize },
    #[error("invalid campaign: {0}")]
    InvalidSpec(String),
}

/// Deterministic per-trial seed derived from a campaign seed.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(trial))
}

/// Shifts every event time by independent `U[-eps, eps]` noise. Returns the
/// perturbed graph and the exact L1 distance between old and new times.
pub fn perturb_timestamps(graph: &TemporalGraph, eps: f64, seed: u64) -> Result<(TemporalGraph, f64), StabilityError> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(StabilityError::InvalidSpec(format!("eps must be a finite nonnegative number, got {eps}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = graph
        .events()
        .iter()
        .map(|e| if eps > 0.0 { e.t + rng.gen_range(-eps..=eps) } else { e.t })
        .collect();
    let l1 = graph.events().iter().zip(&times).map(|(e, t)| (t - e.t).abs()).sum();
    Ok((graph.retimed(&times)?, l1))
}

/// Restricts the kind of edge modification drawn by [`perturb_edges`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeEdit {
    /// Insertion or deletion with equal probability, falling back to the
    /// other kind when one is unavailable.
    Mixed,
    InsertOnly,
    DeleteOnly,
}

/// Applies exactly `k` distinct edge insertions or deletions among the
/// window's nodes. Deletions never isolate a node, so the node set is kept.
pub fn perturb_edges(window: &WindowGraph, k: usize, seed: u64, edit: EdgeEdit) -> Result<WindowGraph, StabilityError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = window.nodes();
    let mut edges: BTreeSet<(usize, usize)> = window.edges().iter().copied().collect();
    let mut touched: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut degree = std::collections::BTreeMap::<usize, usize>::new();
    for &(u, v) in &edges {
        *degree.entry(u).or_default() += 1;
        *degree.entry(v).or_default() += 1;
    }
    for applied in 0..k {
        let insertions: Vec<(usize, usize)> = nodes
            .iter()
            .enumerate()
            .flat_map(|(i, &u)| nodes[i + 1..].iter().map(move |&v| (u, v)))
            .filter(|p| !edges.contains(p) && !touched.contains(p))
            .collect();
        let deletions: Vec<(usize, usize)> = edges
            .iter()
            .copied()
            .filter(|p| !touched.contains(p) && degree[&p.0] > 1 && degree[&p.1] > 1)
            .collect();
        let insert = match edit {
            EdgeEdit::InsertOnly => true,
            EdgeEdit::DeleteOnly => false,
            EdgeEdit::Mixed => {
                let coin = rng.gen_bool(0.5);
                if coin {
                    !insertions.is_empty() || deletions.is_empty()
                } else {
                    deletions.is_empty()
                }
            }
        };
        let pool = if insert { &insertions } else { &deletions };
        let &pair = pool.choose(&mut rng).ok_or(StabilityError::InfeasibleK { k, applied })?;
        touched.insert(pair);
        let (u, v) = pair;
        if insert {
            edges.insert(pair);
            *degree.entry(u).or_default() += 1;
            *degree.entry(v).or_default() += 1;
        } else {
            edges.remove(&pair);
            *degree.get_mut(&u).expect("endpoint has a degree") -= 1;
            *degree.get_mut(&v).expect("endpoint has a degree") -= 1;
        }
    }
    Ok(WindowGraph::from_edges(window.window_index, window.t_start, window.delta, edges))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopoTrial {
    /// Integrated L1 distance between the two zero-dimensional Betti curves.
    pub lhs: f64,
    /// L1 distance between the two timestamp functions.
    pub rhs: f64,
}

/// Betti-curve distance between two sublevel filtrations of the same graph,
/// sampled on the union of their critical values.
pub fn betti_curve_distance(a: &EdgeFiltration, b: &EdgeFiltration) -> Result<f64, StabilityError> {
    let mut grid: Vec<f64> = a.critical_values().into_iter().chain(b.critical_values()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.is_empty() {
        return Ok(0.0);
    }
    let ca = betti_curve(&sublevel_persistence0(a, false), &grid)?;
    let cb = betti_curve(&sublevel_persistence0(b, false), &grid)?;
    Ok(ca.integrated_l1_distance(&cb)?)
}

pub fn topo_stability_trial(graph: &TemporalGraph, eps: f64, seed: u64) -> Result<TopoTrial, StabilityError> {
    if graph.is_empty() {
        return Err(GraphError::EmptyGraph.into());
    }
    let (perturbed, rhs) = perturb_timestamps(graph, eps, seed)?;
    let lhs = betti_curve_distance(&EdgeFiltration::from_temporal(graph), &EdgeFiltration::from_temporal(&perturbed))?;
    Ok(TopoTrial { lhs, rhs })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralTrial {
    pub w1: f64,
    /// `k / n` with `n` the window's node count.
    pub ratio_base: f64,
}

pub fn spectral_stability_trial(window: &WindowGraph, k: usize, seed: u64, bins: usize) -> Result<SpectralTrial, StabilityError> {
    if window.is_empty() {
        return Err(SpectralError::EmptyWindow.into());
    }
    let perturbed = perturb_edges(window, k, seed, EdgeEdit::Mixed)?;
    let before = spectral_descriptor(window, bins)?;
    let after = spectral_descriptor(&perturbed, bins)?;
    Ok(SpectralTrial {
        w1: wasserstein1_hist(&before, &after)?,
        ratio_base: k as f64 / window.num_nodes() as f64,
    })
}

/// Erdős–Rényi `G(n, p)` window with isolated nodes dropped.
pub fn random_window(rng: &mut ChaCha8Rng, n: usize, p: f64) -> WindowGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    WindowGraph::from_edges(0, 0.0, 1.0, edges)
}

/// Erdős–Rényi graph with one event per edge at a uniform time in `[0, horizon]`.
pub fn random_temporal_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, horizon: f64) -> TemporalGraph {
    loop {
        let mut events = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(p) {
                    events.push(Event::new(u, v, rng.gen_range(0.0..=horizon)));
                }
            }
        }
        if let Ok(g) = TemporalGraph::from_events(n, events) {
            return g;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilityMode {
    Topo,
    Spectral,
}

impl StabilityMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Topo => "topo",
            Self::Spectral => "spectral",
        }
    }
}

impl std::str::FromStr for StabilityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "topo" => Ok(Self::Topo),
            "spectral" => Ok(Self::Spectral),
            other => Err(format!("unknown stability mode `{other}`")),
        }
    }
}

/// Where campaign graphs come from.
#[derive(Clone, Copy, Debug)]
pub enum CampaignSource<'a> {
    Graphs(&'a [TemporalGraph]),
    /// Random graphs with node counts in `n_min..=n_max` and edge probability `p`.
    Random { n_min: usize, n_max: usize, p: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub mode: StabilityMode,
    /// Timestamp noise scales, cycled across trials (topological mode).
    pub eps_values: Vec<f64>,
    /// Edge modifications per trial cycle through `1..=k_max` (spectral mode).
    pub k_max: usize,
    pub trials: usize,
    pub seed: u64,
    pub dos_bins: usize,
    /// Windowing used to pick windows from dataset graphs (spectral mode).
    pub window: WindowSpec,
}

impl PerturbationSpec {
    pub fn topo(eps_values: Vec<f64>, trials: usize, seed: u64) -> Self {
        Self {
            mode: StabilityMode::Topo,
            eps_values,
            k_max: 0,
            trials,
            seed,
            dos_bins: 4,
            window: WindowSpec::default(),
        }
    }

    pub fn spectral(k_max: usize, trials: usize, seed: u64) -> Self {
        Self {
            mode: StabilityMode::Spectral,
            eps_values: Vec::new(),
            k_max,
            trials,
            seed,
            dos_bins: 4,
            window: WindowSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    /// `eps` in topological mode, `k` in spectral mode.
    pub parameter: f64,
    /// `||tau_1 - tau_2||_1` or `k / n`.
    pub magnitude: f64,
    pub distance: f64,
    pub nodes: usize,
    pub edges: usize,
}

impl TrialRecord {
    pub fn ratio(&self) -> Option<f64> {
        (self.magnitude > 0.0).then(|| self.distance / self.magnitude)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub mode: StabilityMode,
    pub trials: Vec<TrialRecord>,
    /// Largest observed `distance / magnitude`; `None` when no trial moved the input.
    pub empirical_constant: Option<f64>,
    /// Mean distance per perturbation parameter, in first-seen order.
    pub parameter_means: Vec<(f64, f64)>,
}

impl StabilityReport {
    fn from_trials(mode: StabilityMode, trials: Vec<TrialRecord>) -> Self {
        let empirical_constant = trials.iter().filter_map(TrialRecord::ratio).reduce(f64::max);
        let mut groups: Vec<(f64, f64, usize)> = Vec::new();
        for t in &trials {
            match groups.iter_mut().find(|g| g.0 == t.parameter) {
                Some(g) => {
                    g.1 += t.distance;
                    g.2 += 1;
                }
                None => groups.push((t.parameter, t.distance, 1)),
            }
        }
        Self {
            mode,
            trials,
            empirical_constant,
            parameter_means: groups.into_iter().map(|(p, s, n)| (p, s / n as f64)).collect(),
        }
    }

    pub fn mean_for(&self, parameter: f64) -> Option<f64> {
        self.parameter_means.iter().find(|g| g.0 == parameter).map(|g| g.1)
    }

    /// `trial,mode,magnitude,distance,ratio` rows followed by a summary row
    /// holding the mean magnitude, mean distance and the empirical constant.
    pub fn to_csv(&self) -> String {
        let mode = self.mode.as_str();
        let mut out = String::from("trial,mode,magnitude,distance,ratio\n");
        for t in &self.trials {
            let ratio = t.ratio().map_or_else(|| "NaN".to_string(), |r| r.to_string());
            let _ = writeln!(out, "{},{mode},{},{},{ratio}", t.trial, t.magnitude, t.distance);
        }
        let n = self.trials.len().max(1) as f64;
        let mean_mag = self.trials.iter().map(|t| t.magnitude).sum::<f64>() / n;
        let mean_dist = self.trials.iter().map(|t| t.distance).sum::<f64>() / n;
        let constant = self.empirical_constant.map_or_else(|| "NaN".to_string(), |c| c.to_string());
        let _ = writeln!(out, "summary,{mode},{mean_mag},{mean_dist},{constant}");
        out
    }
}

/// Runs independent trials in parallel; each trial seeds its own stream from
/// `(spec.seed, trial)`, so results do not depend on scheduling.
pub fn run_campaign(source: CampaignSource<'_>, spec: &PerturbationSpec) -> Result<StabilityReport, StabilityError> {
    if spec.trials == 0 {
        return Err(StabilityError::InvalidSpec("campaign needs at least one trial".into()));
    }
    match source {
        CampaignSource::Graphs([]) => return Err(StabilityError::InvalidSpec("no graphs supplied".into())),
        CampaignSource::Random { n_min, n_max, p } if n_min < 2 || n_min > n_max || !(0.0..=1.0).contains(&p) => {
            return Err(StabilityError::InvalidSpec("bad random graph parameters".into()))
        }
        _ => {}
    }
    match spec.mode {
        StabilityMode::Topo if spec.eps_values.is_empty() => {
            return Err(StabilityError::InvalidSpec("no eps values".into()))
        }
        StabilityMode::Spectral if spec.k_max == 0 => return Err(StabilityError::InvalidSpec("k_max must be positive".into())),
        _ => {}
    }
    let trials = (0..spec.trials)
        .into_par_iter()
        .map(|i| run_trial(source, spec, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StabilityReport::from_trials(spec.mode, trials))
}

fn run_trial(source: CampaignSource<'_>, spec: &PerturbationSpec, i: usize) -> Result<TrialRecord, StabilityError> {
    match spec.mode {
        StabilityMode::Topo => {
            // Consecutive trials share a graph and sweep the eps list.
            let group = i / spec.eps_values.len();
            let eps = spec.eps_values[i % spec.eps_values.len()];
            let graph = match source {
                CampaignSource::Graphs(graphs) => graphs[group % graphs.len()].clone(),
                CampaignSource::Random { n_min, n_max, p } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, group as u64));
                    let n = rng.gen_range(n_min..=n_max);
                    random_temporal_graph(&mut rng, n, p, 24.0)
                }
            };
            let t = topo_stability_trial(&graph, eps, trial_seed(spec.seed ^ 0x7091, i as u64))?;
            Ok(TrialRecord {
                trial: i,
                parameter: eps,
                magnitude: t.rhs,
                distance: t.lhs,
                nodes: graph.num_nodes(),
                edges: graph.min_pair_times().len(),
            })
        }
        StabilityMode::Spectral => {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, i as u64));
            let k = 1 + i % spec.k_max;
            let window = match source {
                CampaignSource::Graphs(graphs) => pick_window(&graphs[i % graphs.len()], &spec.window, k, &mut rng)?,
                CampaignSource::Random { n_min, n_max, p } => {
                    let n = rng.gen_range(n_min..=n_max);
                    random_window(&mut rng, n, p)
                }
            };
            let t = spectral_stability_trial(&window, k, rng.gen(), spec.dos_bins)?;
            Ok(TrialRecord {
                trial: i,
                parameter: k as f64,
                magnitude: t.ratio_base,
                distance: t.w1,
                nodes: window.num_nodes(),
                edges: window.num_edges(),
            })
        }
    }
}

/// A random window with room for `k` insertions.
fn pick_window(graph: &TemporalGraph, spec: &WindowSpec, k: usize, rng: &mut ChaCha8Rng) -> Result<WindowGraph, StabilityError> {
    let windows = window_sequence(graph, spec)?;
    let roomy: Vec<WindowGraph> = windows
        .into_iter()
        .filter(|w| {
            let n = w.num_nodes();
            n >= 3 && n * (n - 1) / 2 >= w.num_edges() + k
        })
        .collect();
    roomy
        .choose(rng)
        .cloned()
        .ok_or(StabilityError::InfeasibleK { k, applied: 0 })
}
