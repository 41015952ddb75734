use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::{io_error, Dataset, FeatureMode, PipelineError, RunConfig};
use crate::neural::{neighbor_lists, GraphInput, Tensor};
use crate::spectral::{spectral_descriptor, DosHistogram};
use crate::temporal_graph::{static_projection, temporal_degree, window_sequence, TemporalGraph};
use crate::topology::{topo_descriptor_with, TopoDescriptor};

/// Longest timestep grid used for temporal-degree features; datasets with
/// more distinct timestamps are resampled onto an even grid of this length.
pub const MAX_FEATURE_STEPS: usize = 64;

const TOPO_FILE: &str = "topo.csv";
const DOS_FILE: &str = "dos.csv";
const META_FILE: &str = "cache.txt";

/// Descriptor sequences and structural inputs of one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphFeatures {
    pub topo: Vec<TopoDescriptor>,
    pub dos: Vec<DosHistogram>,
    /// One row per node.
    pub node_features: Tensor,
    pub neighbors: Arc<Vec<Vec<usize>>>,
    pub label: usize,
}

impl GraphFeatures {
    pub fn num_windows(&self) -> usize {
        self.topo.len()
    }

    /// Model input. Topological counts enter as `log(1 + x)`.
    pub fn input(&self) -> GraphInput {
        let bins = self.dos.first().map_or(0, DosHistogram::bin_count);
        let topo = self.topo.iter().flat_map(|d| d.to_array().map(f64::ln_1p)).collect();
        let dos = self.dos.iter().flat_map(|h| h.mass.iter().copied()).collect();
        GraphInput {
            topo_tokens: Tensor::matrix(self.topo.len(), 4, topo),
            dos_tokens: Tensor::matrix(self.dos.len(), bins, dos),
            node_features: self.node_features.clone(),
            neighbors: Arc::clone(&self.neighbors),
        }
    }
}

/// Timestep grid for temporal-degree features: every distinct timestamp in
/// the dataset, or an even resampling when there are too many.
pub fn feature_grid(dataset: &Dataset) -> Vec<f64> {
    let mut steps: Vec<f64> = dataset.graphs.iter().flat_map(|g| g.events().iter().map(|e| e.t)).collect();
    steps.sort_by(f64::total_cmp);
    steps.dedup();
    if steps.len() <= MAX_FEATURE_STEPS {
        return steps;
    }
    let (lo, hi) = (steps[0], steps[steps.len() - 1]);
    let step = (hi - lo) / (MAX_FEATURE_STEPS - 1) as f64;
    (0..MAX_FEATURE_STEPS).map(|i| lo + i as f64 * step).collect()
}

fn window_descriptors(
    graph: &TemporalGraph,
    config: &RunConfig,
) -> Result<(Vec<TopoDescriptor>, Vec<DosHistogram>), PipelineError> {
    let windows = window_sequence(graph, &config.window_spec()?)?;
    let topo = windows.iter().map(|w| topo_descriptor_with(w, config.count_multiplicity)).collect();
    let dos = windows
        .iter()
        .map(|w| spectral_descriptor(w, config.dos_bins))
        .collect::<Result<_, _>>()?;
    Ok((topo, dos))
}

fn node_features(dataset: &Dataset, index: usize, config: &RunConfig, grid: &[f64]) -> Result<Tensor, PipelineError> {
    let graph = &dataset.graphs[index];
    match config.feature_mode {
        FeatureMode::Provided => {
            let features = dataset
                .node_features
                .as_ref()
                .ok_or_else(|| PipelineError::ShapeMismatch("feature_mode = provided but the dataset has no .feat sidecars".into()))?;
            Ok(features[index].clone())
        }
        mode => {
            let mut degree = temporal_degree(graph, grid)?;
            if mode == FeatureMode::Binary {
                degree = degree.binarized();
            }
            let data = degree.to_f64().into_iter().map(f64::ln_1p).collect();
            Ok(Tensor::matrix(degree.rows(), degree.cols(), data))
        }
    }
}

fn assemble(
    dataset: &Dataset,
    index: usize,
    config: &RunConfig,
    grid: &[f64],
    topo: Vec<TopoDescriptor>,
    dos: Vec<DosHistogram>,
) -> Result<GraphFeatures, PipelineError> {
    let graph = &dataset.graphs[index];
    Ok(GraphFeatures {
        topo,
        dos,
        node_features: node_features(dataset, index, config, grid)?,
        neighbors: neighbor_lists(&static_projection(graph)),
        label: graph.label().expect("dataset graphs are labelled"),
    })
}

/// Window descriptors and node features of every graph, computed in parallel.
pub fn extract_descriptors(dataset: &Dataset, config: &RunConfig, grid: &[f64]) -> Result<Vec<GraphFeatures>, PipelineError> {
    config.validate()?;
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let (topo, dos) = window_descriptors(&dataset.graphs[i], config)?;
            assemble(dataset, i, config, grid, topo, dos)
        })
        .collect()
}

/// Window descriptors as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorCache {
    pub delta: f64,
    pub sigma: f64,
    pub dos_bins: usize,
    pub count_multiplicity: bool,
    pub topo: Vec<Vec<TopoDescriptor>>,
    pub dos: Vec<Vec<DosHistogram>>,
}

impl DescriptorCache {
    pub fn from_features(config: &RunConfig, features: &[GraphFeatures]) -> Self {
        Self {
            delta: config.delta,
            sigma: config.sigma,
            dos_bins: config.dos_bins,
            count_multiplicity: config.count_multiplicity,
            topo: features.iter().map(|f| f.topo.clone()).collect(),
            dos: features.iter().map(|f| f.dos.clone()).collect(),
        }
    }

    fn matches(&self, config: &RunConfig, graphs: usize) -> bool {
        self.delta == config.delta
            && self.sigma == config.sigma
            && self.dos_bins == config.dos_bins
            && self.count_multiplicity == config.count_multiplicity
            && self.topo.len() == graphs
    }
}

/// Writes `topo.csv` (`graph_id,window_index,v,e,b0,b1`), `dos.csv`
/// (`graph_id,window_index,dos_0..,empty_flag`) and the window settings.
pub fn write_descriptor_cache(dir: &Path, cache: &DescriptorCache) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut topo = String::from("graph_id,window_index,v,e,b0,b1\n");
    for (g, seq) in cache.topo.iter().enumerate() {
        for (w, d) in seq.iter().enumerate() {
            let _ = writeln!(topo, "{g},{w},{},{},{},{}", d.v_count, d.e_count, d.betti0, d.betti1);
        }
    }
    let mut dos = String::from("graph_id,window_index");
    for b in 0..cache.dos_bins {
        let _ = write!(dos, ",dos_{b}");
    }
    dos.push_str(",empty_flag\n");
    for (g, seq) in cache.dos.iter().enumerate() {
        for (w, h) in seq.iter().enumerate() {
            let _ = write!(dos, "{g},{w}");
            for m in &h.mass {
                let _ = write!(dos, ",{m}");
            }
            let _ = writeln!(dos, ",{}", u8::from(h.empty));
        }
    }
    let meta = format!(
        "delta = {}\nsigma = {}\ndos_bins = {}\ncount_multiplicity = {}\ngraphs = {}\n",
        cache.delta,
        cache.sigma,
        cache.dos_bins,
        cache.count_multiplicity,
        cache.topo.len()
    );
    for (name, text) in [(TOPO_FILE, topo), (DOS_FILE, dos), (META_FILE, meta)] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    }
    Ok(())
}

fn read_rows(dir: &Path, name: &str) -> Result<Vec<(usize, Vec<String>)>, PipelineError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(|s| s.trim().to_string()).collect()))
        .collect())
}

fn field<T: std::str::FromStr>(file: &str, line: usize, value: &str) -> Result<T, PipelineError> {
    value.parse().map_err(|_| PipelineError::Parse {
        file: file.to_string(),
        line,
        message: format!("bad field `{value}`"),
    })
}

/// Pushes `value` onto the sequence of `graph`, insisting rows arrive in order.
fn push_row<T>(seqs: &mut Vec<Vec<T>>, graph: usize, window: usize, value: T, file: &str, line: usize) -> Result<(), PipelineError> {
    if graph == seqs.len() {
        seqs.push(Vec::new());
    }
    let last = seqs.len().wrapping_sub(1);
    match seqs.get_mut(graph) {
        Some(seq) if seq.len() == window && graph == last => {
            seq.push(value);
            Ok(())
        }
        _ => Err(PipelineError::Parse {
            file: file.to_string(),
            line,
            message: format!("row ({graph}, {window}) out of order"),
        }),
    }
}

pub fn read_descriptor_cache(dir: &Path) -> Result<DescriptorCache, PipelineError> {
    let meta_path = dir.join(META_FILE);
    let meta = fs::read_to_string(&meta_path).map_err(|e| io_error(&meta_path, e))?;
    let lookup = |key: &str| -> Result<String, PipelineError> {
        meta.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_string())
            .ok_or_else(|| PipelineError::Parse {
                file: META_FILE.into(),
                line: 0,
                message: format!("missing `{key}`"),
            })
    };
    let dos_bins: usize = field(META_FILE, 0, &lookup("dos_bins")?)?;
    let mut cache = DescriptorCache {
        delta: field(META_FILE, 0, &lookup("delta")?)?,
        sigma: field(META_FILE, 0, &lookup("sigma")?)?,
        dos_bins,
        count_multiplicity: field(META_FILE, 0, &lookup("count_multiplicity")?)?,
        topo: Vec::new(),
        dos: Vec::new(),
    };
    for (line, row) in read_rows(dir, TOPO_FILE)? {
        if row.len() != 6 {
            return Err(field::<usize>(TOPO_FILE, line, "wrong column count").unwrap_err());
        }
        let n: Vec<usize> = row.iter().map(|v| field(TOPO_FILE, line, v)).collect::<Result<_, _>>()?;
        let d = TopoDescriptor {
            v_count: n[2],
            e_count: n[3],
            betti0: n[4],
            betti1: n[5],
        };
        push_row(&mut cache.topo, n[0], n[1], d, TOPO_FILE, line)?;
    }
    for (line, row) in read_rows(dir, DOS_FILE)? {
        if row.len() != dos_bins + 3 {
            return Err(field::<usize>(DOS_FILE, line, "wrong column count").unwrap_err());
        }
        let graph: usize = field(DOS_FILE, line, &row[0])?;
        let window: usize = field(DOS_FILE, line, &row[1])?;
        let mass: Vec<f64> = row[2..2 + dos_bins].iter().map(|v| field(DOS_FILE, line, v)).collect::<Result<_, _>>()?;
        let empty: u8 = field(DOS_FILE, line, &row[2 + dos_bins])?;
        let hist = DosHistogram::from_mass(mass, empty == 1)?;
        push_row(&mut cache.dos, graph, window, hist, DOS_FILE, line)?;
    }
    let topo_lens = cache.topo.iter().map(Vec::len);
    if !topo_lens.eq(cache.dos.iter().map(Vec::len)) {
        return Err(PipelineError::Parse {
            file: DOS_FILE.into(),
            line: 0,
            message: "topological and spectral caches disagree on window counts".into(),
        });
    }
    Ok(cache)
}

/// Reads descriptors from `cache_dir` when it holds a cache built with the same
/// window settings; otherwise extracts them and writes the cache.
pub fn extract_with_cache(
    dataset: &Dataset,
    config: &RunConfig,
    grid: &[f64],
    cache_dir: &Path,
) -> Result<Vec<GraphFeatures>, PipelineError> {
    if let Ok(cache) = read_descriptor_cache(cache_dir) {
        if cache.matches(config, dataset.len()) {
            return cache
                .topo
                .into_iter()
                .zip(cache.dos)
                .enumerate()
                .map(|(i, (topo, dos))| assemble(dataset, i, config, grid, topo, dos))
                .collect();
        }
    }
    let features = extract_descriptors(dataset, config, grid)?;
    write_descriptor_cache(cache_dir, &DescriptorCache::from_features(config, &features))?;
    Ok(features)
}
