//! Temporal graphs, sliding-window filtration and node features derived from
//! edge activity.
//!
//! A [`TemporalGraph`] is a node count plus a time-sorted list of undirected
//! interaction events. Windows are closed intervals `[t, t + delta]`; the
//! sequence produced by [`window_sequence`] is anchored at `t_min` and advances
//! by the stride `sigma`, so consecutive windows overlap by `delta - sigma`.

use std::collections::BTreeMap;

use thiserror::Error;

/// Relative slack used when turning the window-count ratio into an integer.
const COUNT_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("event {index}: node {node} is out of range for a graph with {num_nodes} nodes")]
    OutOfRangeNode {
        index: usize,
        node: usize,
        num_nodes: usize,
    },
    #[error("event {index}: self-loop on node {node}")]
    SelfLoop { index: usize, node: usize },
    #[error("event {index}: timestamp is not finite")]
    NonFiniteTimestamp { index: usize },
    #[error("event list is empty")]
    EmptyEventList,
    #[error("graph has no events")]
    EmptyGraph,
    #[error("invalid window spec: delta={delta}, sigma={sigma} (need delta > 0 and 0 < sigma < delta)")]
    InvalidWindowSpec { delta: f64, sigma: f64 },
    #[error("window length must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("timestep grid is empty")]
    EmptyTimesteps,
}

/// One undirected interaction between `u` and `v` at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub u: usize,
    pub v: usize,
    pub t: f64,
}

impl Event {
    pub fn new(u: usize, v: usize, t: f64) -> Self {
        Self { u, v, t }
    }

    /// Endpoints as an ordered pair `(min, max)`.
    pub fn pair(&self) -> (usize, usize) {
        if self.u < self.v {
            (self.u, self.v)
        } else {
            (self.v, self.u)
        }
    }
}

impl From<(usize, usize, f64)> for Event {
    fn from((u, v, t): (usize, usize, f64)) -> Self {
        Self { u, v, t }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGraph {
    num_nodes: usize,
    events: Vec<Event>,
    label: Option<usize>,
    span: Option<(f64, f64)>,
}

impl TemporalGraph {
    /// Builds a graph from a nonempty event list. Events are stably sorted by
    /// timestamp; repeated pairs are kept.
    pub fn from_events<E>(num_nodes: usize, events: impl IntoIterator<Item = E>) -> Result<Self, GraphError>
    where
        E: Into<Event>,
    {
        let graph = Self::from_events_allowing_empty(num_nodes, events)?;
        if graph.events.is_empty() {
            return Err(GraphError::EmptyEventList);
        }
        Ok(graph)
    }

    /// Same as [`TemporalGraph::from_events`] but accepts an empty event list.
    pub fn from_events_allowing_empty<E>(
        num_nodes: usize,
        events: impl IntoIterator<Item = E>,
    ) -> Result<Self, GraphError>
    where
        E: Into<Event>,
    {
        let mut events: Vec<Event> = events.into_iter().map(Into::into).collect();
        for (index, e) in events.iter().enumerate() {
            for node in [e.u, e.v] {
                if node >= num_nodes {
                    return Err(GraphError::OutOfRangeNode {
                        index,
                        node,
                        num_nodes,
                    });
                }
            }
            if e.u == e.v {
                return Err(GraphError::SelfLoop { index, node: e.u });
            }
            if !e.t.is_finite() {
                return Err(GraphError::NonFiniteTimestamp { index });
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        let span = match (events.first(), events.last()) {
            (Some(first), Some(last)) => Some((first.t, last.t)),
            _ => None,
        };
        Ok(Self {
            num_nodes,
            events,
            label: None,
            span,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn t_min(&self) -> Option<f64> {
        self.span.map(|(lo, _)| lo)
    }

    pub fn t_max(&self) -> Option<f64> {
        self.span.map(|(_, hi)| hi)
    }

    /// Sorted distinct timestamps.
    pub fn timesteps(&self) -> Vec<f64> {
        let mut steps: Vec<f64> = self.events.iter().map(|e| e.t).collect();
        steps.dedup();
        steps
    }

    /// Replaces every timestamp, keeping endpoints and label. `times[i]` is the
    /// new time of `self.events()[i]`.
    pub fn retimed(&self, times: &[f64]) -> Result<Self, GraphError> {
        assert_eq!(times.len(), self.events.len(), "one timestamp per event");
        let events = self
            .events
            .iter()
            .zip(times)
            .map(|(e, &t)| Event::new(e.u, e.v, t));
        let mut graph = Self::from_events_allowing_empty(self.num_nodes, events)?;
        graph.label = self.label;
        Ok(graph)
    }

    /// Earliest timestamp of every distinct unordered pair, ordered by pair.
    pub fn min_pair_times(&self) -> BTreeMap<(usize, usize), f64> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            out.entry(e.pair())
                .and_modify(|t: &mut f64| *t = t.min(e.t))
                .or_insert(e.t);
        }
        out
    }
}

/// Window length and stride.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSpec {
    delta: f64,
    sigma: f64,
}

impl WindowSpec {
    pub fn new(delta: f64, sigma: f64) -> Result<Self, GraphError> {
        let valid = delta.is_finite() && sigma.is_finite() && delta > 0.0 && sigma > 0.0 && sigma < delta;
        if !valid {
            return Err(GraphError::InvalidWindowSpec { delta, sigma });
        }
        Ok(Self { delta, sigma })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            delta: 6.0,
            sigma: 4.0,
        }
    }
}

/// The subgraph induced by the events whose time lies in `[t_start, t_start + delta]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowGraph {
    pub window_index: usize,
    pub t_start: f64,
    pub delta: f64,
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
    multiplicity: Vec<usize>,
}

impl WindowGraph {
    /// Builds a window from (possibly repeated) edges given in global node ids.
    /// Repeats raise the multiplicity; self-loops are dropped.
    pub fn from_edges(
        window_index: usize,
        t_start: f64,
        delta: f64,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (u, v) in edges {
            if u == v {
                continue;
            }
            let key = if u < v { (u, v) } else { (v, u) };
            *counts.entry(key).or_insert(0) += 1;
        }
        let mut nodes: Vec<usize> = counts.keys().flat_map(|&(u, v)| [u, v]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let (edges, multiplicity) = counts.into_iter().unzip();
        Self {
            window_index,
            t_start,
            delta,
            nodes,
            edges,
            multiplicity,
        }
    }

    /// Global node ids, sorted.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Deduplicated undirected edges `(u, v)` with `u < v`, in global ids, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Event count per entry of [`WindowGraph::edges`].
    pub fn multiplicity(&self) -> &[usize] {
        &self.multiplicity
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Total number of events in the window.
    pub fn num_events(&self) -> usize {
        self.multiplicity.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn local_index(&self, node: usize) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    /// Edges reindexed to `0..num_nodes()`.
    pub fn local_edges(&self) -> Vec<(usize, usize)> {
        let idx = |n: usize| self.nodes.binary_search(&n).expect("edge endpoint is a window node");
        self.edges.iter().map(|&(u, v)| (idx(u), idx(v))).collect()
    }
}

/// Number of windows `ceil((t_max - t_min - delta) / sigma) + 1`, at least one.
pub fn window_count(graph: &TemporalGraph, spec: &WindowSpec) -> Result<usize, GraphError> {
    let (lo, hi) = graph.span.ok_or(GraphError::EmptyGraph)?;
    Ok(window_count_for_span(hi - lo, spec))
}

pub(crate) fn window_count_for_span(span: f64, spec: &WindowSpec) -> usize {
    let ratio = (span - spec.delta) / spec.sigma;
    if ratio <= 0.0 {
        return 1;
    }
    let snapped = ratio - COUNT_SLACK * ratio.max(1.0);
    snapped.ceil().max(0.0) as usize + 1
}

/// Extracts the closed window `[t, t + delta]`. An interval holding no events
/// yields an empty window.
pub fn window(graph: &TemporalGraph, t: f64, delta: f64) -> Result<WindowGraph, GraphError> {
    if !(delta > 0.0) {
        return Err(GraphError::NonPositiveDelta(delta));
    }
    Ok(window_at(graph, 0, t, delta))
}

fn window_at(graph: &TemporalGraph, window_index: usize, t: f64, delta: f64) -> WindowGraph {
    let end = t + delta;
    let lo = graph.events.partition_point(|e| e.t < t);
    let hi = graph.events.partition_point(|e| e.t <= end);
    let edges = graph.events[lo..hi.max(lo)].iter().map(|e| (e.u, e.v));
    WindowGraph::from_edges(window_index, t, delta, edges)
}

/// Window `i` starts at `t_min + i * sigma`; the last window may extend past `t_max`.
pub fn window_sequence(graph: &TemporalGraph, spec: &WindowSpec) -> Result<Vec<WindowGraph>, GraphError> {
    let count = window_count(graph, spec)?;
    let t_min = graph.t_min().ok_or(GraphError::EmptyGraph)?;
    Ok((0..count)
        .map(|i| window_at(graph, i, t_min + i as f64 * spec.sigma, spec.delta))
        .collect())
}

/// Per-node event counts on a timestep grid, `num_nodes x grid.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeMatrix {
    rows: usize,
    cols: usize,
    counts: Vec<u32>,
}

impl DegreeMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, node: usize, step: usize) -> u32 {
        self.counts[node * self.cols + step]
    }

    pub fn row(&self, node: usize) -> &[u32] {
        &self.counts[node * self.cols..(node + 1) * self.cols]
    }

    pub fn column_sum(&self, step: usize) -> u64 {
        (0..self.rows).map(|r| u64::from(self.get(r, step))).sum()
    }

    /// Activity indicator: 1 wherever the count is nonzero.
    pub fn binarized(&self) -> Self {
        Self {
            counts: self.counts.iter().map(|&c| u32::from(c > 0)).collect(),
            ..self.clone()
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| f64::from(c)).collect()
    }
}

/// Temporal degree: entry `(v, j)` counts the events incident to `v` at
/// timestep `j`. Events are assigned to the latest grid timestep not after
/// them; events before the first grid point are ignored.
pub fn temporal_degree(graph: &TemporalGraph, timesteps: &[f64]) -> Result<DegreeMatrix, GraphError> {
    if timesteps.is_empty() {
        return Err(GraphError::EmptyTimesteps);
    }
    let cols = timesteps.len();
    let mut counts = vec![0u32; graph.num_nodes * cols];
    for e in &graph.events {
        let after = timesteps.partition_point(|&s| s <= e.t);
        if after == 0 {
            continue;
        }
        let j = after - 1;
        counts[e.u * cols + j] += 1;
        counts[e.v * cols + j] += 1;
    }
    Ok(DegreeMatrix {
        rows: graph.num_nodes,
        cols,
        counts,
    })
}

/// Undirected simple graph with sorted neighbor lists.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl StaticGraph {
    /// Deduplicates pairs and drops self-loops. Panics on out-of-range ids.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut pairs: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| if u < v { (u, v) } else { (v, u) })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(u, v) in &pairs {
            assert!(v < num_nodes, "node {v} out of range for {num_nodes} nodes");
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Self {
            num_nodes,
            edges: pairs,
            neighbors,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_edges(self.num_nodes, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))
    }
}

/// The graph with timestamps discarded; each interacting pair appears once.
pub fn static_projection(graph: &TemporalGraph) -> StaticGraph {
    StaticGraph::from_edges(graph.num_nodes, graph.events.iter().map(Event::pair))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Four nodes A=0, B=1, C=2, D=3 over timesteps 1..=6.
    pub(crate) fn toy_graph() -> TemporalGraph {
        TemporalGraph::from_events(
            4,
            [
                (0, 1, 1.0),
                (0, 2, 1.0),
                (0, 3, 2.0),
                (0, 1, 3.0),
                (1, 2, 4.0),
                (2, 3, 5.0),
                (1, 3, 6.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_event_span() {
        let g = TemporalGraph::from_events(2, [(0, 1, 1.0)]).unwrap();
        assert_eq!(g.t_min(), Some(1.0));
        assert_eq!(g.t_max(), Some(1.0));
        assert_eq!(g.events().len(), 1);
    }

    #[test]
    fn events_are_sorted() {
        let g = TemporalGraph::from_events(2, [(0, 1, 3.0), (0, 1, 1.0)]).unwrap();
        assert_eq!(g.events(), &[Event::new(0, 1, 1.0), Event::new(0, 1, 3.0)]);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            TemporalGraph::from_events(2, [(0, 0, 1.0)]),
            Err(GraphError::SelfLoop { index: 0, node: 0 })
        );
        assert!(matches!(
            TemporalGraph::from_events(2, [(0, 2, 1.0)]),
            Err(GraphError::OutOfRangeNode { node: 2, .. })
        ));
        assert_eq!(
            TemporalGraph::from_events(2, Vec::<Event>::new()),
            Err(GraphError::EmptyEventList)
        );
        let empty = TemporalGraph::from_events_allowing_empty(3, Vec::<Event>::new()).unwrap();
        assert!(empty.is_empty());
        assert_eq!(window_count(&empty, &WindowSpec::default()), Err(GraphError::EmptyGraph));
    }

    #[test]
    fn window_spec_validation() {
        assert!(WindowSpec::new(6.0, 4.0).is_ok());
        assert!(WindowSpec::new(4.0, 4.0).is_err());
        assert!(WindowSpec::new(4.0, 0.0).is_err());
        assert!(WindowSpec::new(-1.0, -2.0).is_err());
    }

    #[test]
    fn window_count_examples() {
        let spec = WindowSpec::new(6.0, 4.0).unwrap();
        let g = TemporalGraph::from_events(2, [(0, 1, 1.0), (0, 1, 25.0)]).unwrap();
        assert_eq!(window_count(&g, &spec).unwrap(), 6);
        let g = TemporalGraph::from_events(2, [(0, 1, 0.0), (0, 1, 6.0)]).unwrap();
        assert_eq!(window_count(&g, &spec).unwrap(), 1);
        let g = TemporalGraph::from_events(2, [(0, 1, 0.0), (0, 1, 24.0)]).unwrap();
        let windows = window_sequence(&g, &spec).unwrap();
        let starts: Vec<f64> = windows.iter().map(|w| w.t_start).collect();
        assert_eq!(starts, vec![0.0, 4.0, 8.0, 12.0, 16.0, 20.0]);
    }

    #[test]
    fn window_multiplicity_and_empty() {
        let g = TemporalGraph::from_events(3, [(0, 1, 1.0), (0, 1, 2.5), (1, 2, 9.0)]).unwrap();
        let w = window(&g, 1.0, 2.0).unwrap();
        assert_eq!(w.edges(), &[(0, 1)]);
        assert_eq!(w.multiplicity(), &[2]);
        assert_eq!(w.nodes(), &[0, 1]);
        let empty = window(&g, 3.0, 2.0).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.num_edges(), 0);
        assert!(window(&g, 0.0, 0.0).is_err());
    }

    #[test]
    fn closed_interval_boundary_event_in_both_windows() {
        let g = TemporalGraph::from_events(3, [(0, 1, 0.0), (1, 2, 2.0), (0, 2, 4.0)]).unwrap();
        let spec = WindowSpec::new(2.0, 1.0).unwrap();
        let ws = window_sequence(&g, &spec).unwrap();
        assert_eq!(ws.len(), 3);
        assert!(ws[0].edges().contains(&(1, 2)));
        assert!(ws[1].edges().contains(&(1, 2)));
        assert!(ws[2].edges().contains(&(1, 2)));
    }

    #[test]
    fn toy_windows() {
        let g = toy_graph();
        let spec = WindowSpec::new(2.0, 1.0).unwrap();
        let ws = window_sequence(&g, &spec).unwrap();
        let bounds: Vec<(f64, f64)> = ws.iter().map(|w| (w.t_start, w.t_start + w.delta)).collect();
        assert_eq!(&bounds[..3], &[(1.0, 3.0), (2.0, 4.0), (3.0, 5.0)]);
        assert_eq!(ws[0].edges(), &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(ws[0].multiplicity(), &[2, 1, 1]);
    }

    #[test]
    fn toy_temporal_degree() {
        let g = toy_graph();
        let deg = temporal_degree(&g, &g.timesteps()).unwrap();
        assert_eq!(deg.row(0), &[2, 1, 1, 0, 0, 0]);
        assert_eq!(deg.row(1), &[1, 0, 1, 1, 0, 1]);
        assert_eq!(deg.binarized().row(0), &[1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn temporal_degree_counts_parallel_events() {
        let g = TemporalGraph::from_events(4, [(0, 1, 2.0), (0, 2, 2.0)]).unwrap();
        let deg = temporal_degree(&g, &[2.0]).unwrap();
        assert_eq!(deg.get(0, 0), 2);
        assert_eq!(deg.row(3), &[0]);
        assert_eq!(temporal_degree(&g, &[]), Err(GraphError::EmptyTimesteps));
    }

    #[test]
    fn static_projection_dedups() {
        let g = TemporalGraph::from_events(3, [(0, 1, 1.0), (0, 1, 3.0), (1, 2, 2.0)]).unwrap();
        let s = static_projection(&g);
        assert_eq!(s.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(s.neighbors(1), &[0, 2]);
        let empty = TemporalGraph::from_events_allowing_empty(3, Vec::<Event>::new()).unwrap();
        assert!(static_projection(&empty).edges().is_empty());
    }

    #[test]
    fn toy_static_projection_is_union_of_windows() {
        let g = toy_graph();
        let spec = WindowSpec::new(2.0, 1.0).unwrap();
        let mut union: Vec<(usize, usize)> = window_sequence(&g, &spec)
            .unwrap()
            .iter()
            .flat_map(|w| w.edges().to_vec())
            .collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(static_projection(&g).edges(), union.as_slice());
    }
}
