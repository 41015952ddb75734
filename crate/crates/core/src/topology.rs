//! Clique complexes truncated at triangles, Betti numbers over GF(2), and
//! zero-dimensional sublevel persistence driven by edge timestamps.

use thiserror::Error;

use crate::temporal_graph::{StaticGraph, TemporalGraph, WindowGraph};
use crate::union_find::{component_count, DisjointSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("expected {expected} edge values, got {got}")]
    MissingEdgeValue { expected: usize, got: usize },
    #[error("edge value {index} is not finite")]
    NonFiniteEdgeValue { index: usize },
    #[error("threshold list is empty")]
    EmptyThresholds,
    #[error("thresholds are not sorted ascending")]
    UnsortedThresholds,
    #[error("Betti vectors are sampled on different thresholds")]
    ThresholdMismatch,
}

/// A flag complex truncated at dimension two. Vertices are `0..vertices`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliqueComplex2 {
    pub vertices: usize,
    /// Sorted `(u, v)` with `u < v`.
    pub edges: Vec<(usize, usize)>,
    /// Sorted `(a, b, c)` with `a < b < c`.
    pub triangles: Vec<(usize, usize, usize)>,
}

impl CliqueComplex2 {
    pub fn from_edges(vertices: usize, edges: &[(usize, usize)]) -> Self {
        let graph = StaticGraph::from_edges(vertices, edges.iter().copied());
        let mut triangles = Vec::new();
        for &(u, v) in graph.edges() {
            // u < v < w with w adjacent to both.
            let (nu, nv) = (graph.neighbors(u), graph.neighbors(v));
            let (mut i, mut j) = (0, 0);
            while i < nu.len() && j < nv.len() {
                match nu[i].cmp(&nv[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        if nu[i] > v {
                            triangles.push((u, v, nu[i]));
                        }
                        i += 1;
                        j += 1;
                    }
                }
            }
        }
        triangles.sort_unstable();
        Self {
            vertices,
            edges: graph.edges().to_vec(),
            triangles,
        }
    }

    /// Edge-by-triangle incidence matrix over GF(2).
    pub fn boundary2(&self) -> BitMatrix {
        let mut m = BitMatrix::zeros(self.edges.len(), self.triangles.len());
        let edge_index = |a: usize, b: usize| {
            self.edges
                .binary_search(&(a, b))
                .expect("triangle faces are complex edges")
        };
        for (col, &(a, b, c)) in self.triangles.iter().enumerate() {
            for (x, y) in [(a, b), (a, c), (b, c)] {
                m.set(edge_index(x, y), col, true);
            }
        }
        m
    }
}

/// Clique complex of a window, on local vertex indices.
pub fn clique_complex(window: &WindowGraph) -> CliqueComplex2 {
    CliqueComplex2::from_edges(window.num_nodes(), &window.local_edges())
}

/// Dense bit-packed matrix over GF(2).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64);
        Self {
            rows,
            cols,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged rows");
            for (c, &bit) in row.iter().enumerate() {
                m.set(r, c, bit);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let w = self.words[row * self.words_per_row + col / 64];
        (w >> (col % 64)) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, bit: bool) {
        assert!(row < self.rows && col < self.cols, "index out of bounds");
        let w = &mut self.words[row * self.words_per_row + col / 64];
        let mask = 1u64 << (col % 64);
        if bit {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    t.set(c, r, true);
                }
            }
        }
        t
    }
}

/// Rank over GF(2) by Gaussian elimination on packed rows.
pub fn gf2_rank(matrix: &BitMatrix) -> usize {
    let wpr = matrix.words_per_row;
    let mut words = matrix.words.clone();
    let mut rank = 0;
    for col in 0..matrix.cols {
        let (word, bit) = (col / 64, 1u64 << (col % 64));
        let Some(pivot) = (rank..matrix.rows).find(|&r| words[r * wpr + word] & bit != 0) else {
            continue;
        };
        if pivot != rank {
            for k in 0..wpr {
                words.swap(pivot * wpr + k, rank * wpr + k);
            }
        }
        for r in rank + 1..matrix.rows {
            if words[r * wpr + word] & bit != 0 {
                // Columns left of `word` are already zero in both rows.
                for k in word..wpr {
                    words[r * wpr + k] ^= words[rank * wpr + k];
                }
            }
        }
        rank += 1;
        if rank == matrix.rows {
            break;
        }
    }
    rank
}

/// Connected components of the window.
pub fn betti0(window: &WindowGraph) -> usize {
    component_count(window.num_nodes(), &window.local_edges())
}

/// First Betti number: cycle rank of the 1-skeleton minus the rank of the
/// triangle boundary map.
pub fn betti1(complex: &CliqueComplex2) -> usize {
    let b0 = component_count(complex.vertices, &complex.edges);
    let cycle_rank = complex.edges.len() + b0 - complex.vertices;
    let filled = if complex.triangles.is_empty() {
        0
    } else {
        gf2_rank(&complex.boundary2().transpose())
    };
    cycle_rank - filled
}

/// Edge-valued graph used as the input of a sublevel filtration. Vertices
/// inherit the minimum value of their incident edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFiltration {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl EdgeFiltration {
    /// `values[i]` belongs to `graph.edges()[i]`.
    pub fn new(graph: &StaticGraph, values: &[f64]) -> Result<Self, TopologyError> {
        if values.len() != graph.edges().len() {
            return Err(TopologyError::MissingEdgeValue {
                expected: graph.edges().len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TopologyError::NonFiniteEdgeValue { index });
        }
        Ok(Self {
            num_nodes: graph.num_nodes(),
            edges: graph.edges().to_vec(),
            values: values.to_vec(),
        })
    }

    /// Each interacting pair enters at its earliest timestamp.
    pub fn from_temporal(graph: &TemporalGraph) -> Self {
        let (edges, values) = graph.min_pair_times().into_iter().unzip();
        Self {
            num_nodes: graph.num_nodes(),
            edges,
            values,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Vertex entry values; `None` for vertices without edges.
    pub fn vertex_values(&self) -> Vec<Option<f64>> {
        let mut out: Vec<Option<f64>> = vec![None; self.num_nodes];
        for (&(u, v), &w) in self.edges.iter().zip(&self.values) {
            for x in [u, v] {
                out[x] = Some(out[x].map_or(w, |cur| cur.min(w)));
            }
        }
        out
    }

    /// Every vertex and edge value, sorted and deduplicated.
    pub fn critical_values(&self) -> Vec<f64> {
        let mut vals = self.values.clone();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        vals
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersistencePoint {
    pub birth: f64,
    /// `f64::INFINITY` for essential classes.
    pub death: f64,
}

impl PersistencePoint {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }

    pub fn is_essential(&self) -> bool {
        self.death.is_infinite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceDiagram {
    pub dimension: usize,
    pub points: Vec<PersistencePoint>,
}

/// Zero-dimensional persistence of the sublevel filtration. Components merge
/// under the elder rule; ties on birth are broken towards the smaller root
/// vertex. Zero-persistence points are kept only when `keep_zero` is set.
pub fn sublevel_persistence0(filtration: &EdgeFiltration, keep_zero: bool) -> PersistenceDiagram {
    let births = filtration.vertex_values();
    let mut order: Vec<usize> = (0..filtration.edges.len()).collect();
    order.sort_by(|&a, &b| filtration.values[a].total_cmp(&filtration.values[b]).then(a.cmp(&b)));

    let mut sets = DisjointSet::new(filtration.num_nodes);
    // Birth of each root, indexed by the root vertex.
    let root_birth: Vec<f64> = births.iter().map(|b| b.unwrap_or(f64::INFINITY)).collect();
    let mut points = Vec::new();
    for idx in order {
        let (u, v) = filtration.edges[idx];
        let value = filtration.values[idx];
        let (ru, rv) = (sets.find(u), sets.find(v));
        if ru == rv {
            continue;
        }
        let u_older = (root_birth[ru], ru) < (root_birth[rv], rv);
        let (elder, younger) = if u_older { (ru, rv) } else { (rv, ru) };
        let point = PersistencePoint {
            birth: root_birth[younger],
            death: value,
        };
        if keep_zero || point.death > point.birth {
            points.push(point);
        }
        sets.attach(younger, elder);
    }
    for vertex in 0..filtration.num_nodes {
        if births[vertex].is_some() && sets.find(vertex) == vertex {
            points.push(PersistencePoint {
                birth: root_birth[vertex],
                death: f64::INFINITY,
            });
        }
    }
    points.sort_by(|a, b| a.birth.total_cmp(&b.birth).then(a.death.total_cmp(&b.death)));
    PersistenceDiagram { dimension: 0, points }
}

/// A Betti curve sampled on a threshold grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BettiVector {
    pub thresholds: Vec<f64>,
    pub values: Vec<usize>,
}

impl BettiVector {
    /// L1 norm of the difference of the two step functions over the grid,
    /// each sample weighted by the gap to the next threshold. The step
    /// functions are right-continuous, so this is exact when every birth and
    /// death lies on the grid; past the last threshold both curves must agree.
    pub fn integrated_l1_distance(&self, other: &Self) -> Result<f64, TopologyError> {
        if self.thresholds != other.thresholds {
            return Err(TopologyError::ThresholdMismatch);
        }
        Ok(self
            .thresholds
            .windows(2)
            .zip(self.values.iter().zip(&other.values))
            .map(|(gap, (&a, &b))| a.abs_diff(b) as f64 * (gap[1] - gap[0]))
            .sum())
    }
}

pub fn betti_curve(pd: &PersistenceDiagram, thresholds: &[f64]) -> Result<BettiVector, TopologyError> {
    if thresholds.is_empty() {
        return Err(TopologyError::EmptyThresholds);
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(TopologyError::UnsortedThresholds);
    }
    let values = thresholds
        .iter()
        .map(|&t| pd.points.iter().filter(|p| p.birth <= t && t < p.death).count())
        .collect();
    Ok(BettiVector {
        thresholds: thresholds.to_vec(),
        values,
    })
}

/// Sum of absolute differences of two Betti vectors on the same grid.
pub fn l1_distance(a: &BettiVector, b: &BettiVector) -> Result<f64, TopologyError> {
    if a.thresholds != b.thresholds {
        return Err(TopologyError::ThresholdMismatch);
    }
    Ok(a.values.iter().zip(&b.values).map(|(&x, &y)| x.abs_diff(y) as f64).sum())
}

/// Per-window topological summary `[|V|, |E|, beta_0, beta_1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TopoDescriptor {
    pub v_count: usize,
    pub e_count: usize,
    pub betti0: usize,
    pub betti1: usize,
}

impl TopoDescriptor {
    pub fn to_array(&self) -> [f64; 4] {
        [
            self.v_count as f64,
            self.e_count as f64,
            self.betti0 as f64,
            self.betti1 as f64,
        ]
    }
}

/// Descriptor with `e_count` counting deduplicated edges.
pub fn topo_descriptor(window: &WindowGraph) -> TopoDescriptor {
    topo_descriptor_with(window, false)
}

/// With `count_multiplicity`, `e_count` counts events instead of distinct edges.
pub fn topo_descriptor_with(window: &WindowGraph, count_multiplicity: bool) -> TopoDescriptor {
    if window.is_empty() {
        return TopoDescriptor::default();
    }
    let complex = clique_complex(window);
    TopoDescriptor {
        v_count: window.num_nodes(),
        e_count: if count_multiplicity {
            window.num_events()
        } else {
            window.num_edges()
        },
        betti0: component_count(complex.vertices, &complex.edges),
        betti1: betti1(&complex),
    }
}
