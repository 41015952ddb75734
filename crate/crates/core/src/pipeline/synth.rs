use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, PipelineError};
use crate::temporal_graph::{Event, TemporalGraph};

/// Planted-cycle generator settings. At every timestep a graph of class `c`
/// activates a random tree on `tree_size` nodes plus `cycle_density[c]` chords
/// joining tree nodes at distance at least three, so each chord closes a
/// cycle that no triangle fills.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub name: String,
    pub num_graphs: usize,
    pub nodes: usize,
    pub timesteps: usize,
    pub classes: usize,
    pub cycle_density: Vec<usize>,
    pub tree_size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            num_graphs: 200,
            nodes: 30,
            timesteps: 24,
            classes: 2,
            cycle_density: vec![0, 3],
            tree_size: 6,
        }
    }
}

impl SynthSpec {
    /// Parses `key = value` lines; `cycle_density` is a comma-separated list.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut spec = Self::default();
        let mut tree_size_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| PipelineError::Parse {
                file: "spec".into(),
                line: i + 1,
                message,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let count = |v: &str| v.trim().parse::<usize>().map_err(|_| err(format!("bad value `{v}` for `{key}`")));
            match key {
                "name" => spec.name = value.to_string(),
                "num_graphs" => spec.num_graphs = count(value)?,
                "nodes" => spec.nodes = count(value)?,
                "timesteps" => spec.timesteps = count(value)?,
                "classes" => spec.classes = count(value)?,
                "tree_size" => {
                    spec.tree_size = count(value)?;
                    tree_size_set = true;
                }
                "cycle_density" => {
                    spec.cycle_density = value
                        .trim_matches(|c| c == '[' || c == ']')
                        .split(',')
                        .map(count)
                        .collect::<Result<_, _>>()?
                }
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        if !tree_size_set {
            spec.tree_size = spec.tree_size.min(spec.nodes);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidSpec(m.to_string()));
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if self.cycle_density.len() != self.classes {
            return bad("cycle_density needs one entry per class");
        }
        let distinct: BTreeSet<usize> = self.cycle_density.iter().copied().collect();
        if distinct.len() != self.classes {
            return bad("cycle densities must differ across classes");
        }
        if self.num_graphs < self.classes {
            return bad("need at least one graph per class");
        }
        if self.timesteps == 0 {
            return bad("need at least one timestep");
        }
        if self.tree_size < 4 || self.tree_size > self.nodes {
            return bad("tree_size must lie in 4..=nodes");
        }
        Ok(())
    }
}

fn tree_distances(adj: &[Vec<usize>], from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn timestep_edges(spec: &SynthSpec, chords: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut nodes: Vec<usize> = (0..spec.nodes).collect();
    nodes.shuffle(rng);
    let members = &nodes[..spec.tree_size];
    let mut adj = vec![Vec::new(); spec.tree_size];
    let mut edges = Vec::with_capacity(spec.tree_size - 1 + chords);
    for i in 1..spec.tree_size {
        let j = rng.gen_range(0..i);
        adj[i].push(j);
        adj[j].push(i);
        edges.push((members[i], members[j]));
    }
    let mut far: Vec<(usize, usize)> = Vec::new();
    for i in 0..spec.tree_size {
        let dist = tree_distances(&adj, i);
        far.extend((i + 1..spec.tree_size).filter(|&j| dist[j] >= 3).map(|j| (members[i], members[j])));
    }
    far.shuffle(rng);
    edges.extend(far.into_iter().take(chords));
    edges
}

/// Generates a labelled dataset; graph `i` has class `i % classes`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset, PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(spec.num_graphs);
    for i in 0..spec.num_graphs {
        let class = i % spec.classes;
        let mut events = Vec::new();
        for step in 0..spec.timesteps {
            for (u, v) in timestep_edges(spec, spec.cycle_density[class], &mut rng) {
                events.push(Event::new(u, v, step as f64));
            }
        }
        graphs.push(TemporalGraph::from_events(spec.nodes, events)?.with_label(class));
    }
    Dataset::new(spec.name.clone(), spec.classes, graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal_graph::window_sequence;
    use crate::topology::{betti1, clique_complex};
    use crate::WindowSpec;

    #[test]
    fn deterministic_and_balanced() {
        let spec = SynthSpec {
            num_graphs: 20,
            ..SynthSpec::default()
        };
        let a = synth_generate(&spec, 3).unwrap();
        assert_eq!(a, synth_generate(&spec, 3).unwrap());
        assert_ne!(a, synth_generate(&spec, 4).unwrap());
        assert_eq!(a.class_counts(), vec![10, 10]);
        let full = synth_generate(&SynthSpec::default(), 1).unwrap();
        assert_eq!(full.class_counts(), vec![100, 100]);
    }

    #[test]
    fn planted_cycles_raise_betti1() {
        let spec = SynthSpec {
            num_graphs: 20,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec, 7).unwrap();
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for g in &ds.graphs {
            for w in window_sequence(g, &WindowSpec::default()).unwrap() {
                let c = g.label().unwrap();
                sums[c] += betti1(&clique_complex(&w)) as f64;
                counts[c] += 1;
            }
        }
        let (m0, m1) = (sums[0] / counts[0] as f64, sums[1] / counts[1] as f64);
        assert!(m1 - m0 >= 2.0, "class means {m0} {m1}");
    }

    #[test]
    fn spec_parse_and_validation() {
        let s = SynthSpec::parse("num_graphs = 10\nnodes = 12\ncycle_density = 1, 4\n").unwrap();
        assert_eq!((s.num_graphs, s.nodes, s.tree_size), (10, 12, 6));
        assert_eq!(s.cycle_density, vec![1, 4]);
        assert!(SynthSpec::parse("cycle_density = 2, 2").is_err());
        assert!(SynthSpec::parse("classes = 1\ncycle_density = 0").is_err());
        assert!(SynthSpec::parse("bogus = 1").is_err());
    }
}
