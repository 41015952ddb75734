use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{io_error, PipelineError};
use crate::neural::Tensor;
use crate::temporal_graph::{Event, TemporalGraph};

pub const MANIFEST: &str = "manifest.txt";

/// Labelled temporal graphs. Every graph carries a label below `num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub graphs: Vec<TemporalGraph>,
    /// Source file of each graph, relative to the dataset directory.
    pub files: Vec<String>,
    /// Per-graph node features, present when every graph has a `.feat` sidecar.
    pub node_features: Option<Vec<Tensor>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_classes: usize, graphs: Vec<TemporalGraph>) -> Result<Self, PipelineError> {
        if graphs.is_empty() {
            return Err(PipelineError::InvalidSpec("dataset has no graphs".into()));
        }
        let files: Vec<String> = (0..graphs.len()).map(|i| format!("graph_{i:04}.txt")).collect();
        for (g, file) in graphs.iter().zip(&files) {
            let label = g.label().ok_or_else(|| PipelineError::Parse {
                file: file.clone(),
                line: 1,
                message: "graph has no label".into(),
            })?;
            if label >= num_classes {
                return Err(PipelineError::LabelOutOfRange {
                    file: file.clone(),
                    label,
                    num_classes,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            graphs,
            files,
            node_features: None,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label().expect("dataset graphs are labelled")).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in self.labels() {
            counts[l] += 1;
        }
        counts
    }
}

/// Parses one graph file: a header `n <N> [label <c>]` followed by `u v t` lines.
pub fn parse_graph(file: &str, text: &str) -> Result<TemporalGraph, PipelineError> {
    let err = |line: usize, message: String| PipelineError::Parse {
        file: file.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (n, label) = match fields.as_slice() {
        ["n", n] => (n.parse::<usize>().ok(), None),
        ["n", n, "label", c] => (n.parse::<usize>().ok(), Some(c.parse::<usize>().map_err(|_| err(hline, format!("bad label `{c}`")))?)),
        _ => (None, None),
    };
    let n = n.ok_or_else(|| err(hline, format!("expected `n <nodes> label <class>`, got `{header}`")))?;
    let mut events = Vec::new();
    for (line, body) in lines {
        let parts: Vec<&str> = body.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            [u, v, t] => match (u.parse::<usize>(), v.parse::<usize>(), t.parse::<f64>()) {
                (Ok(u), Ok(v), Ok(t)) => Some(Event::new(u, v, t)),
                _ => None,
            },
            _ => None,
        };
        events.push(parsed.ok_or_else(|| err(line, format!("expected `u v t`, got `{body}`")))?);
    }
    let graph = TemporalGraph::from_events(n, events).map_err(|e| err(hline, e.to_string()))?;
    Ok(match label {
        Some(l) => graph.with_label(l),
        None => graph,
    })
}

pub fn format_graph(graph: &TemporalGraph) -> String {
    let mut out = format!("n {}", graph.num_nodes());
    if let Some(l) = graph.label() {
        let _ = write!(out, " label {l}");
    }
    out.push('\n');
    for e in graph.events() {
        let _ = writeln!(out, "{} {} {}", e.u, e.v, e.t);
    }
    out
}

fn parse_features(file: &str, text: &str, rows: usize) -> Result<Tensor, PipelineError> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut count = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |message: String| PipelineError::Parse {
            file: file.to_string(),
            line: i + 1,
            message,
        };
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|_| err(format!("bad feature `{x}`"))))
            .collect::<Result<_, _>>()?;
        if *cols.get_or_insert(row.len()) != row.len() || row.is_empty() {
            return Err(err("ragged feature row".into()));
        }
        data.extend(row);
        count += 1;
    }
    if count != rows {
        return Err(PipelineError::Parse {
            file: file.to_string(),
            line: count + 1,
            message: format!("expected {rows} feature rows, found {count}"),
        });
    }
    Ok(Tensor::matrix(rows, cols.unwrap_or(0), data))
}

/// Loads a dataset directory: `manifest.txt` lists one graph file per line
/// and may carry a `classes <K>` directive. Without it the class count is one
/// more than the largest label, and at least two.
pub fn load_dataset(dir: &Path) -> Result<Dataset, PipelineError> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(PipelineError::MissingManifest(dir.display().to_string()));
    }
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| io_error(&manifest_path, e))?;
    let mut declared = None;
    let mut files = Vec::new();
    for (i, raw) in manifest.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(k) = line.strip_prefix("classes ") {
            declared = Some(k.trim().parse::<usize>().map_err(|_| PipelineError::Parse {
                file: MANIFEST.into(),
                line: i + 1,
                message: format!("bad class count `{}`", k.trim()),
            })?);
        } else {
            files.push(line.to_string());
        }
    }
    if files.is_empty() {
        return Err(PipelineError::Parse {
            file: MANIFEST.into(),
            line: 1,
            message: "manifest lists no graphs".into(),
        });
    }
    let mut graphs = Vec::with_capacity(files.len());
    let mut features = Vec::new();
    for file in &files {
        let path = dir.join(file);
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let graph = parse_graph(file, &text)?;
        if graph.label().is_none() {
            return Err(PipelineError::Parse {
                file: file.clone(),
                line: 1,
                message: "header carries no label".into(),
            });
        }
        let sidecar = dir.join(format!("{file}.feat"));
        if sidecar.is_file() {
            let text = fs::read_to_string(&sidecar).map_err(|e| io_error(&sidecar, e))?;
            features.push(parse_features(&format!("{file}.feat"), &text, graph.num_nodes())?);
        }
        graphs.push(graph);
    }
    let max_label = graphs.iter().filter_map(TemporalGraph::label).max().unwrap_or(0);
    let num_classes = declared.unwrap_or((max_label + 1).max(2));
    for (g, file) in graphs.iter().zip(&files) {
        let label = g.label().expect("checked above");
        if label >= num_classes {
            return Err(PipelineError::LabelOutOfRange {
                file: file.clone(),
                label,
                num_classes,
            });
        }
    }
    let name = dir
        .file_name()
        .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned());
    let node_features = (features.len() == graphs.len()).then_some(features);
    Ok(Dataset {
        name,
        num_classes,
        graphs,
        files,
        node_features,
    })
}

/// Writes graph files, feature sidecars and a manifest with a `classes` line.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut manifest = format!("classes {}\n", dataset.num_classes);
    for (i, (graph, file)) in dataset.graphs.iter().zip(&dataset.files).enumerate() {
        let path = dir.join(file);
        fs::write(&path, format_graph(graph)).map_err(|e| io_error(&path, e))?;
        if let Some(features) = &dataset.node_features {
            let f = &features[i];
            let mut text = String::new();
            for r in 0..f.rows() {
                let row: Vec<String> = f.row_slice(r).iter().map(|x| x.to_string()).collect();
                let _ = writeln!(text, "{}", row.join(" "));
            }
            let path = dir.join(format!("{file}.feat"));
            fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        }
        manifest.push_str(file);
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| io_error(&path, e))
}
