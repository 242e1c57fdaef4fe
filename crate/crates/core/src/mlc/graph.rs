use std::collections::BTreeSet;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::videodata::CaptionCorpus;

/// Word co-occurrence graph over vocabulary indices. Self-loops are implicit
/// on every node; `edges` holds the off-diagonal pairs with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceGraph {
    nodes: usize,
    window: usize,
    edges: BTreeSet<(u32, u32)>,
}

impl CooccurrenceGraph {
    pub fn new(nodes: usize, window: usize) -> Self {
        Self {
            nodes,
            window,
            edges: BTreeSet::new(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        if u != v {
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            self.edges.insert((a as u32, b as u32));
        }
    }

    /// Symmetric, and true on the diagonal.
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        if u == v {
            return u < self.nodes;
        }
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        self.edges.contains(&(a as u32, b as u32))
    }

    /// Off-diagonal edges, `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().map(|&(a, b)| (a as usize, b as usize))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Degrees of `A + I`.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![1; self.nodes];
        for (u, v) in self.edges() {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// First line `nodes<TAB>window`, then one `u<TAB>v` line per edge.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\t{}\n", self.nodes, self.window);
        for (u, v) in self.edges() {
            out.push_str(&format!("{u}\t{v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let parse_pair = |lineno: usize, line: &str| -> Result<(usize, usize)> {
            let bad = || Error::format("graph file", format!("line {}: expected two integers", lineno + 1));
            let (a, b) = line.split_once('\t').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        };
        let (lineno, header) = lines
            .next()
            .ok_or_else(|| Error::format("graph file", "missing header"))?;
        let (nodes, window) = parse_pair(lineno, header)?;
        let mut graph = Self::new(nodes, window);
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (u, v) = parse_pair(lineno, line)?;
            if u >= nodes || v >= nodes {
                return Err(Error::format(
                    "graph file",
                    format!("line {}: node out of range", lineno + 1),
                ));
            }
            graph.add_edge(u, v);
        }
        Ok(graph)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` as a coordinate list.
    pub fn normalized(&self, dtype: DType) -> Result<NormalizedAdjacency> {
        let deg = self.degrees();
        let mut rows = Vec::with_capacity(self.nodes + 2 * self.edges.len());
        let mut cols = Vec::with_capacity(rows.capacity());
        let mut weights = Vec::with_capacity(rows.capacity());
        for (i, &d) in deg.iter().enumerate() {
            rows.push(i as u32);
            cols.push(i as u32);
            weights.push(1.0 / d as f64);
        }
        for (u, v) in self.edges() {
            let w = 1.0 / ((deg[u] * deg[v]) as f64).sqrt();
            rows.extend([u as u32, v as u32]);
            cols.extend([v as u32, u as u32]);
            weights.extend([w, w]);
        }
        let dev = Device::Cpu;
        let nnz = rows.len();
        Ok(NormalizedAdjacency {
            nodes: self.nodes,
            rows: Tensor::from_vec(rows, nnz, &dev)?,
            cols: Tensor::from_vec(cols, nnz, &dev)?,
            weights: Tensor::from_vec(weights, (nnz, 1), &dev)?.to_dtype(dtype)?,
        })
    }
}

/// Sparse normalized adjacency; `propagate` computes `Â X` by gather/scatter.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    nodes: usize,
    rows: Tensor,
    cols: Tensor,
    weights: Tensor,
}

impl NormalizedAdjacency {
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn propagate(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2()?;
        if n != self.nodes {
            return Err(Error::shape(format!(
                "adjacency has {} nodes, features have {n} rows",
                self.nodes
            )));
        }
        let messages = x.index_select(&self.cols, 0)?.broadcast_mul(&self.weights)?;
        let zeros = Tensor::zeros((n, d), x.dtype(), x.device())?;
        Ok(zeros.index_add(&self.rows, &messages, 0)?)
    }
}

/// Connects vocabulary words whose positions in one caption differ by less
/// than `window`. Words outside the vocabulary are skipped but still occupy
/// their position.
pub fn build_graph(corpus: &CaptionCorpus, vocab: &Vocabulary, window: usize) -> CooccurrenceGraph {
    let mut graph = CooccurrenceGraph::new(vocab.len(), window);
    for record in &corpus.records {
        let ids: Vec<Option<usize>> = record
            .words
            .iter()
            .map(|w| vocab.lookup(&w.word, w.pos))
            .collect();
        for (p, u) in ids.iter().enumerate() {
            let Some(u) = u else { continue };
            for v in ids.iter().skip(p + 1).take(window.saturating_sub(1)).flatten() {
                graph.add_edge(*u, *v);
            }
        }
    }
    graph
}
