//! Stochastic block model sampling and the graph-side primitives:
//! the centered rescaled matrix `Y(G)`, the label error `err`, graph
//! splitting, and edge-adjacency enumeration for DP audits.
//!
//! Edge privacy: two graphs are adjacent when their edge sets differ in
//! exactly one unordered pair.

use crate::matrix::SymmetricMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SbmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("label vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, SbmError>;

/// A vector in {-1, +1}^n; community estimates compare modulo global sign.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    entries: Vec<i8>,
}

impl LabelVector {
    pub fn new(entries: Vec<i8>) -> Result<Self> {
        if entries.iter().any(|&e| e != 1 && e != -1) {
            return Err(SbmError::InvalidParameter("labels must be +1 or -1".into()));
        }
        Ok(Self { entries })
    }

    /// n/2 entries of +1 followed by n/2 entries of -1; n must be even.
    pub fn balanced_halves(n: usize) -> Result<Self> {
        if n % 2 != 0 {
            return Err(SbmError::InvalidParameter("balanced labels need even n".into()));
        }
        Ok(Self { entries: (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect() })
    }

    /// Signs of a real vector, with sign(0) := +1.
    pub fn from_signs(v: &[f64]) -> Self {
        Self { entries: v.iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> i8 {
        self.entries[i]
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn is_balanced(&self) -> bool {
        self.entries.iter().map(|&e| e as i64).sum::<i64>() == 0
    }

    pub fn flipped(&self) -> Self {
        Self { entries: self.entries.iter().map(|&e| -e).collect() }
    }

    pub fn hamming(&self, other: &Self) -> Result<usize> {
        if self.len() != other.len() {
            return Err(SbmError::LengthMismatch(self.len(), other.len()));
        }
        Ok(self.entries.iter().zip(&other.entries).filter(|(a, b)| a != b).count())
    }

    /// One label per line, "+1"/"1" or "-1", LF endings.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            match t {
                "1" | "+1" => entries.push(1),
                "-1" => entries.push(-1),
                other => {
                    return Err(SbmError::Parse {
                        line: idx + 1,
                        msg: format!("expected +1 or -1, got {other:?}"),
                    })
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for &e in &self.entries {
            let _ = writeln!(s, "{}", if e > 0 { "1" } else { "-1" });
        }
        s
    }
}

/// Label error modulo global sign:
/// `err(a, b) = min(Ham(a, b), Ham(a, -b)) / n`, a value in [0, 1/2].
pub fn err(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    let h = a.hamming(b)?;
    let n = a.len();
    if n == 0 {
        return Err(SbmError::InvalidParameter("err needs non-empty labels".into()));
    }
    Ok(h.min(n - h) as f64 / n as f64)
}

/// An undirected simple graph on `n` labeled vertices, stored as a set of
/// unordered edges. The unit of adjacency for edge-DP is one edge toggle.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<(u32, u32)>,
    edge_set: HashSet<(u32, u32)>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.edges == other.edges
    }
}

impl Graph {
    /// Builds a graph, normalizing each pair to (min, max) and rejecting
    /// self-loops, duplicates, and out-of-range endpoints.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut set = HashSet::new();
        let mut list = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(SbmError::InvalidParameter(format!("self-loop at vertex {a}")));
            }
            let e = (a.min(b), a.max(b));
            if e.1 as usize >= n {
                return Err(SbmError::InvalidParameter(format!(
                    "edge ({}, {}) out of range for n = {n}",
                    e.0, e.1
                )));
            }
            if !set.insert(e) {
                return Err(SbmError::InvalidParameter(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
            list.push(e);
        }
        list.sort_unstable();
        Ok(Self { n, edges: list, edge_set: set })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, edges: Vec::new(), edge_set: HashSet::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        self.edge_set.contains(&(a.min(b), a.max(b)))
    }

    /// The graph with one pair toggled; the adjacent graph for edge-DP.
    pub fn toggled(&self, a: u32, b: u32) -> Result<Self> {
        if a == b {
            return Err(SbmError::InvalidParameter("cannot toggle a self-loop".into()));
        }
        let e = (a.min(b), a.max(b));
        if e.1 as usize >= self.n {
            return Err(SbmError::InvalidParameter("toggle out of range".into()));
        }
        let mut set = self.edge_set.clone();
        if !set.insert(e) {
            set.remove(&e);
        }
        let mut list: Vec<_> = set.iter().copied().collect();
        list.sort_unstable();
        Ok(Self { n: self.n, edges: list, edge_set: set })
    }

    /// All graphs at Hamming distance exactly 1: one per vertex pair.
    pub fn adjacent_graphs(&self) -> impl Iterator<Item = Graph> + '_ {
        (0..self.n as u32).flat_map(move |i| {
            ((i + 1)..self.n as u32).map(move |j| self.toggled(i, j).expect("in-range toggle"))
        })
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.edge_set.symmetric_difference(&other.edge_set).count()
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        adj
    }

    /// Text edge list: first line `n m`, then `m` lines `i j` with
    /// 0-indexed endpoints `i < j`, LF endings.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(SbmError::Parse { line: 1, msg: "empty input".into() })?;
        let mut parts = header.split_whitespace();
        let n: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(SbmError::Parse { line: 1, msg: "expected vertex count".into() })?;
        let m: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(SbmError::Parse { line: 1, msg: "expected edge count".into() })?;
        if parts.next().is_some() {
            return Err(SbmError::Parse { line: 1, msg: "trailing tokens after `n m`".into() });
        }
        if n > 1_000_000 {
            return Err(SbmError::Parse { line: 1, msg: format!("vertex count {n} too large") });
        }
        let mut edges = Vec::with_capacity(m.min(1 << 20));
        let mut seen = 0usize;
        for (idx, line) in lines {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let mut p = t.split_whitespace();
            let i: u32 = p
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or(SbmError::Parse { line: idx + 1, msg: "expected endpoint".into() })?;
            let j: u32 = p
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or(SbmError::Parse { line: idx + 1, msg: "expected endpoint".into() })?;
            if p.next().is_some() {
                return Err(SbmError::Parse { line: idx + 1, msg: "trailing tokens".into() });
            }
            if i >= j {
                return Err(SbmError::Parse { line: idx + 1, msg: "endpoints must satisfy i < j".into() });
            }
            edges.push((i, j));
            seen += 1;
        }
        if seen != m {
            return Err(SbmError::Parse {
                line: 1,
                msg: format!("header declares {m} edges, found {seen}"),
            });
        }
        Self::new(n, edges)
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.n, self.edges.len());
        for &(a, b) in &self.edges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }
}

/// Stochastic block model parameters: each pair {i, j} is an edge
/// independently with probability `(1 + gamma * x_i * x_j) * d / n`.
#[derive(Debug, Clone)]
pub struct SbmParams {
    pub n: usize,
    pub d: f64,
    pub gamma: f64,
    pub labels: LabelVector,
}

impl SbmParams {
    pub fn new(n: usize, d: f64, gamma: f64, labels: LabelVector) -> Result<Self> {
        if n < 2 {
            return Err(SbmError::InvalidParameter("need n >= 2".into()));
        }
        if labels.len() != n {
            return Err(SbmError::LengthMismatch(labels.len(), n));
        }
        if !d.is_finite() || d <= 0.0 {
            return Err(SbmError::InvalidParameter(format!("d must be > 0, got {d}")));
        }
        if !gamma.is_finite() || gamma <= 0.0 || gamma > 1.0 {
            return Err(SbmError::InvalidParameter(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        let p_hi = (1.0 + gamma) * d / n as f64;
        if p_hi > 1.0 {
            return Err(SbmError::InvalidParameter(format!(
                "edge probability (1 + gamma) d / n = {p_hi} exceeds 1"
            )));
        }
        Ok(Self { n, d, gamma, labels })
    }
}

/// Draws a graph from the block model.
pub fn sample_sbm<R: Rng + ?Sized>(params: &SbmParams, rng: &mut R) -> Graph {
    let n = params.n;
    let base = params.d / n as f64;
    let mut edges = Vec::new();
    let mut set = HashSet::new();
    for i in 0..n as u32 {
        let xi = params.labels.get(i as usize) as f64;
        for j in (i + 1)..n as u32 {
            let xj = params.labels.get(j as usize) as f64;
            let p = (1.0 + params.gamma * xi * xj) * base;
            if rng.gen::<f64>() < p {
                edges.push((i, j));
                set.insert((i, j));
            }
        }
    }
    Graph { n, edges, edge_set: set }
}

/// The centered rescaled matrix `Y(G) = (A - (d/n) J) / (gamma d)` with the
/// convention that `A` carries `d/n` on the diagonal, so `diag(Y) = 0`.
pub fn center_rescale(g: &Graph, d: f64, gamma: f64) -> SymmetricMatrix {
    let n = g.n();
    let edge_val = (1.0 - d / n as f64) / (gamma * d);
    let non_edge_val = -1.0 / (gamma * n as f64);
    let mut y = SymmetricMatrix::from_fn(n, |i, j| if i == j { 0.0 } else { non_edge_val });
    for &(a, b) in g.edges() {
        y.set(a as usize, b as usize, edge_val);
    }
    y
}

/// Splits the edges of `g` into two edge-disjoint graphs; each edge joins
/// the first output independently with probability `p`.
pub fn split_graph<R: Rng + ?Sized>(g: &Graph, p: f64, rng: &mut R) -> (Graph, Graph) {
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    for &e in g.edges() {
        if rng.gen::<f64>() < p {
            e1.push(e);
        } else {
            e2.push(e);
        }
    }
    let g1 = Graph { n: g.n(), edge_set: e1.iter().copied().collect(), edges: e1 };
    let g2 = Graph { n: g.n(), edge_set: e2.iter().copied().collect(), edges: e2 };
    (g1, g2)
}

/// Converts the (alpha, beta) logarithmic-degree parameterization
/// (intra probability `alpha ln(n)/n`, inter `beta ln(n)/n`) to (d, gamma).
pub fn alpha_beta_to_d_gamma(alpha: f64, beta: f64, n: usize) -> Result<(f64, f64)> {
    if !(alpha.is_finite() && beta.is_finite()) || beta <= 0.0 || alpha <= beta {
        return Err(SbmError::InvalidParameter(format!(
            "need alpha > beta > 0, got alpha = {alpha}, beta = {beta}"
        )));
    }
    let logn = (n as f64).ln();
    Ok(((alpha + beta) / 2.0 * logn, (alpha - beta) / (alpha + beta)))
}

/// Inverse of [`alpha_beta_to_d_gamma`].
pub fn d_gamma_to_alpha_beta(d: f64, gamma: f64, n: usize) -> (f64, f64) {
    let logn = (n as f64).ln();
    ((1.0 + gamma) * d / logn, (1.0 - gamma) * d / logn)
}
