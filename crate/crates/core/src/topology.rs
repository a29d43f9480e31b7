//! Network topologies: random generators, edge-list ingestion, spurious-link
//! perturbation and observation masks.
//!
//! Adjacency is stored densely, row-major, with `adjacency[i * n + j]` the
//! weight of the edge that carries node `j`'s state into node `i`'s equation.
//! Undirected graphs are stored symmetrically.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
    adjacency: Vec<f64>,
    directed: bool,
    node_type: Vec<usize>,
    edge_type: Vec<usize>,
    allow_self_loops: bool,
}

impl Topology {
    /// Empty graph on `n` nodes, homogeneous types.
    pub fn empty(n: usize, directed: bool) -> Self {
        Self {
            n,
            adjacency: vec![0.0; n * n],
            directed,
            node_type: vec![0; n],
            edge_type: vec![0; n * n],
            allow_self_loops: false,
        }
    }

    /// Complete simple graph on `n` nodes with unit weights.
    pub fn complete(n: usize) -> Self {
        let mut t = Self::empty(n, false);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    t.adjacency[i * n + j] = 1.0;
                }
            }
        }
        t
    }

    /// Build from a dense row-major weight matrix.
    pub fn from_dense(n: usize, adjacency: Vec<f64>, directed: bool) -> Result<Self> {
        if adjacency.len() != n * n {
            return Err(Error::shape(format!(
                "adjacency has {} entries, expected {}",
                adjacency.len(),
                n * n
            )));
        }
        let t = Self {
            n,
            adjacency,
            directed,
            node_type: vec![0; n],
            edge_type: vec![0; n * n],
            allow_self_loops: false,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if self.adjacency.len() != n * n || self.edge_type.len() != n * n {
            return Err(Error::shape("adjacency/edge-type size"));
        }
        if self.node_type.len() != n {
            return Err(Error::shape("node-type length"));
        }
        for (k, &w) in self.adjacency.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!(
                    "weight A[{}][{}] = {w} must be finite and non-negative",
                    k / n,
                    k % n
                )));
            }
        }
        if !self.allow_self_loops && (0..n).any(|i| self.adjacency[i * n + i] != 0.0) {
            return Err(Error::invalid("self-loop present but not enabled"));
        }
        if !self.directed {
            for i in 0..n {
                for j in (i + 1)..n {
                    if self.adjacency[i * n + j] != self.adjacency[j * n + i] {
                        return Err(Error::invalid(format!(
                            "undirected adjacency not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        check_dense_labels(&self.node_type, "node")?;
        let used: Vec<usize> = (0..n * n)
            .filter(|&k| self.adjacency[k] > 0.0)
            .map(|k| self.edge_type[k])
            .collect();
        check_dense_labels(&used, "edge")?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn allows_self_loops(&self) -> bool {
        self.allow_self_loops
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn node_type(&self, i: usize) -> usize {
        self.node_type[i]
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_type
    }

    pub fn edge_type(&self, i: usize, j: usize) -> usize {
        self.edge_type[i * self.n + j]
    }

    /// Number of node types K (at least 1).
    pub fn num_node_types(&self) -> usize {
        self.node_type.iter().copied().max().map_or(1, |m| m + 1)
    }

    /// Number of edge types E (at least 1).
    pub fn num_edge_types(&self) -> usize {
        (0..self.n * self.n)
            .filter(|&k| self.adjacency[k] > 0.0)
            .map(|k| self.edge_type[k])
            .max()
            .map_or(1, |m| m + 1)
    }

    /// Nonzero in-neighbors of `i` as `(j, weight, edge_type)`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64, usize)> + '_ {
        let n = self.n;
        (0..n).filter_map(move |j| {
            let w = self.adjacency[i * n + j];
            (w > 0.0).then(|| (j, w, self.edge_type[i * n + j]))
        })
    }

    /// All nonzero entries `(i, j, weight, edge_type)` in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64, usize)> {
        let n = self.n;
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.adjacency[i * n + j];
                if w > 0.0 {
                    out.push((i, j, w, self.edge_type[i * n + j]));
                }
            }
        }
        out
    }

    /// Edge count: unordered pairs for undirected graphs, arcs otherwise.
    pub fn edge_count(&self) -> usize {
        let arcs = self.adjacency.iter().filter(|&&w| w > 0.0).count();
        if self.directed {
            arcs
        } else {
            let loops = (0..self.n).filter(|&i| self.weight(i, i) > 0.0).count();
            (arcs - loops) / 2 + loops
        }
    }

    /// Number of nonzero entries in row `i` (in-degree K_in).
    pub fn in_degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.in_degree(i)).collect()
    }

    pub fn with_node_types(mut self, node_type: Vec<usize>) -> Result<Self> {
        if node_type.len() != self.n {
            return Err(Error::shape("node-type length"));
        }
        self.node_type = node_type;
        self.validate()?;
        Ok(self)
    }

    /// Set edge labels from a function of `(i, j)`.
    pub fn with_edge_types(mut self, f: impl Fn(usize, usize) -> usize) -> Result<Self> {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                self.edge_type[i * n + j] = f(i, j);
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn with_self_loops(mut self, allow: bool) -> Self {
        self.allow_self_loops = allow;
        self
    }

    /// Relabel nodes: node `i` of `self` becomes node `perm[i]` of the result.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut out = self.clone();
        for i in 0..n {
            out.node_type[perm[i]] = self.node_type[i];
            for j in 0..n {
                out.adjacency[perm[i] * n + perm[j]] = self.adjacency[i * n + j];
                out.edge_type[perm[i] * n + perm[j]] = self.edge_type[i * n + j];
            }
        }
        out
    }

    /// Adjacency restricted to the edges of type `e` (A^e).
    pub fn layer(&self, e: usize) -> Vec<f64> {
        self.adjacency
            .iter()
            .zip(&self.edge_type)
            .map(|(&w, &t)| if t == e { w } else { 0.0 })
            .collect()
    }

    /// `n` rows of `n` comma-separated weights.
    pub fn to_adjacency_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|j| format!("{}", self.weight(i, j)))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Edge-list text; undirected graphs emit each pair once with `src < dst`.
    pub fn to_edge_list(&self, weighted: bool) -> String {
        let mut s = String::new();
        for (i, j, w, _) in self.edges() {
            if !self.directed && j < i {
                continue;
            }
            // Stored rows are targets; the file is written as "src dst".
            let (src, dst) = (j, i);
            if weighted {
                let _ = writeln!(s, "{src} {dst} {w}");
            } else {
                let _ = writeln!(s, "{src} {dst}");
            }
        }
        s
    }

    pub fn save_edge_list(&self, path: impl AsRef<Path>, weighted: bool) -> Result<()> {
        std::fs::write(path, self.to_edge_list(weighted))?;
        Ok(())
    }
}

fn check_dense_labels(labels: &[usize], what: &str) -> Result<()> {
    if labels.is_empty() {
        return Ok(());
    }
    let max = *labels.iter().max().unwrap();
    let mut seen = vec![false; max + 1];
    for &l in labels {
        seen[l] = true;
    }
    if let Some(gap) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!(
            "{what} type labels are not dense: label {gap} unused below {max}"
        )));
    }
    Ok(())
}

/// Erdős–Rényi G(n, p): each unordered pair linked independently with probability `p`.
pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<Topology> {
    if n < 2 {
        return Err(Error::invalid(format!("ER needs n >= 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("ER probability {p} outside [0, 1]")));
    }
    let mut rng = rng::seeded(seed);
    let mut t = Topology::empty(n, false);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                t.adjacency[i * n + j] = 1.0;
                t.adjacency[j * n + i] = 1.0;
            }
        }
    }
    Ok(t)
}

/// Barabási–Albert preferential attachment grown from an `m`-node complete core.
pub fn gen_ba(n: usize, m: usize, seed: u64) -> Result<Topology> {
    if m < 1 || m >= n {
        return Err(Error::invalid(format!(
            "BA needs 1 <= m < n, got m={m}, n={n}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut t = Topology::empty(n, false);
    // Each edge contributes both endpoints; sampling uniformly from this list
    // is sampling proportional to degree.
    let mut endpoints: Vec<usize> = Vec::with_capacity(2 * m * n);
    for i in 0..m {
        for j in (i + 1)..m {
            t.adjacency[i * n + j] = 1.0;
            t.adjacency[j * n + i] = 1.0;
            endpoints.push(i);
            endpoints.push(j);
        }
    }
    let mut targets = Vec::with_capacity(m);
    for new in m..n {
        targets.clear();
        while targets.len() < m {
            let cand = if endpoints.is_empty() {
                rng.random_range(0..new)
            } else {
                endpoints[rng.random_range(0..endpoints.len())]
            };
            if !targets.contains(&cand) {
                targets.push(cand);
            }
        }
        for &old in &targets {
            t.adjacency[new * n + old] = 1.0;
            t.adjacency[old * n + new] = 1.0;
            endpoints.push(new);
            endpoints.push(old);
        }
    }
    Ok(t)
}

/// Parse "src dst [weight]" lines with 0-based ids. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_edge_list(
    text: &str,
    weighted: bool,
    directed: bool,
    allow_self_loops: bool,
) -> Result<Topology> {
    let mut entries = Vec::new();
    let mut max_id = None::<usize>;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 'src dst [weight]', got '{line}'"),
            });
        }
        let parse_id = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid node id '{s}'"),
            })
        };
        let src = parse_id(fields[0])?;
        let dst = parse_id(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => {
                let w: f64 = s.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("invalid weight '{s}'"),
                })?;
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("negative or non-finite weight {w}"),
                    });
                }
                if weighted {
                    w
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        if src == dst && !allow_self_loops {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("self-loop on node {src}"),
            });
        }
        max_id = Some(max_id.map_or(src.max(dst), |m: usize| m.max(src).max(dst)));
        entries.push((src, dst, w));
    }
    let n = max_id.map_or(0, |m| m + 1);
    let mut t = Topology::empty(n, directed).with_self_loops(allow_self_loops);
    for (src, dst, w) in entries {
        t.adjacency[dst * n + src] = w;
        if !directed {
            t.adjacency[src * n + dst] = w;
        }
    }
    Ok(t)
}

pub fn load_edge_list(path: impl AsRef<Path>, weighted: bool, directed: bool) -> Result<Topology> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text, weighted, directed, false)
}

/// Flip each pair's edge state with probability `eta`: existing edges are
/// deleted, absent pairs are added with unit weight and edge type 0.
///
/// One uniform draw is consumed per pair regardless of `eta`, so under a
/// fixed seed the flipped sets are nested as `eta` grows.
pub fn perturb_topology(t: &Topology, eta: f64, seed: u64) -> Result<Topology> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!(
            "spurious-link probability {eta} outside [0, 1]"
        )));
    }
    let n = t.n;
    let mut out = t.clone();
    let mut rng = rng::seeded(seed);
    for i in 0..n {
        let start = if t.directed { 0 } else { i + 1 };
        for j in start..n {
            if i == j {
                continue;
            }
            let r: f64 = rng.random();
            if r >= eta {
                continue;
            }
            let present = t.adjacency[i * n + j] > 0.0;
            let (w, e) = if present { (0.0, 0) } else { (1.0, 0) };
            out.adjacency[i * n + j] = w;
            out.edge_type[i * n + j] = e;
            if !t.directed {
                out.adjacency[j * n + i] = w;
                out.edge_type[j * n + i] = e;
            }
        }
    }
    Ok(out)
}

/// Observation masks: `state[i * d + k]` for node state entries (M_x),
/// `adj[i * n + j]` for adjacency entries (M_a).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationMask {
    pub n: usize,
    pub d: usize,
    pub state: Vec<bool>,
    pub adj: Vec<bool>,
}

impl ObservationMask {
    pub fn all_observed(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            state: vec![true; n * d],
            adj: vec![true; n * n],
        }
    }

    pub fn check(&self, n: usize, d: usize) -> Result<()> {
        if self.n != n || self.d != d || self.state.len() != n * d || self.adj.len() != n * n {
            return Err(Error::shape(format!(
                "mask is {}x{} but data is {n}x{d}",
                self.n, self.d
            )));
        }
        Ok(())
    }

    /// A node is usable only if all of its state dimensions are observed.
    pub fn node_observed(&self, i: usize) -> bool {
        self.state[i * self.d..(i + 1) * self.d].iter().all(|&b| b)
    }

    pub fn edge_observed(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }
}
