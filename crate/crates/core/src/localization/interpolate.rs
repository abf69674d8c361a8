//! Harmonic extension of sensor values over the network graph.
//!
//! Free nodes satisfy `f(v) = mean of f over neighbours`. With at least one
//! fixed node per component the reduced Laplacian is symmetric positive
//! definite; small systems are factored once with an envelope Cholesky under
//! reverse Cuthill-McKee ordering, large ones are relaxed with Gauss-Seidel.

use std::collections::{BTreeMap, VecDeque};

use log::warn;
use serde::{Deserialize, Serialize};

use super::graph::NetworkGraph;
use crate::error::{Error, Result};

/// Node count above which the solver switches to Gauss-Seidel.
pub const DIRECT_SOLVER_LIMIT: usize = 10_000;
/// Max-norm residual target for the iterative solver.
pub const RELAXATION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeWeighting {
    /// Plain neighbour mean.
    #[default]
    Unweighted,
    /// Neighbours weighted by inverse pipe length.
    InverseLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverChoice {
    #[default]
    Auto,
    Direct,
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Fixed,
    Interpolated,
}

/// Per-node values, indexed like the graph's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub values: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl NodeField {
    /// Index of the largest value; ties go to the lowest node index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Range of the fixed values.
    pub fn fixed_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .zip(&self.provenance)
            .filter(|(_, p)| **p == Provenance::Fixed)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| (lo.min(*v), hi.max(*v)))
    }
}

/// Lower-triangular envelope factor: row `i` stores columns `first[i]..=i`.
#[derive(Debug, Clone)]
struct EnvelopeCholesky {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    fn factor(n: usize, entries: &[BTreeMap<usize, f64>]) -> Result<Self> {
        // entries[i] holds the lower-triangle nonzeros (j <= i) of row i
        let first: Vec<usize> = (0..n).map(|i| entries[i].keys().next().copied().unwrap_or(i)).collect();
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; offset[n]];
        for i in 0..n {
            for (&j, &a) in &entries[i] {
                data[offset[i] + j - first[i]] = a;
            }
        }
        let mut f = Self { first, offset, data };
        for i in 0..n {
            for j in f.first[i]..=i {
                let k0 = f.first[i].max(f.first[j]);
                let mut s = f.get(i, j);
                for k in k0..j {
                    s -= f.get(i, k) * f.get(j, k);
                }
                if j < i {
                    let d = f.get(j, j);
                    f.set(i, j, s / d);
                } else {
                    if s <= 0.0 {
                        return Err(Error::Graph(
                            "Laplace system is not positive definite; a free component has no sensor".into(),
                        ));
                    }
                    f.set(i, i, s.sqrt());
                }
            }
        }
        Ok(f)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.offset[i] + j - self.first[i]]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.offset[i] + j - self.first[i];
        self.data[k] = v;
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n {
            let mut s = b[i];
            for k in self.first[i]..i {
                s -= self.get(i, k) * b[k];
            }
            b[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            b[i] /= self.get(i, i);
            let xi = b[i];
            for k in self.first[i]..i {
                b[k] -= self.get(i, k) * xi;
            }
        }
    }
}

/// Reverse Cuthill-McKee order of the free nodes (indices into `free`).
fn rcm_order(free: &[usize], local: &[Option<usize>], graph: &NetworkGraph) -> Vec<usize> {
    let m = free.len();
    let degree = |a: usize| {
        graph
            .neighbors(free[a])
            .iter()
            .filter(|(u, _)| local[*u].is_some())
            .count()
    };
    let mut visited = vec![false; m];
    let mut order = Vec::with_capacity(m);
    let mut by_degree: Vec<usize> = (0..m).collect();
    by_degree.sort_by_key(|&a| (degree(a), a));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(a) = queue.pop_front() {
            order.push(a);
            let mut next: Vec<usize> = graph
                .neighbors(free[a])
                .iter()
                .filter_map(|(u, _)| local[*u])
                .filter(|b| !visited[*b])
                .collect();
            next.sort_by_key(|&b| (degree(b), b));
            next.dedup();
            for b in next {
                if !visited[b] {
                    visited[b] = true;
                    queue.push_back(b);
                }
            }
        }
    }
    order.reverse();
    order
}

#[derive(Debug, Clone)]
enum Solver {
    Direct {
        factor: EnvelopeCholesky,
        /// position in the factor of each free node
        perm: Vec<usize>,
    },
    GaussSeidel,
}

/// Pre-built Laplace system for a fixed set of support nodes.
///
/// The factorization is reused across calls with different fixed values.
#[derive(Debug, Clone)]
pub struct LaplaceInterpolator<'g> {
    graph: &'g NetworkGraph,
    weighting: EdgeWeighting,
    fixed: Vec<bool>,
    free: Vec<usize>,
    solver: Solver,
}

impl<'g> LaplaceInterpolator<'g> {
    pub fn new(graph: &'g NetworkGraph, fixed_nodes: &[usize], weighting: EdgeWeighting, choice: SolverChoice) -> Result<Self> {
        let n = graph.len();
        let mut fixed = vec![false; n];
        for &i in fixed_nodes {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, dim: n });
            }
            fixed[i] = true;
        }
        let comps = graph.components();
        let ncomp = comps.iter().copied().max().map_or(0, |c| c + 1);
        let mut supported = vec![false; ncomp];
        for i in 0..n {
            if fixed[i] {
                supported[comps[i]] = true;
            }
        }
        if let Some(i) = (0..n).find(|&i| !supported[comps[i]]) {
            return Err(Error::Graph(format!(
                "component containing node '{}' has no sensor; its values are undetermined",
                graph.node(i).id
            )));
        }
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        let mut local = vec![None; n];
        for (a, &i) in free.iter().enumerate() {
            local[i] = Some(a);
        }
        let direct = match choice {
            SolverChoice::Auto => n <= DIRECT_SOLVER_LIMIT,
            SolverChoice::Direct => true,
            SolverChoice::GaussSeidel => false,
        };
        let solver = if direct {
            let order = rcm_order(&free, &local, graph);
            let mut perm = vec![0; free.len()];
            for (p, &a) in order.iter().enumerate() {
                perm[a] = p;
            }
            let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); free.len()];
            for (a, &v) in free.iter().enumerate() {
                let p = perm[a];
                let mut diag = 0.0;
                for &(u, len) in graph.neighbors(v) {
                    let w = edge_weight(weighting, len);
                    diag += w;
                    if let Some(b) = local[u] {
                        let q = perm[b];
                        if q < p {
                            rows[p].insert(q, -w);
                        }
                    }
                }
                rows[p].insert(p, diag);
            }
            Solver::Direct {
                factor: EnvelopeCholesky::factor(free.len(), &rows)?,
                perm,
            }
        } else {
            Solver::GaussSeidel
        };
        Ok(Self {
            graph,
            weighting,
            fixed,
            free,
            solver,
        })
    }

    pub fn graph(&self) -> &'g NetworkGraph {
        self.graph
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.fixed[i]
    }

    /// Solves for the free nodes given `values` at the fixed nodes
    /// (entries at free nodes are ignored).
    pub fn solve(&self, values: &[f64]) -> Result<NodeField> {
        let n = self.graph.len();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        let mut f: Vec<f64> = (0..n).map(|i| if self.fixed[i] { values[i] } else { 0.0 }).collect();
        let (lo, hi) = (0..n)
            .filter(|&i| self.fixed[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(f[i]), hi.max(f[i])));
        match &self.solver {
            Solver::Direct { factor, perm } => {
                let mut b = vec![0.0; self.free.len()];
                for (a, &v) in self.free.iter().enumerate() {
                    let mut rhs = 0.0;
                    for &(u, len) in self.graph.neighbors(v) {
                        if self.fixed[u] {
                            rhs += edge_weight(self.weighting, len) * f[u];
                        }
                    }
                    b[perm[a]] = rhs;
                }
                factor.solve(&mut b);
                for (a, &v) in self.free.iter().enumerate() {
                    f[v] = b[perm[a]];
                }
            }
            Solver::GaussSeidel => {
                let start = 0.5 * (lo + hi);
                for &v in &self.free {
                    f[v] = start;
                }
                self.relax(&mut f)?;
            }
        }
        // the exact solution obeys the maximum principle; drop rounding excursions
        for &v in &self.free {
            f[v] = f[v].clamp(lo, hi);
        }
        let provenance = self
            .fixed
            .iter()
            .map(|&x| if x { Provenance::Fixed } else { Provenance::Interpolated })
            .collect();
        Ok(NodeField { values: f, provenance })
    }

    fn relax(&self, f: &mut [f64]) -> Result<()> {
        const MAX_SWEEPS: usize = 1_000_000;
        for _ in 0..MAX_SWEEPS {
            for &v in &self.free {
                f[v] = self.neighbor_mean(f, v);
            }
            if self.max_residual(f) < RELAXATION_TOLERANCE {
                return Ok(());
            }
        }
        Err(Error::Graph("Gauss-Seidel relaxation did not converge".into()))
    }

    fn neighbor_mean(&self, f: &[f64], v: usize) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &(u, len) in self.graph.neighbors(v) {
            let w = edge_weight(self.weighting, len);
            num += w * f[u];
            den += w;
        }
        num / den
    }

    /// Largest `|f(v) - mean of neighbours|` over free nodes.
    pub fn max_residual(&self, f: &[f64]) -> f64 {
        self.free
            .iter()
            .map(|&v| (f[v] - self.neighbor_mean(f, v)).abs())
            .fold(0.0, f64::max)
    }

    /// Number of free nodes.
    pub fn free_count(&self) -> usize {
        self.free.len()
    }
}

fn edge_weight(weighting: EdgeWeighting, length: f64) -> f64 {
    match weighting {
        EdgeWeighting::Unweighted => 1.0,
        EdgeWeighting::InverseLength => 1.0 / length,
    }
}

/// Fixed node values from per-sensor values; several sensors on one node keep the maximum.
pub fn sensor_node_values(graph: &NetworkGraph, sensor_values: &[(&str, f64)]) -> Result<BTreeMap<usize, f64>> {
    let mut fixed = BTreeMap::new();
    for &(sensor, value) in sensor_values {
        let node = graph.sensor_node(sensor)?;
        let slot = fixed.entry(node).or_insert(value);
        if value > *slot {
            warn!("several sensors on node '{}'; keeping the largest value", graph.node(node).id);
            *slot = value;
        }
    }
    Ok(fixed)
}

/// One-shot interpolation of node values given at `fixed` (node index to value).
pub fn laplacian_interpolate(graph: &NetworkGraph, fixed: &BTreeMap<usize, f64>, weighting: EdgeWeighting) -> Result<NodeField> {
    let nodes: Vec<usize> = fixed.keys().copied().collect();
    let interp = LaplaceInterpolator::new(graph, &nodes, weighting, SolverChoice::Auto)?;
    let mut values = vec![0.0; graph.len()];
    for (&i, &v) in fixed {
        values[i] = v;
    }
    interp.solve(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::graph::{Edge, Node};

    pub(crate) fn grid(w: usize, h: usize, spacing: f64) -> NetworkGraph {
        let id = |i: usize, j: usize| format!("n{}", j * w + i);
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for j in 0..h {
            for i in 0..w {
                nodes.push(Node {
                    id: id(i, j),
                    x: i as f64 * spacing,
                    y: j as f64 * spacing,
                });
                if i + 1 < w {
                    edges.push(Edge {
                        id: format!("h{i}_{j}"),
                        u: id(i, j),
                        v: id(i + 1, j),
                        length: spacing,
                    });
                }
                if j + 1 < h {
                    edges.push(Edge {
                        id: format!("v{i}_{j}"),
                        u: id(i, j),
                        v: id(i, j + 1),
                        length: spacing,
                    });
                }
            }
        }
        NetworkGraph::new(nodes, edges).unwrap()
    }

    /// Jacobi relaxation, independent of the solver under test.
    fn jacobi(graph: &NetworkGraph, fixed: &BTreeMap<usize, f64>) -> Vec<f64> {
        let n = graph.len();
        let mut f: Vec<f64> = (0..n).map(|i| fixed.get(&i).copied().unwrap_or(0.0)).collect();
        for _ in 0..200_000 {
            let next: Vec<f64> = (0..n)
                .map(|v| {
                    fixed.get(&v).copied().unwrap_or_else(|| {
                        let nb = graph.neighbors(v);
                        nb.iter().map(|(u, _)| f[*u]).sum::<f64>() / nb.len() as f64
                    })
                })
                .collect();
            let delta = next.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            f = next;
            if delta < 1e-13 {
                break;
            }
        }
        f
    }

    #[test]
    fn path_midpoint_is_average() {
        let g = grid(3, 1, 10.0);
        let field = laplacian_interpolate(&g, &BTreeMap::from([(0, 0.0), (2, 1.0)]), EdgeWeighting::Unweighted).unwrap();
        assert!((field.values[1] - 0.5).abs() < 1e-15);
        assert_eq!(field.provenance[1], Provenance::Interpolated);
    }

    #[test]
    fn constant_boundary_gives_constant_field() {
        let g = grid(6, 4, 10.0);
        let fixed = BTreeMap::from([(0, 2.5), (7, 2.5), (23, 2.5)]);
        let field = laplacian_interpolate(&g, &fixed, EdgeWeighting::Unweighted).unwrap();
        assert!(field.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn grid_matches_relaxation_oracle() {
        let g = grid(5, 5, 100.0);
        let fixed = BTreeMap::from([(0, 1.0), (24, 0.0)]);
        let oracle = jacobi(&g, &fixed);
        for choice in [SolverChoice::Direct, SolverChoice::GaussSeidel] {
            let interp = LaplaceInterpolator::new(&g, &[0, 24], EdgeWeighting::Unweighted, choice).unwrap();
            let mut vals = vec![0.0; 25];
            vals[0] = 1.0;
            let field = interp.solve(&vals).unwrap();
            for (a, b) in field.values.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-6, "{choice:?}: {a} vs {b}");
            }
            assert!(interp.max_residual(&field.values) < 1e-8);
        }
        // by symmetry the anti-diagonal sits at 1/2
        let field = laplacian_interpolate(&g, &fixed, EdgeWeighting::Unweighted).unwrap();
        assert!((field.values[12] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_support_is_an_error() {
        let mut nodes = grid(3, 1, 1.0).nodes().to_vec();
        nodes.push(Node {
            id: "island".into(),
            x: 9.0,
            y: 9.0,
        });
        let g = NetworkGraph::new(nodes, grid(3, 1, 1.0).edges().to_vec()).unwrap();
        let err = laplacian_interpolate(&g, &BTreeMap::from([(0, 1.0)]), EdgeWeighting::Unweighted).unwrap_err();
        assert!(err.to_string().contains("island"));
    }

    #[test]
    fn duplicate_sensor_nodes_keep_maximum() {
        let g = grid(2, 1, 1.0).with_sensors([("a", "n0"), ("b", "n0")]).unwrap();
        let fixed = sensor_node_values(&g, &[("a", 1.0), ("b", 3.0)]).unwrap();
        assert_eq!(fixed, BTreeMap::from([(0, 3.0)]));
    }

    #[test]
    fn inverse_length_weighting_pulls_toward_near_neighbour() {
        let nodes = vec![
            Node { id: "a".into(), x: 0.0, y: 0.0 },
            Node { id: "m".into(), x: 1.0, y: 0.0 },
            Node { id: "b".into(), x: 4.0, y: 0.0 },
        ];
        let e = |id: &str, u: &str, v: &str, l: f64| Edge { id: id.into(), u: u.into(), v: v.into(), length: l };
        let g = NetworkGraph::new(nodes, vec![e("1", "a", "m", 1.0), e("2", "m", "b", 3.0)]).unwrap();
        let fixed = BTreeMap::from([(0, 0.0), (2, 1.0)]);
        let field = laplacian_interpolate(&g, &fixed, EdgeWeighting::InverseLength).unwrap();
        assert!((field.values[1] - 0.25).abs() < 1e-12);
    }
}
