use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Location;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub u: String,
    pub v: String,
    /// Pipe length in meters.
    pub length: f64,
}

/// Undirected network with planar node coordinates (meters) and sensor bindings.
///
/// Node order is the order of construction; "lowest node" tie-breaks refer to it.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
    /// Per node: distinct neighbours with the shortest connecting edge length.
    adjacency: Vec<Vec<(usize, f64)>>,
    sensors: BTreeMap<String, usize>,
}

impl NetworkGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !(n.x.is_finite() && n.y.is_finite()) {
                return Err(Error::Graph(format!("node '{}' has non-finite coordinates", n.id)));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::Graph(format!("duplicate node id '{}'", n.id)));
            }
        }
        let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nodes.len()];
        for e in &edges {
            let lookup = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Graph(format!("edge '{}' references unknown node '{id}'", e.id)))
            };
            let (a, b) = (lookup(&e.u)?, lookup(&e.v)?);
            if a == b {
                return Err(Error::Graph(format!("edge '{}' is a self-loop on '{}'", e.id, e.u)));
            }
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(Error::Graph(format!("edge '{}' has invalid length {}", e.id, e.length)));
            }
            for (p, q) in [(a, b), (b, a)] {
                let slot = adj[p].entry(q).or_insert(e.length);
                *slot = slot.min(e.length);
            }
        }
        Ok(Self {
            nodes,
            edges,
            index,
            adjacency: adj.into_iter().map(|m| m.into_iter().collect()).collect(),
            sensors: BTreeMap::new(),
        })
    }

    /// Attaches `sensor` to `node`; fails if the node does not exist.
    pub fn bind_sensor(&mut self, sensor: impl Into<String>, node: &str) -> Result<()> {
        let sensor = sensor.into();
        let i = self
            .node_index(node)
            .ok_or_else(|| Error::Graph(format!("sensor '{sensor}' is bound to unknown node '{node}'")))?;
        self.sensors.insert(sensor, i);
        Ok(())
    }

    pub fn with_sensors<'a>(mut self, bindings: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        for (s, n) in bindings {
            self.bind_sensor(s, n)?;
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Sensor id to node index.
    pub fn sensor_bindings(&self) -> &BTreeMap<String, usize> {
        &self.sensors
    }

    pub fn sensor_node(&self, sensor: &str) -> Result<usize> {
        self.sensors
            .get(sensor)
            .copied()
            .ok_or_else(|| Error::Graph(format!("sensor '{sensor}' has no node binding")))
    }

    pub fn coords(&self, i: usize) -> (f64, f64) {
        (self.nodes[i].x, self.nodes[i].y)
    }

    /// Planar coordinates of a location.
    pub fn resolve(&self, loc: &Location) -> Result<(f64, f64)> {
        match loc {
            Location::Point { x, y } => Ok((*x, *y)),
            Location::Node(id) => self
                .node_index(id)
                .map(|i| self.coords(i))
                .ok_or_else(|| Error::UnresolvableLocation(id.clone())),
        }
    }

    pub fn euclidean(&self, a: &Location, b: &Location) -> Result<f64> {
        let (p, q) = (self.resolve(a)?, self.resolve(b)?);
        Ok((p.0 - q.0).hypot(p.1 - q.1))
    }

    /// Connected component label per node, numbered in order of first node.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.len()];
        let mut next = 0;
        for start in 0..self.len() {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(v) = stack.pop() {
                for &(u, _) in &self.adjacency[v] {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Shortest-path lengths (meters) from `source`; unreachable nodes get infinity.
    pub fn shortest_paths(&self, source: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
            }
        }
        let mut dist = vec![f64::INFINITY; self.len()];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::from([Item(0.0, source)]);
        while let Some(Item(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(u, w) in &self.adjacency[v] {
                let nd = d + w;
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push(Item(nd, u));
                }
            }
        }
        dist
    }
}
