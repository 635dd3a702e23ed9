//! Network topology: a simple, connected, undirected graph whose nodes carry
//! geographic positions. Every edge counts as one hop.
//!
//! Nodes are stored sorted by id, so node indices order the same way ids do
//! and nothing downstream depends on input file order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub position: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyFormat {
    Json,
    EdgeList,
}

#[derive(Debug, Serialize, Deserialize)]
struct TopologyDoc {
    nodes: Vec<NodeDoc>,
    edges: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    index: BTreeMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    all_pairs: OnceLock<Vec<Vec<u32>>>,
}

impl Topology {
    /// Builds and validates a topology from raw node and edge lists.
    pub fn from_parts(nodes: Vec<(String, GeoPoint)>, edges: Vec<(String, String)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyTopology);
        }
        let mut sorted: BTreeMap<String, GeoPoint> = BTreeMap::new();
        for (id, pos) in nodes {
            if sorted.contains_key(&id) {
                return Err(Error::DuplicateNode(id));
            }
            let pos = GeoPoint::new(pos.lat, pos.lon)?;
            sorted.insert(id, pos);
        }
        let nodes: Vec<Node> = sorted
            .into_iter()
            .map(|(id, position)| Node { id, position })
            .collect();
        let index: BTreeMap<String, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();

        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (i, (a, b)) in edges.iter().enumerate() {
            let ia = *index.get(a).ok_or_else(|| Error::DanglingEdge {
                index: i,
                id: a.clone(),
            })?;
            let ib = *index.get(b).ok_or_else(|| Error::DanglingEdge {
                index: i,
                id: b.clone(),
            })?;
            if ia == ib {
                return Err(Error::SelfLoop {
                    index: i,
                    id: a.clone(),
                });
            }
            let key = (ia.min(ib), ia.max(ib));
            if !seen.insert(key) {
                return Err(Error::DuplicateEdge {
                    index: i,
                    a: a.clone(),
                    b: b.clone(),
                });
            }
            adjacency[ia].push(ib);
            adjacency[ib].push(ia);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        let topo = Self {
            nodes,
            index,
            adjacency,
            edges: seen.into_iter().collect(),
            all_pairs: OnceLock::new(),
        };
        let reach = topo.bfs(0);
        let unreachable = reach.iter().filter(|&&d| d == u32::MAX).count();
        if unreachable > 0 {
            return Err(Error::Disconnected {
                from: topo.nodes[0].id.clone(),
                unreachable,
                total: topo.nodes.len(),
            });
        }
        Ok(topo)
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        let doc: TopologyDoc = serde_json::from_reader(reader).map_err(|e| {
            if e.is_io() {
                Error::Json(e)
            } else {
                Error::Parse {
                    location: format!("line {}, column {}", e.line(), e.column()),
                    message: e.to_string(),
                }
            }
        })?;
        let nodes = doc
            .nodes
            .into_iter()
            .map(|n| {
                let p = GeoPoint::new(n.lat, n.lon).map_err(|e| Error::Parse {
                    location: format!("node {:?}", n.id),
                    message: e.to_string(),
                })?;
                Ok((n.id, p))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(nodes, doc.edges)
    }

    /// Reads an `id id` edge file plus an `id lat lon` node sidecar.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn from_edge_list<E: Read, N: Read>(edges: E, nodes: N) -> Result<Self> {
        let mut node_list = Vec::new();
        for (lineno, fields) in data_lines(nodes)? {
            let [id, lat, lon] = fields.as_slice() else {
                return Err(parse_err("node file", lineno, "expected `id lat lon`"));
            };
            let lat: f64 = lat
                .parse()
                .map_err(|_| parse_err("node file", lineno, "latitude is not a number"))?;
            let lon: f64 = lon
                .parse()
                .map_err(|_| parse_err("node file", lineno, "longitude is not a number"))?;
            let p = GeoPoint::new(lat, lon).map_err(|e| parse_err("node file", lineno, &e.to_string()))?;
            node_list.push((id.clone(), p));
        }
        let mut edge_list = Vec::new();
        for (lineno, fields) in data_lines(edges)? {
            let [a, b] = fields.as_slice() else {
                return Err(parse_err("edge file", lineno, "expected `id id`"));
            };
            edge_list.push((a.clone(), b.clone()));
        }
        Self::from_parts(node_list, edge_list)
    }

    pub fn load<R: Read>(reader: R, format: TopologyFormat, sidecar: Option<R>) -> Result<Self> {
        match format {
            TopologyFormat::Json => Self::from_json_reader(reader),
            TopologyFormat::EdgeList => {
                let nodes = sidecar
                    .ok_or_else(|| Error::InvalidParameter("edge-list format needs a node file".into()))?;
                Self::from_edge_list(reader, nodes)
            }
        }
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let doc = TopologyDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.clone(),
                    lat: n.position.lat,
                    lon: n.position.lon,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| (self.nodes[a].id.clone(), self.nodes[b].id.clone()))
                .collect(),
        };
        serde_json::to_writer_pretty(writer, &doc)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    /// Edges as index pairs `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn position(&self, id: &str) -> Result<GeoPoint> {
        Ok(self.nodes[self.index_of(id)?].position)
    }

    /// Neighbors of a node index, ascending.
    pub fn neighbors(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    pub fn degree(&self, id: &str) -> Result<usize> {
        Ok(self.adjacency[self.index_of(id)?].len())
    }

    /// Breadth-first hop counts from one node; unreachable nodes get `u32::MAX`.
    pub fn bfs(&self, source: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.nodes.len()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == u32::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Shortest hop path from `from` to `to`, both inclusive. Among equal
    /// length paths, the one through smaller node ids is preferred.
    pub fn shortest_path(&self, from: usize, to: usize) -> Vec<usize> {
        let dist = &self.all_pairs()[to];
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            cur = *self.adjacency[cur]
                .iter()
                .find(|&&v| dist[v] + 1 == dist[cur])
                .expect("connected graph has a next hop");
            path.push(cur);
        }
        path
    }

    /// All-pairs hop matrix indexed by node index, computed once.
    pub fn all_pairs(&self) -> &[Vec<u32>] {
        self.all_pairs
            .get_or_init(|| (0..self.nodes.len()).map(|s| self.bfs(s)).collect())
    }

    pub fn hop(&self, a: usize, b: usize) -> u32 {
        self.all_pairs()[a][b]
    }

    pub fn hop_distances<S: AsRef<str>>(&self, sources: &[S]) -> Result<HopMatrix> {
        let mut rows = BTreeMap::new();
        for s in sources {
            let idx = self.index_of(s.as_ref())?;
            let row = self.all_pairs()[idx]
                .iter()
                .zip(&self.nodes)
                .map(|(&d, n)| (n.id.clone(), d))
                .collect();
            rows.insert(s.as_ref().to_string(), row);
        }
        Ok(HopMatrix { rows })
    }

    /// Maps every node to its closest landmark by hops; ties go to the
    /// lexicographically smallest landmark id.
    pub fn assign_to_closest<S: AsRef<str>>(&self, landmarks: &[S]) -> Result<BTreeMap<String, String>> {
        if landmarks.is_empty() {
            return Err(Error::InvalidParameter("landmark set is empty".into()));
        }
        let idx = landmarks
            .iter()
            .map(|l| self.index_of(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .closest_landmarks(&idx)
            .into_iter()
            .enumerate()
            .map(|(v, l)| (self.nodes[v].id.clone(), self.nodes[l].id.clone()))
            .collect())
    }

    /// Index of the closest landmark for every node, smallest index on ties.
    pub(crate) fn closest_landmarks(&self, landmarks: &[usize]) -> Vec<usize> {
        let ap = self.all_pairs();
        (0..self.nodes.len())
            .map(|v| {
                *landmarks
                    .iter()
                    .min_by_key(|&&l| (ap[l][v], l))
                    .expect("non-empty landmark set")
            })
            .collect()
    }
}

/// Hop counts from each requested source to every node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HopMatrix {
    pub rows: BTreeMap<String, BTreeMap<String, u32>>,
}

impl HopMatrix {
    pub fn get(&self, source: &str, target: &str) -> Option<u32> {
        self.rows.get(source)?.get(target).copied()
    }
}

fn parse_err(file: &str, line: usize, msg: &str) -> Error {
    Error::Parse {
        location: format!("{file} line {line}"),
        message: msg.to_string(),
    }
}

fn data_lines<R: Read>(reader: R) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.split_whitespace().map(str::to_string).collect()));
    }
    Ok(out)
}
