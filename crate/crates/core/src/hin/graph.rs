//! In-memory typed graph with per-type adjacency indexing.
//!
//! Edges are undirected: relations (friendship, rating, attribute links) are
//! traversed in both directions by walks, so the loader indexes both
//! endpoints. The graph is immutable after load and safe to share across
//! worker threads.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hin::schema::{NetworkSchema, NodeTypeId};

/// A node together with its type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedNode {
    pub id: String,
    pub node_type: NodeTypeId,
}

#[derive(Debug, Clone)]
pub struct HinGraph {
    schema: NetworkSchema,
    ids: Vec<String>,
    type_of: Vec<usize>,
    index: HashMap<String, u32>,
    /// adjacency[node][type index] = neighbor node indices, sorted by id.
    adjacency: Vec<Vec<Vec<u32>>>,
    edge_count: usize,
}

impl HinGraph {
    /// Build a graph from node and edge lists, validating every node type and
    /// edge endpoint pair against the schema.
    pub fn build(
        schema: NetworkSchema,
        nodes: Vec<TypedNode>,
        edges: Vec<(String, String)>,
    ) -> Result<Self> {
        let mut g = GraphSource::new(schema);
        for n in nodes {
            g.add_node(n, None)?;
        }
        for (a, b) in edges {
            g.add_edge(&a, &b, None)?;
        }
        g.finish()
    }

    /// Load from the tabular file formats: nodes as `<id>\t<type>` lines,
    /// edges as `<src>\t<dst>` lines. `#` comments and blank lines are
    /// ignored; duplicate edges collapse to one.
    pub fn load(
        nodes_path: impl AsRef<Path>,
        edges_path: impl AsRef<Path>,
        schema: NetworkSchema,
    ) -> Result<Self> {
        let nodes_path = nodes_path.as_ref();
        let edges_path = edges_path.as_ref();
        let nodes = BufReader::new(std::fs::File::open(nodes_path)?);
        let edges = BufReader::new(std::fs::File::open(edges_path)?);
        Self::from_readers(
            nodes,
            edges,
            schema,
            &nodes_path.display().to_string(),
            &edges_path.display().to_string(),
        )
    }

    pub fn from_readers(
        nodes: impl BufRead,
        edges: impl BufRead,
        schema: NetworkSchema,
        nodes_name: &str,
        edges_name: &str,
    ) -> Result<Self> {
        let mut g = GraphSource::new(schema);
        for (lineno, line) in nodes.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let at = Some((nodes_name, lineno + 1));
            match (parts.next(), parts.next()) {
                (Some(id), Some(code)) if !id.is_empty() && !code.is_empty() => {
                    let node_type = g
                        .schema
                        .type_by_code(code.trim())
                        .cloned()
                        .ok_or_else(|| {
                            Error::parse(nodes_name, lineno + 1, format!("unknown node type {code:?}"))
                        })?;
                    g.add_node(
                        TypedNode {
                            id: id.trim().to_string(),
                            node_type,
                        },
                        at,
                    )?;
                }
                _ => {
                    return Err(Error::parse(
                        nodes_name,
                        lineno + 1,
                        "expected <node_id>\\t<type_code>",
                    ))
                }
            }
        }
        for (lineno, line) in edges.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next()) {
                (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                    g.add_edge(a.trim(), b.trim(), Some((edges_name, lineno + 1)))?;
                }
                _ => {
                    return Err(Error::parse(
                        edges_name,
                        lineno + 1,
                        "expected <src_id>\\t<dst_id>",
                    ))
                }
            }
        }
        g.finish()
    }

    pub fn schema(&self) -> &NetworkSchema {
        &self.schema
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    /// Count of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn node_type(&self, id: &str) -> Result<&NodeTypeId> {
        let idx = self.node_index(id)?;
        Ok(&self.schema.node_types()[self.type_of[idx as usize]])
    }

    /// Ids of all nodes with the given type, sorted.
    pub fn nodes_of_type(&self, t: &NodeTypeId) -> Vec<&str> {
        let Some(ti) = self.schema.type_index(t) else {
            return Vec::new();
        };
        let mut out: Vec<&str> = self
            .ids
            .iter()
            .zip(&self.type_of)
            .filter(|(_, &tt)| tt == ti)
            .map(|(id, _)| id.as_str())
            .collect();
        out.sort_unstable();
        out
    }

    /// Neighbors of `v` having type `t`, sorted by id. Empty when `v` has no
    /// such neighbors.
    pub fn neighbors_of_type(&self, v: &str, t: &NodeTypeId) -> Result<Vec<&str>> {
        let idx = self.node_index(v)?;
        let ti = self
            .schema
            .type_index(t)
            .ok_or_else(|| Error::UnknownType(t.code().to_string()))?;
        Ok(self.adjacency[idx as usize][ti]
            .iter()
            .map(|&n| self.ids[n as usize].as_str())
            .collect())
    }

    pub(crate) fn node_index(&self, id: &str) -> Result<u32> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub(crate) fn id_of(&self, idx: u32) -> &str {
        &self.ids[idx as usize]
    }

    pub(crate) fn type_index_of(&self, idx: u32) -> usize {
        self.type_of[idx as usize]
    }

    pub(crate) fn neighbors_idx(&self, node: u32, type_index: usize) -> &[u32] {
        &self.adjacency[node as usize][type_index]
    }

    pub(crate) fn node_indices_of_type(&self, type_index: usize) -> Vec<u32> {
        // Sorted by id so downstream iteration order is deterministic.
        let mut v: Vec<u32> = (0..self.ids.len() as u32)
            .filter(|&i| self.type_of[i as usize] == type_index)
            .collect();
        v.sort_unstable_by(|&a, &b| self.ids[a as usize].cmp(&self.ids[b as usize]));
        v
    }

    /// All nodes in id order.
    pub fn nodes(&self) -> Vec<TypedNode> {
        let mut out: Vec<TypedNode> = self
            .ids
            .iter()
            .zip(&self.type_of)
            .map(|(id, &t)| TypedNode {
                id: id.clone(),
                node_type: self.schema.node_types()[t].clone(),
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Distinct undirected edges as (min id, max id) pairs, sorted.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (a, lists) in self.adjacency.iter().enumerate() {
            for list in lists {
                for &b in list {
                    let ia = self.ids[a].as_str();
                    let ib = self.ids[b as usize].as_str();
                    if ia <= ib {
                        out.push((ia, ib));
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Canonical serialization of the node list (round-trips through `load`).
    pub fn write_nodes(&self, mut w: impl Write) -> Result<()> {
        for n in self.nodes() {
            writeln!(w, "{}\t{}", n.id, n.node_type)?;
        }
        Ok(())
    }

    /// Canonical serialization of the edge list (one line per undirected edge).
    pub fn write_edges(&self, mut w: impl Write) -> Result<()> {
        for (a, b) in self.edges() {
            writeln!(w, "{a}\t{b}")?;
        }
        Ok(())
    }

    /// Rebuild this graph with every edge between `type_a` and `type_b`
    /// replaced by the given pairs. Used by the evaluation pipeline to
    /// restrict rating edges to the training split.
    pub fn with_replaced_relation_edges(
        &self,
        type_a: &NodeTypeId,
        type_b: &NodeTypeId,
        pairs: impl IntoIterator<Item = (String, String)>,
    ) -> Result<HinGraph> {
        let ta = self
            .schema
            .type_index(type_a)
            .ok_or_else(|| Error::UnknownType(type_a.code().to_string()))?;
        let tb = self
            .schema
            .type_index(type_b)
            .ok_or_else(|| Error::UnknownType(type_b.code().to_string()))?;
        let mut edges: Vec<(String, String)> = Vec::new();
        for (a, b) in self.edges() {
            let (ia, ib) = (self.node_index(a)?, self.node_index(b)?);
            let (ca, cb) = (self.type_index_of(ia), self.type_index_of(ib));
            let is_replaced = (ca == ta && cb == tb) || (ca == tb && cb == ta);
            if !is_replaced {
                edges.push((a.to_string(), b.to_string()));
            }
        }
        edges.extend(pairs);
        HinGraph::build(self.schema.clone(), self.nodes(), edges)
    }
}

struct GraphSource {
    schema: NetworkSchema,
    ids: Vec<String>,
    type_of: Vec<usize>,
    index: HashMap<String, u32>,
    edges: HashSet<(u32, u32)>,
}

impl GraphSource {
    fn new(schema: NetworkSchema) -> Self {
        GraphSource {
            schema,
            ids: Vec::new(),
            type_of: Vec::new(),
            index: HashMap::new(),
            edges: HashSet::new(),
        }
    }

    fn add_node(&mut self, node: TypedNode, at: Option<(&str, usize)>) -> Result<()> {
        let ti = self.schema.type_index(&node.node_type).ok_or_else(|| {
            located(at, format!("unknown node type {:?}", node.node_type.code()))
        })?;
        if self.index.contains_key(&node.id) {
            return Err(located(at, format!("duplicate node id {:?}", node.id)));
        }
        let idx = self.ids.len() as u32;
        self.index.insert(node.id.clone(), idx);
        self.ids.push(node.id);
        self.type_of.push(ti);
        Ok(())
    }

    fn add_edge(&mut self, a: &str, b: &str, at: Option<(&str, usize)>) -> Result<()> {
        let ia = *self
            .index
            .get(a)
            .ok_or_else(|| located(at, format!("edge references undeclared node {a:?}")))?;
        let ib = *self
            .index
            .get(b)
            .ok_or_else(|| located(at, format!("edge references undeclared node {b:?}")))?;
        let ta = &self.schema.node_types()[self.type_of[ia as usize]];
        let tb = &self.schema.node_types()[self.type_of[ib as usize]];
        if !self.schema.relation_allowed(ta, tb) {
            return Err(located(
                at,
                format!("edge ({a}, {b}) has type pair ({ta}, {tb}) not in schema relations"),
            ));
        }
        let key = if ia <= ib { (ia, ib) } else { (ib, ia) };
        self.edges.insert(key);
        Ok(())
    }

    fn finish(self) -> Result<HinGraph> {
        let n_types = self.schema.node_types().len();
        let mut adjacency = vec![vec![Vec::new(); n_types]; self.ids.len()];
        for &(a, b) in &self.edges {
            let ta = self.type_of[a as usize];
            let tb = self.type_of[b as usize];
            adjacency[a as usize][tb].push(b);
            if a != b {
                adjacency[b as usize][ta].push(a);
            }
        }
        for lists in &mut adjacency {
            for list in lists {
                list.sort_unstable_by(|&x, &y| {
                    self.ids[x as usize].cmp(&self.ids[y as usize])
                });
            }
        }
        Ok(HinGraph {
            schema: self.schema,
            edge_count: self.edges.len(),
            ids: self.ids,
            type_of: self.type_of,
            index: self.index,
            adjacency,
        })
    }
}

fn located(at: Option<(&str, usize)>, msg: String) -> Error {
    match at {
        Some((name, line)) => Error::parse(name, line, msg),
        None => Error::Schema(msg),
    }
}
