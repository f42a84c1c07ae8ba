//! Meta-path guided random walks and type filtering.
//!
//! A walk starts at a node of the meta-path's target type and repeatedly
//! moves to a uniformly random neighbor of the next type in the (cyclically
//! repeated) pattern. Only nodes of the target type are kept, so the output
//! sequences are homogeneous. Walks stop early at dead ends; the partial
//! sequence is kept unless it contains a single node, which produces no
//! co-occurrence pairs.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hin::{HinGraph, MetaPath, NodeTypeId};
use crate::rng::walk_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkConfig {
    /// Number of kept target-type nodes per walk, start node included.
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be at least 2".into()));
        }
        if self.walks_per_node < 1 {
            return Err(Error::Config("walks_per_node must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walk_length: 40,
            walks_per_node: 10,
            seed: 0,
        }
    }
}

/// Homogeneous walk sequences for one meta-path.
///
/// Sequences store indices into `node_ids`, the sorted ids of all target-type
/// nodes in the source graph (present in a corpus or not), so the embedder
/// can report coverage.
#[derive(Debug, Clone)]
pub struct WalkCorpus {
    meta_path: String,
    target_type: NodeTypeId,
    node_ids: Vec<String>,
    sequences: Vec<Vec<u32>>,
}

impl WalkCorpus {
    pub fn meta_path(&self) -> &str {
        &self.meta_path
    }

    pub fn target_type(&self) -> &NodeTypeId {
        &self.target_type
    }

    /// Sorted ids of every target-type node in the graph.
    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn id(&self, token: u32) -> &str {
        &self.node_ids[token as usize]
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn sequence_ids(&self, k: usize) -> Vec<&str> {
        self.sequences[k].iter().map(|&t| self.id(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    /// Dump one sequence per line, node ids separated by spaces.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        for seq in &self.sequences {
            let mut first = true;
            for &t in seq {
                if !first {
                    write!(w, " ")?;
                }
                write!(w, "{}", self.id(t))?;
                first = false;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn from_id_sequences(
        meta_path: &str,
        target_type: NodeTypeId,
        sequences: Vec<Vec<&str>>,
    ) -> WalkCorpus {
        let mut node_ids: Vec<String> = sequences
            .iter()
            .flatten()
            .map(|s| s.to_string())
            .collect();
        node_ids.sort_unstable();
        node_ids.dedup();
        let index: HashMap<&str, u32> = node_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        let sequences = sequences
            .iter()
            .map(|seq| seq.iter().map(|s| index[s]).collect())
            .collect();
        WalkCorpus {
            meta_path: meta_path.to_string(),
            target_type,
            node_ids,
            sequences,
        }
    }
}

/// Uniform next-step distribution over the typed neighbors of `v`: each of
/// the k neighbors of type `next_type` gets probability 1/k. Empty when `v`
/// has no such neighbors (a dead end, not an error).
pub fn transition_distribution<'g>(
    g: &'g HinGraph,
    v: &str,
    next_type: &NodeTypeId,
) -> Result<Vec<(&'g str, f64)>> {
    let neighbors = g.neighbors_of_type(v, next_type)?;
    let k = neighbors.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let p = 1.0 / k as f64;
    Ok(neighbors.into_iter().map(|n| (n, p)).collect())
}

/// Sample one transition from `v` to a uniformly random neighbor of
/// `next_type`. Returns `None` at a dead end.
pub fn sample_next<'g>(
    g: &'g HinGraph,
    v: &str,
    next_type: &NodeTypeId,
    rng: &mut impl Rng,
) -> Result<Option<&'g str>> {
    let vi = g.node_index(v)?;
    let ti = g
        .schema()
        .type_index(next_type)
        .ok_or_else(|| Error::UnknownType(next_type.code().to_string()))?;
    Ok(sample_next_idx(g, vi, ti, rng).map(|n| g.id_of(n)))
}

fn sample_next_idx(g: &HinGraph, v: u32, type_index: usize, rng: &mut impl Rng) -> Option<u32> {
    let neighbors = g.neighbors_idx(v, type_index);
    if neighbors.is_empty() {
        return None;
    }
    Some(neighbors[rng.random_range(0..neighbors.len())])
}

/// A walk as generated (all visited nodes) and after type filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkTrace {
    pub visited: Vec<String>,
    pub kept: Vec<String>,
}

/// Walk from `start` following `mp`, keeping only target-type nodes until
/// `walk_length` of them are collected or a dead end is hit.
pub fn generate_walk(
    g: &HinGraph,
    start: &str,
    mp: &MetaPath,
    cfg: &WalkConfig,
    rng: &mut impl Rng,
) -> Result<Vec<String>> {
    Ok(generate_walk_trace(g, start, mp, cfg, rng)?.kept)
}

/// Like [`generate_walk`] but also records the full heterogeneous node
/// sequence, so filtering can be checked against an offline scan.
pub fn generate_walk_trace(
    g: &HinGraph,
    start: &str,
    mp: &MetaPath,
    cfg: &WalkConfig,
    rng: &mut impl Rng,
) -> Result<WalkTrace> {
    cfg.validate()?;
    let start_idx = g.node_index(start)?;
    let target_idx = g
        .schema()
        .type_index(mp.target_type())
        .ok_or_else(|| Error::UnknownType(mp.target_type().code().to_string()))?;
    if g.type_index_of(start_idx) != target_idx {
        return Err(Error::Invalid(format!(
            "walk start {start:?} has type {}, meta-path {} requires {}",
            g.schema().node_types()[g.type_index_of(start_idx)],
            mp.label(),
            mp.target_type()
        )));
    }
    let step_types: Vec<usize> = mp
        .types()
        .iter()
        .map(|t| g.schema().type_index(t).expect("meta-path validated against schema"))
        .collect();
    let cycle = step_types.len() - 1;

    let mut visited = vec![start_idx];
    let mut kept = vec![start_idx];
    let mut current = start_idx;
    let mut step = 0usize;
    while kept.len() < cfg.walk_length {
        let next_type = step_types[1 + step % cycle];
        match sample_next_idx(g, current, next_type, rng) {
            Some(next) => {
                visited.push(next);
                if g.type_index_of(next) == target_idx {
                    kept.push(next);
                }
                current = next;
                step += 1;
            }
            None => break,
        }
    }
    let to_ids = |v: Vec<u32>| v.into_iter().map(|i| g.id_of(i).to_string()).collect();
    Ok(WalkTrace {
        visited: to_ids(visited),
        kept: to_ids(kept),
    })
}

/// Generate `walks_per_node` walks from every target-type node.
///
/// Each (node, walk index) pair draws from its own counter-based stream, so
/// the corpus is byte-identical for a given seed regardless of how walks are
/// scheduled across workers. Length-one sequences (immediate dead ends) are
/// dropped: they produce no co-occurrence pairs.
pub fn generate_corpus(g: &HinGraph, mp: &MetaPath, cfg: &WalkConfig) -> Result<WalkCorpus> {
    cfg.validate()?;
    let target_idx = g
        .schema()
        .type_index(mp.target_type())
        .ok_or_else(|| Error::UnknownType(mp.target_type().code().to_string()))?;
    let starts = g.node_indices_of_type(target_idx);
    let node_ids: Vec<String> = starts.iter().map(|&i| g.id_of(i).to_string()).collect();

    let walks: Vec<Vec<Vec<String>>> = starts
        .par_iter()
        .map(|&start_idx| {
            let start = g.id_of(start_idx);
            (0..cfg.walks_per_node)
                .map(|w| {
                    let mut rng = walk_stream(cfg.seed, start, w);
                    generate_walk(g, start, mp, cfg, &mut rng)
                        .expect("start node comes from the graph itself")
                })
                .collect()
        })
        .collect();

    let id_index: HashMap<&str, u32> = node_ids
        .iter()
        .enumerate()
        .map(|(t, id)| (id.as_str(), t as u32))
        .collect();
    let mut sequences = Vec::new();
    for per_node in walks {
        for kept in per_node {
            if kept.len() < 2 {
                continue;
            }
            sequences.push(kept.iter().map(|id| id_index[id.as_str()]).collect());
        }
    }
    Ok(WalkCorpus {
        meta_path: mp.label().to_string(),
        target_type: mp.target_type().clone(),
        node_ids,
        sequences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{NetworkSchema, TypedNode};
    use crate::rng::seeded_rng;

    fn ty(code: &str) -> NodeTypeId {
        NodeTypeId::new(code).unwrap()
    }

    fn um_schema() -> NetworkSchema {
        NetworkSchema::new(
            vec![ty("U"), ty("M"), ty("D")],
            vec![(ty("U"), ty("M")), (ty("M"), ty("D"))],
        )
        .unwrap()
    }

    fn node(id: &str, code: &str) -> TypedNode {
        TypedNode {
            id: id.into(),
            node_type: ty(code),
        }
    }

    fn graph(nodes: &[(&str, &str)], edges: &[(&str, &str)]) -> HinGraph {
        HinGraph::build(
            um_schema(),
            nodes.iter().map(|(i, c)| node(i, c)).collect(),
            edges
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        )
        .unwrap()
    }

    fn mp(text: &str, g: &HinGraph) -> MetaPath {
        MetaPath::parse(text, g.schema(), &ty("U")).unwrap()
    }

    #[test]
    fn uniform_over_four_neighbors() {
        let g = graph(
            &[("u1", "U"), ("a", "M"), ("b", "M"), ("c", "M"), ("d", "M")],
            &[("u1", "a"), ("u1", "b"), ("u1", "c"), ("u1", "d")],
        );
        let dist = transition_distribution(&g, "u1", &ty("M")).unwrap();
        assert_eq!(dist.len(), 4);
        for (_, p) in &dist {
            assert_eq!(*p, 0.25);
        }
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_distribution_at_dead_end() {
        let g = graph(&[("u1", "U"), ("m1", "M")], &[("u1", "m1")]);
        assert!(transition_distribution(&g, "u1", &ty("D")).unwrap().is_empty());
    }

    #[test]
    fn monte_carlo_matches_uniform_third() {
        let g = graph(
            &[("u1", "U"), ("a", "M"), ("b", "M"), ("c", "M")],
            &[("u1", "a"), ("u1", "b"), ("u1", "c")],
        );
        let mut rng = seeded_rng(7);
        let mut counts: HashMap<String, usize> = HashMap::new();
        let n = 100_000;
        for _ in 0..n {
            let next = sample_next(&g, "u1", &ty("M"), &mut rng).unwrap().unwrap();
            *counts.entry(next.to_string()).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        for (_, c) in counts {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - 1.0 / 3.0).abs() < 0.01,
                "frequency {freq} too far from 1/3"
            );
        }
    }

    #[test]
    fn path_graph_walk_stays_on_reachable_users() {
        // u1 - m1 - u2 and nothing else. From u1 every movie step is forced to
        // m1; every user step picks between u1 and u2 (edges are undirected).
        let g = graph(&[("u1", "U"), ("m1", "M"), ("u2", "U")], &[("u1", "m1"), ("m1", "u2")]);
        let path = mp("UMU", &g);
        let cfg = WalkConfig {
            walk_length: 3,
            walks_per_node: 1,
            seed: 0,
        };
        // Oracle: enumerating transitions, the kept sequence is always
        // [u1, a, b] with a, b in {u1, u2}, and [u1, u2, u1] is reachable.
        let mut saw_u1_u2_u1 = false;
        for seed in 0..64 {
            let mut rng = seeded_rng(seed);
            let kept = generate_walk(&g, "u1", &path, &cfg, &mut rng).unwrap();
            assert_eq!(kept.len(), 3);
            assert_eq!(kept[0], "u1");
            assert!(kept[1] == "u1" || kept[1] == "u2");
            assert!(kept[2] == "u1" || kept[2] == "u2");
            if kept == ["u1", "u2", "u1"] {
                saw_u1_u2_u1 = true;
            }
        }
        assert!(saw_u1_u2_u1);
    }

    #[test]
    fn dead_end_keeps_partial_sequence() {
        let g = graph(&[("u1", "U"), ("m1", "M")], &[]);
        let path = mp("UMU", &g);
        let cfg = WalkConfig {
            walk_length: 5,
            walks_per_node: 1,
            seed: 0,
        };
        let mut rng = seeded_rng(1);
        let kept = generate_walk(&g, "u1", &path, &cfg, &mut rng).unwrap();
        assert_eq!(kept, vec!["u1"]);
    }

    #[test]
    fn start_type_mismatch_rejected() {
        let g = graph(&[("u1", "U"), ("m1", "M")], &[("u1", "m1")]);
        let path = mp("UMU", &g);
        let mut rng = seeded_rng(1);
        assert!(generate_walk(&g, "m1", &path, &WalkConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn walk_length_counts_kept_nodes_only() {
        // Cycle with enough movies that heterogeneous steps outnumber kept ones.
        let g = graph(
            &[("u1", "U"), ("u2", "U"), ("m1", "M"), ("m2", "M")],
            &[("u1", "m1"), ("m1", "u2"), ("u2", "m2"), ("m2", "u1")],
        );
        let path = mp("UMU", &g);
        let cfg = WalkConfig {
            walk_length: 6,
            walks_per_node: 1,
            seed: 0,
        };
        let mut rng = seeded_rng(3);
        let trace = generate_walk_trace(&g, "u1", &path, &cfg, &mut rng).unwrap();
        assert_eq!(trace.kept.len(), 6);
        // Visited alternates U, M, U, M, ... so it is strictly longer.
        assert_eq!(trace.visited.len(), 11);
    }

    #[test]
    fn filtering_matches_offline_scan() {
        let g = graph(
            &[
                ("u1", "U"),
                ("u2", "U"),
                ("u3", "U"),
                ("m1", "M"),
                ("m2", "M"),
                ("m3", "M"),
            ],
            &[
                ("u1", "m1"),
                ("u1", "m2"),
                ("u2", "m1"),
                ("u2", "m2"),
                ("u3", "m2"),
                ("u3", "m3"),
            ],
        );
        let path = mp("UMU", &g);
        let cfg = WalkConfig {
            walk_length: 8,
            walks_per_node: 1,
            seed: 0,
        };
        for seed in 0..50 {
            let mut rng = seeded_rng(seed);
            let trace = generate_walk_trace(&g, "u1", &path, &cfg, &mut rng).unwrap();
            let offline: Vec<String> = trace
                .visited
                .iter()
                .filter(|id| g.node_type(id).unwrap() == &ty("U"))
                .cloned()
                .collect();
            assert_eq!(offline, trace.kept);
        }
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let mut nodes = vec![("m1", "M")];
        let names: Vec<String> = (1..=10).map(|i| format!("u{i}")).collect();
        for n in &names {
            nodes.push((n.as_str(), "U"));
        }
        let edges: Vec<(&str, &str)> = names.iter().map(|n| (n.as_str(), "m1")).collect();
        let g = graph(&nodes, &edges);
        let path = mp("UMU", &g);
        let cfg = WalkConfig {
            walk_length: 4,
            walks_per_node: 3,
            seed: 11,
        };
        let corpus = generate_corpus(&g, &path, &cfg).unwrap();
        // 10 user nodes, 3 walks each, none dead-ends at the start.
        assert_eq!(corpus.len(), 30);

        let again = generate_corpus(&g, &path, &cfg).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        corpus.write(&mut a).unwrap();
        again.write(&mut b).unwrap();
        assert_eq!(a, b);

        let other = generate_corpus(
            &g,
            &path,
            &WalkConfig {
                seed: 12,
                ..cfg
            },
        )
        .unwrap();
        let mut c = Vec::new();
        other.write(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_is_homogeneous() {
        let g = graph(
            &[
                ("u1", "U"),
                ("u2", "U"),
                ("m1", "M"),
                ("m2", "M"),
                ("d1", "D"),
            ],
            &[
                ("u1", "m1"),
                ("u2", "m1"),
                ("u2", "m2"),
                ("m1", "d1"),
                ("m2", "d1"),
            ],
        );
        let path = mp("UMU", &g);
        let corpus = generate_corpus(
            &g,
            &path,
            &WalkConfig {
                walk_length: 6,
                walks_per_node: 5,
                seed: 5,
            },
        )
        .unwrap();
        let mut scanned = 0;
        for k in 0..corpus.len() {
            for id in corpus.sequence_ids(k) {
                assert_eq!(g.node_type(id).unwrap(), &ty("U"));
                scanned += 1;
            }
        }
        assert!(scanned > 0);
    }

    #[test]
    fn length_one_sequences_dropped() {
        // u2 has no movies: its walks dead-end immediately and are dropped.
        let g = graph(
            &[("u1", "U"), ("u2", "U"), ("m1", "M")],
            &[("u1", "m1")],
        );
        let path = mp("UMU", &g);
        let corpus = generate_corpus(
            &g,
            &path,
            &WalkConfig {
                walk_length: 3,
                walks_per_node: 2,
                seed: 0,
            },
        )
        .unwrap();
        for k in 0..corpus.len() {
            assert!(corpus.sequences()[k].len() >= 2);
            assert_eq!(corpus.sequence_ids(k)[0], "u1");
        }
    }
}
