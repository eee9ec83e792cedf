//! Session → weighted directed graph conversion.

use std::collections::BTreeMap;

use crate::error::{HcgrError, Result};

/// Clicked item ids in chronological order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    items: Vec<usize>,
}

impl Session {
    pub fn new(items: Vec<usize>, catalog_size: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(HcgrError::invalid("session must contain at least one item"));
        }
        if let Some(bad) = items.iter().find(|&&i| i >= catalog_size) {
            return Err(HcgrError::invalid(format!(
                "item id {bad} outside catalog of size {catalog_size}"
            )));
        }
        Ok(Session { items })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Keeps only the most recent `max_len` clicks.
    pub fn truncated(&self, max_len: usize) -> Session {
        let start = self.items.len().saturating_sub(max_len.max(1));
        Session {
            items: self.items[start..].to_vec(),
        }
    }
}

/// Graph over a session's unique items. Nodes are in first-occurrence order
/// and edges map `(src, dst)` node indices to transition counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionGraph {
    nodes: Vec<usize>,
    last: usize,
    edges: BTreeMap<(usize, usize), u32>,
}

impl SessionGraph {
    /// Item ids of the nodes.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Node index of the session's final click.
    pub fn position_of_last(&self) -> usize {
        self.last
    }

    pub fn edges(&self) -> &BTreeMap<(usize, usize), u32> {
        &self.edges
    }

    pub fn weight(&self, src: usize, dst: usize) -> u32 {
        self.edges.get(&(src, dst)).copied().unwrap_or(0)
    }

    /// Undirected neighbourhood of node `i`, self included, ascending by node
    /// index. The weight of `j ≠ i` is `w(i→j) + w(j→i)`; the self-loop keeps
    /// its stored weight.
    pub fn neighborhood(&self, i: usize) -> Result<Vec<(usize, u32)>> {
        if i >= self.nodes.len() {
            return Err(HcgrError::invalid(format!(
                "node index {i} out of range for {} nodes",
                self.nodes.len()
            )));
        }
        let mut acc: BTreeMap<usize, u32> = BTreeMap::new();
        for (&(src, dst), &w) in &self.edges {
            if src == i && dst == i {
                *acc.entry(i).or_default() += w;
            } else if src == i {
                *acc.entry(dst).or_default() += w;
            } else if dst == i {
                *acc.entry(src).or_default() += w;
            }
        }
        Ok(acc.into_iter().collect())
    }
}

pub fn build_graph(session: &Session) -> Result<SessionGraph> {
    build_graph_from_items(session.items())
}

/// Each consecutive click pair increments its directed edge; repeated clicks
/// on one item increment its self-loop. Nodes without a self-loop then get
/// one with weight 1.
pub fn build_graph_from_items(items: &[usize]) -> Result<SessionGraph> {
    if items.is_empty() {
        return Err(HcgrError::invalid(
            "cannot build a graph from an empty session",
        ));
    }
    let mut nodes: Vec<usize> = Vec::new();
    let mut index_of: BTreeMap<usize, usize> = BTreeMap::new();
    let positions: Vec<usize> = items
        .iter()
        .map(|&item| {
            *index_of.entry(item).or_insert_with(|| {
                nodes.push(item);
                nodes.len() - 1
            })
        })
        .collect();

    let mut edges: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for pair in positions.windows(2) {
        *edges.entry((pair[0], pair[1])).or_default() += 1;
    }
    for n in 0..nodes.len() {
        edges.entry((n, n)).or_insert(1);
    }

    Ok(SessionGraph {
        nodes,
        last: *positions.last().expect("nonempty"),
        edges,
    })
}
