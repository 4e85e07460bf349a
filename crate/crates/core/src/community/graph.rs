use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ArtifactId;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("dependency edge {consumer} -> {dependency} would close a cycle")]
pub struct CycleError {
    pub consumer: ArtifactId,
    pub dependency: ArtifactId,
}

/// Directed acyclic graph of resource dependencies.
///
/// An edge `(consumer, dependency)` means `consumer` uses `dependency`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "GraphRepr", into = "GraphRepr")]
pub struct DependencyGraph {
    deps: BTreeMap<ArtifactId, BTreeSet<ArtifactId>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    vertices: Vec<ArtifactId>,
    edges: Vec<(ArtifactId, ArtifactId)>,
}

impl From<DependencyGraph> for GraphRepr {
    fn from(g: DependencyGraph) -> Self {
        GraphRepr {
            vertices: g.vertices().cloned().collect(),
            edges: g.edges().map(|(a, b)| (a.clone(), b.clone())).collect(),
        }
    }
}

impl From<GraphRepr> for DependencyGraph {
    fn from(r: GraphRepr) -> Self {
        let mut g = DependencyGraph::default();
        for v in r.vertices {
            g.add_vertex(v);
        }
        for (a, b) in r.edges {
            g.add_vertex(a.clone());
            g.add_vertex(b.clone());
            g.deps.get_mut(&a).expect("vertex just added").insert(b);
        }
        g
    }
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, id: ArtifactId) -> bool {
        if self.deps.contains_key(&id) {
            return false;
        }
        self.deps.insert(id, BTreeSet::new());
        true
    }

    pub fn contains(&self, id: &ArtifactId) -> bool {
        self.deps.contains_key(id)
    }

    /// Adds `consumer -> dependency`. Both endpoints must exist and the edge
    /// must not close a cycle.
    pub fn add_edge(
        &mut self,
        consumer: &ArtifactId,
        dependency: &ArtifactId,
    ) -> Result<bool, super::CommunityError> {
        if !self.contains(consumer) {
            return Err(super::CommunityError::Unknown(consumer.clone()));
        }
        if !self.contains(dependency) {
            return Err(super::CommunityError::UnknownDependency(dependency.clone()));
        }
        if consumer == dependency || self.reaches(dependency, consumer) {
            return Err(CycleError {
                consumer: consumer.clone(),
                dependency: dependency.clone(),
            }
            .into());
        }
        Ok(self
            .deps
            .get_mut(consumer)
            .expect("checked above")
            .insert(dependency.clone()))
    }

    pub fn vertices(&self) -> impl Iterator<Item = &ArtifactId> {
        self.deps.keys()
    }

    pub fn vertex_count(&self) -> usize {
        self.deps.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&ArtifactId, &ArtifactId)> {
        self.deps
            .iter()
            .flat_map(|(c, ds)| ds.iter().map(move |d| (c, d)))
    }

    pub fn edge_count(&self) -> usize {
        self.deps.values().map(BTreeSet::len).sum()
    }

    pub fn has_edge(&self, consumer: &ArtifactId, dependency: &ArtifactId) -> bool {
        self.deps
            .get(consumer)
            .is_some_and(|ds| ds.contains(dependency))
    }

    pub fn dependencies_of(&self, id: &ArtifactId) -> impl Iterator<Item = &ArtifactId> {
        self.deps.get(id).into_iter().flatten()
    }

    /// Breadth-first reachability along dependency edges, including `start`.
    pub fn closure(&self, start: &ArtifactId) -> BTreeSet<ArtifactId> {
        let mut seen = BTreeSet::new();
        if !self.contains(start) {
            return seen;
        }
        let mut queue = VecDeque::from([start.clone()]);
        seen.insert(start.clone());
        while let Some(v) = queue.pop_front() {
            for d in self.dependencies_of(&v) {
                if seen.insert(d.clone()) {
                    queue.push_back(d.clone());
                }
            }
        }
        seen
    }

    fn reaches(&self, from: &ArtifactId, to: &ArtifactId) -> bool {
        self.closure(from).contains(to)
    }

    /// Kahn's algorithm; dependencies come before their consumers.
    pub fn topological_order(&self) -> Result<Vec<ArtifactId>, CycleError> {
        // pending[v] = number of v's dependencies not yet emitted
        let mut pending: BTreeMap<&ArtifactId, usize> =
            self.deps.iter().map(|(v, ds)| (v, ds.len())).collect();
        let mut consumers: BTreeMap<&ArtifactId, Vec<&ArtifactId>> = BTreeMap::new();
        for (c, d) in self.edges() {
            consumers.entry(d).or_default().push(c);
        }
        let mut ready: VecDeque<&ArtifactId> = pending
            .iter()
            .filter(|(_, n)| **n == 0)
            .map(|(v, _)| *v)
            .collect();
        let mut order = Vec::with_capacity(self.deps.len());
        while let Some(v) = ready.pop_front() {
            order.push(v.clone());
            for c in consumers.get(v).into_iter().flatten() {
                let n = pending.get_mut(c).expect("consumer is a vertex");
                *n -= 1;
                if *n == 0 {
                    ready.push_back(c);
                }
            }
        }
        if order.len() == self.deps.len() {
            Ok(order)
        } else {
            let (consumer, dependency) = self
                .edges()
                .find(|(c, _)| pending.get(c).copied().unwrap_or(0) > 0)
                .map(|(c, d)| (c.clone(), d.clone()))
                .expect("a remaining vertex has a pending edge");
            Err(CycleError {
                consumer,
                dependency,
            })
        }
    }

    /// Drops every vertex not satisfying `keep`, and the edges touching it.
    pub fn retain(&mut self, mut keep: impl FnMut(&ArtifactId) -> bool) {
        self.deps.retain(|v, _| keep(v));
        let alive: BTreeSet<ArtifactId> = self.deps.keys().cloned().collect();
        for ds in self.deps.values_mut() {
            ds.retain(|d| alive.contains(d));
        }
    }

    pub fn is_subgraph_of(&self, other: &DependencyGraph) -> bool {
        self.vertices().all(|v| other.contains(v))
            && self.edges().all(|(c, d)| other.has_edge(c, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(s: &str) -> ArtifactId {
        ArtifactId::kernel(s)
    }

    fn graph(edges: &[(&str, &str)]) -> DependencyGraph {
        let mut g = DependencyGraph::new();
        for (a, b) in edges {
            g.add_vertex(k(a));
            g.add_vertex(k(b));
            g.add_edge(&k(a), &k(b)).unwrap();
        }
        g
    }

    #[test]
    fn diamond_closure() {
        let g = graph(&[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        let got: Vec<_> = g.closure(&k("a")).into_iter().map(|i| i.key).collect();
        assert_eq!(got, vec!["a", "b", "c", "d"]);
        assert_eq!(g.closure(&k("d")).len(), 1);
    }

    #[test]
    fn cycle_rejected() {
        let mut g = graph(&[("a", "b"), ("b", "c")]);
        let err = g.add_edge(&k("c"), &k("a")).unwrap_err();
        assert!(matches!(err, super::super::CommunityError::Cycle(_)));
        assert!(g.add_edge(&k("a"), &k("a")).is_err());
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn topo_order_puts_dependencies_first() {
        let g = graph(&[("x", "y"), ("y", "z")]);
        let order: Vec<_> = g
            .topological_order()
            .unwrap()
            .into_iter()
            .map(|i| i.key)
            .collect();
        assert_eq!(order, vec!["z", "y", "x"]);
    }

    #[test]
    fn serde_roundtrip_keeps_edges() {
        let g = graph(&[("a", "b"), ("c", "b")]);
        let json = serde_json::to_string(&g).unwrap();
        let back: DependencyGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn retain_drops_dangling_edges() {
        let mut g = graph(&[("a", "b"), ("b", "c")]);
        g.retain(|v| v.key != "b");
        assert_eq!(g.vertex_count(), 2);
        assert_eq!(g.edge_count(), 0);
    }
}
