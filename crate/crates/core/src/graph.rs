//! The directed, weighted web of trust between credential issuers and the
//! threshold-constrained path search over it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::{Fixed4, TrustWeight};
use crate::identity::{Did, IssuerId};

/// Default cap on path length for trust queries.
pub const DEFAULT_MAX_DEPTH: u32 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("issuer `{0}` is already in the graph")]
    DuplicateIssuer(Did),
    #[error("issuer `{0}` is not in the graph")]
    UnknownIssuer(Did),
    #[error("issuer `{0}` cannot trust itself")]
    SelfEdge(Did),
    #[error("no edge {0} -> {1}")]
    UnknownEdge(Did, Did),
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(Fixed4),
    #[error("max depth must be at least 1")]
    InvalidDepth,
    #[error("a query needs at least one trusted source")]
    EmptySources,
    #[error("edges do not form a chain at position {0}")]
    BrokenChain(usize),
}

/// `source` trusts `destination` by `weight`. Trust is one-way.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct TrustEdge {
    pub source: Did,
    pub destination: Did,
    pub weight: TrustWeight,
}

impl TrustEdge {
    pub fn new(source: Did, destination: Did, weight: TrustWeight) -> Self {
        TrustEdge { source, destination, weight }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathQuery {
    pub trusted_sources: BTreeSet<Did>,
    pub credential_issuer: Did,
    pub threshold: Fixed4,
    /// Seeds the tie-break draw between equally short, equally trusted paths.
    #[serde(with = "nonce_hex")]
    pub query_nonce: [u8; 32],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustPath {
    pub edges: Vec<TrustEdge>,
    pub score: Fixed4,
}

impl TrustPath {
    pub fn hop_count(&self) -> usize {
        self.edges.len()
    }

    /// Issuers along the path, source first. Empty for the empty path.
    pub fn issuers(&self) -> Vec<&Did> {
        let mut out: Vec<&Did> = self.edges.first().map(|e| &e.source).into_iter().collect();
        out.extend(self.edges.iter().map(|e| &e.destination));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PathOutcome {
    Found(TrustPath),
    /// Nothing qualified; `searched_depth` is the deepest layer explored.
    NoPath { searched_depth: u32 },
}

impl PathOutcome {
    pub fn found(self) -> Option<TrustPath> {
        match self {
            PathOutcome::Found(p) => Some(p),
            PathOutcome::NoPath { .. } => None,
        }
    }
}

/// Product of the edge weights along a chain, rounding half-up after every
/// multiplication. The empty chain scores 1.
pub fn trust_score(edges: &[TrustEdge]) -> Result<Fixed4, GraphError> {
    for (i, pair) in edges.windows(2).enumerate() {
        if pair[0].destination != pair[1].source {
            return Err(GraphError::BrokenChain(i + 1));
        }
    }
    Ok(edges
        .iter()
        .fold(Fixed4::ONE, |acc, e| acc.mul_round(e.weight.value())))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrustGraph {
    issuers: BTreeMap<Did, IssuerId>,
    outgoing: BTreeMap<Did, BTreeMap<Did, TrustWeight>>,
    incoming: BTreeMap<Did, BTreeMap<Did, TrustWeight>>,
    edge_count: usize,
}

impl TrustGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_issuer(&mut self, issuer: IssuerId) -> Result<(), GraphError> {
        if self.issuers.contains_key(&issuer.did) {
            return Err(GraphError::DuplicateIssuer(issuer.did));
        }
        self.outgoing.insert(issuer.did.clone(), BTreeMap::new());
        self.incoming.insert(issuer.did.clone(), BTreeMap::new());
        self.issuers.insert(issuer.did.clone(), issuer);
        Ok(())
    }

    /// Removes the issuer and every edge it takes part in.
    pub fn remove_issuer(&mut self, did: &Did) -> Result<IssuerId, GraphError> {
        let issuer = self
            .issuers
            .remove(did)
            .ok_or_else(|| GraphError::UnknownIssuer(did.clone()))?;
        let out = self.outgoing.remove(did).unwrap_or_default();
        for dst in out.keys() {
            if let Some(m) = self.incoming.get_mut(dst) {
                m.remove(did);
            }
        }
        let inc = self.incoming.remove(did).unwrap_or_default();
        for src in inc.keys() {
            if let Some(m) = self.outgoing.get_mut(src) {
                m.remove(did);
            }
        }
        self.edge_count -= out.len() + inc.len();
        Ok(issuer)
    }

    /// Inserts the edge or replaces the weight of an existing one.
    /// Returns the previous weight, if any.
    pub fn upsert_edge(&mut self, edge: TrustEdge) -> Result<Option<TrustWeight>, GraphError> {
        if edge.source == edge.destination {
            return Err(GraphError::SelfEdge(edge.source));
        }
        for did in [&edge.source, &edge.destination] {
            if !self.issuers.contains_key(did) {
                return Err(GraphError::UnknownIssuer(did.clone()));
            }
        }
        let prev = self
            .outgoing
            .get_mut(&edge.source)
            .expect("issuer has adjacency")
            .insert(edge.destination.clone(), edge.weight);
        self.incoming
            .get_mut(&edge.destination)
            .expect("issuer has adjacency")
            .insert(edge.source, edge.weight);
        if prev.is_none() {
            self.edge_count += 1;
        }
        Ok(prev)
    }

    pub fn remove_edge(&mut self, source: &Did, destination: &Did) -> Result<TrustWeight, GraphError> {
        let w = self
            .outgoing
            .get_mut(source)
            .and_then(|m| m.remove(destination))
            .ok_or_else(|| GraphError::UnknownEdge(source.clone(), destination.clone()))?;
        if let Some(m) = self.incoming.get_mut(destination) {
            m.remove(source);
        }
        self.edge_count -= 1;
        Ok(w)
    }

    pub fn contains(&self, did: &Did) -> bool {
        self.issuers.contains_key(did)
    }

    pub fn issuer(&self, did: &Did) -> Option<&IssuerId> {
        self.issuers.get(did)
    }

    pub fn issuers(&self) -> impl Iterator<Item = &IssuerId> {
        self.issuers.values()
    }

    pub fn issuer_count(&self) -> usize {
        self.issuers.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn weight(&self, source: &Did, destination: &Did) -> Option<TrustWeight> {
        self.outgoing.get(source)?.get(destination).copied()
    }

    /// All edges ordered by (source, destination).
    pub fn edges(&self) -> impl Iterator<Item = TrustEdge> + '_ {
        self.outgoing.iter().flat_map(|(src, m)| {
            m.iter()
                .map(move |(dst, w)| TrustEdge::new(src.clone(), dst.clone(), *w))
        })
    }

    /// Issuers holding an edge into `did`, with the weight of that edge.
    pub fn vouchers(&self, did: &Did) -> impl Iterator<Item = (&Did, TrustWeight)> {
        self.incoming
            .get(did)
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, w)| (d, *w)))
    }

    pub fn out_edges(&self, did: &Did) -> impl Iterator<Item = (&Did, TrustWeight)> {
        self.outgoing
            .get(did)
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, w)| (d, *w)))
    }

    /// Finds the shortest simple path from any trusted source to the
    /// credential issuer whose score meets the threshold.
    ///
    /// Paths are expanded one hop per layer. A prefix whose score already
    /// fell below the threshold is dropped, since weights never exceed one.
    /// Among qualifying paths of the minimal length the highest score wins;
    /// remaining ties are broken by a draw seeded from the query nonce over
    /// the tied paths in lexicographic issuer order.
    pub fn find_trusted_path(&self, query: &PathQuery, max_depth: u32) -> Result<PathOutcome, GraphError> {
        if max_depth == 0 {
            return Err(GraphError::InvalidDepth);
        }
        if !query.threshold.is_unit_interval() {
            return Err(GraphError::InvalidThreshold(query.threshold));
        }
        if query.trusted_sources.is_empty() {
            return Err(GraphError::EmptySources);
        }
        if !self.contains(&query.credential_issuer) {
            return Err(GraphError::UnknownIssuer(query.credential_issuer.clone()));
        }
        if let Some(missing) = query.trusted_sources.iter().find(|d| !self.contains(d)) {
            return Err(GraphError::UnknownIssuer(missing.clone()));
        }
        if query.trusted_sources.contains(&query.credential_issuer) {
            return Ok(PathOutcome::Found(TrustPath { edges: Vec::new(), score: Fixed4::ONE }));
        }

        let index = DenseIndex::build(self);
        let target = index.position(&query.credential_issuer);
        let threshold = query.threshold.raw();

        let mut arena: Vec<Prefix> = Vec::new();
        let mut frontier: Vec<u32> = Vec::new();
        for src in &query.trusted_sources {
            arena.push(Prefix { node: index.position(src), parent: NO_PARENT, score: Fixed4::ONE });
            frontier.push((arena.len() - 1) as u32);
        }

        let mut depth = 0;
        while depth < max_depth && !frontier.is_empty() {
            depth += 1;
            let mut next = Vec::new();
            let mut hits: Vec<u32> = Vec::new();
            let mut best = 0u32;
            for &pid in &frontier {
                let prefix = arena[pid as usize];
                for &(nbr, w) in &index.adjacency[prefix.node as usize] {
                    let score = prefix.score.mul_round(Fixed4::from_raw(w));
                    if score.raw() < threshold || visits(&arena, pid, nbr) {
                        continue;
                    }
                    arena.push(Prefix { node: nbr, parent: pid, score });
                    let id = (arena.len() - 1) as u32;
                    if nbr == target {
                        if score.raw() > best {
                            best = score.raw();
                            hits.clear();
                        }
                        if score.raw() == best {
                            hits.push(id);
                        }
                    } else {
                        next.push(id);
                    }
                }
            }
            if !hits.is_empty() {
                let mut tied: Vec<Vec<u32>> = hits.iter().map(|&h| node_sequence(&arena, h)).collect();
                tied.sort();
                let pick = if tied.len() == 1 {
                    0
                } else {
                    ChaCha20Rng::from_seed(query.query_nonce).gen_range(0..tied.len())
                };
                let edges = index.edges_for(&tied[pick]);
                return Ok(PathOutcome::Found(TrustPath { edges, score: Fixed4::from_raw(best) }));
            }
            frontier = next;
        }
        Ok(PathOutcome::NoPath { searched_depth: depth })
    }
}

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Prefix {
    node: u32,
    parent: u32,
    score: Fixed4,
}

fn visits(arena: &[Prefix], mut pid: u32, node: u32) -> bool {
    while pid != NO_PARENT {
        let p = arena[pid as usize];
        if p.node == node {
            return true;
        }
        pid = p.parent;
    }
    false
}

fn node_sequence(arena: &[Prefix], mut pid: u32) -> Vec<u32> {
    let mut seq = Vec::new();
    while pid != NO_PARENT {
        let p = arena[pid as usize];
        seq.push(p.node);
        pid = p.parent;
    }
    seq.reverse();
    seq
}

/// Issuers numbered in DID order, so comparing index sequences orders
/// paths lexicographically by DID.
struct DenseIndex<'g> {
    dids: Vec<&'g Did>,
    positions: HashMap<&'g Did, u32>,
    adjacency: Vec<Vec<(u32, u32)>>,
    graph: &'g TrustGraph,
}

impl<'g> DenseIndex<'g> {
    fn build(graph: &'g TrustGraph) -> Self {
        let dids: Vec<&Did> = graph.issuers.keys().collect();
        let positions: HashMap<&Did, u32> = dids.iter().enumerate().map(|(i, d)| (*d, i as u32)).collect();
        let adjacency = dids
            .iter()
            .map(|d| {
                graph.outgoing[*d]
                    .iter()
                    .map(|(dst, w)| (positions[dst], w.raw()))
                    .collect()
            })
            .collect();
        DenseIndex { dids, positions, adjacency, graph }
    }

    fn position(&self, did: &Did) -> u32 {
        self.positions[did]
    }

    fn edges_for(&self, seq: &[u32]) -> Vec<TrustEdge> {
        seq.windows(2)
            .map(|w| {
                let (s, d) = (self.dids[w[0] as usize], self.dids[w[1] as usize]);
                let weight = self.graph.weight(s, d).expect("edge exists");
                TrustEdge::new(s.clone(), d.clone(), weight)
            })
            .collect()
    }
}

pub(crate) mod nonce_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::derive_signing_key;

    fn did(s: &str) -> Did {
        Did::new(s).unwrap()
    }

    fn issuer(s: &str) -> IssuerId {
        IssuerId::new(did(s), derive_signing_key(0, s).verifying_key())
    }

    fn w(s: &str) -> TrustWeight {
        s.parse().unwrap()
    }

    fn edge(a: &str, b: &str, weight: &str) -> TrustEdge {
        TrustEdge::new(did(a), did(b), w(weight))
    }

    fn graph(nodes: &[&str], edges: &[(&str, &str, &str)]) -> TrustGraph {
        let mut g = TrustGraph::new();
        for n in nodes {
            g.add_issuer(issuer(n)).unwrap();
        }
        for (a, b, x) in edges {
            g.upsert_edge(edge(a, b, x)).unwrap();
        }
        g
    }

    fn query(sources: &[&str], target: &str, threshold: &str, nonce: u8) -> PathQuery {
        PathQuery {
            trusted_sources: sources.iter().map(|s| did(s)).collect(),
            credential_issuer: did(target),
            threshold: threshold.parse().unwrap(),
            query_nonce: [nonce; 32],
        }
    }

    #[test]
    fn add_issuer_cases() {
        let mut g = TrustGraph::new();
        g.add_issuer(issuer("issuer1")).unwrap();
        assert_eq!(g.issuer_count(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.add_issuer(issuer("issuer1")), Err(GraphError::DuplicateIssuer(did("issuer1"))));
        g.add_issuer(issuer("issuer2")).unwrap();
        assert_eq!(g.issuers().map(|i| i.did.as_str()).collect::<Vec<_>>(), ["issuer1", "issuer2"]);
    }

    #[test]
    fn remove_issuer_cascades_edges() {
        let mut g = graph(&["A", "B"], &[("A", "B", "0.9")]);
        g.remove_issuer(&did("B")).unwrap();
        assert_eq!(g.issuers().count(), 1);
        assert_eq!(g.edge_count(), 0);

        let mut g = graph(&["A", "B", "C"], &[("A", "B", "0.5"), ("B", "C", "0.5"), ("C", "A", "0.5")]);
        g.remove_issuer(&did("B")).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![edge("C", "A", "0.5")]);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.vouchers(&did("C")).count(), 0);

        assert_eq!(g.remove_issuer(&did("D")), Err(GraphError::UnknownIssuer(did("D"))));
    }

    #[test]
    fn upsert_edge_cases() {
        let mut g = graph(&["issuer1", "issuer2"], &[]);
        g.upsert_edge(edge("issuer1", "issuer2", "0.9")).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![edge("issuer1", "issuer2", "0.9")]);

        let mut g = graph(&["A", "B"], &[("A", "B", "0.5")]);
        assert_eq!(g.upsert_edge(edge("A", "B", "0.8")).unwrap(), Some(w("0.5")));
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![edge("A", "B", "0.8")]);
        assert_eq!(g.edge_count(), 1);

        assert_eq!(g.upsert_edge(edge("A", "A", "0.7")), Err(GraphError::SelfEdge(did("A"))));
        assert_eq!(g.upsert_edge(edge("A", "Z", "0.7")), Err(GraphError::UnknownIssuer(did("Z"))));
    }

    #[test]
    fn remove_edge_keeps_issuers() {
        let mut g = graph(&["A", "B"], &[("A", "B", "0.5")]);
        g.remove_edge(&did("A"), &did("B")).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.issuer_count(), 2);
        assert!(matches!(g.remove_edge(&did("A"), &did("B")), Err(GraphError::UnknownEdge(..))));
    }

    #[test]
    fn trust_score_cases() {
        assert_eq!(trust_score(&[edge("A", "B", "0.9"), edge("B", "C", "0.8")]).unwrap().raw(), 7200);
        assert_eq!(trust_score(&[]).unwrap(), Fixed4::ONE);
        assert_eq!(
            trust_score(&[edge("A", "B", "0.3333"), edge("B", "C", "0.3333")]).unwrap().raw(),
            1111
        );
        assert_eq!(
            trust_score(&[edge("A", "B", "0.9"), edge("C", "D", "0.8")]),
            Err(GraphError::BrokenChain(1))
        );
    }

    #[test]
    fn threshold_prefers_longer_qualifying_path() {
        let g = graph(&["A", "B", "C"], &[("A", "B", "0.9"), ("B", "C", "0.8"), ("A", "C", "0.5")]);
        let p = g.find_trusted_path(&query(&["A"], "C", "0.6", 0), 6).unwrap().found().unwrap();
        assert_eq!(p.edges, vec![edge("A", "B", "0.9"), edge("B", "C", "0.8")]);
        assert_eq!(p.score.raw(), 7200);

        // a lower threshold lets the direct edge win on hop count
        let p = g.find_trusted_path(&query(&["A"], "C", "0.5", 0), 6).unwrap().found().unwrap();
        assert_eq!(p.edges, vec![edge("A", "C", "0.5")]);
    }

    #[test]
    fn trusted_target_yields_empty_path() {
        let g = graph(&["A"], &[]);
        for t in ["0", "0.5", "1"] {
            let p = g.find_trusted_path(&query(&["A"], "A", t, 0), 6).unwrap().found().unwrap();
            assert!(p.edges.is_empty());
            assert_eq!(p.score, Fixed4::ONE);
        }
    }

    #[test]
    fn equal_paths_tie_break_is_replayable() {
        let g = graph(
            &["A", "B", "C", "D"],
            &[("A", "B", "0.9"), ("B", "C", "0.9"), ("A", "D", "0.9"), ("D", "C", "0.9")],
        );
        let mut seen = BTreeSet::new();
        for n in 0..=255u8 {
            let q = query(&["A"], "C", "0.5", n);
            let first = g.find_trusted_path(&q, 6).unwrap().found().unwrap();
            assert_eq!(first.score.raw(), 8100);
            for _ in 0..3 {
                assert_eq!(g.find_trusted_path(&q, 6).unwrap().found().unwrap(), first);
            }
            seen.insert(first.edges[0].destination.clone());
        }
        // both tied paths are reachable through different nonces
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn higher_score_wins_among_equal_length() {
        let g = graph(
            &["A", "B", "C", "D"],
            &[("A", "B", "0.9"), ("B", "C", "0.9"), ("A", "D", "0.9"), ("D", "C", "0.8")],
        );
        for n in 0..16 {
            let p = g.find_trusted_path(&query(&["A"], "C", "0.1", n), 6).unwrap().found().unwrap();
            assert_eq!(p.edges[0].destination, did("B"));
        }
    }

    #[test]
    fn depth_cap_reports_searched_depth() {
        let g = graph(&["A", "B", "C", "D"], &[("A", "B", "1"), ("B", "C", "1"), ("C", "D", "1")]);
        assert_eq!(
            g.find_trusted_path(&query(&["A"], "D", "0.5", 0), 2).unwrap(),
            PathOutcome::NoPath { searched_depth: 2 }
        );
        assert!(g.find_trusted_path(&query(&["A"], "D", "0.5", 0), 3).unwrap().found().is_some());
        // exhausted frontier stops early
        let g = graph(&["A", "B", "C"], &[("A", "B", "1")]);
        assert_eq!(
            g.find_trusted_path(&query(&["A"], "C", "0", 0), 6).unwrap(),
            PathOutcome::NoPath { searched_depth: 2 }
        );
    }

    #[test]
    fn query_validation() {
        let g = graph(&["A", "B"], &[("A", "B", "1")]);
        let mut q = query(&["A"], "B", "0.5", 0);
        assert_eq!(g.find_trusted_path(&q, 0), Err(GraphError::InvalidDepth));
        q.threshold = Fixed4::from_raw(10_001);
        assert!(matches!(g.find_trusted_path(&q, 6), Err(GraphError::InvalidThreshold(_))));
        let q = query(&["A"], "Z", "0.5", 0);
        assert_eq!(g.find_trusted_path(&q, 6), Err(GraphError::UnknownIssuer(did("Z"))));
        let q = query(&["Y"], "B", "0.5", 0);
        assert_eq!(g.find_trusted_path(&q, 6), Err(GraphError::UnknownIssuer(did("Y"))));
        let q = query(&[], "B", "0.5", 0);
        assert_eq!(g.find_trusted_path(&q, 6), Err(GraphError::EmptySources));
    }

    #[test]
    fn multi_source_frontier() {
        let g = graph(&["A", "B", "C", "D"], &[("A", "B", "1"), ("B", "C", "1"), ("D", "C", "0.7")]);
        let p = g.find_trusted_path(&query(&["A", "D"], "C", "0.5", 0), 6).unwrap().found().unwrap();
        assert_eq!(p.edges, vec![edge("D", "C", "0.7")]);
    }

    #[test]
    fn direction_matters() {
        let g = graph(&["A", "B"], &[("B", "A", "1")]);
        assert!(g.find_trusted_path(&query(&["A"], "B", "0", 0), 6).unwrap().found().is_none());
    }

    #[test]
    fn path_issuers() {
        let p = TrustPath { edges: vec![edge("A", "B", "1"), edge("B", "C", "1")], score: Fixed4::ONE };
        let names: Vec<&str> = p.issuers().iter().map(|d| d.as_str()).collect();
        assert_eq!(names, ["A", "B", "C"]);
    }
}
