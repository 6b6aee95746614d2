//! Independent reference implementations used to cross-check the engine.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use trustreg_core::fixed::{Fixed4, TrustWeight};
use trustreg_core::graph::{PathQuery, TrustEdge, TrustGraph};
use trustreg_core::identity::{derive_signing_key, Did, IssuerId};

pub fn node(i: usize) -> Did {
    Did::new(format!("N{i:02}")).unwrap()
}

/// Round-half-up product of two ten-thousandths values.
pub fn mul(a: u64, b: u64) -> u64 {
    (a * b + 5_000) / 10_000
}

/// A random search problem over nodes `N00..`.
#[derive(Clone, Debug)]
pub struct Instance {
    pub nodes: usize,
    pub edges: BTreeMap<(usize, usize), u32>,
    pub sources: BTreeSet<usize>,
    pub target: usize,
    pub threshold: u32,
    pub nonce: [u8; 32],
    pub max_depth: u32,
}

const TIE_PRONE: [u32; 3] = [10_000, 9_000, 5_000];

fn pick_weight(rng: &mut impl Rng) -> u32 {
    if rng.gen_bool(0.8) {
        TIE_PRONE[rng.gen_range(0..TIE_PRONE.len())]
    } else {
        rng.gen_range(1..=10_000)
    }
}

impl Instance {
    /// At most 12 nodes and 30 edges.
    pub fn random(rng: &mut impl Rng) -> Self {
        let nodes = rng.gen_range(2..=12);
        let mut edges = BTreeMap::new();
        let target_edges = rng.gen_range(0..=30usize.min(nodes * (nodes - 1)));
        while edges.len() < target_edges {
            let (a, b) = (rng.gen_range(0..nodes), rng.gen_range(0..nodes));
            if a != b {
                edges.insert((a, b), pick_weight(rng));
            }
        }
        let source_count = rng.gen_range(1..=3.min(nodes));
        let mut sources = BTreeSet::new();
        while sources.len() < source_count {
            sources.insert(rng.gen_range(0..nodes));
        }
        let threshold = if rng.gen_bool(0.5) { rng.gen_range(0..=20) * 500 } else { rng.gen_range(0..=10_000) };
        Instance {
            nodes,
            edges,
            sources,
            target: rng.gen_range(0..nodes),
            threshold,
            nonce: rng.gen(),
            max_depth: rng.gen_range(1..=6),
        }
    }

    pub fn graph(&self) -> TrustGraph {
        let key = derive_signing_key(0, "oracle").verifying_key();
        let mut g = TrustGraph::new();
        for i in 0..self.nodes {
            g.add_issuer(IssuerId { did: node(i), verification_key: key }).unwrap();
        }
        for (&(a, b), &w) in &self.edges {
            g.upsert_edge(TrustEdge::new(node(a), node(b), TrustWeight::from_raw(w).unwrap())).unwrap();
        }
        g
    }

    pub fn query(&self) -> PathQuery {
        PathQuery {
            trusted_sources: self.sources.iter().map(|&i| node(i)).collect(),
            credential_issuer: node(self.target),
            threshold: Fixed4::from_raw(self.threshold),
            query_nonce: self.nonce,
        }
    }
}

pub fn instance() -> impl Strategy<Value = Instance> {
    any::<u64>().prop_map(|seed| Instance::random(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expected {
    /// Tied best paths as node sequences, sorted.
    Found { ties: Vec<Vec<usize>>, score: u32 },
    NoPath { searched_depth: u32 },
}

impl Expected {
    /// The member of the tie set the nonce-seeded draw selects.
    pub fn pick(&self, nonce: [u8; 32]) -> Option<&Vec<usize>> {
        match self {
            Expected::Found { ties, .. } if ties.len() == 1 => ties.first(),
            Expected::Found { ties, .. } => Some(&ties[ChaCha20Rng::from_seed(nonce).gen_range(0..ties.len())]),
            Expected::NoPath { .. } => None,
        }
    }
}

/// Enumerates every simple path from a source with no pruning at all.
pub fn brute_force(inst: &Instance) -> Expected {
    if inst.sources.contains(&inst.target) {
        return Expected::Found { ties: vec![vec![inst.target]], score: 10_000 };
    }
    let mut adjacency = vec![Vec::new(); inst.nodes];
    for (&(a, b), &w) in &inst.edges {
        adjacency[a].push((b, w as u64));
    }
    let mut hits: Vec<(Vec<usize>, u64)> = Vec::new();
    let mut deepest_open = 0usize;
    let mut stack: Vec<(Vec<usize>, u64)> = inst.sources.iter().map(|&s| (vec![s], 10_000)).collect();
    while let Some((path, score)) = stack.pop() {
        let len = path.len() - 1;
        let last = *path.last().unwrap();
        if last == inst.target {
            if score >= inst.threshold as u64 {
                hits.push((path, score));
            }
            continue;
        }
        if score >= inst.threshold as u64 {
            deepest_open = deepest_open.max(len);
        }
        if len == inst.max_depth as usize {
            continue;
        }
        for &(next, w) in &adjacency[last] {
            if !path.contains(&next) {
                let mut p = path.clone();
                p.push(next);
                stack.push((p, mul(score, w)));
            }
        }
    }
    let Some(shortest) = hits.iter().map(|(p, _)| p.len()).min() else {
        return Expected::NoPath { searched_depth: (deepest_open as u32 + 1).min(inst.max_depth) };
    };
    let best = hits.iter().filter(|(p, _)| p.len() == shortest).map(|(_, s)| *s).max().unwrap();
    let mut ties: Vec<Vec<usize>> =
        hits.into_iter().filter(|(p, s)| p.len() == shortest && *s == best).map(|(p, _)| p).collect();
    ties.sort();
    Expected::Found { ties, score: best as u32 }
}

/// Node sequence of a returned path; the empty path is just the target.
pub fn sequence(edges: &[TrustEdge], target: usize) -> Vec<usize> {
    let index = |d: &Did| d.as_str()[1..].parse::<usize>().unwrap();
    match edges.first() {
        None => vec![target],
        Some(first) => std::iter::once(index(&first.source)).chain(edges.iter().map(|e| index(&e.destination))).collect(),
    }
}

/// Fee credits straight from the algorithm's two formulas.
pub fn fee_oracle(path_destinations: &[Did], credential_issuer: &Did, fee: u64) -> (BTreeMap<Did, u64>, u64) {
    let p_cred = fee / 2;
    let mut credits = BTreeMap::new();
    credits.insert(credential_issuer.clone(), p_cred);
    if !path_destinations.is_empty() {
        let p_others = fee / 2 / path_destinations.len() as u64;
        for d in path_destinations.iter().filter(|d| *d != credential_issuer) {
            *credits.entry(d.clone()).or_default() += p_others;
        }
    }
    let paid: u64 = credits.values().sum();
    (credits, fee - paid)
}

pub mod settle {
    use std::collections::BTreeMap;

    use rand::Rng;
    use trustreg_core::commitment::{build_edge_tree, prove_edges};
    use trustreg_core::graph::PathOutcome;
    use trustreg_core::hash::{Digest, HashAlgorithm};
    use trustreg_core::identity::Did;
    use trustreg_core::ledger::FeeSplitRule;
    use trustreg_core::merkle::{leaf_hash, node_hash, Side};
    use trustreg_core::settlement::{BalanceTree, SettlementPrivateInputs, SettlementPublicInputs};

    use super::{fee_oracle, node, Instance};

    pub const ALG: HashAlgorithm = HashAlgorithm::Sha256;

    /// Honest inputs for one query over a random graph that has a path of at
    /// least one edge, or None if the sampled instance has none.
    pub fn honest(rng: &mut impl Rng, prior: &BTreeMap<Did, u64>) -> Option<(SettlementPrivateInputs, SettlementPublicInputs)> {
        let mut inst = Instance::random(rng);
        inst.sources.remove(&inst.target);
        if inst.sources.is_empty() {
            return None;
        }
        let g = inst.graph();
        let PathOutcome::Found(path) = g.find_trusted_path(&inst.query(), inst.max_depth).ok()? else { return None };
        let tree = build_edge_tree(&g, ALG);
        let proofs = prove_edges(&tree, &path).ok()?;
        let fee = rng.gen_range(1..=1_000_000);
        let destinations: Vec<Did> = path.edges.iter().map(|e| e.destination.clone()).collect();
        let (credits, _) = fee_oracle(&destinations, &node(inst.target), fee);
        let mut after = prior.clone();
        for (d, a) in credits {
            *after.entry(d).or_default() += a;
        }
        let private =
            SettlementPrivateInputs { edges: path.edges.clone(), balances: prior.clone(), proof_edges: proofs, blinding: rng.gen() };
        let public = SettlementPublicInputs {
            source: path.edges[0].source.clone(),
            destination: node(inst.target),
            root_graph: tree.root(),
            root_balance_previous: BalanceTree::new(ALG, prior.clone()).root(),
            root_balance_updated: BalanceTree::new(ALG, after).root(),
            threshold: inst.query().threshold,
            fee,
            fee_split: FeeSplitRule::PerEdge,
        };
        Some((private, public))
    }

    pub fn random_balances(rng: &mut impl Rng) -> BTreeMap<Did, u64> {
        (0..rng.gen_range(0..6)).map(|_| (node(rng.gen_range(0..12)), rng.gen_range(0..10_000))).collect()
    }

    pub const MUTATIONS: [&str; 6] = ["edge", "weight", "balance", "sibling", "side", "drop-edge"];

    /// Changes one field of the private inputs (never the blinding nonce).
    pub fn mutate(private: &SettlementPrivateInputs, kind: usize, rng: &mut impl Rng) -> SettlementPrivateInputs {
        let mut m = private.clone();
        let i = rng.gen_range(0..m.edges.len());
        match kind {
            0 => {
                let e = &mut m.edges[i];
                let mut other = node(rng.gen_range(0..13));
                while other == e.destination {
                    other = node(rng.gen_range(0..13));
                }
                e.destination = other;
            }
            1 => {
                let w = m.edges[i].weight.raw();
                let mut nw = rng.gen_range(1..=10_000);
                while nw == w {
                    nw = rng.gen_range(1..=10_000);
                }
                m.edges[i].weight = trustreg_core::fixed::TrustWeight::from_raw(nw).unwrap();
            }
            2 => match m.balances.keys().nth(rng.gen_range(0..=m.balances.len())).cloned() {
                Some(k) if rng.gen_bool(0.5) => *m.balances.get_mut(&k).unwrap() += rng.gen_range(1..1_000),
                Some(k) => {
                    m.balances.remove(&k);
                }
                None => {
                    m.balances.insert(Did::new("X").unwrap(), rng.gen_range(0..1_000));
                }
            },
            3 => {
                let proof = &mut m.proof_edges[i];
                let s = rng.gen_range(0..proof.siblings.len());
                let mut raw = *proof.siblings[s].hash.as_bytes();
                raw[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
                proof.siblings[s].hash = Digest(raw);
            }
            4 => {
                // a sibling equal to the running node (a duplicated odd node)
                // hashes the same on either side, so only flip the others
                let proof = &mut m.proof_edges[i];
                let mut acc = leaf_hash(ALG, proof.leaf.as_bytes());
                let mut candidates = Vec::new();
                for (k, sib) in proof.siblings.iter().enumerate() {
                    if sib.hash != acc {
                        candidates.push(k);
                    }
                    acc = match sib.side {
                        Side::Left => node_hash(ALG, &sib.hash, &acc),
                        Side::Right => node_hash(ALG, &acc, &sib.hash),
                    };
                }
                match candidates.get(rng.gen_range(0..candidates.len().max(1))) {
                    Some(&k) => {
                        proof.siblings[k].side = match proof.siblings[k].side {
                            Side::Left => Side::Right,
                            Side::Right => Side::Left,
                        }
                    }
                    None => return mutate(private, 3, rng),
                }
            }
            _ => {
                m.edges.remove(i);
                m.proof_edges.remove(i);
            }
        }
        m
    }
}

pub mod econ {
    use trustreg_core::fixed::Fixed4;
    use trustreg_core::graph::{TrustEdge, TrustGraph, TrustPath};
    use trustreg_core::identity::{derive_signing_key, sign, Did, IssuerId};
    use trustreg_core::ledger::{Amount, Challenge, ChallengeOutcome, FeeSplitRule, Ledger, LedgerParams};

    pub const CHALLENGE: &[u8] = b"registration";

    pub fn params(min_stake: Amount, fee: Amount) -> LedgerParams {
        LedgerParams { min_stake, fee, fee_split: FeeSplitRule::PerEdge }
    }

    /// Funds and registers `did` with `stake`.
    pub fn register(ledger: &mut Ledger, graph: &mut TrustGraph, did: &Did, stake: Amount) {
        let key = derive_signing_key(0, did.as_str());
        let issuer = IssuerId { did: did.clone(), verification_key: key.verifying_key() };
        ledger.faucet(did, stake).unwrap();
        ledger.register_issuer(graph, issuer, stake, CHALLENGE, &sign(&key, CHALLENGE)).unwrap();
    }

    pub fn chain(nodes: &[Did], weight: trustreg_core::fixed::TrustWeight) -> TrustPath {
        let edges: Vec<TrustEdge> =
            nodes.windows(2).map(|w| TrustEdge::new(w[0].clone(), w[1].clone(), weight)).collect();
        TrustPath { edges, score: Fixed4::ONE }
    }

    pub fn upheld(id: u64, challenger: &Did, accused: &Did) -> Challenge {
        let mut c = Challenge::new(id, challenger.clone(), accused.clone(), 0);
        c.outcome = ChallengeOutcome::Upheld;
        c
    }
}
