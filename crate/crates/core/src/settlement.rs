//! Per-query settlement transcripts.
//!
//! For every answered query the maintainers publish a transcript holding the
//! public inputs (endpoints, graph root, balance roots before and after,
//! threshold, fee) and a hash commitment to the private inputs (path edges,
//! the epoch's balance entries before the update, edge membership proofs and
//! a blinding nonce). Nothing about the path or the individual credits is
//! visible until the private inputs are revealed at the end of the epoch.
//! Verification re-executes every check against the revealed inputs.
//!
//! The checks, in order:
//! 1. the edges chain from `source` to `destination` as a simple path whose
//!    score meets `threshold`;
//! 2. the revealed balances hash to `root_balance_previous`;
//! 3. every edge is a leaf of `root_graph`;
//! 4. crediting `⌊P/2⌋` to the credential issuer and `⌊P/2 / edges⌋` to every
//!    other edge destination yields `root_balance_updated`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::canonical_encode;
use crate::fixed::Fixed4;
use crate::graph::{trust_score, TrustEdge};
use crate::hash::{Digest, HashAlgorithm};
use crate::identity::Did;
use crate::ledger::{Amount, FeeSplitRule};
use crate::merkle::{MerkleProof, MerkleTree};

pub const TRANSCRIPT_HEADER: &str = "trustreg-settlement-transcript v1";

/// `issuer:balance` leaf encoding for the balance tree.
pub fn balance_leaf(did: &Did, amount: Amount) -> String {
    format!("{did}:{amount}")
}

pub fn parse_balance_leaf(leaf: &str) -> Option<(Did, Amount)> {
    let (d, a) = leaf.split_once(':')?;
    let amount: Amount = a.parse().ok()?;
    if a != amount.to_string() {
        return None;
    }
    Some((Did::new(d).ok()?, amount))
}

/// Reward balances accrued during one epoch, committed as a Merkle tree
/// with the same hashing rules as the edge tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BalanceTree {
    entries: BTreeMap<Did, Amount>,
    tree: MerkleTree,
}

impl BalanceTree {
    pub fn new(algorithm: HashAlgorithm, entries: BTreeMap<Did, Amount>) -> Self {
        let tree = MerkleTree::from_leaves(algorithm, entries.iter().map(|(d, a)| balance_leaf(d, *a)));
        BalanceTree { entries, tree }
    }

    pub fn empty(algorithm: HashAlgorithm) -> Self {
        Self::new(algorithm, BTreeMap::new())
    }

    pub fn root(&self) -> Digest {
        self.tree.root()
    }

    pub fn entries(&self) -> &BTreeMap<Did, Amount> {
        &self.entries
    }

    pub fn balance(&self, did: &Did) -> Option<Amount> {
        self.entries.get(did).copied()
    }

    pub fn prove(&self, did: &Did) -> Option<MerkleProof> {
        let amount = self.entries.get(did)?;
        self.tree.prove(&balance_leaf(did, *amount))
    }

    /// Returns a new tree with `credits` added.
    pub fn credited<'a>(&self, credits: impl IntoIterator<Item = (&'a Did, Amount)>) -> BalanceTree {
        let mut entries = self.entries.clone();
        for (d, a) in credits {
            *entries.entry(d.clone()).or_default() += a;
        }
        BalanceTree::new(self.tree.algorithm(), entries)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementPublicInputs {
    pub source: Did,
    pub destination: Did,
    pub root_graph: Digest,
    pub root_balance_previous: Digest,
    pub root_balance_updated: Digest,
    pub threshold: Fixed4,
    pub fee: Amount,
    pub fee_split: FeeSplitRule,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementPrivateInputs {
    pub edges: Vec<TrustEdge>,
    pub balances: BTreeMap<Did, Amount>,
    pub proof_edges: Vec<MerkleProof>,
    #[serde(with = "crate::graph::nonce_hex")]
    pub blinding: [u8; 32],
}

impl SettlementPrivateInputs {
    pub fn commitment(&self, alg: HashAlgorithm) -> Digest {
        let body = serde_json::to_vec(self).expect("private inputs serialize");
        alg.digest_parts(&[b"trustreg/settlement-private/v1", &body])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettlementCheck {
    PathValidity,
    PreviousBalances,
    EdgeMembership,
    BalanceUpdate,
}

impl SettlementCheck {
    pub const ALL: [SettlementCheck; 4] = [
        SettlementCheck::PathValidity,
        SettlementCheck::PreviousBalances,
        SettlementCheck::EdgeMembership,
        SettlementCheck::BalanceUpdate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SettlementCheck::PathValidity => "path-validity",
            SettlementCheck::PreviousBalances => "previous-balances",
            SettlementCheck::EdgeMembership => "edge-membership",
            SettlementCheck::BalanceUpdate => "balance-update",
        }
    }
}

impl FromStr for SettlementCheck {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown check `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accept,
    Reject(SettlementCheck),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accept => f.write_str("accept"),
            Verdict::Reject(c) => write!(f, "reject:{}", c.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementTranscript {
    pub public: SettlementPublicInputs,
    pub commitment: Digest,
    pub verdict: Verdict,
    pub checks: Vec<(SettlementCheck, bool)>,
}

/// Credits owed for one query under `rule`, computed edge by edge.
pub fn settlement_credits(rule: FeeSplitRule, edges: &[TrustEdge], destination: &Did, fee: Amount) -> Vec<(Did, Amount)> {
    let p_cred = fee / 2;
    if edges.is_empty() {
        return vec![(destination.clone(), p_cred)];
    }
    match rule {
        FeeSplitRule::PerEdge => {
            let p_others = (fee / 2) / edges.len() as u64;
            edges
                .iter()
                .map(|e| {
                    let amount = if &e.destination == destination { p_cred } else { p_others };
                    (e.destination.clone(), amount)
                })
                .collect()
        }
        FeeSplitRule::EqualShare => {
            let mut out = vec![(destination.clone(), p_cred)];
            let others: Vec<&Did> = std::iter::once(&edges[0].source)
                .chain(edges.iter().map(|e| &e.destination))
                .filter(|d| *d != destination)
                .collect();
            let share = (fee / 2) / others.len().max(1) as u64;
            out.extend(others.into_iter().map(|d| (d.clone(), share)));
            out
        }
    }
}

fn path_is_valid(public: &SettlementPublicInputs, edges: &[TrustEdge]) -> bool {
    if !public.threshold.is_unit_interval() {
        return false;
    }
    let (Some(first), Some(last)) = (edges.first(), edges.last()) else {
        return public.source == public.destination;
    };
    if first.source != public.source || last.destination != public.destination {
        return false;
    }
    let mut seen = BTreeSet::from([&first.source]);
    if !edges.iter().all(|e| seen.insert(&e.destination)) {
        return false;
    }
    match trust_score(edges) {
        Ok(score) => score >= public.threshold,
        Err(_) => false,
    }
}

/// Runs every check and reports each result in order.
pub fn execute_checks(
    alg: HashAlgorithm,
    public: &SettlementPublicInputs,
    private: &SettlementPrivateInputs,
) -> Vec<(SettlementCheck, bool)> {
    let previous = BalanceTree::new(alg, private.balances.clone());

    let membership = private.proof_edges.len() == private.edges.len()
        && private
            .edges
            .iter()
            .zip(&private.proof_edges)
            .all(|(e, p)| p.leaf == canonical_encode(e) && p.verify(alg, &public.root_graph));

    let credits = settlement_credits(public.fee_split, &private.edges, &public.destination, public.fee);
    let updated = previous.credited(credits.iter().map(|(d, a)| (d, *a)));

    vec![
        (SettlementCheck::PathValidity, path_is_valid(public, &private.edges)),
        (SettlementCheck::PreviousBalances, previous.root() == public.root_balance_previous),
        (SettlementCheck::EdgeMembership, membership),
        (SettlementCheck::BalanceUpdate, updated.root() == public.root_balance_updated),
    ]
}

fn verdict_of(checks: &[(SettlementCheck, bool)]) -> Verdict {
    checks
        .iter()
        .find(|(_, ok)| !ok)
        .map_or(Verdict::Accept, |(c, _)| Verdict::Reject(*c))
}

pub fn prove_settlement(
    alg: HashAlgorithm,
    private: &SettlementPrivateInputs,
    public: SettlementPublicInputs,
) -> SettlementTranscript {
    let checks = execute_checks(alg, &public, private);
    SettlementTranscript { commitment: private.commitment(alg), verdict: verdict_of(&checks), checks, public }
}

/// True iff the reveal matches the commitment and re-execution reproduces
/// an accepting transcript.
pub fn verify_settlement(alg: HashAlgorithm, transcript: &SettlementTranscript, revealed: &SettlementPrivateInputs) -> bool {
    if revealed.commitment(alg) != transcript.commitment {
        return false;
    }
    let checks = execute_checks(alg, &transcript.public, revealed);
    checks == transcript.checks && verdict_of(&checks) == Verdict::Accept && transcript.verdict == Verdict::Accept
}

/// Verifies an epoch's transcripts as a chain: each query's updated balance
/// root must be the next query's previous root, starting at `start_root`
/// and ending at `final_root`.
pub fn verify_chain(
    alg: HashAlgorithm,
    start_root: &Digest,
    transcripts: &[SettlementTranscript],
    reveals: &[SettlementPrivateInputs],
    final_root: &Digest,
) -> bool {
    if transcripts.len() != reveals.len() {
        return false;
    }
    let mut cursor = *start_root;
    for (t, r) in transcripts.iter().zip(reveals) {
        if t.public.root_balance_previous != cursor || !verify_settlement(alg, t, r) {
            return false;
        }
        cursor = t.public.root_balance_updated;
    }
    cursor == *final_root
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptFormatError {
    #[error("missing or unsupported header")]
    Header,
    #[error("line {0}: expected field `{1}`")]
    Field(usize, &'static str),
    #[error("line {0}: {1}")]
    Value(usize, String),
    #[error("trailing content at line {0}")]
    Trailing(usize),
}

impl SettlementTranscript {
    /// Line-oriented text form: versioned header, fixed field order, hex
    /// hashes.
    pub fn to_text(&self) -> String {
        let p = &self.public;
        let split = match p.fee_split {
            FeeSplitRule::PerEdge => "per-edge",
            FeeSplitRule::EqualShare => "equal-share",
        };
        let mut s = format!(
            "{TRANSCRIPT_HEADER}\nsource {}\ndestination {}\nroot_graph {}\nroot_balance_previous {}\n\
             root_balance_updated {}\nthreshold {}\nfee {}\nfee_split {split}\ncommitment {}\nverdict {}\n",
            p.source, p.destination, p.root_graph, p.root_balance_previous, p.root_balance_updated, p.threshold,
            p.fee, self.commitment, self.verdict,
        );
        for (c, ok) in &self.checks {
            s.push_str(&format!("check {} {}\n", c.name(), if *ok { "pass" } else { "fail" }));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TranscriptFormatError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        if lines.next().map(|(_, l)| l) != Some(TRANSCRIPT_HEADER) {
            return Err(TranscriptFormatError::Header);
        }
        let mut field = |name: &'static str| -> Result<(usize, String), TranscriptFormatError> {
            let (n, line) = lines.next().ok_or(TranscriptFormatError::Field(0, name))?;
            let value = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or(TranscriptFormatError::Field(n, name))?;
            Ok((n, value.to_string()))
        };
        fn parse<T: FromStr>((n, v): (usize, String)) -> Result<T, TranscriptFormatError>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| TranscriptFormatError::Value(n, e.to_string()))
        }
        let source: Did = parse(field("source")?)?;
        let destination: Did = parse(field("destination")?)?;
        let root_graph: Digest = parse(field("root_graph")?)?;
        let root_balance_previous: Digest = parse(field("root_balance_previous")?)?;
        let root_balance_updated: Digest = parse(field("root_balance_updated")?)?;
        let threshold: Fixed4 = parse(field("threshold")?)?;
        let fee: Amount = parse(field("fee")?)?;
        let (n, split) = field("fee_split")?;
        let fee_split = match split.as_str() {
            "per-edge" => FeeSplitRule::PerEdge,
            "equal-share" => FeeSplitRule::EqualShare,
            other => return Err(TranscriptFormatError::Value(n, format!("unknown fee split `{other}`"))),
        };
        let commitment: Digest = parse(field("commitment")?)?;
        let (n, v) = field("verdict")?;
        let verdict = match v.strip_prefix("reject:") {
            None if v == "accept" => Verdict::Accept,
            Some(c) => Verdict::Reject(c.parse().map_err(|e| TranscriptFormatError::Value(n, e))?),
            None => return Err(TranscriptFormatError::Value(n, format!("bad verdict `{v}`"))),
        };
        let mut checks = Vec::new();
        for _ in SettlementCheck::ALL {
            let (n, v) = field("check")?;
            let (name, result) = v.split_once(' ').ok_or(TranscriptFormatError::Field(n, "check"))?;
            let check: SettlementCheck = name.parse().map_err(|e| TranscriptFormatError::Value(n, e))?;
            let ok = match result {
                "pass" => true,
                "fail" => false,
                _ => return Err(TranscriptFormatError::Value(n, format!("bad check result `{result}`"))),
            };
            checks.push((check, ok));
        }
        if let Some((n, _)) = lines.next() {
            return Err(TranscriptFormatError::Trailing(n));
        }
        let public = SettlementPublicInputs {
            source,
            destination,
            root_graph,
            root_balance_previous,
            root_balance_updated,
            threshold,
            fee,
            fee_split,
        };
        Ok(SettlementTranscript { public, commitment, verdict, checks })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClaimError {
    #[error("`{0}` already claimed for epoch {1}")]
    AlreadyClaimed(Did, u64),
    #[error("claim proof does not verify against the final balance root of epoch {0}")]
    ProofInvalid(u64),
    #[error("epoch {0} has no revealed balance root")]
    EpochNotRevealed(u64),
}

/// Final balance roots of revealed epochs and the claims paid against them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimBook {
    final_roots: BTreeMap<u64, Digest>,
    claimed: BTreeSet<(u64, Did)>,
}

impl ClaimBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reveal(&mut self, epoch: u64, final_root: Digest) {
        self.final_roots.insert(epoch, final_root);
    }

    pub fn final_root(&self, epoch: u64) -> Option<&Digest> {
        self.final_roots.get(&epoch)
    }

    pub fn is_claimed(&self, epoch: u64, did: &Did) -> bool {
        self.claimed.contains(&(epoch, did.clone()))
    }

    /// Validates a claim without recording it.
    pub fn check(&self, alg: HashAlgorithm, issuer: &Did, epoch: u64, proof: &MerkleProof) -> Result<Amount, ClaimError> {
        let root = self.final_roots.get(&epoch).ok_or(ClaimError::EpochNotRevealed(epoch))?;
        if self.is_claimed(epoch, issuer) {
            return Err(ClaimError::AlreadyClaimed(issuer.clone(), epoch));
        }
        match parse_balance_leaf(&proof.leaf) {
            Some((did, amount)) if &did == issuer && proof.verify(alg, root) => Ok(amount),
            _ => Err(ClaimError::ProofInvalid(epoch)),
        }
    }

    /// Pays the issuer's revealed balance for `epoch` at most once.
    pub fn claim_payment(&mut self, alg: HashAlgorithm, issuer: &Did, epoch: u64, proof: &MerkleProof) -> Result<Amount, ClaimError> {
        let amount = self.check(alg, issuer, epoch, proof)?;
        self.claimed.insert((epoch, issuer.clone()));
        Ok(amount)
    }
}
