//! Per-epoch commitments to the edge set: canonical edge encoding, the edge
//! Merkle tree, membership proofs for path edges, and the multi-signed root
//! published to an append-only commitment log.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ed25519_dalek::{Signature, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{TrustEdge, TrustGraph, TrustPath};
use crate::hash::{Digest, HashAlgorithm};
use crate::identity::{self, signature_from_hex, signature_to_hex};
use crate::merkle::{MerkleProof, MerkleTree};

#[derive(Debug, Error)]
pub enum CommitmentError {
    #[error("edge `{0}` is not part of the committed snapshot")]
    EdgeNotCommitted(String),
    #[error("{valid} valid signatures, quorum is {quorum}")]
    InsufficientSignatures { valid: usize, quorum: usize },
    #[error("epoch {0} is already committed")]
    DuplicateEpoch(u64),
    #[error("epoch {epoch} is older than the latest committed epoch {latest}")]
    EpochRegression { epoch: u64, latest: u64 },
    #[error("invalid maintainer id `{0}`")]
    BadMaintainerId(String),
    #[error("commitment log line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `source-destination:score` with the score always rendered to four
/// decimals. Injective because DIDs cannot contain `-` or `:`.
pub fn canonical_encode(edge: &TrustEdge) -> String {
    format!("{}-{}:{}", edge.source, edge.destination, edge.weight)
}

pub fn build_edge_tree(graph: &TrustGraph, algorithm: HashAlgorithm) -> MerkleTree {
    MerkleTree::from_leaves(algorithm, graph.edges().map(|e| canonical_encode(&e)))
}

/// One proof per path edge, in path order.
pub fn prove_edges(tree: &MerkleTree, path: &TrustPath) -> Result<Vec<MerkleProof>, CommitmentError> {
    path.edges
        .iter()
        .map(|e| {
            let enc = canonical_encode(e);
            tree.prove(&enc).ok_or(CommitmentError::EdgeNotCommitted(enc))
        })
        .collect()
}

pub fn verify_edge_proof(algorithm: HashAlgorithm, root: &Digest, proof: &MerkleProof) -> bool {
    proof.verify(algorithm, root)
}

/// Maintainer identifier. Restricted to `[A-Za-z0-9_.-]` so that it can
/// appear unescaped in the line-oriented logs.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MaintainerId(String);

impl MaintainerId {
    pub fn new(s: impl Into<String>) -> Result<Self, CommitmentError> {
        let s = s.into();
        if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c)) {
            return Err(CommitmentError::BadMaintainerId(s));
        }
        Ok(MaintainerId(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for MaintainerId {
    type Error = CommitmentError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        MaintainerId::new(s)
    }
}

impl From<MaintainerId> for String {
    fn from(m: MaintainerId) -> String {
        m.0
    }
}

impl fmt::Display for MaintainerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for MaintainerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Smallest count that is at least two thirds of `n`.
pub fn quorum_size(n: usize) -> usize {
    (2 * n).div_ceil(3)
}

/// The fixed, publicly known set of maintainers and their keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaintainerSet {
    members: BTreeMap<MaintainerId, VerifyingKey>,
    quorum: usize,
}

impl MaintainerSet {
    /// Uses the two-thirds quorum rule.
    pub fn new(members: impl IntoIterator<Item = (MaintainerId, VerifyingKey)>) -> Self {
        let members: BTreeMap<_, _> = members.into_iter().collect();
        let quorum = quorum_size(members.len());
        MaintainerSet { members, quorum }
    }

    /// Overrides the quorum; clamped to `1..=len`.
    pub fn with_quorum(mut self, quorum: usize) -> Self {
        self.quorum = quorum.clamp(1, self.members.len().max(1));
        self
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn key(&self, id: &MaintainerId) -> Option<&VerifyingKey> {
        self.members.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &MaintainerId> {
        self.members.keys()
    }
}

/// A maintainer's signing identity.
#[derive(Clone)]
pub struct MaintainerKey {
    pub id: MaintainerId,
    pub signing_key: SigningKey,
}

impl MaintainerKey {
    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing_key.verifying_key()
    }
}

impl fmt::Debug for MaintainerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaintainerKey").field("id", &self.id).finish_non_exhaustive()
    }
}

/// Bytes each maintainer signs for an epoch root.
pub fn commitment_message(epoch: u64, root: &Digest) -> Vec<u8> {
    let mut msg = b"trustreg/epoch-root/v1".to_vec();
    msg.extend_from_slice(&epoch.to_be_bytes());
    msg.extend_from_slice(root.as_bytes());
    msg
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochCommitment {
    pub epoch: u64,
    pub root: Digest,
    #[serde(with = "signature_map")]
    pub signatures: BTreeMap<MaintainerId, Signature>,
}

impl EpochCommitment {
    pub fn sign(epoch: u64, root: Digest, signers: &[&MaintainerKey]) -> Self {
        let msg = commitment_message(epoch, &root);
        let signatures = signers
            .iter()
            .map(|k| (k.id.clone(), identity::sign(&k.signing_key, &msg)))
            .collect();
        EpochCommitment { epoch, root, signatures }
    }

    /// Number of signatures from members of `set` that verify.
    pub fn valid_signatures(&self, set: &MaintainerSet) -> usize {
        let msg = commitment_message(self.epoch, &self.root);
        self.signatures
            .iter()
            .filter(|(id, sig)| set.key(id).is_some_and(|k| identity::verify(k, &msg, sig)))
            .count()
    }

    pub fn check_quorum(&self, set: &MaintainerSet) -> Result<(), CommitmentError> {
        let valid = self.valid_signatures(set);
        if valid < set.quorum() || set.is_empty() {
            return Err(CommitmentError::InsufficientSignatures { valid, quorum: set.quorum() });
        }
        Ok(())
    }

    /// `epoch root id:sig id:sig ...`, hex lowercase.
    pub fn to_line(&self) -> String {
        let mut line = format!("{} {}", self.epoch, self.root.to_hex());
        for (id, sig) in &self.signatures {
            line.push(' ');
            line.push_str(id.as_str());
            line.push(':');
            line.push_str(&signature_to_hex(sig));
        }
        line
    }

    pub fn from_line(line: &str, line_no: usize) -> Result<Self, CommitmentError> {
        let bad = |reason: String| CommitmentError::Malformed { line: line_no, reason };
        let mut fields = line.split(' ');
        let epoch = fields
            .next()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| bad("bad epoch".into()))?;
        let root = fields
            .next()
            .and_then(|s| Digest::from_hex(s).ok())
            .ok_or_else(|| bad("bad root".into()))?;
        let mut signatures = BTreeMap::new();
        for f in fields {
            let (id, sig) = f.split_once(':').ok_or_else(|| bad(format!("bad signature field `{f}`")))?;
            let id = MaintainerId::new(id).map_err(|e| bad(e.to_string()))?;
            let sig = signature_from_hex(sig).map_err(|e| bad(e.to_string()))?;
            if signatures.insert(id, sig).is_some() {
                return Err(bad("duplicate maintainer".into()));
            }
        }
        let c = EpochCommitment { epoch, root, signatures };
        if c.to_line() != line {
            return Err(bad("non-canonical record".into()));
        }
        Ok(c)
    }
}

/// Public, append-only record of epoch commitments.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommitmentLog {
    entries: BTreeMap<u64, EpochCommitment>,
}

impl CommitmentLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, commitment: EpochCommitment) -> Result<(), CommitmentError> {
        if self.entries.contains_key(&commitment.epoch) {
            return Err(CommitmentError::DuplicateEpoch(commitment.epoch));
        }
        if let Some(&latest) = self.entries.keys().next_back() {
            if commitment.epoch < latest {
                return Err(CommitmentError::EpochRegression { epoch: commitment.epoch, latest });
            }
        }
        self.entries.insert(commitment.epoch, commitment);
        Ok(())
    }

    pub fn get(&self, epoch: u64) -> Option<&EpochCommitment> {
        self.entries.get(&epoch)
    }

    pub fn latest(&self) -> Option<&EpochCommitment> {
        self.entries.values().next_back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EpochCommitment> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.entries.values().map(|c| c.to_line() + "\n").collect()
    }

    /// Parses a log and re-checks every record's quorum against `set`.
    pub fn from_text(text: &str, set: &MaintainerSet) -> Result<Self, CommitmentError> {
        let mut log = CommitmentLog::new();
        for (i, line) in text.lines().enumerate() {
            let c = EpochCommitment::from_line(line, i + 1)?;
            c.check_quorum(set).map_err(|e| CommitmentError::Malformed { line: i + 1, reason: e.to_string() })?;
            log.append(c)?;
        }
        Ok(log)
    }

    pub fn load(path: &Path, set: &MaintainerSet) -> Result<Self, CommitmentError> {
        let file = File::open(path)?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::from_text(&text, set)
    }

    pub fn append_to_file(path: &Path, commitment: &EpochCommitment) -> Result<(), CommitmentError> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", commitment.to_line())?;
        Ok(())
    }
}

/// Signs `root` for `epoch` with the available maintainers and appends the
/// commitment to `log` once a quorum of valid signatures is present.
pub fn commit_epoch(
    log: &mut CommitmentLog,
    epoch: u64,
    root: Digest,
    signers: &[&MaintainerKey],
    set: &MaintainerSet,
) -> Result<EpochCommitment, CommitmentError> {
    if log.get(epoch).is_some() {
        return Err(CommitmentError::DuplicateEpoch(epoch));
    }
    let commitment = EpochCommitment::sign(epoch, root, signers);
    commitment.check_quorum(set)?;
    log.append(commitment.clone())?;
    Ok(commitment)
}

mod signature_map {
    use std::collections::BTreeMap;

    use ed25519_dalek::Signature;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::MaintainerId;
    use crate::identity::{signature_from_hex, signature_to_hex};

    pub fn serialize<S: Serializer>(m: &BTreeMap<MaintainerId, Signature>, s: S) -> Result<S::Ok, S::Error> {
        let hexed: BTreeMap<&str, String> = m.iter().map(|(k, v)| (k.as_str(), signature_to_hex(v))).collect();
        hexed.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<MaintainerId, Signature>, D::Error> {
        let hexed = BTreeMap::<String, String>::deserialize(d)?;
        hexed
            .into_iter()
            .map(|(k, v)| {
                let id = MaintainerId::new(k).map_err(serde::de::Error::custom)?;
                let sig = signature_from_hex(&v).map_err(serde::de::Error::custom)?;
                Ok((id, sig))
            })
            .collect()
    }
}
