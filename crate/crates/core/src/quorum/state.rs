//! The deterministic state machine every maintainer replica runs. Events are
//! applied strictly in log order; two replicas that applied the same prefix
//! hold identical state.

use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::request::{registration_challenge, Payload, SignedRequest};
use crate::commitment::{build_edge_tree, prove_edges, CommitmentLog, EpochCommitment, MaintainerId, MaintainerSet};
use crate::config::ServiceConfig;
use crate::fixed::Fixed4;
use crate::graph::{GraphError, PathOutcome, PathQuery, TrustEdge, TrustGraph, TrustPath};
use crate::hash::{Digest, HashAlgorithm};
use crate::identity::{Did, IssuerId};
use crate::ledger::{
    Amount, Challenge, ChallengeOutcome, FeeDistribution, Ledger, LedgerError, ReceiptId, SlashReport, StakeAccount,
};
use crate::merkle::{MerkleProof, MerkleTree};
use crate::settlement::{
    prove_settlement, BalanceTree, ClaimBook, ClaimError, SettlementPrivateInputs, SettlementPublicInputs,
    SettlementTranscript,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("caller `{0}` is unknown")]
    UnknownCaller(String),
    #[error("signature does not verify for `{0}`")]
    BadSignature(String),
    #[error("nonce {got} is not above the last accepted nonce {last}")]
    StaleNonce { last: u64, got: u64 },
    #[error("`{0}` is already enrolled")]
    AlreadyEnrolled(String),
    #[error("only maintainers may submit `{0}`")]
    MaintainerOnly(&'static str),
    #[error("maintainers may not submit `{0}`")]
    NotForMaintainers(&'static str),
    #[error("no escrowed payment {0} for this caller")]
    PaymentMissing(ReceiptId),
    #[error("`{verifier}` has no logged query naming `{accused}`")]
    NotAChallengeEligibleVerifier { verifier: Did, accused: Did },
    #[error("challenge {0} does not exist")]
    UnknownChallenge(u64),
    #[error("challenge {0} is already decided")]
    ChallengeClosed(u64),
    #[error("maintainer `{0}` already voted")]
    DuplicateVote(MaintainerId),
    #[error("commitment is for epoch {got}, current epoch is {expected}")]
    WrongEpoch { expected: u64, got: u64 },
    #[error("{valid} valid commitment signatures, quorum is {quorum}")]
    InsufficientSignatures { valid: usize, quorum: usize },
    #[error("no divergence-free quorum: best root has {agreeing} of {quorum} required replicas")]
    NoQuorum { agreeing: usize, quorum: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ledger(LedgerError),
    #[error(transparent)]
    Claim(#[from] ClaimError),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl From<LedgerError> for RegistryError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::PaymentMissing(r) => RegistryError::PaymentMissing(r),
            LedgerError::Graph(g) => RegistryError::Graph(g),
            other => RegistryError::Ledger(other),
        }
    }
}

impl RegistryError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::UnknownCaller(_) => "UnknownCaller",
            RegistryError::BadSignature(_) => "BadSignature",
            RegistryError::StaleNonce { .. } => "StaleNonce",
            RegistryError::AlreadyEnrolled(_) => "AlreadyEnrolled",
            RegistryError::MaintainerOnly(_) => "MaintainerOnly",
            RegistryError::NotForMaintainers(_) => "NotForMaintainers",
            RegistryError::PaymentMissing(_) => "PaymentMissing",
            RegistryError::NotAChallengeEligibleVerifier { .. } => "NotAChallengeEligibleVerifier",
            RegistryError::UnknownChallenge(_) => "UnknownChallenge",
            RegistryError::ChallengeClosed(_) => "ChallengeClosed",
            RegistryError::DuplicateVote(_) => "DuplicateVote",
            RegistryError::WrongEpoch { .. } => "WrongEpoch",
            RegistryError::InsufficientSignatures { .. } => "InsufficientSignatures",
            RegistryError::NoQuorum { .. } => "NoQuorum",
            RegistryError::Graph(g) => match g {
                GraphError::DuplicateIssuer(_) => "DuplicateIssuer",
                GraphError::UnknownIssuer(_) => "UnknownIssuer",
                GraphError::SelfEdge(_) => "SelfEdge",
                GraphError::UnknownEdge(..) => "UnknownEdge",
                GraphError::InvalidThreshold(_) => "InvalidThreshold",
                GraphError::InvalidDepth => "InvalidDepth",
                GraphError::EmptySources => "EmptySources",
                GraphError::BrokenChain(_) => "BrokenChain",
            },
            RegistryError::Ledger(l) => match l {
                LedgerError::InsufficientStake { .. } => "InsufficientStake",
                LedgerError::BadKeyProof(_) => "BadKeyProof",
                LedgerError::AlreadyRegistered(_) => "AlreadyRegistered",
                LedgerError::UnknownIssuer(_) => "UnknownIssuer",
                LedgerError::InsufficientFunds { .. } => "InsufficientFunds",
                LedgerError::ReserveExhausted { .. } => "ReserveExhausted",
                LedgerError::PaymentMissing(_) => "PaymentMissing",
                LedgerError::ChallengeNotUpheld(_) => "ChallengeNotUpheld",
                LedgerError::UnknownAccused(_) => "UnknownAccused",
                LedgerError::InsufficientRewards { .. } => "InsufficientRewards",
                LedgerError::ZeroAmount => "ZeroAmount",
                LedgerError::Graph(_) => "GraphError",
            },
            RegistryError::Claim(c) => match c {
                ClaimError::AlreadyClaimed(..) => "AlreadyClaimed",
                ClaimError::ProofInvalid(_) => "ProofInvalid",
                ClaimError::EpochNotRevealed(_) => "EpochNotRevealed",
            },
            RegistryError::Internal(_) => "Internal",
        }
    }

    /// True for envelope failures: such requests never enter the log.
    pub fn is_rejection(&self) -> bool {
        matches!(
            self,
            RegistryError::UnknownCaller(_)
                | RegistryError::BadSignature(_)
                | RegistryError::StaleNonce { .. }
                | RegistryError::MaintainerOnly(_)
                | RegistryError::NotForMaintainers(_)
        )
    }
}

/// A path answer together with everything a verifier needs to check it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAnswer {
    pub epoch: u64,
    pub root: Digest,
    pub path: TrustPath,
    pub proofs: Vec<MerkleProof>,
    pub distribution: FeeDistribution,
    pub transcript: SettlementTranscript,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Enrolled { did: Did },
    Funded { did: Did, amount: Amount },
    Escrowed { receipt: ReceiptId, amount: Amount },
    Registered { account: StakeAccount },
    EdgeUpserted { edge: TrustEdge, previous: Option<Fixed4> },
    EdgeRemoved { source: Did, destination: Did },
    Answered(Box<QueryAnswer>),
    NoPath { searched_depth: u32, refunded: Amount },
    ChallengeOpened { challenge: Challenge },
    Voted { challenge: Challenge, slash: Option<SlashReport> },
    ToppedUp { account: StakeAccount },
    Claimed { did: Did, epoch: u64, amount: Amount },
    EpochCommitted { epoch: u64, root: Digest, local_root: Digest },
}

/// Committed edge set the current epoch's queries are answered against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub epoch: u64,
    pub tree: MerkleTree,
    /// Committed graph minus issuers deactivated since the commitment.
    pub view: TrustGraph,
}

/// Everything recorded for a closed epoch's settlements.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSettlement {
    pub epoch: u64,
    pub start_root: Digest,
    pub transcripts: Vec<SettlementTranscript>,
    pub reveals: Vec<SettlementPrivateInputs>,
    pub final_balances: BTreeMap<Did, Amount>,
}

/// Roots that equal replicas must agree on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRoots {
    pub graph: Digest,
    pub ledger: Digest,
    pub balances: Digest,
}

#[derive(Clone, Debug)]
pub struct RegistryState {
    hash: HashAlgorithm,
    max_depth: u32,
    registry_id: Digest,
    maintainers: MaintainerSet,
    directory: BTreeMap<Did, VerifyingKey>,
    nonces: BTreeMap<String, u64>,
    graph: TrustGraph,
    ledger: Ledger,
    snapshot: Option<Snapshot>,
    commitments: CommitmentLog,
    epoch: u64,
    balances: BalanceTree,
    epoch_start_root: Digest,
    open_settlements: Vec<(SettlementTranscript, SettlementPrivateInputs)>,
    closed: BTreeMap<u64, EpochSettlement>,
    claims: ClaimBook,
    eligible: BTreeSet<(Did, Did)>,
    challenges: BTreeMap<u64, Challenge>,
    next_challenge: u64,
    applied: u64,
}

impl RegistryState {
    pub fn genesis(config: &ServiceConfig) -> Self {
        let balances = BalanceTree::empty(config.hash);
        RegistryState {
            hash: config.hash,
            max_depth: config.max_depth,
            registry_id: config.registry_id(),
            maintainers: config.maintainer_set(),
            directory: BTreeMap::new(),
            nonces: BTreeMap::new(),
            graph: TrustGraph::new(),
            ledger: Ledger::new(config.ledger_params(), config.supply),
            snapshot: None,
            commitments: CommitmentLog::new(),
            epoch: 0,
            epoch_start_root: balances.root(),
            balances,
            open_settlements: Vec::new(),
            closed: BTreeMap::new(),
            claims: ClaimBook::new(),
            eligible: BTreeSet::new(),
            challenges: BTreeMap::new(),
            next_challenge: 0,
            applied: 0,
        }
    }

    pub fn hash_algorithm(&self) -> HashAlgorithm {
        self.hash
    }

    pub fn registry_id(&self) -> &Digest {
        &self.registry_id
    }

    pub fn maintainers(&self) -> &MaintainerSet {
        &self.maintainers
    }

    pub fn graph(&self) -> &TrustGraph {
        &self.graph
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn snapshot(&self) -> Option<&Snapshot> {
        self.snapshot.as_ref()
    }

    pub fn commitments(&self) -> &CommitmentLog {
        &self.commitments
    }

    /// The epoch currently accumulating events.
    pub fn current_epoch(&self) -> u64 {
        self.epoch
    }

    pub fn balances(&self) -> &BalanceTree {
        &self.balances
    }

    pub fn closed_epoch(&self, epoch: u64) -> Option<&EpochSettlement> {
        self.closed.get(&epoch)
    }

    pub fn claims(&self) -> &ClaimBook {
        &self.claims
    }

    pub fn challenge(&self, id: u64) -> Option<&Challenge> {
        self.challenges.get(&id)
    }

    pub fn challenges(&self) -> impl Iterator<Item = &Challenge> {
        self.challenges.values()
    }

    /// Published transcripts of the open epoch. Private inputs stay with the
    /// maintainers until the epoch closes.
    pub fn open_transcripts(&self) -> impl Iterator<Item = &SettlementTranscript> {
        self.open_settlements.iter().map(|(t, _)| t)
    }

    pub fn applied(&self) -> u64 {
        self.applied
    }

    pub fn last_nonce(&self, caller: &str) -> u64 {
        self.nonces.get(caller).copied().unwrap_or(0)
    }

    pub fn key_of(&self, did: &Did) -> Option<&VerifyingKey> {
        self.directory.get(did)
    }

    pub fn registration_challenge(&self, did: &Did) -> Vec<u8> {
        registration_challenge(&self.registry_id, did)
    }

    pub fn graph_root(&self) -> Digest {
        build_edge_tree(&self.graph, self.hash).root()
    }

    pub fn roots(&self) -> StateRoots {
        StateRoots { graph: self.graph_root(), ledger: self.ledger.digest(self.hash), balances: self.balances.root() }
    }

    /// Direct access to the live graph, bypassing the log. Only for fault
    /// injection in simulations.
    pub fn tamper_graph(&mut self) -> &mut TrustGraph {
        &mut self.graph
    }

    /// Checks caller, signature and nonce without changing anything.
    pub fn authenticate(&self, req: &SignedRequest) -> Result<(), RegistryError> {
        let key = if req.payload.is_maintainer_only() {
            let id = MaintainerId::new(req.caller.clone())
                .map_err(|_| RegistryError::MaintainerOnly(req.payload.kind()))?;
            *self.maintainers.key(&id).ok_or(RegistryError::MaintainerOnly(req.payload.kind()))?
        } else {
            let did = Did::new(req.caller.clone()).map_err(|_| RegistryError::UnknownCaller(req.caller.clone()))?;
            match (self.directory.get(&did), &req.payload) {
                (Some(k), _) => *k,
                (None, Payload::Enroll { verification_key }) => *verification_key,
                (None, _) => return Err(RegistryError::UnknownCaller(req.caller.clone())),
            }
        };
        if !req.verify(&key) {
            return Err(RegistryError::BadSignature(req.caller.clone()));
        }
        let last = self.last_nonce(&req.caller);
        if req.nonce <= last {
            return Err(RegistryError::StaleNonce { last, got: req.nonce });
        }
        Ok(())
    }

    /// Applies the next logged event. Envelope failures leave the state
    /// untouched. Once authenticated, the nonce is consumed even if the
    /// operation itself fails; a failed operation changes nothing else.
    pub fn apply(&mut self, req: &SignedRequest) -> Result<Outcome, RegistryError> {
        self.authenticate(req)?;
        self.nonces.insert(req.caller.clone(), req.nonce);
        let index = self.applied;
        self.applied += 1;
        self.execute(index, req)
    }

    fn execute(&mut self, index: u64, req: &SignedRequest) -> Result<Outcome, RegistryError> {
        if req.payload.is_maintainer_only() {
            let maintainer = MaintainerId::new(req.caller.clone()).expect("authenticated");
            return match &req.payload {
                Payload::Vote { challenge, vote } => self.record_vote(maintainer, *challenge, *vote),
                Payload::EpochCommit { commitment } => self.commit(commitment),
                _ => unreachable!("maintainer-only payloads"),
            };
        }
        let caller = Did::new(req.caller.clone()).expect("authenticated");
        match &req.payload {
            Payload::Enroll { verification_key } => {
                if self.directory.contains_key(&caller) {
                    return Err(RegistryError::AlreadyEnrolled(req.caller.clone()));
                }
                self.directory.insert(caller.clone(), *verification_key);
                Ok(Outcome::Enrolled { did: caller })
            }
            Payload::Faucet { amount } => {
                self.ledger.faucet(&caller, *amount)?;
                Ok(Outcome::Funded { did: caller, amount: *amount })
            }
            Payload::Escrow => {
                let receipt = self.ledger.escrow_fee(&caller)?;
                Ok(Outcome::Escrowed { receipt, amount: self.ledger.params().fee })
            }
            Payload::Register { stake, key_proof } => {
                let issuer = IssuerId::new(caller.clone(), self.directory[&caller]);
                let challenge = self.registration_challenge(&caller);
                let account = self
                    .ledger
                    .register_issuer(&mut self.graph, issuer, *stake, &challenge, key_proof)?
                    .clone();
                Ok(Outcome::Registered { account })
            }
            Payload::UpsertEdge { destination, weight } => {
                self.require_active(&caller)?;
                self.require_active(destination)?;
                let edge = TrustEdge::new(caller, destination.clone(), *weight);
                let previous = self.graph.upsert_edge(edge.clone())?.map(|w| w.value());
                Ok(Outcome::EdgeUpserted { edge, previous })
            }
            Payload::RemoveEdge { destination } => {
                self.graph.remove_edge(&caller, destination)?;
                Ok(Outcome::EdgeRemoved { source: caller, destination: destination.clone() })
            }
            Payload::PathQuery { trusted_sources, credential_issuer, threshold, query_nonce, receipt } => {
                let query = PathQuery {
                    trusted_sources: trusted_sources.clone(),
                    credential_issuer: credential_issuer.clone(),
                    threshold: *threshold,
                    query_nonce: *query_nonce,
                };
                self.answer_query(index, &caller, &query, *receipt)
            }
            Payload::Challenge { accused } => {
                if !self.eligible.remove(&(caller.clone(), accused.clone())) {
                    return Err(RegistryError::NotAChallengeEligibleVerifier {
                        verifier: caller,
                        accused: accused.clone(),
                    });
                }
                let id = self.next_challenge;
                self.next_challenge += 1;
                let challenge = Challenge::new(id, caller, accused.clone(), self.epoch);
                self.challenges.insert(id, challenge.clone());
                Ok(Outcome::ChallengeOpened { challenge })
            }
            Payload::TopUp { amount } => {
                let account = self.ledger.top_up(&mut self.graph, &caller, *amount)?.clone();
                Ok(Outcome::ToppedUp { account })
            }
            Payload::Claim { epoch, proof } => {
                let amount = self.claims.check(self.hash, &caller, *epoch, proof)?;
                self.ledger.withdraw_rewards(&caller, amount)?;
                self.claims.claim_payment(self.hash, &caller, *epoch, proof)?;
                Ok(Outcome::Claimed { did: caller, epoch: *epoch, amount })
            }
            Payload::Vote { .. } | Payload::EpochCommit { .. } => unreachable!("handled above"),
        }
    }

    fn require_active(&self, did: &Did) -> Result<(), RegistryError> {
        if self.graph.contains(did) {
            Ok(())
        } else {
            Err(RegistryError::Graph(GraphError::UnknownIssuer(did.clone())))
        }
    }

    /// Answers against the last committed snapshot so that every returned
    /// edge carries a proof against a published root. No path refunds the
    /// escrowed fee; a found path distributes it and extends the epoch's
    /// settlement chain.
    fn answer_query(&mut self, index: u64, verifier: &Did, query: &PathQuery, receipt: ReceiptId) -> Result<Outcome, RegistryError> {
        let fee = self.ledger.check_escrow(receipt, verifier)?.amount;
        let Some(snapshot) = &self.snapshot else {
            let refunded = self.ledger.refund(receipt, verifier)?;
            return Ok(Outcome::NoPath { searched_depth: 0, refunded });
        };
        let path = match snapshot.view.find_trusted_path(query, self.max_depth)? {
            PathOutcome::Found(p) => p,
            PathOutcome::NoPath { searched_depth } => {
                let refunded = self.ledger.refund(receipt, verifier)?;
                return Ok(Outcome::NoPath { searched_depth, refunded });
            }
        };
        let proofs = prove_edges(&snapshot.tree, &path).map_err(|e| RegistryError::Internal(e.to_string()))?;
        let root = snapshot.tree.root();
        let epoch = snapshot.epoch;

        let distribution = self.ledger.distribute_fee(receipt, verifier, &path, &query.credential_issuer)?;
        let previous = self.balances.clone();
        let updated = previous.credited(distribution.credits.iter().map(|(d, a)| (d, *a)));

        let source = path.edges.first().map_or(&query.credential_issuer, |e| &e.source).clone();
        let private = SettlementPrivateInputs {
            edges: path.edges.clone(),
            balances: previous.entries().clone(),
            proof_edges: proofs.clone(),
            blinding: self.blinding(index, &query.query_nonce),
        };
        let public = SettlementPublicInputs {
            source,
            destination: query.credential_issuer.clone(),
            root_graph: root,
            root_balance_previous: previous.root(),
            root_balance_updated: updated.root(),
            threshold: query.threshold,
            fee,
            fee_split: self.ledger.params().fee_split,
        };
        let transcript = prove_settlement(self.hash, &private, public);
        self.balances = updated;
        self.open_settlements.push((transcript.clone(), private));
        self.eligible.insert((verifier.clone(), query.credential_issuer.clone()));
        Ok(Outcome::Answered(Box::new(QueryAnswer { epoch, root, path, proofs, distribution, transcript })))
    }

    fn blinding(&self, index: u64, query_nonce: &[u8; 32]) -> [u8; 32] {
        self.hash
            .digest_parts(&[b"trustreg/blinding/v1", self.registry_id.as_bytes(), &index.to_be_bytes(), query_nonce])
            .0
    }

    fn record_vote(&mut self, maintainer: MaintainerId, id: u64, vote: crate::ledger::Vote) -> Result<Outcome, RegistryError> {
        let n = self.maintainers.len();
        let challenge = self.challenges.get(&id).ok_or(RegistryError::UnknownChallenge(id))?;
        if challenge.outcome != ChallengeOutcome::Pending {
            return Err(RegistryError::ChallengeClosed(id));
        }
        if challenge.votes.contains_key(&maintainer) {
            return Err(RegistryError::DuplicateVote(maintainer));
        }
        let mut challenge = challenge.clone();
        challenge.votes.insert(maintainer, vote);
        let slash = if challenge.tally(n) == ChallengeOutcome::Upheld {
            let report = self.ledger.apply_challenge_outcome(&mut self.graph, &challenge)?;
            if let Some(s) = &mut self.snapshot {
                for did in &report.deactivated {
                    if s.view.contains(did) {
                        s.view.remove_issuer(did)?;
                    }
                }
            }
            Some(report)
        } else {
            None
        };
        self.challenges.insert(id, challenge.clone());
        Ok(Outcome::Voted { challenge, slash })
    }

    /// Adopts a published epoch commitment: snapshots the live graph for the
    /// next epoch's queries and closes the epoch's balance accounting.
    fn commit(&mut self, commitment: &EpochCommitment) -> Result<Outcome, RegistryError> {
        if commitment.epoch != self.epoch {
            return Err(RegistryError::WrongEpoch { expected: self.epoch, got: commitment.epoch });
        }
        let valid = commitment.valid_signatures(&self.maintainers);
        if valid < self.maintainers.quorum() {
            return Err(RegistryError::InsufficientSignatures { valid, quorum: self.maintainers.quorum() });
        }
        self.commitments
            .append(commitment.clone())
            .map_err(|e| RegistryError::Internal(e.to_string()))?;
        let tree = build_edge_tree(&self.graph, self.hash);
        let local_root = tree.root();
        self.snapshot = Some(Snapshot { epoch: commitment.epoch, tree, view: self.graph.clone() });

        let (transcripts, reveals) = std::mem::take(&mut self.open_settlements).into_iter().unzip();
        let final_balances = self.balances.entries().clone();
        self.claims.reveal(commitment.epoch, self.balances.root());
        self.closed.insert(
            commitment.epoch,
            EpochSettlement {
                epoch: commitment.epoch,
                start_root: self.epoch_start_root,
                transcripts,
                reveals,
                final_balances,
            },
        );
        self.balances = BalanceTree::empty(self.hash);
        self.epoch_start_root = self.balances.root();
        self.epoch += 1;
        Ok(Outcome::EpochCommitted { epoch: commitment.epoch, root: commitment.root, local_root })
    }
}
