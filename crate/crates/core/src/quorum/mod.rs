//! Maintainer replication: signed requests, the per-replica state machine,
//! the ordered event log and the simulated maintainer cluster.

mod cluster;
mod eventlog;
mod request;
mod state;

pub use cluster::{Cluster, EpochClock, FixedVote, Replica, ScriptedVotes, VotePolicy, COMMITMENTS_FILE, EVENTS_FILE};
pub use eventlog::{replay, replay_text, EventLog, EventRecord, LogError, Replay};
pub use request::{registration_challenge, signing_message, Payload, SignedRequest};
pub use state::{
    EpochSettlement, Outcome, QueryAnswer, RegistryError, RegistryState, Snapshot, StateRoots,
};

use ed25519_dalek::SigningKey;

use crate::hash::Digest;
use crate::identity::{self, derive_signing_key, Did};
use crate::ledger::Amount;

/// Client-side helper that signs requests for one DID with increasing
/// nonces.
#[derive(Clone, Debug)]
pub struct Participant {
    pub did: Did,
    pub key: SigningKey,
    next_nonce: u64,
}

impl Participant {
    pub fn new(did: Did, key: SigningKey) -> Self {
        Participant { did, key, next_nonce: 1 }
    }

    /// Key derived from `seed` and the DID, as the simulations do.
    pub fn derived(seed: u64, did: &str) -> Self {
        let did = Did::new(did).expect("valid did");
        let key = derive_signing_key(seed, &format!("participant/{did}"));
        Self::new(did, key)
    }

    pub fn next_nonce(&self) -> u64 {
        self.next_nonce
    }

    /// Resumes signing after `last`, the caller's last accepted nonce.
    pub fn resume_after(&mut self, last: u64) {
        self.next_nonce = last + 1;
    }

    pub fn request(&mut self, payload: Payload) -> SignedRequest {
        let req = SignedRequest::sign(self.did.as_str(), payload, self.next_nonce, &self.key);
        self.next_nonce += 1;
        req
    }

    pub fn enroll(&mut self) -> SignedRequest {
        self.request(Payload::Enroll { verification_key: self.key.verifying_key() })
    }

    pub fn register(&mut self, registry_id: &Digest, stake: Amount) -> SignedRequest {
        let challenge = registration_challenge(registry_id, &self.did);
        let key_proof = identity::sign(&self.key, &challenge);
        self.request(Payload::Register { stake, key_proof })
    }
}
