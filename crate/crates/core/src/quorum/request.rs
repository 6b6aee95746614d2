//! DID-signed requests that relays forward into the maintainers' event log.

use std::collections::BTreeSet;

use ed25519_dalek::{Signature, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::commitment::EpochCommitment;
use crate::fixed::{Fixed4, TrustWeight};
use crate::hash::Digest;
use crate::identity::{self, Did};
use crate::ledger::{Amount, ReceiptId, Vote};
use crate::merkle::MerkleProof;

/// Operation carried by a request. Serialized as canonical JSON (fixed
/// field order, externally tagged); signatures cover those bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    /// Publishes the caller's DID key so later requests can be checked.
    Enroll {
        #[serde(with = "identity::verifying_key_hex")]
        verification_key: VerifyingKey,
    },
    /// Draws simulation tokens from the faucet reserve.
    Faucet { amount: Amount },
    /// Escrows one verification fee and yields a receipt.
    Escrow,
    Register {
        stake: Amount,
        #[serde(with = "identity::signature_hex")]
        key_proof: Signature,
    },
    UpsertEdge { destination: Did, weight: TrustWeight },
    RemoveEdge { destination: Did },
    PathQuery {
        trusted_sources: BTreeSet<Did>,
        credential_issuer: Did,
        threshold: Fixed4,
        #[serde(with = "crate::graph::nonce_hex")]
        query_nonce: [u8; 32],
        receipt: ReceiptId,
    },
    Challenge { accused: Did },
    TopUp { amount: Amount },
    Claim { epoch: u64, proof: MerkleProof },
    /// Maintainer-only.
    Vote { challenge: u64, vote: Vote },
    /// Maintainer-only.
    EpochCommit { commitment: EpochCommitment },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Enroll { .. } => "enroll",
            Payload::Faucet { .. } => "faucet",
            Payload::Escrow => "escrow",
            Payload::Register { .. } => "register",
            Payload::UpsertEdge { .. } => "upsert_edge",
            Payload::RemoveEdge { .. } => "remove_edge",
            Payload::PathQuery { .. } => "path_query",
            Payload::Challenge { .. } => "challenge",
            Payload::TopUp { .. } => "top_up",
            Payload::Claim { .. } => "claim",
            Payload::Vote { .. } => "vote",
            Payload::EpochCommit { .. } => "epoch_commit",
        }
    }

    pub fn is_maintainer_only(&self) -> bool {
        matches!(self, Payload::Vote { .. } | Payload::EpochCommit { .. })
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload serializes")
    }
}

/// Message covered by a request signature.
pub fn signing_message(caller: &str, payload_bytes: &[u8], nonce: u64) -> Vec<u8> {
    let mut msg = b"trustreg/request/v1\n".to_vec();
    msg.extend_from_slice(caller.as_bytes());
    msg.push(b'\n');
    msg.extend_from_slice(payload_bytes);
    msg.push(b'\n');
    msg.extend_from_slice(nonce.to_string().as_bytes());
    msg
}

/// Bytes an issuer signs to prove control of its key at registration.
pub fn registration_challenge(registry_id: &Digest, did: &Did) -> Vec<u8> {
    let mut msg = b"trustreg/register/v1\n".to_vec();
    msg.extend_from_slice(registry_id.as_bytes());
    msg.extend_from_slice(did.as_str().as_bytes());
    msg
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedRequest {
    /// A DID, or a maintainer id for maintainer-only payloads.
    pub caller: String,
    pub payload: Payload,
    /// Must exceed the caller's last accepted nonce.
    pub nonce: u64,
    #[serde(with = "identity::signature_hex")]
    pub signature: Signature,
}

impl SignedRequest {
    pub fn sign(caller: impl Into<String>, payload: Payload, nonce: u64, key: &SigningKey) -> Self {
        let caller = caller.into();
        let msg = signing_message(&caller, &payload.canonical_bytes(), nonce);
        let signature = identity::sign(key, &msg);
        SignedRequest { caller, payload, nonce, signature }
    }

    pub fn message(&self) -> Vec<u8> {
        signing_message(&self.caller, &self.payload.canonical_bytes(), self.nonce)
    }

    pub fn verify(&self, key: &VerifyingKey) -> bool {
        identity::verify(key, &self.message(), &self.signature)
    }
}
