//! Issuer identifiers and the Ed25519 keys that back them.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("identifier must not be empty")]
    Empty,
    #[error("identifier `{0}` contains a reserved character ('-', ':' or whitespace)")]
    ReservedCharacter(String),
    #[error("malformed verification key: {0}")]
    BadKey(String),
    #[error("malformed signature: {0}")]
    BadSignature(String),
}

/// A decentralized identifier. `-` and `:` are reserved by the canonical
/// edge encoding `source-destination:score`; whitespace is reserved by the
/// line-oriented log formats.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Did(String);

impl Did {
    pub fn new(s: impl Into<String>) -> Result<Self, IdentityError> {
        let s = s.into();
        if s.is_empty() {
            return Err(IdentityError::Empty);
        }
        if s.chars().any(|c| c == '-' || c == ':' || c.is_whitespace()) {
            return Err(IdentityError::ReservedCharacter(s));
        }
        Ok(Did(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl FromStr for Did {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Did::new(s)
    }
}

impl AsRef<str> for Did {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::borrow::Borrow<str> for Did {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl Serialize for Did {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Did::new(s).map_err(serde::de::Error::custom)
    }
}

/// An issuer as it appears in the trust graph.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct IssuerId {
    pub did: Did,
    #[serde(with = "verifying_key_hex")]
    pub verification_key: VerifyingKey,
}

impl IssuerId {
    pub fn new(did: Did, verification_key: VerifyingKey) -> Self {
        IssuerId { did, verification_key }
    }

    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        self.verification_key.verify(message, signature).is_ok()
    }
}

/// Derives a signing key deterministically from a seed and a label.
/// Used by simulations so that scenario runs are reproducible.
pub fn derive_signing_key(seed: u64, label: &str) -> SigningKey {
    let mut h = Sha256::new();
    h.update(b"trustreg/keygen/v1");
    h.update(seed.to_be_bytes());
    h.update(label.as_bytes());
    SigningKey::from_bytes(&h.finalize().into())
}

pub fn sign(key: &SigningKey, message: &[u8]) -> Signature {
    key.sign(message)
}

pub fn verify(key: &VerifyingKey, message: &[u8], signature: &Signature) -> bool {
    key.verify(message, signature).is_ok()
}

pub fn key_to_hex(key: &VerifyingKey) -> String {
    hex::encode(key.as_bytes())
}

pub fn key_from_hex(s: &str) -> Result<VerifyingKey, IdentityError> {
    let mut bytes = [0u8; 32];
    hex::decode_to_slice(s, &mut bytes).map_err(|e| IdentityError::BadKey(e.to_string()))?;
    VerifyingKey::from_bytes(&bytes).map_err(|e| IdentityError::BadKey(e.to_string()))
}

pub fn signature_to_hex(sig: &Signature) -> String {
    hex::encode(sig.to_bytes())
}

pub fn signature_from_hex(s: &str) -> Result<Signature, IdentityError> {
    let mut bytes = [0u8; 64];
    hex::decode_to_slice(s, &mut bytes).map_err(|e| IdentityError::BadSignature(e.to_string()))?;
    Ok(Signature::from_bytes(&bytes))
}

pub mod verifying_key_hex {
    use ed25519_dalek::VerifyingKey;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(key: &VerifyingKey, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::key_to_hex(key))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<VerifyingKey, D::Error> {
        let s = String::deserialize(d)?;
        super::key_from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub mod signature_hex {
    use ed25519_dalek::Signature;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(sig: &Signature, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::signature_to_hex(sig))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Signature, D::Error> {
        let s = String::deserialize(d)?;
        super::signature_from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn did_rules() {
        assert!(Did::new("issuer1").is_ok());
        assert_eq!(Did::new(""), Err(IdentityError::Empty));
        assert!(matches!(Did::new("did-x"), Err(IdentityError::ReservedCharacter(_))));
        assert!(matches!(Did::new("did:example"), Err(IdentityError::ReservedCharacter(_))));
        assert!(matches!(Did::new("a b"), Err(IdentityError::ReservedCharacter(_))));
    }

    #[test]
    fn derived_keys_are_deterministic_and_distinct() {
        let a = derive_signing_key(7, "A");
        assert_eq!(a.to_bytes(), derive_signing_key(7, "A").to_bytes());
        assert_ne!(a.to_bytes(), derive_signing_key(7, "B").to_bytes());
        assert_ne!(a.to_bytes(), derive_signing_key(8, "A").to_bytes());
    }

    #[test]
    fn signatures_bind_key_and_message() {
        let k = derive_signing_key(1, "A");
        let other = derive_signing_key(1, "B");
        let sig = sign(&k, b"hello");
        assert!(verify(&k.verifying_key(), b"hello", &sig));
        assert!(!verify(&k.verifying_key(), b"hellp", &sig));
        assert!(!verify(&other.verifying_key(), b"hello", &sig));
        let hex = signature_to_hex(&sig);
        assert_eq!(signature_from_hex(&hex).unwrap(), sig);
        assert_eq!(key_from_hex(&key_to_hex(&k.verifying_key())).unwrap(), k.verifying_key());
    }
}
