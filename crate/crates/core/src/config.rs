//! Registry configuration, read from a flat `key = value` file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{quorum_size, MaintainerId, MaintainerKey, MaintainerSet};
use crate::graph::DEFAULT_MAX_DEPTH;
use crate::hash::{Digest, HashAlgorithm};
use crate::identity::derive_signing_key;
use crate::ledger::{Amount, FeeSplitRule, LedgerParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read configuration: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub maintainers: usize,
    /// Signatures needed for an epoch commitment; defaults to ⌈2n/3⌉.
    pub quorum: Option<usize>,
    /// Logical ticks per epoch.
    pub epoch_length: u64,
    pub min_stake: Amount,
    pub fee: Amount,
    pub fee_split: FeeSplitRule,
    pub max_depth: u32,
    pub hash: HashAlgorithm,
    /// Tokens held by the faucet at genesis; the total supply.
    pub supply: Amount,
    /// Seed for maintainer keys and simulated participants.
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub listen: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            maintainers: 4,
            quorum: None,
            epoch_length: 10,
            min_stake: 100,
            fee: 1000,
            fee_split: FeeSplitRule::PerEdge,
            max_depth: DEFAULT_MAX_DEPTH,
            hash: HashAlgorithm::Sha256,
            supply: 1_000_000_000,
            seed: 0,
            data_dir: None,
            listen: "127.0.0.1:8080".to_string(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("maintainers", self.maintainers as u64),
            ("epoch_length", self.epoch_length),
            ("min_stake", self.min_stake),
            ("fee", self.fee),
            ("max_depth", u64::from(self.max_depth)),
            ("supply", self.supply),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{name} must be positive")));
        }
        if let Some(q) = self.quorum {
            if q == 0 || q > self.maintainers {
                return Err(ConfigError::Invalid(format!(
                    "quorum {q} must be between 1 and the maintainer count {}",
                    self.maintainers
                )));
            }
        }
        Ok(())
    }

    pub fn quorum(&self) -> usize {
        self.quorum.unwrap_or_else(|| quorum_size(self.maintainers))
    }

    pub fn ledger_params(&self) -> LedgerParams {
        LedgerParams { min_stake: self.min_stake, fee: self.fee, fee_split: self.fee_split }
    }

    pub fn maintainer_keys(&self) -> Vec<MaintainerKey> {
        (0..self.maintainers)
            .map(|i| {
                let id = MaintainerId::new(format!("maintainer-{i}")).expect("valid maintainer id");
                let signing_key = derive_signing_key(self.seed, &format!("maintainer/{i}"));
                MaintainerKey { id, signing_key }
            })
            .collect()
    }

    pub fn maintainer_set(&self) -> MaintainerSet {
        MaintainerSet::new(self.maintainer_keys().iter().map(|k| (k.id.clone(), k.verifying_key())))
            .with_quorum(self.quorum())
    }

    /// Identifies the registry instance; mixed into registration challenges
    /// and settlement blinding. Depends only on replicated parameters.
    pub fn registry_id(&self) -> Digest {
        let canonical = serde_json::json!({
            "maintainers": self.maintainers,
            "quorum": self.quorum(),
            "min_stake": self.min_stake,
            "fee": self.fee,
            "fee_split": self.fee_split,
            "max_depth": self.max_depth,
            "hash": self.hash.id(),
            "supply": self.supply,
            "seed": self.seed,
        });
        self.hash.digest(canonical.to_string().as_bytes())
    }
}
