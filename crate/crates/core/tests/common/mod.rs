#![allow(dead_code)]

pub mod oracle;

use trustreg_core::config::ServiceConfig;
use trustreg_core::identity::Did;
use trustreg_core::ledger::ReceiptId;
use trustreg_core::quorum::{Cluster, Outcome, Participant, Payload, QueryAnswer};

pub const SEED: u64 = 11;

pub fn did(s: &str) -> Did {
    Did::new(s).unwrap()
}

pub fn config() -> ServiceConfig {
    ServiceConfig { maintainers: 4, epoch_length: 5, min_stake: 100, fee: 1000, seed: SEED, supply: 10_000_000, ..Default::default() }
}

pub struct World {
    pub cluster: Cluster,
    pub issuers: Vec<Participant>,
    pub verifier: Participant,
}

impl World {
    pub fn issuer(&mut self, name: &str) -> &mut Participant {
        self.issuers.iter_mut().find(|p| p.did.as_str() == name).expect("known issuer")
    }

    pub fn submit_as(&mut self, name: &str, payload: Payload) -> Outcome {
        let req = self.issuer(name).request(payload);
        self.cluster.relay_submit(req).expect("accepted")
    }

    pub fn edge(&mut self, from: &str, to: &str, weight: &str) {
        self.submit_as(from, Payload::UpsertEdge { destination: did(to), weight: weight.parse().unwrap() });
    }

    pub fn escrow(&mut self) -> ReceiptId {
        let req = self.verifier.request(Payload::Escrow);
        match self.cluster.relay_submit(req).unwrap() {
            Outcome::Escrowed { receipt, .. } => receipt,
            other => panic!("unexpected {other:?}"),
        }
    }

    pub fn query(&mut self, sources: &[&str], target: &str, threshold: &str, nonce: u8) -> Outcome {
        let receipt = self.escrow();
        let req = self.verifier.request(Payload::PathQuery {
            trusted_sources: sources.iter().map(|s| did(s)).collect(),
            credential_issuer: did(target),
            threshold: threshold.parse().unwrap(),
            query_nonce: [nonce; 32],
            receipt,
        });
        self.cluster.relay_submit(req).unwrap()
    }

    pub fn answer(&mut self, sources: &[&str], target: &str, threshold: &str) -> QueryAnswer {
        match self.query(sources, target, threshold, 0) {
            Outcome::Answered(a) => *a,
            other => panic!("expected an answer, got {other:?}"),
        }
    }
}

/// Cluster with registered issuers (stake 100 each, wallet 1000 spare) and a
/// funded verifier `V`.
pub fn world(names: &[&str]) -> World {
    world_with(config(), names)
}

pub fn world_with(cfg: ServiceConfig, names: &[&str]) -> World {
    let registry_id = cfg.registry_id();
    let stake = cfg.min_stake;
    let mut cluster = Cluster::new(cfg);
    let mut issuers = Vec::new();
    for n in names {
        let mut p = Participant::derived(SEED, n);
        cluster.relay_submit(p.enroll()).unwrap();
        cluster.relay_submit(p.request(Payload::Faucet { amount: stake + 1000 })).unwrap();
        cluster.relay_submit(p.register(&registry_id, stake)).unwrap();
        issuers.push(p);
    }
    let mut verifier = Participant::derived(SEED, "V");
    cluster.relay_submit(verifier.enroll()).unwrap();
    cluster.relay_submit(verifier.request(Payload::Faucet { amount: 1_000_000 })).unwrap();
    World { cluster, issuers, verifier }
}
