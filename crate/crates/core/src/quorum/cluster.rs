//! A simulated maintainer set: every replica applies the same ordered event
//! log; epoch ticks compare replica roots and publish a commitment signed by
//! the replicas that agree.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::eventlog::{replay, EventLog, LogError};
use super::request::{Payload, SignedRequest};
use super::state::{Outcome, RegistryError, RegistryState};
use crate::commitment::{CommitmentLog, EpochCommitment, MaintainerId, MaintainerKey};
use crate::config::ServiceConfig;
use crate::hash::Digest;
use crate::ledger::{Challenge, Vote};

/// How a maintainer votes on challenges.
pub trait VotePolicy: Send {
    fn vote(&mut self, challenge: &Challenge) -> Vote;
}

/// Votes the same way on everything.
#[derive(Clone, Copy, Debug)]
pub struct FixedVote(pub Vote);

impl VotePolicy for FixedVote {
    fn vote(&mut self, _challenge: &Challenge) -> Vote {
        self.0
    }
}

/// Per-challenge verdicts, falling back to a default.
#[derive(Clone, Debug)]
pub struct ScriptedVotes {
    pub verdicts: BTreeMap<u64, Vote>,
    pub default: Vote,
}

impl VotePolicy for ScriptedVotes {
    fn vote(&mut self, challenge: &Challenge) -> Vote {
        self.verdicts.get(&challenge.id).copied().unwrap_or(self.default)
    }
}

/// Logical time. An epoch ends every `length` ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochClock {
    pub length: u64,
    pub tick: u64,
}

impl EpochClock {
    pub fn new(length: u64) -> Self {
        EpochClock { length: length.max(1), tick: 0 }
    }

    /// Advances one tick; true when that tick closes an epoch.
    pub fn advance(&mut self) -> bool {
        self.tick += 1;
        self.tick.is_multiple_of(self.length)
    }
}

pub struct Replica {
    pub key: MaintainerKey,
    pub state: RegistryState,
    policy: Box<dyn VotePolicy>,
}

impl Replica {
    pub fn id(&self) -> &MaintainerId {
        &self.key.id
    }
}

struct Sink {
    events: PathBuf,
    commitments: PathBuf,
}

pub struct Cluster {
    config: ServiceConfig,
    replicas: Vec<Replica>,
    log: EventLog,
    clock: EpochClock,
    divergent: BTreeSet<MaintainerId>,
    sink: Option<Sink>,
}

pub const EVENTS_FILE: &str = "events.log";
pub const COMMITMENTS_FILE: &str = "commitments.log";

impl Cluster {
    pub fn new(config: ServiceConfig) -> Self {
        let genesis = RegistryState::genesis(&config);
        Self::with_state(config, genesis, EventLog::new())
    }

    fn with_state(config: ServiceConfig, state: RegistryState, log: EventLog) -> Self {
        let replicas = config
            .maintainer_keys()
            .into_iter()
            .map(|key| Replica { key, state: state.clone(), policy: Box::new(FixedVote(Vote::Reject)) })
            .collect();
        let mut clock = EpochClock::new(config.epoch_length);
        clock.tick = state.current_epoch() * clock.length;
        Cluster { config, replicas, log, clock, divergent: BTreeSet::new(), sink: None }
    }

    /// Rebuilds a cluster by replaying `log`; all replicas start equal.
    pub fn from_log(config: ServiceConfig, log: EventLog) -> Result<Self, LogError> {
        let replayed = replay(&config, &log)?;
        Ok(Self::with_state(config, replayed.state, log))
    }

    /// Opens (or creates) the data directory: replays an existing event log
    /// and appends every later event and commitment to disk.
    pub fn open(config: ServiceConfig, data_dir: &Path) -> Result<Self, LogError> {
        std::fs::create_dir_all(data_dir)?;
        let events = data_dir.join(EVENTS_FILE);
        let log = if events.exists() { EventLog::load(&events)? } else { EventLog::new() };
        // rewrite so that a torn final line is dropped from disk as well
        log.write_to(&events)?;
        let mut cluster = Self::from_log(config, log)?;
        let commitments = data_dir.join(COMMITMENTS_FILE);
        std::fs::write(&commitments, cluster.reference().commitments().to_text())?;
        cluster.sink = Some(Sink { events, commitments });
        Ok(cluster)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn clock(&self) -> EpochClock {
        self.clock
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn replica(&self, i: usize) -> &RegistryState {
        &self.replicas[i].state
    }

    pub fn divergent(&self) -> &BTreeSet<MaintainerId> {
        &self.divergent
    }

    pub fn set_policy(&mut self, replica: usize, policy: Box<dyn VotePolicy>) {
        self.replicas[replica].policy = policy;
    }

    /// Mutable access to one replica's state outside the log, for fault
    /// injection.
    pub fn corrupt_replica(&mut self, replica: usize) -> &mut RegistryState {
        &mut self.replicas[replica].state
    }

    /// State of the first replica not flagged divergent.
    pub fn reference(&self) -> &RegistryState {
        let r = self
            .replicas
            .iter()
            .find(|r| !self.divergent.contains(r.id()))
            .unwrap_or(&self.replicas[0]);
        &r.state
    }

    pub fn commitments(&self) -> &CommitmentLog {
        self.reference().commitments()
    }

    /// Relays a signed request: envelope failures are rejected without
    /// touching the log; accepted requests are appended and applied by every
    /// replica in order. Returns the reference replica's outcome.
    pub fn relay_submit(&mut self, request: SignedRequest) -> Result<Outcome, RegistryError> {
        self.reference().authenticate(&request)?;
        let record = self.log.push(request).clone();
        if let Some(sink) = &self.sink {
            EventLog::append_to_file(&sink.events, &record).map_err(|e| RegistryError::Internal(e.to_string()))?;
        }
        let reference = self
            .replicas
            .iter()
            .position(|r| !self.divergent.contains(r.id()))
            .unwrap_or(0);
        let mut result = None;
        for (i, replica) in self.replicas.iter_mut().enumerate() {
            let outcome = replica.state.apply(&record.request);
            if i == reference {
                result = Some(outcome);
            }
        }
        result.expect("at least one replica")
    }

    /// Advances logical time by one tick, running an epoch tick at the
    /// boundary.
    pub fn tick(&mut self) -> Option<Result<EpochCommitment, RegistryError>> {
        self.clock.advance().then(|| self.epoch_tick())
    }

    /// Compares every replica's edge root. If a quorum agrees, those replicas
    /// sign and publish the epoch commitment; replicas holding a different
    /// root are flagged divergent and do not sign.
    pub fn epoch_tick(&mut self) -> Result<EpochCommitment, RegistryError> {
        let roots: Vec<Digest> = self.replicas.iter().map(|r| r.state.graph_root()).collect();
        let mut counts: BTreeMap<Digest, usize> = BTreeMap::new();
        for r in &roots {
            *counts.entry(*r).or_default() += 1;
        }
        let best = counts.values().copied().max().unwrap_or(0);
        let quorum = self.config.quorum();
        if best < quorum {
            return Err(RegistryError::NoQuorum { agreeing: best, quorum });
        }
        let majority = *roots.iter().find(|r| counts[*r] == best).expect("non-empty");
        for (replica, root) in self.replicas.iter().zip(&roots) {
            if *root != majority {
                self.divergent.insert(replica.id().clone());
            }
        }
        let signers: Vec<&MaintainerKey> = self
            .replicas
            .iter()
            .zip(&roots)
            .filter(|(r, root)| **root == majority && !self.divergent.contains(r.id()))
            .map(|(r, _)| &r.key)
            .collect();
        if signers.len() < quorum {
            return Err(RegistryError::NoQuorum { agreeing: signers.len(), quorum });
        }
        let epoch = self.reference().current_epoch();
        let commitment = EpochCommitment::sign(epoch, majority, &signers);
        let leader = signers[0].clone();
        let nonce = self.reference().last_nonce(leader.id.as_str()) + 1;
        let request = SignedRequest::sign(
            leader.id.as_str(),
            Payload::EpochCommit { commitment: commitment.clone() },
            nonce,
            &leader.signing_key,
        );
        self.relay_submit(request)?;
        if let Some(sink) = &self.sink {
            crate::commitment::CommitmentLog::append_to_file(&sink.commitments, &commitment)
                .map_err(|e| RegistryError::Internal(e.to_string()))?;
        }
        Ok(commitment)
    }

    /// Collects every maintainer's vote through its policy and logs the
    /// votes. The outcome is decided once all votes are in.
    pub fn vote_challenge(&mut self, id: u64) -> Result<Challenge, RegistryError> {
        let challenge = self.reference().challenge(id).cloned().ok_or(RegistryError::UnknownChallenge(id))?;
        let votes: Vec<Vote> = self.replicas.iter_mut().map(|r| r.policy.vote(&challenge)).collect();
        self.vote_challenge_with(id, &votes)
    }

    /// Logs the given votes, one per maintainer in replica order.
    pub fn vote_challenge_with(&mut self, id: u64, votes: &[Vote]) -> Result<Challenge, RegistryError> {
        for (i, vote) in votes.iter().enumerate().take(self.replicas.len()) {
            self.submit_vote(i, id, *vote)?;
        }
        self.reference().challenge(id).cloned().ok_or(RegistryError::UnknownChallenge(id))
    }

    /// Logs a single maintainer's vote.
    pub fn submit_vote(&mut self, replica: usize, id: u64, vote: Vote) -> Result<Outcome, RegistryError> {
        let key = self.replicas[replica].key.clone();
        let nonce = self.reference().last_nonce(key.id.as_str()) + 1;
        let req = SignedRequest::sign(key.id.as_str(), Payload::Vote { challenge: id, vote }, nonce, &key.signing_key);
        self.relay_submit(req)
    }

    /// The vote replica `i`'s policy would cast.
    pub fn policy_vote(&mut self, replica: usize, challenge: &Challenge) -> Vote {
        self.replicas[replica].policy.vote(challenge)
    }
}
