//! Scripted simulations over a [`Cluster`].
//!
//! A script is a list of lines, one action each. Blank lines and `#`
//! comments are ignored. `set` and `seed` lines configure the run and must
//! come before the first action.
//!
//! ```text
//! set <config-key> <value>
//! seed <n>
//! issuer <name> [stake]                  enroll, fund and register
//! verifier <name> [funds]                enroll and fund
//! faucet <name> <amount>
//! edge <src> <dst> <weight>
//! unedge <src> <dst>
//! query <verifier> <src[,src..]> <target> <threshold>
//! challenge <verifier> <accused>
//! votes <accept|reject>..                one vote per maintainer, latest challenge
//! votes policy                           latest challenge, using vote policies
//! policy <replica> <accept|reject>
//! topup <name> <amount>
//! claim <name> [epoch]                   default: last closed epoch
//! claim-all [epoch]
//! tick [n]
//! epoch
//! corrupt <replica> edge <src> <dst> <weight>
//! corrupt <replica> unedge <src> <dst>
//! random <n>                             n seeded random actions
//! repeat <n> <action..>
//! ```
//!
//! Token conservation is checked on every replica after every logged event.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::ServiceConfig;
use crate::fixed::{Fixed4, TrustWeight};
use crate::graph::TrustEdge;
use crate::hash::Digest;
use crate::identity::Did;
use crate::ledger::{Amount, ChallengeOutcome, Vote};
use crate::quorum::{Cluster, FixedVote, Outcome, Participant, Payload, RegistryError, SignedRequest, StateRoots};
use crate::settlement::BalanceTree;

/// Spare wallet funds an `issuer` line adds on top of its stake.
pub const ISSUER_FLOAT: Amount = 1_000;
/// Default funds for a `verifier` line.
pub const VERIFIER_FUNDS: Amount = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptParseError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: configuration must precede the first action")]
    LateConfig { line: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error(transparent)]
    Parse(#[from] ScriptParseError),
    #[error("line {line}: {reason}")]
    Runtime { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Fault {
    Edge(Did, Did, TrustWeight),
    Unedge(Did, Did),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum VoteSpec {
    Explicit(Vec<Vote>),
    Policy,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Action {
    Issuer(Did, Option<Amount>),
    Verifier(Did, Option<Amount>),
    Faucet(Did, Amount),
    Edge(Did, Did, TrustWeight),
    Unedge(Did, Did),
    Query { verifier: Did, sources: BTreeSet<Did>, target: Did, threshold: Fixed4 },
    Challenge(Did, Did),
    Votes(VoteSpec),
    Policy(usize, Vote),
    TopUp(Did, Amount),
    Claim(Did, Option<u64>),
    ClaimAll(Option<u64>),
    Tick(u64),
    Epoch,
    Corrupt(usize, Fault),
    Random(u64),
    Repeat(u64, Box<Action>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub config: ServiceConfig,
    actions: Vec<(usize, Action)>,
}

impl Scenario {
    pub fn parse(name: &str, text: &str) -> Result<Self, ScriptParseError> {
        let mut settings = String::new();
        let mut seed = None;
        let mut actions = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            match words[0] {
                "set" | "seed" if !actions.is_empty() => return Err(ScriptParseError::LateConfig { line }),
                "set" => {
                    let [_, key, value] = words[..] else {
                        return Err(syntax(line, "expected `set <key> <value>`"));
                    };
                    let literal = if value.parse::<i64>().is_ok() || value == "true" || value == "false" {
                        value.to_string()
                    } else {
                        format!("{value:?}")
                    };
                    let _ = writeln!(settings, "{key} = {literal}");
                }
                "seed" => {
                    let [_, n] = words[..] else { return Err(syntax(line, "expected `seed <n>`")) };
                    seed = Some(number(line, n)?);
                }
                _ => actions.push((line, parse_action(line, &words)?)),
            }
        }
        let mut config = ServiceConfig::parse(&settings).map_err(|e| ScriptParseError::Config(e.to_string()))?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        Ok(Scenario { name: name.to_string(), config, actions })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.seed = seed;
        self
    }

    pub fn run(&self) -> Result<ScenarioRun, ScenarioError> {
        Runner::new(self).run()
    }
}

fn syntax(line: usize, reason: impl Into<String>) -> ScriptParseError {
    ScriptParseError::Syntax { line, reason: reason.into() }
}

fn number(line: usize, s: &str) -> Result<u64, ScriptParseError> {
    s.parse().map_err(|_| syntax(line, format!("`{s}` is not a number")))
}

fn did(line: usize, s: &str) -> Result<Did, ScriptParseError> {
    Did::new(s).map_err(|e| syntax(line, e.to_string()))
}

fn weight(line: usize, s: &str) -> Result<TrustWeight, ScriptParseError> {
    s.parse().map_err(|e| syntax(line, format!("weight `{s}`: {e}")))
}

fn vote(line: usize, s: &str) -> Result<Vote, ScriptParseError> {
    match s {
        "accept" => Ok(Vote::Accept),
        "reject" => Ok(Vote::Reject),
        _ => Err(syntax(line, format!("`{s}` is not a vote"))),
    }
}

fn optional<T>(line: usize, s: Option<&&str>, f: fn(usize, &str) -> Result<T, ScriptParseError>) -> Result<Option<T>, ScriptParseError> {
    s.map(|s| f(line, s)).transpose()
}

fn parse_action(line: usize, w: &[&str]) -> Result<Action, ScriptParseError> {
    let arity = |min: usize, max: usize, usage: &str| {
        if (min..=max).contains(&(w.len() - 1)) {
            Ok(())
        } else {
            Err(syntax(line, format!("usage: {usage}")))
        }
    };
    Ok(match w[0] {
        "issuer" => {
            arity(1, 2, "issuer <name> [stake]")?;
            Action::Issuer(did(line, w[1])?, optional(line, w.get(2), number)?)
        }
        "verifier" => {
            arity(1, 2, "verifier <name> [funds]")?;
            Action::Verifier(did(line, w[1])?, optional(line, w.get(2), number)?)
        }
        "faucet" => {
            arity(2, 2, "faucet <name> <amount>")?;
            Action::Faucet(did(line, w[1])?, number(line, w[2])?)
        }
        "edge" => {
            arity(3, 3, "edge <src> <dst> <weight>")?;
            Action::Edge(did(line, w[1])?, did(line, w[2])?, weight(line, w[3])?)
        }
        "unedge" => {
            arity(2, 2, "unedge <src> <dst>")?;
            Action::Unedge(did(line, w[1])?, did(line, w[2])?)
        }
        "query" => {
            arity(4, 4, "query <verifier> <src[,src..]> <target> <threshold>")?;
            let sources = w[2].split(',').map(|s| did(line, s)).collect::<Result<_, _>>()?;
            let threshold = w[4].parse().map_err(|e| syntax(line, format!("threshold `{}`: {e}", w[4])))?;
            Action::Query { verifier: did(line, w[1])?, sources, target: did(line, w[3])?, threshold }
        }
        "challenge" => {
            arity(2, 2, "challenge <verifier> <accused>")?;
            Action::Challenge(did(line, w[1])?, did(line, w[2])?)
        }
        "votes" => {
            if w.len() < 2 {
                return Err(syntax(line, "usage: votes <accept|reject>.. | votes policy"));
            }
            if w[1..] == ["policy"] {
                Action::Votes(VoteSpec::Policy)
            } else {
                Action::Votes(VoteSpec::Explicit(w[1..].iter().map(|v| vote(line, v)).collect::<Result<_, _>>()?))
            }
        }
        "policy" => {
            arity(2, 2, "policy <replica> <accept|reject>")?;
            Action::Policy(number(line, w[1])? as usize, vote(line, w[2])?)
        }
        "topup" => {
            arity(2, 2, "topup <name> <amount>")?;
            Action::TopUp(did(line, w[1])?, number(line, w[2])?)
        }
        "claim" => {
            arity(1, 2, "claim <name> [epoch]")?;
            Action::Claim(did(line, w[1])?, optional(line, w.get(2), number)?)
        }
        "claim-all" => {
            arity(0, 1, "claim-all [epoch]")?;
            Action::ClaimAll(optional(line, w.get(1), number)?)
        }
        "tick" => {
            arity(0, 1, "tick [n]")?;
            Action::Tick(optional(line, w.get(1), number)?.unwrap_or(1))
        }
        "epoch" => {
            arity(0, 0, "epoch")?;
            Action::Epoch
        }
        "corrupt" => {
            let usage = "corrupt <replica> edge <src> <dst> <weight> | corrupt <replica> unedge <src> <dst>";
            if w.len() < 3 {
                return Err(syntax(line, format!("usage: {usage}")));
            }
            let replica = number(line, w[1])? as usize;
            let fault = match (w[2], w.len()) {
                ("edge", 6) => Fault::Edge(did(line, w[3])?, did(line, w[4])?, weight(line, w[5])?),
                ("unedge", 5) => Fault::Unedge(did(line, w[3])?, did(line, w[4])?),
                _ => return Err(syntax(line, format!("usage: {usage}"))),
            };
            Action::Corrupt(replica, fault)
        }
        "random" => {
            arity(1, 1, "random <n>")?;
            Action::Random(number(line, w[1])?)
        }
        "repeat" => {
            if w.len() < 3 {
                return Err(syntax(line, "usage: repeat <n> <action..>"));
            }
            let inner = parse_action(line, &w[2..])?;
            if matches!(inner, Action::Repeat(..)) {
                return Err(syntax(line, "repeat cannot be nested"));
            }
            Action::Repeat(number(line, w[1])?, Box::new(inner))
        }
        other => return Err(syntax(line, format!("unknown action `{other}`"))),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub supply: Amount,
    pub checked_events: u64,
    /// Event indices after which some replica's total differed from supply.
    pub violations: Vec<u64>,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CommitmentSummary {
    pub epoch: u64,
    pub root: Digest,
    pub signers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MissedEpoch {
    pub epoch: u64,
    pub agreeing: usize,
    pub quorum: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IssuerSummary {
    pub staked: Amount,
    pub rewards: Amount,
    pub active: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueryStats {
    pub answered: u64,
    pub no_path: u64,
    pub failed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChallengeSummary {
    pub id: u64,
    pub challenger: Did,
    pub accused: Did,
    pub outcome: ChallengeOutcome,
}

/// Deterministic summary of a run; equal seeds give byte-identical JSON.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub events: usize,
    pub conservation: Conservation,
    pub commitments: Vec<CommitmentSummary>,
    pub missed_epochs: Vec<MissedEpoch>,
    pub divergent: Vec<String>,
    pub issuers: BTreeMap<Did, IssuerSummary>,
    pub wallets: BTreeMap<Did, Amount>,
    pub reserve: Amount,
    pub pool: Amount,
    pub escrowed: Amount,
    /// Fee credits per issuer, summed over all answered queries.
    pub fee_credits: BTreeMap<Did, Amount>,
    pub pool_credits: Amount,
    pub queries: QueryStats,
    pub challenges: Vec<ChallengeSummary>,
    pub claimed: BTreeMap<Did, Amount>,
    /// Rejected requests (never logged) by error code.
    pub rejected: BTreeMap<String, u64>,
    /// Logged requests whose operation failed, by error code.
    pub failed: BTreeMap<String, u64>,
    pub roots: StateRoots,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub cluster: Cluster,
}

struct Runner<'a> {
    scenario: &'a Scenario,
    cluster: Cluster,
    rng: ChaCha8Rng,
    participants: BTreeMap<Did, Participant>,
    issuers: Vec<Did>,
    verifiers: Vec<Did>,
    /// (verifier, issuer) pairs from answered queries, for random challenges.
    answered_pairs: Vec<(Did, Did)>,
    last_challenge: Option<u64>,
    conservation: Conservation,
    missed: Vec<MissedEpoch>,
    fee_credits: BTreeMap<Did, Amount>,
    pool_credits: Amount,
    queries: QueryStats,
    claimed: BTreeMap<Did, Amount>,
    rejected: BTreeMap<String, u64>,
    failed: BTreeMap<String, u64>,
    line: usize,
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let cfg = scenario.config.clone();
        let supply = cfg.supply;
        Runner {
            scenario,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cluster: Cluster::new(cfg),
            participants: BTreeMap::new(),
            issuers: Vec::new(),
            verifiers: Vec::new(),
            answered_pairs: Vec::new(),
            last_challenge: None,
            conservation: Conservation { supply, checked_events: 0, violations: Vec::new(), holds: true },
            missed: Vec::new(),
            fee_credits: BTreeMap::new(),
            pool_credits: 0,
            queries: QueryStats::default(),
            claimed: BTreeMap::new(),
            rejected: BTreeMap::new(),
            failed: BTreeMap::new(),
            line: 0,
        }
    }

    fn runtime(&self, reason: impl Into<String>) -> ScenarioError {
        ScenarioError::Runtime { line: self.line, reason: reason.into() }
    }

    fn run(mut self) -> Result<ScenarioRun, ScenarioError> {
        for (line, action) in &self.scenario.actions {
            self.line = *line;
            self.act(action)?;
        }
        Ok(self.finish())
    }

    /// Counts a result and checks conservation if an event was logged.
    fn record<T>(&mut self, logged_before: usize, result: Result<T, RegistryError>) -> Option<T> {
        if self.cluster.log().len() > logged_before {
            self.check_conservation();
        }
        match result {
            Ok(v) => Some(v),
            Err(e) => {
                let bucket = if e.is_rejection() { &mut self.rejected } else { &mut self.failed };
                *bucket.entry(e.code().to_string()).or_default() += 1;
                None
            }
        }
    }

    fn check_conservation(&mut self) {
        self.conservation.checked_events += 1;
        let supply = self.conservation.supply;
        let ok = self
            .cluster
            .replicas()
            .iter()
            .all(|r| r.state.ledger().is_conserved() && r.state.ledger().total_tokens() == supply);
        if !ok {
            self.conservation.holds = false;
            self.conservation.violations.push(self.cluster.log().len() as u64 - 1);
        }
    }

    fn submit(&mut self, req: SignedRequest) -> Option<Outcome> {
        let before = self.cluster.log().len();
        let result = self.cluster.relay_submit(req);
        self.record(before, result)
    }

    fn participant(&mut self, did: &Did) -> Result<&mut Participant, ScenarioError> {
        let err = self.runtime(format!("unknown participant `{did}`"));
        self.participants.get_mut(did).ok_or(err)
    }

    fn as_participant(&mut self, did: &Did, payload: Payload) -> Result<Option<Outcome>, ScenarioError> {
        let req = self.participant(did)?.request(payload);
        Ok(self.submit(req))
    }

    fn join(&mut self, did: &Did) -> Result<(), ScenarioError> {
        if self.participants.contains_key(did) {
            return Err(self.runtime(format!("participant `{did}` declared twice")));
        }
        let mut p = Participant::derived(self.scenario.config.seed, did.as_str());
        let req = p.enroll();
        self.participants.insert(did.clone(), p);
        self.submit(req);
        Ok(())
    }

    fn replica_index(&self, replica: usize) -> Result<usize, ScenarioError> {
        if replica < self.cluster.replicas().len() {
            Ok(replica)
        } else {
            Err(self.runtime(format!("no replica {replica}")))
        }
    }

    fn act(&mut self, action: &Action) -> Result<(), ScenarioError> {
        match action {
            Action::Issuer(did, stake) => {
                let stake = stake.unwrap_or(self.scenario.config.min_stake);
                self.join(did)?;
                self.as_participant(did, Payload::Faucet { amount: stake + ISSUER_FLOAT })?;
                let registry_id = self.cluster.config().registry_id();
                let req = self.participant(did)?.register(&registry_id, stake);
                self.submit(req);
                self.issuers.push(did.clone());
            }
            Action::Verifier(did, funds) => {
                self.join(did)?;
                self.as_participant(did, Payload::Faucet { amount: funds.unwrap_or(VERIFIER_FUNDS) })?;
                self.verifiers.push(did.clone());
            }
            Action::Faucet(did, amount) => {
                self.as_participant(did, Payload::Faucet { amount: *amount })?;
            }
            Action::Edge(src, dst, w) => {
                self.as_participant(src, Payload::UpsertEdge { destination: dst.clone(), weight: *w })?;
            }
            Action::Unedge(src, dst) => {
                self.as_participant(src, Payload::RemoveEdge { destination: dst.clone() })?;
            }
            Action::Query { verifier, sources, target, threshold } => {
                self.query(verifier, sources.clone(), target, *threshold)?;
            }
            Action::Challenge(verifier, accused) => {
                self.challenge(verifier, accused)?;
            }
            Action::Votes(choice) => {
                let Some(id) = self.last_challenge else {
                    return Err(self.runtime("no challenge to vote on"));
                };
                let votes = match choice {
                    VoteSpec::Explicit(v) => v.clone(),
                    VoteSpec::Policy => self.policy_votes(id),
                };
                self.vote(id, &votes);
            }
            Action::Policy(replica, v) => {
                let i = self.replica_index(*replica)?;
                self.cluster.set_policy(i, Box::new(FixedVote(*v)));
            }
            Action::TopUp(did, amount) => {
                self.as_participant(did, Payload::TopUp { amount: *amount })?;
            }
            Action::Claim(did, epoch) => {
                if let Some(epoch) = epoch.or_else(|| self.last_closed()) {
                    self.claim(did, epoch)?;
                }
            }
            Action::ClaimAll(epoch) => {
                if let Some(epoch) = epoch.or_else(|| self.last_closed()) {
                    self.claim_all(epoch)?;
                }
            }
            Action::Tick(n) => {
                for _ in 0..*n {
                    self.tick();
                }
            }
            Action::Epoch => self.epoch(),
            Action::Corrupt(replica, fault) => {
                let i = self.replica_index(*replica)?;
                let graph = self.cluster.corrupt_replica(i).tamper_graph();
                let result = match fault {
                    Fault::Edge(s, d, w) => graph.upsert_edge(TrustEdge::new(s.clone(), d.clone(), *w)).map(|_| ()),
                    Fault::Unedge(s, d) => graph.remove_edge(s, d).map(|_| ()),
                };
                result.map_err(|e| self.runtime(format!("fault injection failed: {e}")))?;
            }
            Action::Random(n) => {
                for _ in 0..*n {
                    self.random_action()?;
                }
            }
            Action::Repeat(n, inner) => {
                for _ in 0..*n {
                    self.act(inner)?;
                }
            }
        }
        Ok(())
    }

    fn query(&mut self, verifier: &Did, sources: BTreeSet<Did>, target: &Did, threshold: Fixed4) -> Result<(), ScenarioError> {
        let Some(Outcome::Escrowed { receipt, .. }) = self.as_participant(verifier, Payload::Escrow)? else {
            self.queries.failed += 1;
            return Ok(());
        };
        let query_nonce: [u8; 32] = self.rng.gen();
        let payload = Payload::PathQuery { trusted_sources: sources, credential_issuer: target.clone(), threshold, query_nonce, receipt };
        match self.as_participant(verifier, payload)? {
            Some(Outcome::Answered(answer)) => {
                self.queries.answered += 1;
                for (did, amount) in &answer.distribution.credits {
                    *self.fee_credits.entry(did.clone()).or_default() += amount;
                }
                self.pool_credits += answer.distribution.remainder
                    + answer.distribution.forfeited.iter().map(|(_, a)| a).sum::<Amount>();
                let pair = (verifier.clone(), target.clone());
                if !self.answered_pairs.contains(&pair) {
                    self.answered_pairs.push(pair);
                }
            }
            Some(Outcome::NoPath { .. }) => self.queries.no_path += 1,
            _ => self.queries.failed += 1,
        }
        Ok(())
    }

    fn challenge(&mut self, verifier: &Did, accused: &Did) -> Result<Option<u64>, ScenarioError> {
        let opened = match self.as_participant(verifier, Payload::Challenge { accused: accused.clone() })? {
            Some(Outcome::ChallengeOpened { challenge }) => Some(challenge.id),
            _ => None,
        };
        if opened.is_some() {
            self.last_challenge = opened;
            self.answered_pairs.retain(|(v, a)| !(v == verifier && a == accused));
        }
        Ok(opened)
    }

    fn policy_votes(&mut self, id: u64) -> Vec<Vote> {
        let Some(challenge) = self.cluster.reference().challenge(id).cloned() else {
            return Vec::new();
        };
        (0..self.cluster.replicas().len()).map(|i| self.cluster.policy_vote(i, &challenge)).collect()
    }

    fn vote(&mut self, id: u64, votes: &[Vote]) {
        for (i, v) in votes.iter().enumerate().take(self.cluster.replicas().len()) {
            let before = self.cluster.log().len();
            let result = self.cluster.submit_vote(i, id, *v);
            self.record(before, result);
        }
    }

    fn last_closed(&self) -> Option<u64> {
        self.cluster.reference().current_epoch().checked_sub(1)
    }

    fn claim(&mut self, did: &Did, epoch: u64) -> Result<(), ScenarioError> {
        let state = self.cluster.reference();
        let Some(closed) = state.closed_epoch(epoch) else { return Ok(()) };
        if !closed.final_balances.contains_key(did) || state.claims().is_claimed(epoch, did) {
            return Ok(());
        }
        let proof = BalanceTree::new(state.hash_algorithm(), closed.final_balances.clone())
            .prove(did)
            .expect("balance present");
        if let Some(Outcome::Claimed { amount, .. }) = self.as_participant(did, Payload::Claim { epoch, proof })? {
            *self.claimed.entry(did.clone()).or_default() += amount;
        }
        Ok(())
    }

    fn claim_all(&mut self, epoch: u64) -> Result<(), ScenarioError> {
        let Some(closed) = self.cluster.reference().closed_epoch(epoch) else { return Ok(()) };
        let claimants: Vec<Did> =
            closed.final_balances.keys().filter(|d| self.participants.contains_key(*d)).cloned().collect();
        for did in claimants {
            self.claim(&did, epoch)?;
        }
        Ok(())
    }

    fn tick(&mut self) {
        let before = self.cluster.log().len();
        let epoch = self.cluster.reference().current_epoch();
        if let Some(result) = self.cluster.tick() {
            self.epoch_result(before, epoch, result.map(|_| ()));
        }
    }

    fn epoch(&mut self) {
        let before = self.cluster.log().len();
        let epoch = self.cluster.reference().current_epoch();
        let result = self.cluster.epoch_tick().map(|_| ());
        self.epoch_result(before, epoch, result);
    }

    fn epoch_result(&mut self, before: usize, epoch: u64, result: Result<(), RegistryError>) {
        if let Err(RegistryError::NoQuorum { agreeing, quorum }) = &result {
            self.missed.push(MissedEpoch { epoch, agreeing: *agreeing, quorum: *quorum });
        }
        self.record(before, result);
    }

    fn random_action(&mut self) -> Result<(), ScenarioError> {
        if self.issuers.len() < 2 || self.verifiers.is_empty() {
            return Err(self.runtime("random actions need two issuers and a verifier"));
        }
        let live: Vec<Did> = self.issuers.iter().filter(|d| self.cluster.reference().graph().contains(d)).cloned().collect();
        if live.len() < 2 {
            let dormant: Vec<Did> = self.issuers.iter().filter(|d| !live.contains(d)).cloned().collect();
            let did = dormant.choose(&mut self.rng).expect("some issuer is inactive").clone();
            return self.revive(did);
        }
        let roll = self.rng.gen_range(0..100);
        match roll {
            0..=29 => {
                let pair: Vec<&Did> = live.choose_multiple(&mut self.rng, 2).collect();
                let (src, dst) = (pair[0].clone(), pair[1].clone());
                let w = TrustWeight::from_raw(self.rng.gen_range(5_000..=10_000)).expect("weight in range");
                self.act(&Action::Edge(src, dst, w))?;
            }
            30..=34 => {
                let src = live.choose(&mut self.rng).expect("non-empty").clone();
                let out: Vec<Did> = self.cluster.reference().graph().out_edges(&src).map(|(d, _)| d.clone()).collect();
                match out.choose(&mut self.rng) {
                    Some(dst) => self.act(&Action::Unedge(src, dst.clone()))?,
                    None => self.tick(),
                }
            }
            35..=69 => {
                let verifier = self.verifiers.choose(&mut self.rng).expect("non-empty").clone();
                let count = self.rng.gen_range(1..=2);
                let sources: BTreeSet<Did> = live.choose_multiple(&mut self.rng, count).cloned().collect();
                let target = live.choose(&mut self.rng).expect("non-empty").clone();
                let threshold = Fixed4::from_raw(self.rng.gen_range(0..=9) * 1_000);
                self.query(&verifier, sources, &target, threshold)?;
            }
            70..=74 => {
                if self.answered_pairs.is_empty() {
                    self.tick();
                } else {
                    let i = self.rng.gen_range(0..self.answered_pairs.len());
                    let (verifier, accused) = self.answered_pairs[i].clone();
                    if let Some(id) = self.challenge(&verifier, &accused)? {
                        let votes: Vec<Vote> = (0..self.cluster.replicas().len())
                            .map(|_| if self.rng.gen_bool(0.4) { Vote::Accept } else { Vote::Reject })
                            .collect();
                        self.vote(id, &votes);
                    }
                }
            }
            75..=79 => {
                let did = self.issuers.choose(&mut self.rng).expect("non-empty").clone();
                if live.contains(&did) {
                    let amount = self.rng.gen_range(1..=200);
                    self.top_up(did, amount)?;
                } else {
                    self.revive(did)?;
                }
            }
            80..=84 => match self.last_closed() {
                Some(epoch) => self.claim_all(epoch)?,
                None => self.tick(),
            },
            _ => self.tick(),
        }
        Ok(())
    }

    fn top_up(&mut self, did: Did, amount: Amount) -> Result<(), ScenarioError> {
        if self.cluster.reference().ledger().wallet(&did) < amount {
            self.act(&Action::Faucet(did.clone(), amount.max(ISSUER_FLOAT)))?;
        }
        self.act(&Action::TopUp(did, amount))
    }

    /// Tops an inactive issuer back up to the minimum stake.
    fn revive(&mut self, did: Did) -> Result<(), ScenarioError> {
        let staked = self.cluster.reference().ledger().account(&did).map_or(0, |a| a.staked);
        let missing = self.scenario.config.min_stake.saturating_sub(staked).max(1);
        self.top_up(did, missing)
    }

    fn finish(self) -> ScenarioRun {
        let state = self.cluster.reference();
        let ledger = state.ledger();
        let issuers = ledger
            .accounts()
            .map(|a| (a.issuer.did.clone(), IssuerSummary { staked: a.staked, rewards: a.rewards, active: a.active }))
            .collect();
        let commitments = self
            .cluster
            .commitments()
            .iter()
            .map(|c| CommitmentSummary {
                epoch: c.epoch,
                root: c.root,
                signers: c.signatures.keys().map(|k| k.as_str().to_string()).collect(),
            })
            .collect();
        let challenges = state
            .challenges()
            .map(|c| ChallengeSummary { id: c.id, challenger: c.challenger.clone(), accused: c.accused.clone(), outcome: c.outcome })
            .collect();
        let report = ScenarioReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.config.seed,
            events: self.cluster.log().len(),
            conservation: self.conservation,
            commitments,
            missed_epochs: self.missed,
            divergent: self.cluster.divergent().iter().map(|m| m.as_str().to_string()).collect(),
            issuers,
            wallets: ledger.wallets().clone(),
            reserve: ledger.reserve(),
            pool: ledger.pool(),
            escrowed: ledger.escrowed(),
            fee_credits: self.fee_credits,
            pool_credits: self.pool_credits,
            queries: self.queries,
            challenges,
            claimed: self.claimed,
            rejected: self.rejected,
            failed: self.failed,
            roots: state.roots(),
        };
        ScenarioRun { report, cluster: self.cluster }
    }
}

/// Scenarios shipped with the crate, as `(name, script)`.
pub fn bundled() -> [(&'static str, &'static str); 6] {
    [
        ("three-issuer-chain", include_str!("../scenarios/three-issuer-chain.scn")),
        ("busy-web", include_str!("../scenarios/busy-web.scn")),
        ("slashing-rounds", include_str!("../scenarios/slashing-rounds.scn")),
        ("corrupt-maintainer", include_str!("../scenarios/corrupt-maintainer.scn")),
        ("epoch-claims", include_str!("../scenarios/epoch-claims.scn")),
        ("equal-share", include_str!("../scenarios/equal-share.scn")),
    ]
}

pub fn bundled_scenario(name: &str) -> Option<Result<Scenario, ScriptParseError>> {
    bundled().into_iter().find(|(n, _)| *n == name).map(|(n, text)| Scenario::parse(n, text))
}
