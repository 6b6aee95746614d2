//! Stakes, reward balances and the token movements around them: issuer
//! registration, verification fees, challenge slashing and top-ups.
//!
//! Every token lives in exactly one place: the faucet reserve, a party's
//! wallet, an issuer's stake or reward balance, the registry pool, or a fee
//! escrow. Operations only move tokens between these, so
//! [`Ledger::total_tokens`] equals the genesis supply at all times.

use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::Signature;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::MaintainerId;
use crate::fixed::SCALE;
use crate::graph::{GraphError, TrustGraph, TrustPath};
use crate::hash::{Digest, HashAlgorithm};
use crate::identity::{Did, IssuerId};

pub type Amount = u64;
pub type ReceiptId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("stake {offered} is below the minimum {minimum}")]
    InsufficientStake { offered: Amount, minimum: Amount },
    #[error("key proof does not verify for `{0}`")]
    BadKeyProof(Did),
    #[error("issuer `{0}` is already registered")]
    AlreadyRegistered(Did),
    #[error("no stake account for `{0}`")]
    UnknownIssuer(Did),
    #[error("`{party}` holds {available}, needs {needed}")]
    InsufficientFunds { party: Did, available: Amount, needed: Amount },
    #[error("faucet reserve holds {available}, needs {needed}")]
    ReserveExhausted { available: Amount, needed: Amount },
    #[error("no escrowed payment {0} for this caller")]
    PaymentMissing(ReceiptId),
    #[error("challenge {0} was not upheld")]
    ChallengeNotUpheld(u64),
    #[error("accused `{0}` has no stake account")]
    UnknownAccused(Did),
    #[error("`{issuer}` has {available} in rewards, cannot withdraw {needed}")]
    InsufficientRewards { issuer: Did, available: Amount, needed: Amount },
    #[error("amount must be positive")]
    ZeroAmount,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How the non-credential-issuer half of a fee is shared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeeSplitRule {
    /// Each path edge's destination other than the credential issuer gets
    /// `⌊P/2 / edge_count⌋`; the divisor counts every edge.
    #[default]
    PerEdge,
    /// Every path issuer other than the credential issuer, source included,
    /// gets an equal share of `P/2`.
    EqualShare,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerParams {
    pub min_stake: Amount,
    pub fee: Amount,
    #[serde(default)]
    pub fee_split: FeeSplitRule,
}

/// Computes the fee shares for a path as `(credits, remainder)`. Credits
/// are in path order with the credential issuer first.
pub fn fee_shares(rule: FeeSplitRule, path: &TrustPath, credential_issuer: &Did, fee: Amount) -> (Vec<(Did, Amount)>, Amount) {
    let cred_share = fee / 2;
    let mut credits = vec![(credential_issuer.clone(), cred_share)];
    let others: Vec<&Did> = match rule {
        FeeSplitRule::PerEdge => path
            .edges
            .iter()
            .map(|e| &e.destination)
            .filter(|d| *d != credential_issuer)
            .collect(),
        FeeSplitRule::EqualShare => path.issuers().into_iter().filter(|d| *d != credential_issuer).collect(),
    };
    let divisor = match rule {
        FeeSplitRule::PerEdge => path.edges.len() as u64,
        FeeSplitRule::EqualShare => others.len() as u64,
    };
    if divisor > 0 {
        let share = fee / (2 * divisor);
        credits.extend(others.into_iter().map(|d| (d.clone(), share)));
    }
    let paid: Amount = credits.iter().map(|(_, a)| a).sum();
    (credits, fee - paid)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeAccount {
    pub issuer: IssuerId,
    pub staked: Amount,
    pub rewards: Amount,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escrow {
    pub payer: Did,
    pub amount: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeeDistribution {
    pub receipt: ReceiptId,
    pub credits: Vec<(Did, Amount)>,
    /// Shares owed to inactive issuers; they went to the pool instead.
    pub forfeited: Vec<(Did, Amount)>,
    pub remainder: Amount,
}

impl FeeDistribution {
    pub fn total(&self) -> Amount {
        self.credits.iter().chain(&self.forfeited).map(|(_, a)| a).sum::<Amount>() + self.remainder
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    Accept,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChallengeOutcome {
    Pending,
    Upheld,
    Dismissed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub id: u64,
    pub challenger: Did,
    pub accused: Did,
    pub epoch: u64,
    pub votes: BTreeMap<MaintainerId, Vote>,
    pub outcome: ChallengeOutcome,
}

impl Challenge {
    pub fn new(id: u64, challenger: Did, accused: Did, epoch: u64) -> Self {
        Challenge { id, challenger, accused, epoch, votes: BTreeMap::new(), outcome: ChallengeOutcome::Pending }
    }

    /// Decides the outcome once all `maintainer_count` votes are in: upheld
    /// on a strict majority of accepts, dismissed otherwise (ties dismiss).
    pub fn tally(&mut self, maintainer_count: usize) -> ChallengeOutcome {
        if self.outcome == ChallengeOutcome::Pending && self.votes.len() >= maintainer_count {
            let accepts = self.votes.values().filter(|v| **v == Vote::Accept).count();
            self.outcome = if 2 * accepts > maintainer_count {
                ChallengeOutcome::Upheld
            } else {
                ChallengeOutcome::Dismissed
            };
        }
        self.outcome
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slash {
    pub issuer: Did,
    pub owed: Amount,
    pub slashed: Amount,
    pub shortfall: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashReport {
    pub challenge: u64,
    pub accused: Slash,
    pub vouchers: Vec<Slash>,
    pub compensation: Amount,
    pub deactivated: Vec<Did>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    params: LedgerParams,
    supply: Amount,
    reserve: Amount,
    accounts: BTreeMap<Did, StakeAccount>,
    wallets: BTreeMap<Did, Amount>,
    pool: Amount,
    escrow: BTreeMap<ReceiptId, Escrow>,
    next_receipt: ReceiptId,
    shortfalls: Vec<Slash>,
}

impl Ledger {
    /// A ledger whose entire supply starts in the faucet reserve.
    pub fn new(params: LedgerParams, supply: Amount) -> Self {
        Ledger {
            params,
            supply,
            reserve: supply,
            accounts: BTreeMap::new(),
            wallets: BTreeMap::new(),
            pool: 0,
            escrow: BTreeMap::new(),
            next_receipt: 0,
            shortfalls: Vec::new(),
        }
    }

    pub fn params(&self) -> &LedgerParams {
        &self.params
    }

    pub fn supply(&self) -> Amount {
        self.supply
    }

    pub fn reserve(&self) -> Amount {
        self.reserve
    }

    pub fn pool(&self) -> Amount {
        self.pool
    }

    pub fn account(&self, did: &Did) -> Option<&StakeAccount> {
        self.accounts.get(did)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &StakeAccount> {
        self.accounts.values()
    }

    pub fn wallet(&self, did: &Did) -> Amount {
        self.wallets.get(did).copied().unwrap_or(0)
    }

    pub fn wallets(&self) -> &BTreeMap<Did, Amount> {
        &self.wallets
    }

    pub fn escrow(&self, receipt: ReceiptId) -> Option<&Escrow> {
        self.escrow.get(&receipt)
    }

    pub fn escrowed(&self) -> Amount {
        self.escrow.values().map(|e| e.amount).sum()
    }

    pub fn shortfalls(&self) -> &[Slash] {
        &self.shortfalls
    }

    pub fn is_active(&self, did: &Did) -> bool {
        self.accounts.get(did).is_some_and(|a| a.active)
    }

    /// Sum over every place a token can be held.
    pub fn total_tokens(&self) -> Amount {
        self.reserve
            + self.wallets.values().sum::<Amount>()
            + self.accounts.values().map(|a| a.staked + a.rewards).sum::<Amount>()
            + self.pool
            + self.escrowed()
    }

    pub fn is_conserved(&self) -> bool {
        self.total_tokens() == self.supply
    }

    /// Hash of the canonical JSON form; equal ledgers hash equal.
    pub fn digest(&self, alg: HashAlgorithm) -> Digest {
        alg.digest(&serde_json::to_vec(self).expect("ledger serializes"))
    }

    fn debit_wallet(&mut self, party: &Did, amount: Amount) -> Result<(), LedgerError> {
        let available = self.wallet(party);
        if available < amount {
            return Err(LedgerError::InsufficientFunds { party: party.clone(), available, needed: amount });
        }
        self.wallets.insert(party.clone(), available - amount);
        Ok(())
    }

    fn credit_wallet(&mut self, party: &Did, amount: Amount) {
        *self.wallets.entry(party.clone()).or_default() += amount;
    }

    /// Moves tokens from the faucet reserve into a party's wallet.
    pub fn faucet(&mut self, to: &Did, amount: Amount) -> Result<(), LedgerError> {
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        if self.reserve < amount {
            return Err(LedgerError::ReserveExhausted { available: self.reserve, needed: amount });
        }
        self.reserve -= amount;
        self.credit_wallet(to, amount);
        Ok(())
    }

    /// Locks one verification fee from the payer's wallet and returns the
    /// receipt that a query must present.
    pub fn escrow_fee(&mut self, payer: &Did) -> Result<ReceiptId, LedgerError> {
        let amount = self.params.fee;
        self.debit_wallet(payer, amount)?;
        let id = self.next_receipt;
        self.next_receipt += 1;
        self.escrow.insert(id, Escrow { payer: payer.clone(), amount });
        Ok(id)
    }

    pub fn check_escrow(&self, receipt: ReceiptId, payer: &Did) -> Result<&Escrow, LedgerError> {
        self.escrow
            .get(&receipt)
            .filter(|e| &e.payer == payer)
            .ok_or(LedgerError::PaymentMissing(receipt))
    }

    /// Returns an escrowed fee to its payer in full.
    pub fn refund(&mut self, receipt: ReceiptId, payer: &Did) -> Result<Amount, LedgerError> {
        self.check_escrow(receipt, payer)?;
        let e = self.escrow.remove(&receipt).expect("checked");
        self.credit_wallet(&e.payer, e.amount);
        Ok(e.amount)
    }

    /// Admits an issuer: checks the minimum stake and the proof of control
    /// over its key, locks the stake and adds the issuer to the graph.
    pub fn register_issuer(
        &mut self,
        graph: &mut TrustGraph,
        issuer: IssuerId,
        stake: Amount,
        challenge: &[u8],
        key_proof: &Signature,
    ) -> Result<&StakeAccount, LedgerError> {
        let did = issuer.did.clone();
        if self.accounts.contains_key(&did) {
            return Err(LedgerError::AlreadyRegistered(did));
        }
        if stake < self.params.min_stake {
            return Err(LedgerError::InsufficientStake { offered: stake, minimum: self.params.min_stake });
        }
        if !issuer.verify(challenge, key_proof) {
            return Err(LedgerError::BadKeyProof(did));
        }
        let available = self.wallet(&did);
        if available < stake {
            return Err(LedgerError::InsufficientFunds { party: did, available, needed: stake });
        }
        graph.add_issuer(issuer.clone())?;
        self.debit_wallet(&did, stake)?;
        self.accounts
            .insert(did.clone(), StakeAccount { issuer, staked: stake, rewards: 0, active: true });
        Ok(&self.accounts[&did])
    }

    /// Pays out an escrowed fee over the path that answered the query.
    /// Shares owed to inactive or unknown issuers go to the pool.
    pub fn distribute_fee(
        &mut self,
        receipt: ReceiptId,
        payer: &Did,
        path: &TrustPath,
        credential_issuer: &Did,
    ) -> Result<FeeDistribution, LedgerError> {
        let fee = self.check_escrow(receipt, payer)?.amount;
        let (shares, remainder) = fee_shares(self.params.fee_split, path, credential_issuer, fee);
        self.escrow.remove(&receipt);
        let mut credits = Vec::new();
        let mut forfeited = Vec::new();
        for (did, amount) in shares {
            match self.accounts.get_mut(&did).filter(|a| a.active) {
                Some(acct) => {
                    acct.rewards += amount;
                    credits.push((did, amount));
                }
                None => {
                    self.pool += amount;
                    forfeited.push((did, amount));
                }
            }
        }
        self.pool += remainder;
        Ok(FeeDistribution { receipt, credits, forfeited, remainder })
    }

    /// Moves reward balance out to the issuer's wallet.
    pub fn withdraw_rewards(&mut self, did: &Did, amount: Amount) -> Result<(), LedgerError> {
        let acct = self.accounts.get_mut(did).ok_or_else(|| LedgerError::UnknownIssuer(did.clone()))?;
        if acct.rewards < amount {
            return Err(LedgerError::InsufficientRewards { issuer: did.clone(), available: acct.rewards, needed: amount });
        }
        acct.rewards -= amount;
        self.credit_wallet(did, amount);
        Ok(())
    }

    /// Slashes the accused by the minimum stake and every voucher `i` with
    /// an edge `i -> accused` of weight `s` by `⌊T·s⌋`, all floored at the
    /// account's current stake. Proceeds compensate the challenger. Accounts
    /// left below the minimum are deactivated and leave the graph.
    pub fn apply_challenge_outcome(
        &mut self,
        graph: &mut TrustGraph,
        challenge: &Challenge,
    ) -> Result<SlashReport, LedgerError> {
        if challenge.outcome != ChallengeOutcome::Upheld {
            return Err(LedgerError::ChallengeNotUpheld(challenge.id));
        }
        if !self.accounts.contains_key(&challenge.accused) {
            return Err(LedgerError::UnknownAccused(challenge.accused.clone()));
        }
        let min = self.params.min_stake;
        let voucher_debts: Vec<(Did, Amount)> = graph
            .vouchers(&challenge.accused)
            .map(|(d, w)| (d.clone(), min * u64::from(w.raw()) / u64::from(SCALE)))
            .collect();

        let accused = self.slash(&challenge.accused, min);
        let vouchers: Vec<Slash> = voucher_debts.into_iter().map(|(d, owed)| self.slash(&d, owed)).collect();
        let compensation = accused.slashed + vouchers.iter().map(|s| s.slashed).sum::<Amount>();
        self.credit_wallet(&challenge.challenger, compensation);

        let touched: BTreeSet<Did> = std::iter::once(accused.issuer.clone())
            .chain(vouchers.iter().map(|s| s.issuer.clone()))
            .collect();
        let mut deactivated = Vec::new();
        for did in touched {
            let acct = self.accounts.get_mut(&did).expect("slashed accounts exist");
            if acct.active && acct.staked < min {
                acct.active = false;
                if graph.contains(&did) {
                    graph.remove_issuer(&did)?;
                }
                deactivated.push(did);
            }
        }
        Ok(SlashReport { challenge: challenge.id, accused, vouchers, compensation, deactivated })
    }

    fn slash(&mut self, did: &Did, owed: Amount) -> Slash {
        let slash = match self.accounts.get_mut(did) {
            Some(acct) => {
                let slashed = owed.min(acct.staked);
                acct.staked -= slashed;
                Slash { issuer: did.clone(), owed, slashed, shortfall: owed - slashed }
            }
            None => Slash { issuer: did.clone(), owed, slashed: 0, shortfall: owed },
        };
        if slash.shortfall > 0 {
            self.shortfalls.push(slash.clone());
        }
        slash
    }

    /// Adds stake from the issuer's wallet. An inactive account that reaches
    /// the minimum becomes active again and rejoins the graph without edges.
    pub fn top_up(&mut self, graph: &mut TrustGraph, did: &Did, amount: Amount) -> Result<&StakeAccount, LedgerError> {
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        let acct = self.accounts.get(did).ok_or_else(|| LedgerError::UnknownIssuer(did.clone()))?;
        let reactivate = !acct.active && acct.staked + amount >= self.params.min_stake;
        let issuer = acct.issuer.clone();
        let available = self.wallet(did);
        if available < amount {
            return Err(LedgerError::InsufficientFunds { party: did.clone(), available, needed: amount });
        }
        if reactivate && !graph.contains(did) {
            graph.add_issuer(issuer)?;
        }
        self.debit_wallet(did, amount)?;
        let acct = self.accounts.get_mut(did).expect("checked");
        acct.staked += amount;
        if reactivate {
            acct.active = true;
        }
        Ok(acct)
    }
}
