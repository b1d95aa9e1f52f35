//! Service state, rebuilt deterministically by applying events in order.

use std::collections::BTreeMap;

use qx_core::adjudication::{AdjudicationPolicy, DecisionStore};
use qx_core::ledger::{AccountId, AccountKind, Ledger, Owner, TxnId};
use qx_core::protocol::{Participant, Timestamp, Transaction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ServiceError;
use crate::events::{Capability, Event, EventBody, LogError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Party {
    pub pseudonym: String,
    pub credential_hash: String,
    pub capabilities: Vec<Capability>,
    pub buyer_account: Option<AccountId>,
    pub seller_account: Option<AccountId>,
}

impl Party {
    pub fn can(&self, cap: Capability) -> bool {
        self.capabilities.contains(&cap)
    }

    pub fn owns(&self, account: AccountId) -> bool {
        self.buyer_account == Some(account) || self.seller_account == Some(account)
    }
}

/// How a party relates to a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Buyer,
    Seller,
    Arbiter,
}

pub fn role_of(txn: &Transaction, pseudonym: &str) -> Option<Role> {
    if txn.buyer.pseudonym == pseudonym {
        Some(Role::Buyer)
    } else if txn.seller.as_ref().is_some_and(|s| s.pseudonym == pseudonym) {
        Some(Role::Seller)
    } else if txn.policy.arbiter() == Some(pseudonym) {
        Some(Role::Arbiter)
    } else {
        None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeState {
    pub ledger: Ledger,
    pub parties: BTreeMap<String, Party>,
    pub credentials: BTreeMap<String, String>,
    pub transactions: BTreeMap<TxnId, Transaction>,
    pub decisions: DecisionStore,
    pub clock: Timestamp,
    pub next_txn: u64,
    pub last_seq: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("event {seq} does not apply: {reason}")]
    CorruptEvent { seq: u64, reason: String },
}

impl ExchangeState {
    pub fn new() -> Self {
        ExchangeState { ledger: Ledger::with_house_accounts(), next_txn: 1, ..Default::default() }
    }

    /// Byte-stable serialization of the whole state.
    pub fn serialize(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn party(&self, pseudonym: &str) -> Result<&Party, ServiceError> {
        self.parties.get(pseudonym).ok_or(ServiceError::NotFound)
    }

    pub fn party_by_credential_hash(&self, hash: &str) -> Option<&Party> {
        self.credentials.get(hash).and_then(|p| self.parties.get(p))
    }

    /// The transaction if `pseudonym` takes part in it; `NotFound` otherwise,
    /// so non-participants cannot tell whether it exists.
    pub fn visible_txn(&self, id: TxnId, pseudonym: &str) -> Result<(&Transaction, Role), ServiceError> {
        let txn = self.transactions.get(&id).ok_or(ServiceError::NotFound)?;
        let role = role_of(txn, pseudonym).ok_or(ServiceError::NotFound)?;
        Ok((txn, role))
    }

    /// Applies one event. On error the state is unchanged.
    pub fn apply(&mut self, event: &Event) -> Result<(), ServiceError> {
        if event.seq != self.last_seq + 1 {
            return Err(ServiceError::Internal(format!("event seq {} after {}", event.seq, self.last_seq)));
        }
        let now = event.recorded_at;
        if now < self.clock {
            return Err(ServiceError::BadRequest("time cannot move backwards".into()));
        }
        self.apply_body(&event.body, now)?;
        self.clock = match event.body {
            EventBody::TimeAdvanced { to } => to,
            _ => now,
        };
        self.last_seq = event.seq;
        Ok(())
    }

    fn txn_for(&mut self, id: TxnId, by: &str) -> Result<(&mut Transaction, Role), ServiceError> {
        let txn = self.transactions.get_mut(&id).ok_or(ServiceError::NotFound)?;
        let role = role_of(txn, by).ok_or(ServiceError::NotFound)?;
        Ok((txn, role))
    }

    fn apply_body(&mut self, body: &EventBody, now: Timestamp) -> Result<(), ServiceError> {
        match body {
            EventBody::Registered { pseudonym, credential_hash, capabilities, buyer_account, seller_account } => {
                if self.parties.contains_key(pseudonym) || self.credentials.contains_key(credential_hash) {
                    return Err(ServiceError::Conflict("party already registered".into()));
                }
                if capabilities.is_empty() {
                    return Err(ServiceError::BadRequest("at least one capability is required".into()));
                }
                let mut open = |wanted: bool, kind: AccountKind, recorded: &Option<AccountId>| {
                    let opened = if wanted {
                        Some(self.ledger.open_account(kind, Some(Owner::Party(pseudonym.clone())))?)
                    } else {
                        None
                    };
                    if opened != *recorded {
                        return Err(ServiceError::Internal("account ids diverge from the event".into()));
                    }
                    Ok(opened)
                };
                let buyer_account = open(capabilities.contains(&Capability::Buy), AccountKind::Buyer, buyer_account)?;
                let seller_account = open(capabilities.contains(&Capability::Sell), AccountKind::Seller, seller_account)?;
                let mut caps = capabilities.clone();
                caps.sort();
                caps.dedup();
                self.credentials.insert(credential_hash.clone(), pseudonym.clone());
                self.parties.insert(
                    pseudonym.clone(),
                    Party {
                        pseudonym: pseudonym.clone(),
                        credential_hash: credential_hash.clone(),
                        capabilities: caps,
                        buyer_account,
                        seller_account,
                    },
                );
            }
            EventBody::Funded { account, amount } => {
                let kind = self.ledger.account(*account).map_err(|_| ServiceError::NotFound)?.kind;
                if !matches!(kind, AccountKind::Buyer | AccountKind::Seller) {
                    return Err(ServiceError::BadRequest("only party accounts can be funded".into()));
                }
                self.ledger.fund(*account, *amount)?;
            }
            EventBody::QuestionCreated { txn, buyer, text, spec, terms, policy } => {
                if txn.0 != self.next_txn {
                    return Err(ServiceError::Internal(format!("expected transaction id {}", self.next_txn)));
                }
                let party = self.party(buyer)?;
                let account = match (party.can(Capability::Buy), party.buyer_account) {
                    (true, Some(a)) => a,
                    _ => return Err(ServiceError::Forbidden("party cannot buy".into())),
                };
                if let AdjudicationPolicy::ManualRuling { arbiter } = policy {
                    let ok = arbiter != buyer && self.parties.get(arbiter).is_some_and(|a| a.can(Capability::Arbitrate));
                    if !ok {
                        return Err(ServiceError::BadRequest("arbiter must be another party able to arbitrate".into()));
                    }
                }
                let t = Transaction::create(
                    &mut self.ledger,
                    *txn,
                    Participant::new(buyer.clone(), account),
                    text.clone(),
                    spec.clone(),
                    *terms,
                    policy.clone(),
                )?;
                self.transactions.insert(*txn, t);
                self.next_txn += 1;
            }
            EventBody::QuestionPosted { txn, by } => {
                let ledger = &mut self.ledger;
                let t = self.transactions.get_mut(txn).ok_or(ServiceError::NotFound)?;
                match role_of(t, by) {
                    Some(Role::Buyer) => {}
                    Some(_) => return Err(ServiceError::Forbidden("only the buyer can post".into())),
                    None => return Err(ServiceError::NotFound),
                }
                t.post(ledger)?;
            }
            EventBody::Accepted { txn, seller } => {
                let party = self.parties.get(seller).ok_or(ServiceError::NotFound)?;
                let account = match (party.can(Capability::Sell), party.seller_account) {
                    (true, Some(a)) => a,
                    _ => return Err(ServiceError::Forbidden("party cannot sell".into())),
                };
                let t = self.transactions.get_mut(txn).ok_or(ServiceError::NotFound)?;
                if t.policy.arbiter() == Some(seller.as_str()) {
                    return Err(ServiceError::Forbidden("the arbiter cannot take a side".into()));
                }
                t.accept(&mut self.ledger, Participant::new(seller.clone(), account), now)?;
            }
            EventBody::Answered { txn, by, answer } => {
                let (t, _) = self.txn_for(*txn, by)?;
                t.submit_answer(by, answer, now)?;
            }
            EventBody::EvidenceSubmitted { txn, by, body } => {
                let (t, _) = self.txn_for(*txn, by)?;
                t.submit_evidence(by, body.clone(), now)?;
            }
            EventBody::Adjudicated { txn, by, ruling } => {
                let t = self.transactions.get_mut(txn).ok_or(ServiceError::NotFound)?;
                let role = role_of(t, by).ok_or(ServiceError::NotFound)?;
                match (&t.policy, ruling) {
                    (AdjudicationPolicy::ManualRuling { .. }, Some(r)) => {
                        self.decisions.adjudicate_manual(t, by, r.verdict, &r.rationale, now)?;
                    }
                    (AdjudicationPolicy::ManualRuling { .. }, None) => {
                        return Err(ServiceError::BadRequest("a manual ruling needs a verdict and rationale".into()));
                    }
                    (AdjudicationPolicy::AutoAttestation { .. }, None) if role != Role::Arbiter => {
                        self.decisions.adjudicate_auto(t, now)?;
                    }
                    (AdjudicationPolicy::AutoAttestation { .. }, _) => {
                        return Err(ServiceError::BadRequest("this transaction is adjudicated automatically".into()));
                    }
                }
            }
            EventBody::Settled { txn, by } => {
                let ledger = &mut self.ledger;
                let t = self.transactions.get_mut(txn).ok_or(ServiceError::NotFound)?;
                role_of(t, by).ok_or(ServiceError::NotFound)?;
                let mut probe = t.clone();
                probe.advance_time(now);
                if probe.settlement_path().is_none() {
                    return Err(ServiceError::Conflict(format!("cannot Settle a transaction in state {}", probe.state)));
                }
                probe.settle(ledger)?;
                *t = probe;
            }
            EventBody::TimeAdvanced { to } => {
                if *to < self.clock {
                    return Err(ServiceError::BadRequest("time cannot move backwards".into()));
                }
                for t in self.transactions.values_mut() {
                    t.advance_time(*to);
                }
            }
        }
        Ok(())
    }

    /// Rebuilds state from a gapless event list.
    pub fn replay(events: &[Event]) -> Result<ExchangeState, ReplayError> {
        let mut state = ExchangeState::new();
        for (i, e) in events.iter().enumerate() {
            let expected = i as u64 + 1;
            if e.seq != expected {
                return Err(LogError::SequenceGap { expected, found: e.seq }.into());
            }
            state
                .apply(e)
                .map_err(|err| ReplayError::CorruptEvent { seq: e.seq, reason: err.to_string() })?;
        }
        Ok(state)
    }

    /// Total issued by the faucet equals the sum of balances.
    pub fn conserved(&self) -> bool {
        self.ledger.total_issued() == self.ledger.total_supply()
    }
}
