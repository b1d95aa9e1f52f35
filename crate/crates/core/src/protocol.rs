//! Transaction lifecycle and settlement.
//!
//! A buyer drafts a question with an allowed-answer set and [`Terms`], posts
//! it (price, deposit and buyer fee move into escrow / the fee account), a
//! seller accepts by staking, answers, the buyer submits evidence, the
//! exchange adjudicates, and [`Transaction::settle`] empties escrow
//! according to the payout table in [`payout_transfers`].
//!
//! ```text
//! Draft -> Posted -> Accepted -> Answered -> EvidenceSubmitted -> Adjudicated -> Settled
//!            |          |  \          |
//!            |          |   AnswerRejected ---------------------------------> Settled
//!            |          ExpiredUnanswered ----------------------------------> Settled
//!            |                        ExpiredUnverified --------------------> Settled
//!            ExpiredUnaccepted ---------------------------------------------> Settled
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adjudication::AdjudicationPolicy;
use crate::answer_spec::{AnswerSpec, AnswerValue, Membership, SpecError};
use crate::ledger::{AccountId, AccountKind, Ledger, LedgerEntry, LedgerError, Money, Owner, Reason, Transfer, TxnId};

/// Seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn plus(self, secs: i64) -> Timestamp {
        Timestamp(self.0.saturating_add(secs))
    }
}

pub const DAY: i64 = 24 * 60 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terms {
    pub price: Money,
    pub stake: Money,
    pub deposit: Money,
    pub fee_q: Money,
    pub fee_a: Money,
    pub answer_deadline: Timestamp,
    pub evidence_deadline: Timestamp,
}

impl Terms {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |why: &str| Err(ProtocolError::InvalidTerms(why.to_owned()));
        if self.price.is_zero() {
            return bad("price must be positive");
        }
        if self.stake.is_zero() {
            return bad("stake must be positive");
        }
        if self.deposit.is_zero() {
            return bad("deposit must be positive");
        }
        if self.answer_deadline >= self.evidence_deadline {
            return bad("answer deadline must precede evidence deadline");
        }
        let buyer = self.buyer_commitment();
        let seller = self.seller_commitment();
        if buyer.is_none() || seller.is_none() || self.price.checked_add(self.stake).is_none() {
            return bad("amounts overflow");
        }
        Ok(())
    }

    /// What posting the question costs the buyer: P + D + fee_Q.
    pub fn buyer_commitment(&self) -> Option<Money> {
        self.price.checked_add(self.deposit)?.checked_add(self.fee_q)
    }

    /// What accepting costs the seller: S + fee_A.
    pub fn seller_commitment(&self) -> Option<Money> {
        self.stake.checked_add(self.fee_a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransactionState {
    Draft,
    Posted,
    Accepted,
    Answered,
    AnswerRejected,
    EvidenceSubmitted,
    Adjudicated,
    Settled,
    ExpiredUnaccepted,
    ExpiredUnanswered,
    ExpiredUnverified,
}

impl TransactionState {
    pub const ALL: [TransactionState; 11] = [
        TransactionState::Draft,
        TransactionState::Posted,
        TransactionState::Accepted,
        TransactionState::Answered,
        TransactionState::AnswerRejected,
        TransactionState::EvidenceSubmitted,
        TransactionState::Adjudicated,
        TransactionState::Settled,
        TransactionState::ExpiredUnaccepted,
        TransactionState::ExpiredUnanswered,
        TransactionState::ExpiredUnverified,
    ];

    /// States from which `settle` may run.
    pub fn is_settleable(self) -> bool {
        use TransactionState::*;
        matches!(self, Adjudicated | AnswerRejected | ExpiredUnanswered | ExpiredUnverified | ExpiredUnaccepted)
    }

    pub fn is_settled(self) -> bool {
        self == TransactionState::Settled
    }
}

impl fmt::Display for TransactionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Mutating operations on a transaction, for error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Post,
    Accept,
    Answer,
    Evidence,
    Adjudicate,
    Settle,
}

impl Operation {
    pub const ALL: [Operation; 6] = [
        Operation::Post,
        Operation::Accept,
        Operation::Answer,
        Operation::Evidence,
        Operation::Adjudicate,
        Operation::Settle,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    Incorrect,
    InsufficientEvidence,
}

/// Which row of the payout table a settlement used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SettlementPath {
    Correct,
    Incorrect,
    InsufficientEvidence,
    AnswerRejected,
    ExpiredUnanswered,
    ExpiredUnverified,
    ExpiredUnaccepted,
}

impl SettlementPath {
    pub const ALL: [SettlementPath; 7] = [
        SettlementPath::Correct,
        SettlementPath::Incorrect,
        SettlementPath::InsufficientEvidence,
        SettlementPath::AnswerRejected,
        SettlementPath::ExpiredUnanswered,
        SettlementPath::ExpiredUnverified,
        SettlementPath::ExpiredUnaccepted,
    ];

    /// Whether a seller had staked on this path.
    pub fn has_seller(self) -> bool {
        self != SettlementPath::ExpiredUnaccepted
    }
}

/// A party as seen by the protocol: a pseudonym and the account it pays from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub pseudonym: String,
    pub account: AccountId,
}

impl Participant {
    pub fn new(pseudonym: impl Into<String>, account: AccountId) -> Self {
        Participant { pseudonym: pseudonym.into(), account }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub raw: String,
    pub value: Option<AnswerValue>,
    pub membership: Membership,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    #[serde(with = "hex_bytes")]
    pub body: Vec<u8>,
    pub digest: String,
    pub submitted_at: Timestamp,
}

impl EvidenceRecord {
    pub fn new(body: Vec<u8>, submitted_at: Timestamp) -> Self {
        let digest = digest_hex(&body);
        EvidenceRecord { body, digest, submitted_at }
    }

    /// Recomputes the digest and compares it with the stored one.
    pub fn verify(&self) -> bool {
        digest_hex(&self.body) == self.digest
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid answer spec: {0}")]
    InvalidSpec(#[from] SpecError),
    #[error("invalid terms: {0}")]
    InvalidTerms(String),
    #[error("cannot {op:?} a transaction in state {state}")]
    WrongState { op: Operation, state: TransactionState },
    #[error("insufficient funds: need {needed}, have {available}")]
    InsufficientFunds { needed: Money, available: Money },
    #[error("deadline has passed")]
    DeadlinePassed,
    #[error("a buyer cannot accept their own question")]
    SelfDealing,
    #[error("caller is not the seller of this transaction")]
    NotSeller,
    #[error("caller is not the buyer of this transaction")]
    NotBuyer,
    #[error("escrow holds {actual}, expected {expected}")]
    EscrowMismatch { expected: Money, actual: Money },
    #[error("ledger has no {0:?} account")]
    MissingHouseAccount(AccountKind),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxnId,
    pub buyer: Participant,
    pub seller: Option<Participant>,
    pub question_text: String,
    pub spec: AnswerSpec,
    pub terms: Terms,
    pub policy: AdjudicationPolicy,
    pub state: TransactionState,
    pub answer: Option<Submission>,
    pub evidence: Option<EvidenceRecord>,
    pub verdict: Option<Verdict>,
    pub escrow_account: AccountId,
    pub settlement: Option<SettlementPath>,
}

fn house(ledger: &Ledger, kind: AccountKind) -> Result<AccountId, ProtocolError> {
    ledger.singleton(kind).ok_or(ProtocolError::MissingHouseAccount(kind))
}

impl Transaction {
    /// Draft a question. Opens the escrow account; moves no money.
    pub fn create(
        ledger: &mut Ledger,
        id: TxnId,
        buyer: Participant,
        question_text: impl Into<String>,
        spec: AnswerSpec,
        terms: Terms,
        policy: AdjudicationPolicy,
    ) -> Result<Transaction, ProtocolError> {
        spec.validate()?;
        terms.validate()?;
        ledger.account(buyer.account)?;
        let escrow_account = ledger.open_account(AccountKind::Escrow, Some(Owner::Txn(id)))?;
        Ok(Transaction {
            id,
            buyer,
            seller: None,
            question_text: question_text.into(),
            spec,
            terms,
            policy,
            state: TransactionState::Draft,
            answer: None,
            evidence: None,
            verdict: None,
            escrow_account,
            settlement: None,
        })
    }

    fn expect_state(&self, op: Operation, allowed: &[TransactionState]) -> Result<(), ProtocolError> {
        if allowed.contains(&self.state) {
            Ok(())
        } else {
            Err(ProtocolError::WrongState { op, state: self.state })
        }
    }

    /// Moves P and D into escrow and fee_Q to the exchange.
    pub fn post(&mut self, ledger: &mut Ledger) -> Result<Vec<LedgerEntry>, ProtocolError> {
        self.expect_state(Operation::Post, &[TransactionState::Draft])?;
        let fee = house(ledger, AccountKind::ExchangeFee)?;
        let needed = self.terms.buyer_commitment().expect("validated terms");
        let available = ledger.balance_of(self.buyer.account)?;
        if available < needed {
            return Err(ProtocolError::InsufficientFunds { needed, available });
        }
        let b = self.buyer.account;
        let t = &self.terms;
        let transfers: Vec<Transfer> = [
            Transfer::new(b, self.escrow_account, t.price, Reason::PostPrice),
            Transfer::new(b, self.escrow_account, t.deposit, Reason::PostDeposit),
            Transfer::new(b, fee, t.fee_q, Reason::FeeQ),
        ]
        .into_iter()
        .filter(|t| !t.amount.is_zero())
        .collect();
        let entries = ledger.post_batch(&transfers, Some(self.id))?;
        self.state = TransactionState::Posted;
        Ok(entries)
    }

    /// Seller stakes S and pays fee_A.
    pub fn accept(&mut self, ledger: &mut Ledger, seller: Participant, now: Timestamp) -> Result<Vec<LedgerEntry>, ProtocolError> {
        self.expect_state(Operation::Accept, &[TransactionState::Posted])?;
        if seller.pseudonym == self.buyer.pseudonym || seller.account == self.buyer.account {
            return Err(ProtocolError::SelfDealing);
        }
        if now > self.terms.answer_deadline {
            return Err(ProtocolError::DeadlinePassed);
        }
        let fee = house(ledger, AccountKind::ExchangeFee)?;
        let needed = self.terms.seller_commitment().expect("validated terms");
        let available = ledger.balance_of(seller.account)?;
        if available < needed {
            return Err(ProtocolError::InsufficientFunds { needed, available });
        }
        let s = seller.account;
        let transfers: Vec<Transfer> = [
            Transfer::new(s, self.escrow_account, self.terms.stake, Reason::Stake),
            Transfer::new(s, fee, self.terms.fee_a, Reason::FeeA),
        ]
        .into_iter()
        .filter(|t| !t.amount.is_zero())
        .collect();
        let entries = ledger.post_batch(&transfers, Some(self.id))?;
        self.seller = Some(seller);
        self.state = TransactionState::Accepted;
        Ok(entries)
    }

    /// Records the seller's answer. An answer outside the allowed set moves
    /// the transaction to `AnswerRejected`; that is not an error.
    pub fn submit_answer(&mut self, caller: &str, raw: &str, now: Timestamp) -> Result<Membership, ProtocolError> {
        self.expect_state(Operation::Answer, &[TransactionState::Accepted])?;
        if self.seller.as_ref().map(|s| s.pseudonym.as_str()) != Some(caller) {
            return Err(ProtocolError::NotSeller);
        }
        if now > self.terms.answer_deadline {
            return Err(ProtocolError::DeadlinePassed);
        }
        let (value, membership) = self.spec.classify(raw);
        self.answer = Some(Submission { raw: raw.to_owned(), value, membership });
        self.state = match membership {
            Membership::InSet => TransactionState::Answered,
            Membership::OutsideSet => TransactionState::AnswerRejected,
        };
        Ok(membership)
    }

    pub fn submit_evidence(&mut self, caller: &str, body: Vec<u8>, now: Timestamp) -> Result<&EvidenceRecord, ProtocolError> {
        self.expect_state(Operation::Evidence, &[TransactionState::Answered])?;
        if caller != self.buyer.pseudonym {
            return Err(ProtocolError::NotBuyer);
        }
        if now > self.terms.evidence_deadline {
            return Err(ProtocolError::DeadlinePassed);
        }
        self.state = TransactionState::EvidenceSubmitted;
        Ok(self.evidence.insert(EvidenceRecord::new(body, now)))
    }

    pub fn adjudicate(&mut self, verdict: Verdict) -> Result<(), ProtocolError> {
        self.expect_state(Operation::Adjudicate, &[TransactionState::EvidenceSubmitted])?;
        debug_assert!(self.evidence.is_some());
        self.verdict = Some(verdict);
        self.state = TransactionState::Adjudicated;
        Ok(())
    }

    /// Applies deadline expiry. Returns whether the state changed.
    /// Deadlines are inclusive: at exactly the deadline nothing expires.
    pub fn advance_time(&mut self, now: Timestamp) -> bool {
        let next = match self.state {
            TransactionState::Posted if now > self.terms.answer_deadline => TransactionState::ExpiredUnaccepted,
            TransactionState::Accepted if now > self.terms.answer_deadline => TransactionState::ExpiredUnanswered,
            TransactionState::Answered if now > self.terms.evidence_deadline => TransactionState::ExpiredUnverified,
            _ => return false,
        };
        self.state = next;
        true
    }

    /// The payout-table row this transaction would settle under, if any.
    pub fn settlement_path(&self) -> Option<SettlementPath> {
        Some(match self.state {
            TransactionState::Adjudicated => match self.verdict? {
                Verdict::Correct => SettlementPath::Correct,
                Verdict::Incorrect => SettlementPath::Incorrect,
                Verdict::InsufficientEvidence => SettlementPath::InsufficientEvidence,
            },
            TransactionState::AnswerRejected => SettlementPath::AnswerRejected,
            TransactionState::ExpiredUnanswered => SettlementPath::ExpiredUnanswered,
            TransactionState::ExpiredUnverified => SettlementPath::ExpiredUnverified,
            TransactionState::ExpiredUnaccepted => SettlementPath::ExpiredUnaccepted,
            _ => return None,
        })
    }

    /// Empties escrow according to the payout table and marks the
    /// transaction settled.
    pub fn settle(&mut self, ledger: &mut Ledger) -> Result<Vec<LedgerEntry>, ProtocolError> {
        let path = self
            .settlement_path()
            .ok_or(ProtocolError::WrongState { op: Operation::Settle, state: self.state })?;
        let accounts = PayoutAccounts {
            buyer: self.buyer.account,
            seller: self.seller.as_ref().map(|s| s.account),
            escrow: self.escrow_account,
            exchange_fee: house(ledger, AccountKind::ExchangeFee)?,
            sink: house(ledger, AccountKind::Sink)?,
        };
        let expected = expected_escrow(path, &self.terms);
        let actual = ledger.balance_of(self.escrow_account)?;
        if actual != expected {
            return Err(ProtocolError::EscrowMismatch { expected, actual });
        }
        let transfers = payout_transfers(path, &self.terms, &accounts);
        let entries = ledger.post_batch(&transfers, Some(self.id))?;
        self.settlement = Some(path);
        self.state = TransactionState::Settled;
        Ok(entries)
    }
}

/// Escrow balance a transaction must hold when settling along `path`.
pub fn expected_escrow(path: SettlementPath, terms: &Terms) -> Money {
    let pd = Money(terms.price.0 + terms.deposit.0);
    if path.has_seller() {
        Money(pd.0 + terms.stake.0)
    } else {
        pd
    }
}

/// Accounts a settlement pays between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayoutAccounts {
    pub buyer: AccountId,
    pub seller: Option<AccountId>,
    pub escrow: AccountId,
    pub exchange_fee: AccountId,
    pub sink: AccountId,
}

/// The payout table. Forfeitures go to the sink so neither the buyer nor
/// the exchange gains from a bad outcome.
pub fn payout_transfers(path: SettlementPath, terms: &Terms, acc: &PayoutAccounts) -> Vec<Transfer> {
    use Reason::{ForfeitDeposit, ForfeitStake, PayoutPrice, Refund, ReturnDeposit, ReturnStake, SinkPrice};
    use SettlementPath::*;
    let (p, s, d) = (terms.price, terms.stake, terms.deposit);
    let esc = acc.escrow;
    let seller = || acc.seller.expect("seller present on paths with a stake");
    let rows = match path {
        Correct => vec![
            Transfer::new(esc, seller(), p, PayoutPrice),
            Transfer::new(esc, seller(), s, ReturnStake),
            Transfer::new(esc, acc.buyer, d, ReturnDeposit),
        ],
        Incorrect => vec![
            Transfer::new(esc, acc.sink, p, SinkPrice),
            Transfer::new(esc, acc.sink, s, ForfeitStake),
            Transfer::new(esc, acc.buyer, d, ReturnDeposit),
        ],
        InsufficientEvidence | ExpiredUnverified => vec![
            Transfer::new(esc, seller(), p, PayoutPrice),
            Transfer::new(esc, seller(), s, ReturnStake),
            Transfer::new(esc, acc.sink, d, ForfeitDeposit),
        ],
        AnswerRejected | ExpiredUnanswered => vec![
            Transfer::new(esc, acc.sink, s, ForfeitStake),
            Transfer::new(esc, acc.buyer, p, Refund),
            Transfer::new(esc, acc.buyer, d, ReturnDeposit),
        ],
        ExpiredUnaccepted => vec![
            Transfer::new(esc, acc.buyer, p, Refund),
            Transfer::new(esc, acc.buyer, d, ReturnDeposit),
            Transfer::new(acc.exchange_fee, acc.buyer, terms.fee_q, Refund),
        ],
    };
    rows.into_iter().filter(|t| !t.amount.is_zero()).collect()
}

/// Net money change per role over a whole lifecycle ending on `path`,
/// including the amounts posted when the question was posted and accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetFlows {
    pub buyer: i128,
    pub seller: i128,
    pub exchange: i128,
    pub sink: i128,
}

/// Lifecycle net flows for `path`, derived by running the posting and
/// settlement transfers over symbolic accounts.
pub fn lifecycle_net_flows(path: SettlementPath, terms: &Terms) -> NetFlows {
    let ids = AccountId::from_raw;
    let acc = PayoutAccounts {
        buyer: ids(0),
        seller: path.has_seller().then(|| ids(1)),
        escrow: ids(2),
        exchange_fee: ids(3),
        sink: ids(4),
    };
    let mut flows = [0i128; 5];
    let mut apply = |t: &Transfer| {
        flows[t.debit.raw() as usize] -= t.amount.signed();
        flows[t.credit.raw() as usize] += t.amount.signed();
    };
    apply(&Transfer::new(acc.buyer, acc.escrow, terms.price, Reason::PostPrice));
    apply(&Transfer::new(acc.buyer, acc.escrow, terms.deposit, Reason::PostDeposit));
    apply(&Transfer::new(acc.buyer, acc.exchange_fee, terms.fee_q, Reason::FeeQ));
    if let Some(seller) = acc.seller {
        apply(&Transfer::new(seller, acc.escrow, terms.stake, Reason::Stake));
        apply(&Transfer::new(seller, acc.exchange_fee, terms.fee_a, Reason::FeeA));
    }
    payout_transfers(path, terms, &acc).iter().for_each(&mut apply);
    debug_assert_eq!(flows[2], 0, "escrow must end empty");
    NetFlows { buyer: flows[0], seller: flows[1], exchange: flows[3], sink: flows[4] }
}
