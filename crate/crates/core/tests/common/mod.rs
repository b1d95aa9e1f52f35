#![allow(dead_code)]

use std::collections::HashMap;

use qx_core::adjudication::{AdjudicationPolicy, Attestation};
use qx_core::ledger::{AccountId, AccountKind, Ledger, Money, Owner, TxnId};
use qx_core::protocol::{Participant, SettlementPath, Terms, Timestamp, Transaction, TransactionState, Verdict, DAY};
use qx_core::AnswerSpec;

pub const P: u64 = 200_000;
pub const S: u64 = 100_000;
pub const D: u64 = 40_000;
pub const FEE_Q: u64 = 5_000;
pub const FEE_A: u64 = 5_000;

pub const ANSWER_DEADLINE: Timestamp = Timestamp(10 * DAY);
pub const EVIDENCE_DEADLINE: Timestamp = Timestamp(20 * DAY);

pub fn terms() -> Terms {
    Terms {
        price: Money(P),
        stake: Money(S),
        deposit: Money(D),
        fee_q: Money(FEE_Q),
        fee_a: Money(FEE_A),
        answer_deadline: ANSWER_DEADLINE,
        evidence_deadline: EVIDENCE_DEADLINE,
    }
}

pub fn spec() -> AnswerSpec {
    AnswerSpec::enumerated(["compound-17", "compound-42", "none"])
}

pub struct World {
    pub ledger: Ledger,
    pub buyer: Participant,
    pub seller: Participant,
    pub txn: Transaction,
}

impl World {
    pub fn new(terms: Terms) -> World {
        let mut ledger = Ledger::with_house_accounts();
        let b = ledger.open_account(AccountKind::Buyer, Some(Owner::Party("buyer".into()))).unwrap();
        let s = ledger.open_account(AccountKind::Seller, Some(Owner::Party("seller".into()))).unwrap();
        ledger.fund(b, terms.buyer_commitment().unwrap()).unwrap();
        ledger.fund(s, terms.seller_commitment().unwrap()).unwrap();
        let buyer = Participant::new("buyer", b);
        let seller = Participant::new("seller", s);
        let txn = Transaction::create(&mut ledger, TxnId(1), buyer.clone(), "what binds?", spec(), terms, AdjudicationPolicy::default())
            .unwrap();
        World { ledger, buyer, seller, txn }
    }

    pub fn fee(&self) -> AccountId {
        self.ledger.exchange_fee_account().unwrap()
    }

    pub fn sink(&self) -> AccountId {
        self.ledger.sink_account().unwrap()
    }

    pub fn balance(&self, a: AccountId) -> u64 {
        self.ledger.balance_of(a).unwrap().0
    }

    pub fn post(&mut self) {
        self.txn.post(&mut self.ledger).unwrap();
    }

    pub fn accept(&mut self) {
        self.txn.accept(&mut self.ledger, self.seller.clone(), Timestamp(DAY)).unwrap();
    }

    pub fn answer(&mut self, raw: &str) {
        self.txn.submit_answer("seller", raw, Timestamp(2 * DAY)).unwrap();
    }

    pub fn evidence(&mut self, claimed: &str) {
        let body = Attestation::new(claimed, "lab notebook").to_bytes();
        self.txn.submit_evidence("buyer", body, Timestamp(5 * DAY)).unwrap();
    }

    pub fn settle(&mut self) {
        self.txn.settle(&mut self.ledger).unwrap();
    }

    /// Reaches `state` by the shortest sequence of valid operations.
    pub fn reach(state: TransactionState) -> World {
        use TransactionState::*;
        let mut w = World::new(terms());
        match state {
            Draft => {}
            Posted => w.post(),
            ExpiredUnaccepted => {
                w.post();
                w.txn.advance_time(ANSWER_DEADLINE.plus(1));
            }
            Accepted | ExpiredUnanswered => {
                w.post();
                w.accept();
                if state == ExpiredUnanswered {
                    w.txn.advance_time(ANSWER_DEADLINE.plus(1));
                }
            }
            AnswerRejected => {
                w.post();
                w.accept();
                w.answer("compound-99");
            }
            Answered | ExpiredUnverified => {
                w.post();
                w.accept();
                w.answer("compound-17");
                if state == ExpiredUnverified {
                    w.txn.advance_time(EVIDENCE_DEADLINE.plus(1));
                }
            }
            EvidenceSubmitted | Adjudicated | Settled => {
                w.post();
                w.accept();
                w.answer("compound-17");
                w.evidence("compound-17");
                if state != EvidenceSubmitted {
                    w.txn.adjudicate(Verdict::Correct).unwrap();
                }
                if state == Settled {
                    w.settle();
                }
            }
        }
        assert_eq!(w.txn.state, state);
        w
    }

    /// Drives a fresh transaction to the point where it settles along `path`.
    pub fn ready_to_settle(path: SettlementPath, terms: Terms) -> World {
        let mut w = World::new(terms);
        w.post();
        if path == SettlementPath::ExpiredUnaccepted {
            w.txn.advance_time(terms.answer_deadline.plus(1));
            return w;
        }
        w.accept();
        match path {
            SettlementPath::AnswerRejected => w.answer("not-an-option"),
            SettlementPath::ExpiredUnanswered => {
                w.txn.advance_time(terms.answer_deadline.plus(1));
            }
            SettlementPath::ExpiredUnverified => {
                w.answer("compound-42");
                w.txn.advance_time(terms.evidence_deadline.plus(1));
            }
            _ => {
                w.answer("compound-42");
                w.evidence("compound-42");
                let verdict = match path {
                    SettlementPath::Correct => Verdict::Correct,
                    SettlementPath::Incorrect => Verdict::Incorrect,
                    _ => Verdict::InsufficientEvidence,
                };
                w.txn.adjudicate(verdict).unwrap();
            }
        }
        assert_eq!(w.txn.settlement_path(), Some(path));
        w
    }
}

/// Balances rebuilt from the exported journal text and the grants, without
/// going through any ledger code.
pub fn journal_balances(ledger: &Ledger) -> HashMap<String, i128> {
    let mut balances: HashMap<String, i128> = HashMap::new();
    for g in ledger.grants() {
        *balances.entry(g.account.to_string()).or_default() += g.amount.0 as i128;
    }
    let mut buf = Vec::new();
    ledger.export_journal(&mut buf).unwrap();
    for line in String::from_utf8(buf).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let amount = v["amount"].as_u64().unwrap() as i128;
        *balances.entry(v["debit"].as_str().unwrap().to_owned()).or_default() -= amount;
        *balances.entry(v["credit"].as_str().unwrap().to_owned()).or_default() += amount;
    }
    balances
}
