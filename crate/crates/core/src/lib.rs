//! Core of an escrow-brokered question/answer exchange.
//!
//! A buyer pays a fixed price for an answer drawn from a set it specifies
//! up front. A seller stakes money on the answer and is paid only if it
//! turns out correct. The buyer posts a refundable deposit that comes back
//! when it submits timely evidence, and the exchange charges flat fees that
//! do not depend on the outcome.
//!
//! * [`ledger`]: exact-integer double-entry ledger.
//! * [`answer_spec`]: allowed-answer sets and membership checks.
//! * [`protocol`]: transaction lifecycle and payout table.
//! * [`adjudication`]: verdicts from evidence.
//! * [`incentive_sim`]: Monte-Carlo check of the incentives.

pub mod adjudication;
pub mod answer_spec;
pub mod incentive_sim;
pub mod ledger;
pub mod protocol;

pub use adjudication::{AdjudicationPolicy, Attestation, Decision, DecisionStore};
pub use answer_spec::{AnswerSpec, AnswerValue, Membership};
pub use ledger::{AccountId, AccountKind, Ledger, LedgerEntry, Money, Reason, TxnId};
pub use protocol::{SettlementPath, Terms, Timestamp, Transaction, TransactionState, Verdict};
