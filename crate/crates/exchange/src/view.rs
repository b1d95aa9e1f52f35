//! What a participant is shown. Counterparties appear only by pseudonym;
//! no credential and no counterparty account id is ever included.

use std::collections::BTreeMap;

use qx_core::adjudication::{AdjudicationPolicy, Decision};
use qx_core::answer_spec::{AnswerSpec, Membership};
use qx_core::ledger::{AccountId, AccountKind, Money, TxnId};
use qx_core::protocol::{lifecycle_net_flows, NetFlows, SettlementPath, Terms, Timestamp, TransactionState, Verdict};
use serde::Serialize;

use crate::error::ServiceError;
use crate::state::{role_of, ExchangeState, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnswerView {
    pub raw: String,
    pub canonical: Option<String>,
    pub membership: Membership,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvidenceView {
    pub digest: String,
    pub submitted_at: Timestamp,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransactionView {
    pub id: TxnId,
    pub viewer_role: Role,
    pub buyer: String,
    pub seller: Option<String>,
    pub question_text: String,
    pub spec: AnswerSpec,
    pub terms: Terms,
    pub policy: AdjudicationPolicy,
    pub state: TransactionState,
    pub answer: Option<AnswerView>,
    pub evidence: Option<EvidenceView>,
    pub verdict: Option<Verdict>,
    pub decision: Option<Decision>,
    pub settlement: Option<SettlementPath>,
    pub escrow_account: AccountId,
    pub escrow_balance: Money,
    /// The viewer's own paying account for this transaction, if any.
    pub your_account: Option<AccountId>,
    /// Net lifecycle money flows for each way the transaction can end.
    pub payout_preview: BTreeMap<SettlementPath, NetFlows>,
}

pub fn render_view(state: &ExchangeState, id: TxnId, viewer: &str) -> Result<TransactionView, ServiceError> {
    let (_, role) = state.visible_txn(id, viewer)?;
    Ok(build(state, id, role))
}

/// Unrestricted view for the exchange operator.
pub fn render_admin_view(state: &ExchangeState, id: TxnId) -> Result<TransactionView, ServiceError> {
    state.transactions.get(&id).ok_or(ServiceError::NotFound)?;
    Ok(build(state, id, Role::Arbiter))
}

fn build(state: &ExchangeState, id: TxnId, role: Role) -> TransactionView {
    let txn = &state.transactions[&id];
    let your_account = match role {
        Role::Buyer => Some(txn.buyer.account),
        Role::Seller => txn.seller.as_ref().map(|s| s.account),
        Role::Arbiter => None,
    };
    TransactionView {
        id,
        viewer_role: role,
        buyer: txn.buyer.pseudonym.clone(),
        seller: txn.seller.as_ref().map(|s| s.pseudonym.clone()),
        question_text: txn.question_text.clone(),
        spec: txn.spec.clone(),
        terms: txn.terms,
        policy: txn.policy.clone(),
        state: txn.state,
        answer: txn.answer.as_ref().map(|a| AnswerView {
            raw: a.raw.clone(),
            canonical: a.value.as_ref().map(|v| v.canonical.to_string()),
            membership: a.membership,
        }),
        evidence: txn.evidence.as_ref().map(|e| EvidenceView {
            digest: e.digest.clone(),
            submitted_at: e.submitted_at,
            body: String::from_utf8_lossy(&e.body).into_owned(),
        }),
        verdict: txn.verdict,
        decision: state.decisions.get(id).cloned(),
        settlement: txn.settlement,
        escrow_account: txn.escrow_account,
        escrow_balance: state.ledger.balance_of(txn.escrow_account).unwrap_or_default(),
        your_account,
        payout_preview: SettlementPath::ALL.iter().map(|&p| (p, lifecycle_net_flows(p, &txn.terms))).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccountView {
    pub account: AccountId,
    pub kind: AccountKind,
    pub balance: Money,
}

/// Account balance, visible to its owner (or, for escrow, to the
/// transaction's participants). Everyone else gets `NotFound`.
pub fn render_account(state: &ExchangeState, account: AccountId, viewer: Option<&str>) -> Result<AccountView, ServiceError> {
    let acct = state.ledger.account(account).map_err(|_| ServiceError::NotFound)?;
    let allowed = match (viewer, &acct.owner) {
        (None, _) => true,
        (Some(v), Some(qx_core::ledger::Owner::Party(p))) => p == v,
        (Some(v), Some(qx_core::ledger::Owner::Txn(t))) => {
            state.transactions.get(t).is_some_and(|txn| role_of(txn, v).is_some())
        }
        (Some(_), None) => false,
    };
    if !allowed {
        return Err(ServiceError::NotFound);
    }
    Ok(AccountView { account, kind: acct.kind, balance: state.ledger.balance_of(account)? })
}
