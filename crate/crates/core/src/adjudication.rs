//! Verdicts from evidence.
//!
//! Two policies are supported. [`AdjudicationPolicy::AutoAttestation`]
//! decides mechanically from a structured attestation the buyer submits as
//! evidence; [`AdjudicationPolicy::ManualRuling`] lets a named arbiter rule.
//! Nothing in this module touches the ledger: the exchange earns only the
//! flat fees posted by the protocol, whatever the verdict.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer_spec::{AnswerSpec, AnswerValue, Membership};
use crate::ledger::TxnId;
use crate::protocol::{EvidenceRecord, Operation, ProtocolError, Timestamp, Transaction, TransactionState, Verdict};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttestationSchema {
    /// `{"claimed_outcome": string, "supporting_note": string}`
    #[default]
    ClaimedOutcomeV1,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AdjudicationPolicy {
    AutoAttestation { schema: AttestationSchema },
    ManualRuling { arbiter: String },
}

impl Default for AdjudicationPolicy {
    fn default() -> Self {
        AdjudicationPolicy::AutoAttestation { schema: AttestationSchema::default() }
    }
}

impl AdjudicationPolicy {
    pub fn tag(&self) -> PolicyTag {
        match self {
            AdjudicationPolicy::AutoAttestation { .. } => PolicyTag::AutoAttestation,
            AdjudicationPolicy::ManualRuling { .. } => PolicyTag::ManualRuling,
        }
    }

    pub fn arbiter(&self) -> Option<&str> {
        match self {
            AdjudicationPolicy::ManualRuling { arbiter } => Some(arbiter),
            AdjudicationPolicy::AutoAttestation { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    AutoAttestation,
    ManualRuling,
}

/// Evidence body accepted by the automatic policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub claimed_outcome: String,
    pub supporting_note: String,
}

impl Attestation {
    pub fn new(claimed_outcome: impl Into<String>, supporting_note: impl Into<String>) -> Self {
        Attestation { claimed_outcome: claimed_outcome.into(), supporting_note: supporting_note.into() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("attestation serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub rationale: String,
    pub decided_at: Timestamp,
    pub policy_used: PolicyTag,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdjudicationError {
    #[error("caller is not the arbiter for this transaction")]
    NotArbiter,
    #[error("transaction uses the {0:?} policy")]
    WrongPolicy(PolicyTag),
    #[error("transaction in state {0} cannot be adjudicated")]
    WrongState(TransactionState),
    #[error("a ruling needs a rationale")]
    EmptyRationale,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Decides a verdict from a structured attestation. Total: every evidence
/// byte string produces a decision.
pub fn auto_verdict(
    spec: &AnswerSpec,
    answer: &AnswerValue,
    evidence: &EvidenceRecord,
    schema: AttestationSchema,
    now: Timestamp,
) -> Decision {
    let AttestationSchema::ClaimedOutcomeV1 = schema;
    let (verdict, rationale) = match serde_json::from_slice::<Attestation>(&evidence.body) {
        Err(_) => (Verdict::InsufficientEvidence, "evidence is not a valid attestation".to_owned()),
        Ok(att) => match spec.classify(&att.claimed_outcome) {
            (Some(claimed), Membership::InSet) if claimed.canonical == answer.canonical => {
                (Verdict::Correct, format!("attested outcome {} matches the answer", claimed.canonical))
            }
            (Some(claimed), Membership::InSet) => (
                Verdict::Incorrect,
                format!("attested outcome {} differs from answer {}", claimed.canonical, answer.canonical),
            ),
            _ => (Verdict::InsufficientEvidence, "attested outcome is outside the allowed set".to_owned()),
        },
    };
    Decision { verdict, rationale, decided_at: now, policy_used: PolicyTag::AutoAttestation }
}

/// Validates and builds a manual ruling. Does not record it.
pub fn manual_verdict(
    arbiter: &str,
    txn: &Transaction,
    verdict: Verdict,
    rationale: &str,
    now: Timestamp,
) -> Result<Decision, AdjudicationError> {
    let Some(expected) = txn.policy.arbiter() else {
        return Err(AdjudicationError::WrongPolicy(txn.policy.tag()));
    };
    if arbiter != expected {
        return Err(AdjudicationError::NotArbiter);
    }
    if txn.state != TransactionState::EvidenceSubmitted {
        return Err(AdjudicationError::WrongState(txn.state));
    }
    if rationale.trim().is_empty() {
        return Err(AdjudicationError::EmptyRationale);
    }
    Ok(Decision { verdict, rationale: rationale.to_owned(), decided_at: now, policy_used: PolicyTag::ManualRuling })
}

/// Append-once store of decisions, one per transaction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionStore {
    decisions: BTreeMap<TxnId, Decision>,
}

impl DecisionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, txn: TxnId) -> Option<&Decision> {
        self.decisions.get(&txn)
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// Runs the transaction's automatic policy, records the decision and
    /// forwards the verdict to the transaction.
    pub fn adjudicate_auto(&mut self, txn: &mut Transaction, now: Timestamp) -> Result<Decision, AdjudicationError> {
        let AdjudicationPolicy::AutoAttestation { schema } = txn.policy else {
            return Err(AdjudicationError::WrongPolicy(txn.policy.tag()));
        };
        self.ensure_open(txn)?;
        let (Some(answer), Some(evidence)) = (txn.answer.as_ref().and_then(|a| a.value.as_ref()), txn.evidence.as_ref())
        else {
            return Err(AdjudicationError::WrongState(txn.state));
        };
        let decision = auto_verdict(&txn.spec, answer, evidence, schema, now);
        self.commit(txn, decision)
    }

    pub fn adjudicate_manual(
        &mut self,
        txn: &mut Transaction,
        arbiter: &str,
        verdict: Verdict,
        rationale: &str,
        now: Timestamp,
    ) -> Result<Decision, AdjudicationError> {
        let decision = manual_verdict(arbiter, txn, verdict, rationale, now)?;
        self.ensure_open(txn)?;
        self.commit(txn, decision)
    }

    fn ensure_open(&self, txn: &Transaction) -> Result<(), AdjudicationError> {
        if txn.state != TransactionState::EvidenceSubmitted || self.decisions.contains_key(&txn.id) {
            return Err(AdjudicationError::WrongState(txn.state));
        }
        Ok(())
    }

    fn commit(&mut self, txn: &mut Transaction, decision: Decision) -> Result<Decision, AdjudicationError> {
        txn.adjudicate(decision.verdict).map_err(|e| match e {
            ProtocolError::WrongState { op: Operation::Adjudicate, state } => AdjudicationError::WrongState(state),
            other => AdjudicationError::Protocol(other),
        })?;
        self.decisions.insert(txn.id, decision.clone());
        Ok(decision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{AccountKind, Ledger, Money};
    use crate::protocol::{Participant, Terms, DAY};

    fn spec() -> AnswerSpec {
        AnswerSpec::enumerated(["compound-17", "compound-42", "none"])
    }

    fn answer(raw: &str) -> AnswerValue {
        spec().canonicalize(raw).unwrap()
    }

    fn evidence(body: &[u8]) -> EvidenceRecord {
        EvidenceRecord::new(body.to_vec(), Timestamp(5))
    }

    fn att(claim: &str) -> EvidenceRecord {
        evidence(&Attestation::new(claim, "assay plate 3").to_bytes())
    }

    #[test]
    fn auto_policy_outcomes() {
        let a = answer("compound-17");
        let schema = AttestationSchema::ClaimedOutcomeV1;
        assert_eq!(auto_verdict(&spec(), &a, &att("compound-17"), schema, Timestamp(9)).verdict, Verdict::Correct);
        assert_eq!(auto_verdict(&spec(), &a, &att(" COMPOUND-17"), schema, Timestamp(9)).verdict, Verdict::Correct);
        assert_eq!(auto_verdict(&spec(), &a, &att("none"), schema, Timestamp(9)).verdict, Verdict::Incorrect);
        assert_eq!(
            auto_verdict(&spec(), &a, &att("compound-99"), schema, Timestamp(9)).verdict,
            Verdict::InsufficientEvidence
        );
        for junk in [&b"corrupt-bytes"[..], b"", b"{}", b"{\"claimed_outcome\":3}", &[0xff, 0xfe]] {
            let d = auto_verdict(&spec(), &a, &evidence(junk), schema, Timestamp(9));
            assert_eq!(d.verdict, Verdict::InsufficientEvidence);
            assert_eq!(d.policy_used, PolicyTag::AutoAttestation);
        }
    }

    #[test]
    fn auto_policy_is_deterministic() {
        let a = answer("none");
        let e = att("compound-42");
        let d1 = auto_verdict(&spec(), &a, &e, AttestationSchema::ClaimedOutcomeV1, Timestamp(1));
        let d2 = auto_verdict(&spec(), &a, &e, AttestationSchema::ClaimedOutcomeV1, Timestamp(1));
        assert_eq!(d1, d2);
    }

    fn evidence_submitted(policy: AdjudicationPolicy, ledger: &mut Ledger) -> Transaction {
        let b = ledger.open_account(AccountKind::Buyer, None).unwrap();
        let s = ledger.open_account(AccountKind::Seller, None).unwrap();
        ledger.fund(b, Money(1_000)).unwrap();
        ledger.fund(s, Money(1_000)).unwrap();
        let terms = Terms {
            price: Money(100),
            stake: Money(50),
            deposit: Money(20),
            fee_q: Money(1),
            fee_a: Money(1),
            answer_deadline: Timestamp(DAY),
            evidence_deadline: Timestamp(2 * DAY),
        };
        let mut t = Transaction::create(ledger, TxnId(7), Participant::new("q", b), "?", spec(), terms, policy).unwrap();
        t.post(ledger).unwrap();
        t.accept(ledger, Participant::new("a", s), Timestamp(1)).unwrap();
        t.submit_answer("a", "compound-17", Timestamp(2)).unwrap();
        t.submit_evidence("q", Attestation::new("compound-17", "").to_bytes(), Timestamp(3)).unwrap();
        t
    }

    #[test]
    fn manual_ruling_rules() {
        let mut ledger = Ledger::with_house_accounts();
        let mut t = evidence_submitted(AdjudicationPolicy::ManualRuling { arbiter: "x1".into() }, &mut ledger);
        let mut store = DecisionStore::new();
        assert_eq!(
            store.adjudicate_manual(&mut t, "x2", Verdict::Correct, "looks right", Timestamp(4)),
            Err(AdjudicationError::NotArbiter)
        );
        assert_eq!(
            store.adjudicate_manual(&mut t, "x1", Verdict::Correct, "  ", Timestamp(4)),
            Err(AdjudicationError::EmptyRationale)
        );
        assert_eq!(store.adjudicate_auto(&mut t, Timestamp(4)), Err(AdjudicationError::WrongPolicy(PolicyTag::ManualRuling)));
        let d = store
            .adjudicate_manual(&mut t, "x1", Verdict::Correct, "binding confirmed", Timestamp(4))
            .unwrap();
        assert_eq!(d.verdict, Verdict::Correct);
        assert_eq!(t.state, TransactionState::Adjudicated);
        assert_eq!(
            store.adjudicate_manual(&mut t, "x1", Verdict::Incorrect, "changed my mind", Timestamp(5)),
            Err(AdjudicationError::WrongState(TransactionState::Adjudicated))
        );
        assert_eq!(store.get(t.id), Some(&d));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn auto_adjudication_through_store() {
        let mut ledger = Ledger::with_house_accounts();
        let mut t = evidence_submitted(AdjudicationPolicy::default(), &mut ledger);
        let entries_before = ledger.entries().len();
        let mut store = DecisionStore::new();
        let d = store.adjudicate_auto(&mut t, Timestamp(4)).unwrap();
        assert_eq!(d.verdict, Verdict::Correct);
        assert_eq!(t.verdict, Some(Verdict::Correct));
        assert_eq!(ledger.entries().len(), entries_before);
        assert!(matches!(store.adjudicate_auto(&mut t, Timestamp(5)), Err(AdjudicationError::WrongState(_))));
    }

    #[test]
    fn policy_json() {
        let p = AdjudicationPolicy::ManualRuling { arbiter: "x1".into() };
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"policy":"manual_ruling","arbiter":"x1"}"#);
        assert_eq!(
            serde_json::to_string(&AdjudicationPolicy::default()).unwrap(),
            r#"{"policy":"auto_attestation","schema":"claimed_outcome_v1"}"#
        );
    }
}
