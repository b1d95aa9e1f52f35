//! Desk-scale scenario: a lab spends ten days and about ten thousand dollars
//! buying answers to five questions at $2,000 each, through the public API.

use std::collections::BTreeMap;
use std::fmt;

use qx_core::adjudication::Attestation;
use qx_core::ledger::{AccountId, AccountKind, LedgerEntry, Money, TxnId};
use qx_core::protocol::{lifecycle_net_flows, NetFlows, SettlementPath, Timestamp, DAY};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ClockMode, ServiceConfig};
use crate::service::{ApiRequest, Service};

pub const PRICE: Money = Money(200_000);
pub const STAKE: Money = Money(100_000);
pub const DEPOSIT: Money = Money(40_000);
pub const ANSWER_DAYS: i64 = 5;
pub const EVIDENCE_DAYS: i64 = 10;

#[derive(Debug, thiserror::Error)]
#[error("{step}: HTTP {status} {body}")]
pub struct DemoError {
    pub step: String,
    pub status: u16,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuestionOutcome {
    pub id: TxnId,
    pub question: String,
    pub answer: String,
    pub path: SettlementPath,
    /// Net flows per party class, summed from this transaction's ledger entries.
    pub observed: NetFlows,
    /// Net flows the payout table prescribes for `path`.
    pub expected: NetFlows,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DemoSummary {
    pub questions: Vec<QuestionOutcome>,
    pub totals: NetFlows,
    /// Balance changes over the whole run, read back through `GET /accounts`.
    pub balance_deltas: NetFlows,
    pub escrow_remaining: Money,
    pub total_issued: Money,
    pub total_supply: Money,
    pub elapsed: i64,
}

impl DemoSummary {
    pub fn reconciles(&self) -> bool {
        self.questions.iter().all(|q| q.observed == q.expected)
            && self.totals == self.balance_deltas
            && self.escrow_remaining.is_zero()
            && self.total_issued == self.total_supply
    }
}

fn add(a: NetFlows, b: NetFlows) -> NetFlows {
    NetFlows {
        buyer: a.buyer + b.buyer,
        seller: a.seller + b.seller,
        exchange: a.exchange + b.exchange,
        sink: a.sink + b.sink,
    }
}

const ZERO_FLOWS: NetFlows = NetFlows { buyer: 0, seller: 0, exchange: 0, sink: 0 };

struct Plan {
    text: &'static str,
    spec: Value,
    answer: &'static str,
    /// Attested outcome, or None when the buyer never reports back.
    evidence: Option<&'static str>,
    manual: Option<&'static str>,
    expect: SettlementPath,
}

fn plans() -> Vec<Plan> {
    let enumerated = |opts: &[&str]| json!({ "variant": "Enumerated", "options": opts });
    vec![
        Plan {
            text: "Which compound in the shortlist binds target KX-7?",
            spec: enumerated(&["compound-17", "compound-42", "none"]),
            answer: "compound-17",
            evidence: Some("compound-17"),
            manual: None,
            expect: SettlementPath::Correct,
        },
        Plan {
            text: "Does knocking out gene RB-2 lower KX-7 expression?",
            spec: enumerated(&["yes", "no"]),
            answer: "yes",
            evidence: Some("no"),
            manual: None,
            expect: SettlementPath::Incorrect,
        },
        Plan {
            text: "What percentage yield does route B give at 40 C?",
            spec: json!({ "variant": "IntegerRange", "lo": 0, "hi": 100 }),
            answer: "140",
            evidence: None,
            manual: None,
            expect: SettlementPath::AnswerRejected,
        },
        Plan {
            text: "Is the KX-7 crystal form stable above pH 8?",
            spec: enumerated(&["stable", "unstable"]),
            answer: "stable",
            evidence: Some("inconclusive"),
            manual: Some("InsufficientEvidence"),
            expect: SettlementPath::InsufficientEvidence,
        },
        Plan {
            text: "Which buffer gives the sharper assay signal?",
            spec: enumerated(&["tris", "hepes", "phosphate"]),
            answer: "hepes",
            evidence: None,
            manual: None,
            expect: SettlementPath::ExpiredUnverified,
        },
    ]
}

struct Driver<'a> {
    svc: &'a mut Service,
}

impl Driver<'_> {
    fn call(&mut self, step: &str, req: ApiRequest) -> Result<Value, DemoError> {
        let resp = self.svc.handle(&req);
        if resp.is_success() {
            Ok(resp.body)
        } else {
            Err(DemoError { step: step.to_owned(), status: resp.status, body: resp.body })
        }
    }

    fn admin(&self) -> String {
        self.svc.config().admin_token.clone()
    }

    /// Returns the credential, pseudonym and the account of the first capability.
    fn register(&mut self, caps: &[&str]) -> Result<(String, String, Option<AccountId>), DemoError> {
        let body = self.call("register", ApiRequest::post("/register", None, json!({ "capabilities": caps })))?;
        let text = |v: &Value| v.as_str().unwrap_or_default().to_owned();
        let account = match caps.first() {
            Some(&"buy") => serde_json::from_value(body["accounts"]["buyer"].clone()).ok(),
            Some(&"sell") => serde_json::from_value(body["accounts"]["seller"].clone()).ok(),
            _ => None,
        };
        Ok((text(&body["credential"]), text(&body["pseudonym"]), account))
    }

    fn fund(&mut self, account: AccountId, amount: Money) -> Result<(), DemoError> {
        let admin = self.admin();
        let body = json!({ "account": account, "amount": amount });
        self.call("fund", ApiRequest::post("/admin/fund", Some(&admin), body)).map(drop)
    }

    fn tick_to(&mut self, to: Timestamp) -> Result<(), DemoError> {
        let admin = self.admin();
        self.call("tick", ApiRequest::post("/admin/tick", Some(&admin), json!({ "to": to }))).map(drop)
    }

    fn balance(&mut self, account: AccountId) -> Result<i128, DemoError> {
        let admin = self.admin();
        let body = self.call("balance", ApiRequest::get(format!("/accounts/{account}"), Some(&admin)))?;
        Ok(body["balance"].as_u64().unwrap_or_default() as i128)
    }
}

fn observed_flows(entries: &[LedgerEntry], kinds: &BTreeMap<AccountId, AccountKind>) -> NetFlows {
    let mut f = ZERO_FLOWS;
    for e in entries {
        for (account, sign) in [(e.debit, -1i128), (e.credit, 1)] {
            let amount = sign * e.amount.signed();
            match kinds.get(&account) {
                Some(AccountKind::Buyer) => f.buyer += amount,
                Some(AccountKind::Seller) => f.seller += amount,
                Some(AccountKind::ExchangeFee) => f.exchange += amount,
                Some(AccountKind::Sink) => f.sink += amount,
                Some(AccountKind::Escrow) | None => {}
            }
        }
    }
    f
}

/// Runs the scenario against `svc`, which must use a simulated clock and
/// start empty.
pub fn run_demo(svc: &mut Service) -> Result<DemoSummary, DemoError> {
    if svc.config().clock != ClockMode::Simulated || svc.state().last_seq != 0 {
        return Err(DemoError { step: "setup".into(), status: 0, body: json!("needs a fresh simulated-clock service") });
    }
    let plans = plans();
    let n = plans.len() as u64;
    let fee_q = svc.config().fee_q;
    let fee_a = svc.config().fee_a;
    let start = svc.state().clock;
    let mut d = Driver { svc };

    let missing = |step: &str| DemoError { step: step.into(), status: 0, body: json!("registration returned no account") };
    let (lab, _, lab_account) = d.register(&["buy"])?;
    let (oracle_a, _, a_account) = d.register(&["sell"])?;
    let (oracle_b, _, b_account) = d.register(&["sell"])?;
    let (referee, referee_name, _) = d.register(&["arbitrate"])?;
    let lab_account = lab_account.ok_or_else(|| missing("register buyer"))?;
    let a_account = a_account.ok_or_else(|| missing("register seller"))?;
    let b_account = b_account.ok_or_else(|| missing("register seller"))?;
    d.fund(lab_account, Money((PRICE.0 + DEPOSIT.0 + fee_q.0) * n))?;
    d.fund(a_account, Money((STAKE.0 + fee_a.0) * 3))?;
    d.fund(b_account, Money((STAKE.0 + fee_a.0) * 2))?;

    let tracked = [lab_account, a_account, b_account];
    let fee_acct = d.svc.state().ledger.exchange_fee_account().expect("house account");
    let sink_acct = d.svc.state().ledger.sink_account().expect("house account");
    let mut before = Vec::new();
    for a in tracked.iter().chain([&fee_acct, &sink_acct]) {
        before.push(d.balance(*a)?);
    }

    // day 0: questions drafted and posted
    let mut ids = Vec::new();
    for (i, p) in plans.iter().enumerate() {
        let policy = match p.manual {
            Some(_) => json!({ "policy": "manual_ruling", "arbiter": referee_name }),
            None => json!({ "policy": "auto_attestation", "schema": "claimed_outcome_v1" }),
        };
        let body = json!({
            "text": p.text,
            "spec": p.spec,
            "terms": {
                "price": PRICE, "stake": STAKE, "deposit": DEPOSIT,
                "answer_deadline": start.plus(ANSWER_DAYS * DAY),
                "evidence_deadline": start.plus(EVIDENCE_DAYS * DAY),
            },
            "policy": policy,
        });
        let created = d.call(&format!("create q{}", i + 1), ApiRequest::post("/questions", Some(&lab), body))?;
        let id = created["id"].as_u64().unwrap_or_default();
        d.call(&format!("post q{id}"), ApiRequest::post(format!("/questions/{id}/post"), Some(&lab), Value::Null))?;
        ids.push(id);
    }

    // day 1: sellers take the questions; day 3: answers come in
    d.tick_to(start.plus(DAY))?;
    let seller_of = |i: usize| if i % 2 == 0 { &oracle_a } else { &oracle_b };
    let sellers: Vec<String> = (0..ids.len()).map(|i| seller_of(i).clone()).collect();
    for (i, id) in ids.iter().enumerate() {
        d.call(&format!("accept q{id}"), ApiRequest::post(format!("/questions/{id}/accept"), Some(&sellers[i]), Value::Null))?;
    }
    d.tick_to(start.plus(3 * DAY))?;
    for (i, (id, p)) in ids.iter().zip(&plans).enumerate() {
        let body = json!({ "answer": p.answer });
        d.call(&format!("answer q{id}"), ApiRequest::post(format!("/questions/{id}/answer"), Some(&sellers[i]), body))?;
    }

    // day 7: the lab reports what it found; day 8: rulings
    d.tick_to(start.plus(7 * DAY))?;
    for (id, p) in ids.iter().zip(&plans) {
        if let Some(outcome) = p.evidence {
            let att = Attestation::new(outcome, "bench result, day 7");
            let body = json!({ "body": String::from_utf8(att.to_bytes()).unwrap_or_default() });
            d.call(&format!("evidence q{id}"), ApiRequest::post(format!("/questions/{id}/evidence"), Some(&lab), body))?;
        }
    }
    d.tick_to(start.plus(8 * DAY))?;
    for (id, p) in ids.iter().zip(&plans) {
        match (p.evidence, p.manual) {
            (Some(_), Some(verdict)) => {
                let body = json!({ "verdict": verdict, "rationale": "assay did not discriminate between forms" });
                d.call(&format!("rule q{id}"), ApiRequest::post(format!("/questions/{id}/adjudicate"), Some(&referee), body))?;
            }
            (Some(_), None) => {
                d.call(&format!("adjudicate q{id}"), ApiRequest::post(format!("/questions/{id}/adjudicate"), Some(&lab), Value::Null))?;
            }
            (None, _) => {}
        }
    }

    // the evidence window closes at the end of day 10
    d.tick_to(start.plus(EVIDENCE_DAYS * DAY + 1))?;
    for id in &ids {
        d.call(&format!("settle q{id}"), ApiRequest::post(format!("/questions/{id}/settle"), Some(&lab), Value::Null))?;
    }

    let mut after = Vec::new();
    for a in tracked.iter().chain([&fee_acct, &sink_acct]) {
        after.push(d.balance(*a)?);
    }
    let delta = |i: usize| after[i] - before[i];
    let balance_deltas = NetFlows { buyer: delta(0), seller: delta(1) + delta(2), exchange: delta(3), sink: delta(4) };

    let state = d.svc.state();
    let kinds: BTreeMap<AccountId, AccountKind> = state.ledger.accounts().iter().map(|a| (a.id, a.kind)).collect();
    let mut questions = Vec::new();
    let mut totals = ZERO_FLOWS;
    for (id, p) in ids.iter().zip(&plans) {
        let txn = &state.transactions[&TxnId(*id)];
        let path = txn.settlement.unwrap_or(p.expect);
        let entries: Vec<LedgerEntry> = state.ledger.entries().iter().filter(|e| e.txn == Some(txn.id)).cloned().collect();
        let observed = observed_flows(&entries, &kinds);
        totals = add(totals, observed);
        questions.push(QuestionOutcome {
            id: txn.id,
            question: p.text.to_owned(),
            answer: p.answer.to_owned(),
            path,
            observed,
            expected: lifecycle_net_flows(p.expect, &txn.terms),
        });
    }
    let escrow_remaining = state
        .transactions
        .values()
        .map(|t| state.ledger.balance_of(t.escrow_account).unwrap_or_default())
        .sum();
    Ok(DemoSummary {
        questions,
        totals,
        balance_deltas,
        escrow_remaining,
        total_issued: state.ledger.total_issued(),
        total_supply: state.ledger.total_supply(),
        elapsed: state.clock.0 - start.0,
    })
}

/// The demo's default service: in memory, simulated clock, fixed seed.
pub fn demo_config() -> ServiceConfig {
    ServiceConfig { clock: ClockMode::Simulated, seed: Some(10), data_dir: None, ..ServiceConfig::default() }
}

struct Signed(i128);

impl fmt::Display for Signed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "+" };
        let abs = self.0.unsigned_abs();
        let s = format!("{sign}{}.{:02}", abs / 100, abs % 100);
        f.pad(&s)
    }
}

impl fmt::Display for DemoSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Settlement summary ({} questions, {:.2} days)", self.questions.len(), self.elapsed as f64 / DAY as f64)?;
        writeln!(f, "{:>3}  {:<22} {:>12} {:>12} {:>12} {:>12}", "id", "outcome", "buyer", "sellers", "exchange", "sink")?;
        for q in &self.questions {
            let o = q.observed;
            writeln!(
                f,
                "{:>3}  {:<22} {:>12} {:>12} {:>12} {:>12}{}",
                q.id.0,
                format!("{:?}", q.path),
                Signed(o.buyer),
                Signed(o.seller),
                Signed(o.exchange),
                Signed(o.sink),
                if q.observed == q.expected { "" } else { "  MISMATCH" },
            )?;
        }
        let t = self.totals;
        writeln!(f, "     {:<22} {:>12} {:>12} {:>12} {:>12}", "total", Signed(t.buyer), Signed(t.seller), Signed(t.exchange), Signed(t.sink))?;
        let b = self.balance_deltas;
        writeln!(f, "     {:<22} {:>12} {:>12} {:>12} {:>12}", "ledger balances", Signed(b.buyer), Signed(b.seller), Signed(b.exchange), Signed(b.sink))?;
        writeln!(f, "escrow remaining {}; issued {}; supply {}", self.escrow_remaining, self.total_issued, self.total_supply)?;
        write!(f, "reconciled: {}", if self.reconciles() { "yes" } else { "NO" })
    }
}
