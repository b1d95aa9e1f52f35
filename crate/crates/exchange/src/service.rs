//! Request routing for the exchange.
//!
//! [`Service::handle`] is transport-independent: the HTTP layer only turns
//! requests into [`ApiRequest`]s. Every successful mutating request becomes
//! exactly one [`Event`], applied to the state and durably appended to the
//! log before the response is produced.

use qx_core::adjudication::AdjudicationPolicy;
use qx_core::answer_spec::AnswerSpec;
use qx_core::ledger::{AccountId, Money, TxnId};
use qx_core::protocol::{digest_hex, Terms, Timestamp, Verdict};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{ClockMode, ServiceConfig};
use crate::error::ServiceError;
use crate::events::{read_log, Capability, Event, EventBody, EventLog, Ruling};
use crate::state::ExchangeState;
use crate::view::{render_account, render_admin_view, render_view};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiRequest {
    pub method: Method,
    pub path: String,
    pub credential: Option<String>,
    pub body: Value,
}

impl ApiRequest {
    pub fn get(path: impl Into<String>, credential: Option<&str>) -> Self {
        ApiRequest { method: Method::Get, path: path.into(), credential: credential.map(str::to_owned), body: Value::Null }
    }

    pub fn post(path: impl Into<String>, credential: Option<&str>, body: Value) -> Self {
        ApiRequest { method: Method::Post, path: path.into(), credential: credential.map(str::to_owned), body }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

enum Caller {
    Anonymous,
    Admin,
    Party(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterBody {
    capabilities: Vec<Capability>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FundBody {
    account: AccountId,
    amount: Money,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TermsBody {
    price: Money,
    stake: Money,
    deposit: Money,
    fee_q: Option<Money>,
    fee_a: Option<Money>,
    answer_deadline: Timestamp,
    evidence_deadline: Timestamp,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionBody {
    text: String,
    spec: AnswerSpec,
    terms: TermsBody,
    policy: Option<AdjudicationPolicy>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerBody {
    answer: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvidenceBody {
    body: String,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AdjudicateBody {
    verdict: Option<Verdict>,
    rationale: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TickBody {
    to: Option<Timestamp>,
    advance_by: Option<i64>,
}

fn parse<T: DeserializeOwned>(body: &Value) -> Result<T, ServiceError> {
    serde_json::from_value(body.clone()).map_err(|e| ServiceError::BadRequest(format!("malformed body: {e}")))
}

fn parse_or_default<T: DeserializeOwned + Default>(body: &Value) -> Result<T, ServiceError> {
    if body.is_null() {
        Ok(T::default())
    } else {
        parse(body)
    }
}

pub fn credential_hash(credential: &str) -> String {
    digest_hex(credential.as_bytes())
}

pub struct Service {
    config: ServiceConfig,
    state: ExchangeState,
    log: EventLog,
    rng: StdRng,
}

impl Service {
    /// A service whose log lives only in memory.
    pub fn in_memory(config: ServiceConfig) -> Service {
        let rng = make_rng(config.seed, 0);
        Service { config, state: ExchangeState::new(), log: EventLog::in_memory(), rng }
    }

    /// Opens the configured event log (in memory when there is no data
    /// directory) and replays it.
    pub fn open(config: ServiceConfig) -> Result<Service, ServiceError> {
        let Some(path) = config.event_log_path() else {
            return Ok(Service::in_memory(config));
        };
        let (log, events) = EventLog::open(&path).map_err(|e| ServiceError::Storage(e.to_string()))?;
        let state = ExchangeState::replay(&events).map_err(|e| ServiceError::Storage(e.to_string()))?;
        let rng = make_rng(config.seed, log.len());
        Ok(Service { config, state, log, rng })
    }

    pub fn state(&self) -> &ExchangeState {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn now(&self) -> Timestamp {
        match self.config.clock {
            ClockMode::Simulated => self.state.clock,
            ClockMode::Real => {
                let wall = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs() as i64)
                    .unwrap_or(0);
                Timestamp(wall).max(self.state.clock)
            }
        }
    }

    pub fn handle(&mut self, req: &ApiRequest) -> ApiResponse {
        match self.dispatch(req) {
            Ok((status, body)) => ApiResponse { status, body },
            Err(e) => ApiResponse { status: e.status(), body: e.to_body() },
        }
    }

    fn caller(&self, credential: Option<&str>) -> Caller {
        let Some(cred) = credential else {
            return Caller::Anonymous;
        };
        if cred == self.config.admin_token {
            return Caller::Admin;
        }
        match self.state.party_by_credential_hash(&credential_hash(cred)) {
            Some(p) => Caller::Party(p.pseudonym.clone()),
            None => Caller::Anonymous,
        }
    }

    fn dispatch(&mut self, req: &ApiRequest) -> Result<(u16, Value), ServiceError> {
        let path = req.path.split('?').next().unwrap_or("");
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        let caller = self.caller(req.credential.as_deref());
        match (req.method, segments.as_slice()) {
            (Method::Post, ["register"]) => self.register(&req.body),
            (Method::Post, ["admin", "fund"]) => {
                require_admin(&caller)?;
                let body: FundBody = parse(&req.body)?;
                self.commit(EventBody::Funded { account: body.account, amount: body.amount })?;
                Ok((200, to_json(&render_account(&self.state, body.account, None)?)))
            }
            (Method::Post, ["admin", "tick"]) => {
                require_admin(&caller)?;
                if self.config.clock != ClockMode::Simulated {
                    return Err(ServiceError::Conflict("the clock is not simulated".into()));
                }
                let body: TickBody = parse(&req.body)?;
                let to = match (body.to, body.advance_by) {
                    (Some(to), None) => to,
                    (None, Some(secs)) if secs >= 0 => self.state.clock.plus(secs),
                    _ => return Err(ServiceError::BadRequest("give either `to` or a non-negative `advance_by`".into())),
                };
                self.commit(EventBody::TimeAdvanced { to })?;
                Ok((200, json!({ "now": self.state.clock })))
            }
            (Method::Post, ["questions"]) => {
                let who = require_party(&caller)?;
                let body: QuestionBody = parse(&req.body)?;
                let t = body.terms;
                let terms = Terms {
                    price: t.price,
                    stake: t.stake,
                    deposit: t.deposit,
                    fee_q: t.fee_q.unwrap_or(self.config.fee_q),
                    fee_a: t.fee_a.unwrap_or(self.config.fee_a),
                    answer_deadline: t.answer_deadline,
                    evidence_deadline: t.evidence_deadline,
                };
                let txn = TxnId(self.state.next_txn);
                self.commit(EventBody::QuestionCreated {
                    txn,
                    buyer: who.clone(),
                    text: body.text,
                    spec: body.spec,
                    terms,
                    policy: body.policy.unwrap_or_default(),
                })?;
                Ok((201, to_json(&render_view(&self.state, txn, &who)?)))
            }
            (Method::Post, ["questions", id, action]) => {
                let who = require_party(&caller)?;
                let txn = parse_txn(id)?;
                let event = match *action {
                    "post" => EventBody::QuestionPosted { txn, by: who.clone() },
                    "accept" => EventBody::Accepted { txn, seller: who.clone() },
                    "answer" => {
                        let body: AnswerBody = parse(&req.body)?;
                        EventBody::Answered { txn, by: who.clone(), answer: body.answer }
                    }
                    "evidence" => {
                        let body: EvidenceBody = parse(&req.body)?;
                        EventBody::EvidenceSubmitted { txn, by: who.clone(), body: body.body.into_bytes() }
                    }
                    "adjudicate" => {
                        let body: AdjudicateBody = parse_or_default(&req.body)?;
                        let ruling = match (body.verdict, body.rationale) {
                            (Some(verdict), rationale) => Some(Ruling { verdict, rationale: rationale.unwrap_or_default() }),
                            (None, None) => None,
                            (None, Some(_)) => return Err(ServiceError::BadRequest("rationale without verdict".into())),
                        };
                        EventBody::Adjudicated { txn, by: who.clone(), ruling }
                    }
                    "settle" => EventBody::Settled { txn, by: who.clone() },
                    _ => return Err(ServiceError::NotFound),
                };
                self.commit(event)?;
                Ok((200, to_json(&render_view(&self.state, txn, &who)?)))
            }
            (Method::Get, ["questions", id]) => {
                let txn = parse_txn(id)?;
                let view = match &caller {
                    Caller::Admin => render_admin_view(&self.state, txn)?,
                    Caller::Party(who) => render_view(&self.state, txn, who)?,
                    Caller::Anonymous => return Err(ServiceError::Unauthenticated),
                };
                Ok((200, to_json(&view)))
            }
            (Method::Get, ["accounts", id]) => {
                let account: AccountId = id.parse().map_err(|_| ServiceError::NotFound)?;
                let view = match &caller {
                    Caller::Admin => render_account(&self.state, account, None)?,
                    Caller::Party(who) => render_account(&self.state, account, Some(who))?,
                    Caller::Anonymous => return Err(ServiceError::Unauthenticated),
                };
                Ok((200, to_json(&view)))
            }
            _ => Err(ServiceError::NotFound),
        }
    }

    fn register(&mut self, body: &Value) -> Result<(u16, Value), ServiceError> {
        let body: RegisterBody = parse(body)?;
        // independent draws: the pseudonym carries nothing from the credential
        let (pseudonym, credential) = loop {
            let pseudonym = format!("anon-{}", hex::encode(self.rng.random::<[u8; 8]>()));
            let credential = format!("sk-{}", hex::encode(self.rng.random::<[u8; 24]>()));
            if !self.state.parties.contains_key(&pseudonym)
                && !self.state.credentials.contains_key(&credential_hash(&credential))
            {
                break (pseudonym, credential);
            }
        };
        let next = self.state.ledger.accounts().len() as u64;
        let wants = |c| body.capabilities.contains(&c);
        let buyer_account = wants(Capability::Buy).then(|| format!("acct-{next}").parse().expect("account id"));
        let seller_offset = next + buyer_account.is_some() as u64;
        let seller_account = wants(Capability::Sell).then(|| format!("acct-{seller_offset}").parse().expect("account id"));
        self.commit(EventBody::Registered {
            pseudonym: pseudonym.clone(),
            credential_hash: credential_hash(&credential),
            capabilities: body.capabilities.clone(),
            buyer_account,
            seller_account,
        })?;
        let party = &self.state.parties[&pseudonym];
        Ok((
            201,
            json!({
                "pseudonym": pseudonym,
                "credential": credential,
                "capabilities": party.capabilities,
                "accounts": { "buyer": party.buyer_account, "seller": party.seller_account },
            }),
        ))
    }

    /// Applies and durably records one event.
    fn commit(&mut self, body: EventBody) -> Result<u64, ServiceError> {
        let event = Event { seq: self.state.last_seq + 1, recorded_at: self.now(), body };
        self.state.apply(&event)?;
        if let Err(e) = self.log.append(&event) {
            self.recover()?;
            return Err(ServiceError::Storage(e.to_string()));
        }
        Ok(event.seq)
    }

    /// Rebuilds state from whatever the log durably holds.
    fn recover(&mut self) -> Result<(), ServiceError> {
        let events = match (self.log.path(), self.log.memory_events()) {
            (Some(path), _) => read_log(path).map_err(|e| ServiceError::Storage(e.to_string()))?,
            (None, Some(events)) => events.to_vec(),
            (None, None) => Vec::new(),
        };
        self.state = ExchangeState::replay(&events).map_err(|e| ServiceError::Storage(e.to_string()))?;
        Ok(())
    }
}

fn make_rng(seed: Option<u64>, log_len: u64) -> StdRng {
    match seed {
        Some(s) => StdRng::seed_from_u64(s ^ log_len.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        None => StdRng::from_os_rng(),
    }
}

fn require_admin(caller: &Caller) -> Result<(), ServiceError> {
    match caller {
        Caller::Admin => Ok(()),
        Caller::Party(_) => Err(ServiceError::Forbidden("admin only".into())),
        Caller::Anonymous => Err(ServiceError::Unauthenticated),
    }
}

fn require_party(caller: &Caller) -> Result<String, ServiceError> {
    match caller {
        Caller::Party(p) => Ok(p.clone()),
        Caller::Admin => Err(ServiceError::Forbidden("the exchange does not trade".into())),
        Caller::Anonymous => Err(ServiceError::Unauthenticated),
    }
}

fn parse_txn(id: &str) -> Result<TxnId, ServiceError> {
    id.parse::<u64>().map(TxnId).map_err(|_| ServiceError::NotFound)
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("views serialize")
}
