#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::process::{Child, ChildStderr, Command, Stdio};
use std::time::Duration;

use qx_core::ledger::AccountId;
use qx_core::protocol::{Timestamp, DAY};
use qx_exchange::{ApiRequest, ApiResponse, Method, Service, ServiceConfig};
use serde_json::{json, Value};

pub const ADMIN: &str = "admin";

pub fn config(seed: u64) -> ServiceConfig {
    ServiceConfig { seed: Some(seed), ..ServiceConfig::default() }
}

/// The transport went away mid-script.
#[derive(Debug)]
pub struct Killed;

pub trait Transport {
    fn send(&mut self, req: ApiRequest) -> Result<ApiResponse, Killed>;
}

impl Transport for Service {
    fn send(&mut self, req: ApiRequest) -> Result<ApiResponse, Killed> {
        Ok(self.handle(&req))
    }
}

/// In-process service that records the serialized state after every event.
pub struct Recording {
    pub service: Service,
    pub snapshots: BTreeMap<u64, String>,
}

impl Recording {
    pub fn new(config: ServiceConfig) -> Self {
        let service = Service::in_memory(config);
        let mut snapshots = BTreeMap::new();
        snapshots.insert(0, service.state().serialize());
        Recording { service, snapshots }
    }
}

impl Transport for Recording {
    fn send(&mut self, req: ApiRequest) -> Result<ApiResponse, Killed> {
        let resp = self.service.handle(&req);
        let state = self.service.state();
        self.snapshots.entry(state.last_seq).or_insert_with(|| state.serialize());
        Ok(resp)
    }
}

#[derive(Debug, Clone)]
pub struct Party {
    pub pseudonym: String,
    pub credential: String,
    pub buyer: Option<AccountId>,
    pub seller: Option<AccountId>,
}

pub struct Client<T> {
    pub t: T,
    /// Every response, paired with the credential it was sent with.
    pub transcript: Vec<(Option<String>, ApiRequest, ApiResponse)>,
    pub keep_transcript: bool,
}

impl<T: Transport> Client<T> {
    pub fn new(t: T) -> Self {
        Client { t, transcript: Vec::new(), keep_transcript: false }
    }

    pub fn send(&mut self, req: ApiRequest) -> Result<ApiResponse, Killed> {
        let resp = self.t.send(req.clone())?;
        if self.keep_transcript {
            self.transcript.push((req.credential.clone(), req, resp.clone()));
        }
        Ok(resp)
    }

    pub fn ok(&mut self, req: ApiRequest) -> Result<Value, Killed> {
        let desc = format!("{:?} {}", req.method, req.path);
        let resp = self.send(req)?;
        assert!(resp.is_success(), "{desc} -> {} {}", resp.status, resp.body);
        Ok(resp.body)
    }

    pub fn register(&mut self, caps: &[&str]) -> Result<Party, Killed> {
        let body = self.ok(ApiRequest::post("/register", None, json!({ "capabilities": caps })))?;
        let acct = |v: &Value| serde_json::from_value::<Option<AccountId>>(v.clone()).unwrap();
        Ok(Party {
            pseudonym: body["pseudonym"].as_str().unwrap().to_owned(),
            credential: body["credential"].as_str().unwrap().to_owned(),
            buyer: acct(&body["accounts"]["buyer"]),
            seller: acct(&body["accounts"]["seller"]),
        })
    }

    pub fn fund(&mut self, account: AccountId, amount: u64) -> Result<(), Killed> {
        self.ok(ApiRequest::post("/admin/fund", Some(ADMIN), json!({ "account": account, "amount": amount })))
            .map(drop)
    }

    pub fn tick_to(&mut self, to: Timestamp) -> Result<(), Killed> {
        self.ok(ApiRequest::post("/admin/tick", Some(ADMIN), json!({ "to": to }))).map(drop)
    }

    pub fn create(&mut self, buyer: &Party, body: Value) -> Result<u64, Killed> {
        let v = self.ok(ApiRequest::post("/questions", Some(&buyer.credential), body))?;
        Ok(v["id"].as_u64().unwrap())
    }

    pub fn act(&mut self, who: &Party, id: u64, action: &str, body: Value) -> Result<ApiResponse, Killed> {
        self.send(ApiRequest::post(format!("/questions/{id}/{action}"), Some(&who.credential), body))
    }

    pub fn act_ok(&mut self, who: &Party, id: u64, action: &str, body: Value) -> Result<Value, Killed> {
        self.ok(ApiRequest::post(format!("/questions/{id}/{action}"), Some(&who.credential), body))
    }

    pub fn view(&mut self, who: &Party, id: u64) -> Result<ApiResponse, Killed> {
        self.send(ApiRequest::get(format!("/questions/{id}"), Some(&who.credential)))
    }

    pub fn balance(&mut self, account: AccountId) -> Result<u64, Killed> {
        let v = self.ok(ApiRequest::get(format!("/accounts/{account}"), Some(ADMIN)))?;
        Ok(v["balance"].as_u64().unwrap())
    }
}

pub fn question(answer_days: i64, evidence_days: i64, arbiter: Option<&Party>) -> Value {
    let mut body = json!({
        "text": "which compound binds the target?",
        "spec": { "variant": "Enumerated", "options": ["compound-17", "compound-42", "none"] },
        "terms": {
            "price": 200_000, "stake": 100_000, "deposit": 40_000,
            "answer_deadline": answer_days * DAY,
            "evidence_deadline": evidence_days * DAY,
        },
    });
    if let Some(a) = arbiter {
        body["policy"] = json!({ "policy": "manual_ruling", "arbiter": a.pseudonym });
    }
    body
}

pub fn attestation(claimed: &str) -> Value {
    let att = qx_core::adjudication::Attestation::new(claimed, "plate reader, run 3");
    json!({ "body": String::from_utf8(att.to_bytes()).unwrap() })
}

/// A fixed lifecycle touching every settlement path. Deterministic given
/// the service seed.
pub fn scripted_lifecycle<T: Transport>(c: &mut Client<T>) -> Result<(), Killed> {
    let q1 = c.register(&["buy"])?;
    let q2 = c.register(&["buy", "sell"])?;
    let a1 = c.register(&["sell"])?;
    let judge = c.register(&["arbitrate"])?;
    c.fund(q1.buyer.unwrap(), 2_000_000)?;
    c.fund(q2.buyer.unwrap(), 1_000_000)?;
    c.fund(q2.seller.unwrap(), 500_000)?;
    c.fund(a1.seller.unwrap(), 1_000_000)?;

    let mut ids = Vec::new();
    for i in 0..7 {
        let buyer = if i % 3 == 2 { &q2 } else { &q1 };
        let arbiter = (i == 2).then_some(&judge);
        let id = c.create(buyer, question(5, 10, arbiter))?;
        c.act_ok(buyer, id, "post", Value::Null)?;
        ids.push((id, buyer.clone()));
    }
    // 0 correct, 1 incorrect, 2 manual insufficient, 3 rejected,
    // 4 unanswered, 5 unverified, 6 unaccepted
    c.tick_to(Timestamp(DAY))?;
    for (i, (id, buyer)) in ids.iter().enumerate().take(6) {
        let seller = if buyer.pseudonym == q2.pseudonym { &a1 } else if i % 2 == 0 { &a1 } else { &q2 };
        c.act_ok(seller, *id, "accept", Value::Null)?;
        let answer = match i {
            3 => Some("compound-99"),
            4 => None,
            _ => Some("compound-17"),
        };
        if let Some(a) = answer {
            c.act_ok(seller, *id, "answer", json!({ "answer": a }))?;
        }
    }
    c.tick_to(Timestamp(4 * DAY))?;
    let (id3, b3) = &ids[3];
    c.act_ok(b3, *id3, "settle", Value::Null)?;
    for (i, claimed) in [(0, "compound-17"), (1, "compound-42"), (2, "none")] {
        let (id, buyer) = &ids[i];
        c.act_ok(buyer, *id, "evidence", attestation(claimed))?;
    }
    c.tick_to(Timestamp(6 * DAY))?;
    for i in [0, 1] {
        let (id, buyer) = &ids[i];
        c.act_ok(buyer, *id, "adjudicate", Value::Null)?;
    }
    let (id2, _) = &ids[2];
    c.act_ok(&judge, *id2, "adjudicate", json!({ "verdict": "InsufficientEvidence", "rationale": "assay failed" }))?;
    for i in [0, 1, 2, 4, 6] {
        let (id, buyer) = &ids[i];
        c.act_ok(buyer, *id, "settle", Value::Null)?;
    }
    c.tick_to(Timestamp(11 * DAY))?;
    let (id5, b5) = &ids[5];
    c.act_ok(b5, *id5, "settle", Value::Null)?;
    Ok(())
}

/// Minimal HTTP/1.1 client: one request per connection.
pub fn http_request(addr: SocketAddr, method: &str, path: &str, credential: Option<&str>, body: &Value) -> std::io::Result<(u16, Value)> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    stream.write_all(render_request(method, path, credential, body).as_bytes())?;
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    parse_response(&raw)
}

pub fn render_request(method: &str, path: &str, credential: Option<&str>, body: &Value) -> String {
    let payload = if body.is_null() { String::new() } else { body.to_string() };
    let auth = credential.map(|c| format!("Authorization: Bearer {c}\r\n")).unwrap_or_default();
    format!(
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n{auth}\r\n{payload}",
        payload.len()
    )
}

pub fn parse_response(raw: &[u8]) -> std::io::Result<(u16, Value)> {
    let text = String::from_utf8_lossy(raw);
    let bad = || std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad response: {text:?}"));
    let status: u16 = text.split_whitespace().nth(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let (_, body) = text.split_once("\r\n\r\n").ok_or_else(bad)?;
    let value = if body.is_empty() { Value::Null } else { serde_json::from_str(body).map_err(|_| bad())? };
    Ok((status, value))
}

/// The `qx serve` binary running against a data directory.
pub struct ServerProcess {
    pub child: Child,
    pub addr: SocketAddr,
    _stderr: BufReader<ChildStderr>,
}

impl ServerProcess {
    pub fn start(data_dir: &Path, seed: u64) -> ServerProcess {
        let cfg = data_dir.join("qx.conf");
        std::fs::write(
            &cfg,
            format!(
                "listen = 127.0.0.1:0\ndata_dir = {}\nclock = simulated\nadmin_token = {ADMIN}\nseed = {seed}\n",
                data_dir.display()
            ),
        )
        .unwrap();
        let mut child = Command::new(env!("CARGO_BIN_EXE_qx"))
            .args(["serve", "--config"])
            .arg(&cfg)
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn qx serve");
        let mut stderr = BufReader::new(child.stderr.take().unwrap());
        let mut line = String::new();
        stderr.read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected: {line:?}")).parse().unwrap();
        ServerProcess { child, addr, _stderr: stderr }
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        self.kill();
    }
}

/// Talks to a server process, killing it while request number `kill_at`
/// (counting from 0) is in flight.
pub struct KillingTransport {
    pub server: ServerProcess,
    pub kill_at: Option<usize>,
    pub sent: usize,
    pub kill_delay: Duration,
}

impl Transport for KillingTransport {
    fn send(&mut self, req: ApiRequest) -> Result<ApiResponse, Killed> {
        let method = match req.method {
            Method::Get => "GET",
            Method::Post => "POST",
        };
        let n = self.sent;
        self.sent += 1;
        if self.kill_at == Some(n) {
            let mut stream = TcpStream::connect(self.server.addr).map_err(|_| Killed)?;
            let _ = stream.write_all(render_request(method, &req.path, req.credential.as_deref(), &req.body).as_bytes());
            std::thread::sleep(self.kill_delay);
            self.server.kill();
            return Err(Killed);
        }
        let (status, body) = http_request(self.server.addr, method, &req.path, req.credential.as_deref(), &req.body)
            .map_err(|_| Killed)?;
        Ok(ApiResponse { status, body })
    }
}
