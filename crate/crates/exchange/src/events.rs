//! Append-only event log.
//!
//! One JSON object per line, LF-terminated, synced to disk before the
//! request that produced it is answered. On open, a trailing line without a
//! newline is a torn write from a crash and is cut off; any other malformed
//! line is corruption.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use qx_core::adjudication::AdjudicationPolicy;
use qx_core::answer_spec::AnswerSpec;
use qx_core::ledger::{AccountId, Money, TxnId};
use qx_core::protocol::{Terms, Timestamp, Verdict};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Buy,
    Sell,
    Arbitrate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ruling {
    pub verdict: Verdict,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    Registered {
        pseudonym: String,
        credential_hash: String,
        capabilities: Vec<Capability>,
        buyer_account: Option<AccountId>,
        seller_account: Option<AccountId>,
    },
    Funded {
        account: AccountId,
        amount: Money,
    },
    QuestionCreated {
        txn: TxnId,
        buyer: String,
        text: String,
        spec: AnswerSpec,
        terms: Terms,
        policy: AdjudicationPolicy,
    },
    QuestionPosted {
        txn: TxnId,
        by: String,
    },
    Accepted {
        txn: TxnId,
        seller: String,
    },
    Answered {
        txn: TxnId,
        by: String,
        answer: String,
    },
    EvidenceSubmitted {
        txn: TxnId,
        by: String,
        #[serde(with = "hex_body")]
        body: Vec<u8>,
    },
    Adjudicated {
        txn: TxnId,
        by: String,
        ruling: Option<Ruling>,
    },
    Settled {
        txn: TxnId,
        by: String,
    },
    TimeAdvanced {
        to: Timestamp,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Registered { .. } => "Registered",
            EventBody::Funded { .. } => "Funded",
            EventBody::QuestionCreated { .. } => "QuestionCreated",
            EventBody::QuestionPosted { .. } => "QuestionPosted",
            EventBody::Accepted { .. } => "Accepted",
            EventBody::Answered { .. } => "Answered",
            EventBody::EvidenceSubmitted { .. } => "EvidenceSubmitted",
            EventBody::Adjudicated { .. } => "Adjudicated",
            EventBody::Settled { .. } => "Settled",
            EventBody::TimeAdvanced { .. } => "TimeAdvanced",
        }
    }
}

mod hex_body {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub recorded_at: Timestamp,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogError {
    #[error("expected event seq {expected}, got {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("corrupt event at line {line}: {message}")]
    CorruptEvent { line: usize, message: String },
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

fn io_err(e: std::io::Error) -> LogError {
    LogError::StorageFailure(e.to_string())
}

#[derive(Debug)]
enum Backing {
    Memory(Vec<Event>),
    File { file: File, path: PathBuf },
}

#[derive(Debug)]
pub struct EventLog {
    backing: Backing,
    len: u64,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog { backing: Backing::Memory(Vec::new()), len: 0 }
    }

    /// Opens (creating if needed) a file-backed log and returns the events
    /// already in it. A torn final line is truncated away.
    pub fn open(path: &Path) -> Result<(EventLog, Vec<Event>), LogError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(io_err)?;
            }
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io_err)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw).map_err(io_err)?;
        let complete = raw.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < raw.len() {
            file.set_len(complete as u64).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io_err)?;
        let events = parse_events(&raw[..complete])?;
        let len = events.len() as u64;
        Ok((EventLog { backing: Backing::File { file, path: path.to_owned() }, len }, events))
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.backing {
            Backing::File { path, .. } => Some(path),
            Backing::Memory(_) => None,
        }
    }

    /// Events held by an in-memory log.
    pub fn memory_events(&self) -> Option<&[Event]> {
        match &self.backing {
            Backing::Memory(v) => Some(v),
            Backing::File { .. } => None,
        }
    }

    /// Durably appends `event`, which must carry the next sequence number.
    pub fn append(&mut self, event: &Event) -> Result<u64, LogError> {
        let expected = self.len + 1;
        if event.seq != expected {
            return Err(LogError::SequenceGap { expected, found: event.seq });
        }
        match &mut self.backing {
            Backing::Memory(v) => v.push(event.clone()),
            Backing::File { file, .. } => {
                let mut line = serde_json::to_vec(event).map_err(|e| LogError::StorageFailure(e.to_string()))?;
                line.push(b'\n');
                file.write_all(&line).map_err(io_err)?;
                file.sync_data().map_err(io_err)?;
            }
        }
        self.len = expected;
        Ok(expected)
    }
}

/// Parses LF-separated events and checks they run gaplessly from 1.
pub fn parse_events(bytes: &[u8]) -> Result<Vec<Event>, LogError> {
    let mut events = Vec::new();
    for (i, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line.map_err(|e| LogError::CorruptEvent { line: i + 1, message: e.to_string() })?;
        let event: Event = serde_json::from_str(&line)
            .map_err(|e| LogError::CorruptEvent { line: i + 1, message: e.to_string() })?;
        let expected = i as u64 + 1;
        if event.seq != expected {
            return Err(LogError::SequenceGap { expected, found: event.seq });
        }
        events.push(event);
    }
    Ok(events)
}

/// Reads a log file without modifying it. A torn final line is ignored.
pub fn read_log(path: &Path) -> Result<Vec<Event>, LogError> {
    let raw = std::fs::read(path).map_err(io_err)?;
    let complete = raw.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    parse_events(&raw[..complete])
}
