//! JSON-lines export of a committed log.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::crypto::{PartyId, Pki};

use super::replica::LogEntry;

/// One exported line. Keys and values are hex-encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRecord {
    pub seq: u64,
    pub submitter: PartyId,
    pub key: String,
    pub value: String,
    pub key_signature_valid: bool,
}

impl ExportRecord {
    pub fn from_entry(entry: &LogEntry, pki: &Pki) -> Self {
        Self {
            seq: entry.seq,
            submitter: entry.txn.submitter,
            key: hex::encode(&entry.txn.key),
            value: hex::encode(&entry.txn.value),
            key_signature_valid: entry.txn.key_signature_valid(pki),
        }
    }
}

pub fn write_jsonl(log: &[LogEntry], pki: &Pki, mut out: impl Write) -> io::Result<()> {
    for entry in log {
        serde_json::to_writer(&mut out, &ExportRecord::from_entry(entry, pki))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(log: &[LogEntry], pki: &Pki) -> String {
    let mut buf = Vec::new();
    write_jsonl(log, pki, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}
