//! Durable node state: a single-writer append-only log with checksummed
//! records, replayed into tables on boot.
//!
//! Record framing: 4-byte big-endian payload length, 8-byte checksum
//! (the first 8 bytes of the payload's SHA-256), then the JSON payload.
//! Every append is fsynced before the call returns, so a record that
//! was acknowledged to the caller survives a process kill.
//!
//! Replay distinguishes two corruptions: an incomplete record at the
//! tail is a torn write from a crash mid-append — it was never
//! acknowledged, so it is truncated away with a warning; a checksum
//! mismatch anywhere else is real corruption and halts recovery rather
//! than silently skipping data.
//!
//! The tables: session rows, the inbox and outbox keyed by
//! (session, peer, seqnum), and per-session transaction rows in commit
//! order with a compensated flag. Raw record counts are kept so tests
//! can audit effect-at-most-once straight off the log.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;


/// Session ids serialize as 32-character hex strings: JSON has no
/// native 128-bit integers.
mod hex_u128 {
    use serde::de::{Deserializer, Error};
    use serde::ser::Serializer;
    use serde::Deserialize;

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:032x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        u128::from_str_radix(&s, 16).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    AtMostOnce,
    AtLeastOnce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionStatus {
    Started,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRow {
    #[serde(with = "hex_u128")]
    pub session: u128,
    pub choreography: String,
    pub status: SessionStatus,
    pub mode: Mode,
    /// The initiator's input value, hex of the canonical encoding;
    /// `None` for sessions instantiated by an inbound message.
    pub input_hex: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TxnRow {
    pub name: String,
    pub input_digest: String,
    pub input_hex: String,
    pub output_hex: String,
    pub compensated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
pub enum WalRecord {
    SessionStarted {
        #[serde(with = "hex_u128")]
        session: u128,
        choreography: String,
        mode: Mode,
        input_hex: Option<String>,
    },
    SessionStatusChanged {
        #[serde(with = "hex_u128")]
        session: u128,
        status: SessionStatus,
        /// Set when a status row is created for a session never seen
        /// before, which is how failure tombstones appear.
        choreography: Option<String>,
    },
    InboxPut {
        #[serde(with = "hex_u128")]
        session: u128,
        sender: String,
        seqnum: u64,
        kind: u8,
        payload_hex: String,
    },
    OutboxAck {
        #[serde(with = "hex_u128")]
        session: u128,
        receiver: String,
        seqnum: u64,
        kind: u8,
        payload_hex: String,
    },
    TxnCommitted {
        #[serde(with = "hex_u128")]
        session: u128,
        name: String,
        input_digest: String,
        input_hex: String,
        output_hex: String,
    },
    TxnCompensated {
        #[serde(with = "hex_u128")]
        session: u128,
        name: String,
        input_digest: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("store record encoding error: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("corrupt log record at offset {0}: checksum mismatch")]
    Corrupt(u64),
    #[error("kill switch fired after {0} appends")]
    Killed(u64),
}

/// Crash injection: makes the `n`-th append (1-based) and everything
/// after it fail, simulating power loss at that protocol step.
#[derive(Debug, Clone, Default)]
pub struct KillSwitch {
    kill_after: Option<u64>,
    appended: Arc<AtomicU64>,
}

impl KillSwitch {
    pub fn after(n: u64) -> KillSwitch {
        KillSwitch {
            kill_after: Some(n),
            appended: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Returns true when the append at hand must be dropped.
    fn fires(&self) -> bool {
        match self.kill_after {
            None => {
                self.appended.fetch_add(1, Ordering::SeqCst);
                false
            }
            Some(limit) => self.appended.fetch_add(1, Ordering::SeqCst) + 1 > limit,
        }
    }

    pub fn appends_so_far(&self) -> u64 {
        self.appended.load(Ordering::SeqCst)
    }
}

pub struct DurableStore {
    path: PathBuf,
    file: File,
    kill: KillSwitch,
    records_replayed: usize,

    pub sessions: BTreeMap<u128, SessionRow>,
    pub inbox: BTreeMap<(u128, String, u64), (u8, Vec<u8>)>,
    pub outbox: BTreeMap<(u128, String, u64), (u8, Vec<u8>)>,
    /// Commit-ordered transactions per session.
    pub txns: BTreeMap<u128, Vec<TxnRow>>,
    /// Raw record history from replay plus this run's appends, for
    /// effect auditing.
    pub history: Vec<WalRecord>,
}

impl DurableStore {
    pub fn open(path: &Path) -> Result<DurableStore, StoreError> {
        Self::open_with_kill(path, KillSwitch::default())
    }

    pub fn open_with_kill(path: &Path, kill: KillSwitch) -> Result<DurableStore, StoreError> {
        let records = read_wal(path)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut store = DurableStore {
            path: path.to_owned(),
            file,
            kill,
            records_replayed: records.len(),
            sessions: BTreeMap::new(),
            inbox: BTreeMap::new(),
            outbox: BTreeMap::new(),
            txns: BTreeMap::new(),
            history: Vec::new(),
        };
        for rec in records {
            store.apply(&rec);
            store.history.push(rec);
        }
        Ok(store)
    }

    pub fn records_replayed(&self) -> usize {
        self.records_replayed
    }

    /// Append one record durably: serialized, checksummed, written, and
    /// fsynced before the in-memory tables change.
    pub fn append(&mut self, rec: WalRecord) -> Result<(), StoreError> {
        if self.kill.fires() {
            return Err(StoreError::Killed(self.kill.appends_so_far()));
        }
        let payload = serde_json::to_vec(&rec)?;
        let mut buf = Vec::with_capacity(12 + payload.len());
        buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        buf.extend_from_slice(&checksum(&payload));
        buf.extend_from_slice(&payload);
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        self.apply(&rec);
        self.history.push(rec);
        Ok(())
    }

    fn apply(&mut self, rec: &WalRecord) {
        match rec {
            WalRecord::SessionStarted {
                session,
                choreography,
                mode,
                input_hex,
            } => {
                self.sessions.insert(
                    *session,
                    SessionRow {
                        session: *session,
                        choreography: choreography.clone(),
                        status: SessionStatus::Started,
                        mode: *mode,
                        input_hex: input_hex.clone(),
                    },
                );
            }
            WalRecord::SessionStatusChanged {
                session,
                status,
                choreography,
            } => {
                let row = self.sessions.entry(*session).or_insert_with(|| SessionRow {
                    session: *session,
                    choreography: choreography.clone().unwrap_or_default(),
                    status: SessionStatus::Started,
                    mode: Mode::AtLeastOnce,
                    input_hex: None,
                });
                row.status = *status;
            }
            WalRecord::InboxPut {
                session,
                sender,
                seqnum,
                kind,
                payload_hex,
            } => {
                self.inbox.insert(
                    (*session, sender.clone(), *seqnum),
                    (*kind, hex::decode(payload_hex).unwrap_or_default()),
                );
            }
            WalRecord::OutboxAck {
                session,
                receiver,
                seqnum,
                kind,
                payload_hex,
            } => {
                self.outbox.insert(
                    (*session, receiver.clone(), *seqnum),
                    (*kind, hex::decode(payload_hex).unwrap_or_default()),
                );
            }
            WalRecord::TxnCommitted {
                session,
                name,
                input_digest,
                input_hex,
                output_hex,
            } => {
                self.txns.entry(*session).or_default().push(TxnRow {
                    name: name.clone(),
                    input_digest: input_digest.clone(),
                    input_hex: input_hex.clone(),
                    output_hex: output_hex.clone(),
                    compensated: false,
                });
            }
            WalRecord::TxnCompensated {
                session,
                name,
                input_digest,
            } => {
                if let Some(rows) = self.txns.get_mut(session) {
                    for row in rows.iter_mut() {
                        if row.name == *name && row.input_digest == *input_digest {
                            row.compensated = true;
                        }
                    }
                }
            }
        }
    }

    pub fn committed_output(
        &self,
        session: u128,
        name: &str,
        input_digest: &str,
    ) -> Option<Vec<u8>> {
        self.txns.get(&session).and_then(|rows| {
            rows.iter()
                .find(|r| r.name == name && r.input_digest == input_digest)
                .map(|r| hex::decode(&r.output_hex).unwrap_or_default())
        })
    }

    /// A digest over the replayed tables; recovery is idempotent iff
    /// booting twice yields the same digest.
    pub fn table_digest(&self) -> String {
        let sessions: Vec<&SessionRow> = self.sessions.values().collect();
        let inbox: Vec<(String, &str, u64, u8, String)> = self
            .inbox
            .iter()
            .map(|((s, p, n), (k, payload))| {
                (format!("{s:032x}"), p.as_str(), *n, *k, hex::encode(payload))
            })
            .collect();
        let outbox: Vec<(String, &str, u64, u8, String)> = self
            .outbox
            .iter()
            .map(|((s, p, n), (k, payload))| {
                (format!("{s:032x}"), p.as_str(), *n, *k, hex::encode(payload))
            })
            .collect();
        let txns: Vec<(String, &Vec<TxnRow>)> = self
            .txns
            .iter()
            .map(|(s, rows)| (format!("{s:032x}"), rows))
            .collect();
        let blob =
            serde_json::to_vec(&(sessions, inbox, outbox, txns)).expect("tables serialize");
        hex::encode(Sha256::digest(&blob))
    }

    /// Rewrite the log as one record per current fact and atomically
    /// swap it in. Inbox/outbox/transaction history is preserved (it is
    /// the recovery source); superseded status flips collapse.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let mut records: Vec<WalRecord> = Vec::new();
        for row in self.sessions.values() {
            records.push(WalRecord::SessionStarted {
                session: row.session,
                choreography: row.choreography.clone(),
                mode: row.mode,
                input_hex: row.input_hex.clone(),
            });
            if row.status != SessionStatus::Started {
                records.push(WalRecord::SessionStatusChanged {
                    session: row.session,
                    status: row.status,
                    choreography: Some(row.choreography.clone()),
                });
            }
        }
        for ((session, sender, seqnum), (kind, payload)) in &self.inbox {
            records.push(WalRecord::InboxPut {
                session: *session,
                sender: sender.clone(),
                seqnum: *seqnum,
                kind: *kind,
                payload_hex: hex::encode(payload),
            });
        }
        for ((session, receiver, seqnum), (kind, payload)) in &self.outbox {
            records.push(WalRecord::OutboxAck {
                session: *session,
                receiver: receiver.clone(),
                seqnum: *seqnum,
                kind: *kind,
                payload_hex: hex::encode(payload),
            });
        }
        for (session, rows) in &self.txns {
            for row in rows {
                records.push(WalRecord::TxnCommitted {
                    session: *session,
                    name: row.name.clone(),
                    input_digest: row.input_digest.clone(),
                    input_hex: row.input_hex.clone(),
                    output_hex: row.output_hex.clone(),
                });
            }
            for row in rows.iter().rev() {
                if row.compensated {
                    records.push(WalRecord::TxnCompensated {
                        session: *session,
                        name: row.name.clone(),
                        input_digest: row.input_digest.clone(),
                    });
                }
            }
        }

        let tmp = self.path.with_extension("compact");
        {
            let mut f = File::create(&tmp)?;
            for rec in &records {
                let payload = serde_json::to_vec(rec)?;
                f.write_all(&(payload.len() as u32).to_be_bytes())?;
                f.write_all(&checksum(&payload))?;
                f.write_all(&payload)?;
            }
            f.sync_data()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        self.history = records;
        Ok(())
    }
}

fn checksum(payload: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(payload);
    digest[..8].try_into().unwrap()
}

/// Read and verify every record. A torn record at the tail is dropped
/// (and the file truncated to the last good offset); a bad checksum
/// followed by more data halts with an error.
pub fn read_wal(path: &Path) -> Result<Vec<WalRecord>, StoreError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    }
    let mut records = Vec::new();
    let mut off = 0usize;
    let mut good_end = 0usize;
    while off < bytes.len() {
        let header_end = off + 12;
        if header_end > bytes.len() {
            break; // torn length/checksum header
        }
        let len = u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let want: [u8; 8] = bytes[off + 4..off + 12].try_into().unwrap();
        let payload_end = header_end + len;
        if payload_end > bytes.len() {
            break; // torn payload
        }
        let payload = &bytes[header_end..payload_end];
        if checksum(payload) != want {
            if payload_end == bytes.len() {
                break; // torn tail with scrambled bytes
            }
            return Err(StoreError::Corrupt(off as u64));
        }
        let rec: WalRecord = serde_json::from_slice(payload)?;
        records.push(rec);
        off = payload_end;
        good_end = payload_end;
    }
    if good_end < bytes.len() {
        log::warn!(
            "truncating {} torn bytes at the tail of {}",
            bytes.len() - good_end,
            path.display()
        );
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(good_end as u64)?;
        f.sync_data()?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn started(session: u128) -> WalRecord {
        WalRecord::SessionStarted {
            session,
            choreography: "order".into(),
            mode: Mode::AtLeastOnce,
            input_hex: Some("00".into()),
        }
    }

    #[test]
    fn append_and_replay() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("node.wal");
        {
            let mut store = DurableStore::open(&path).unwrap();
            store.append(started(7)).unwrap();
            store
                .append(WalRecord::InboxPut {
                    session: 7,
                    sender: "pay".into(),
                    seqnum: 0,
                    kind: 1,
                    payload_hex: "ff00".into(),
                })
                .unwrap();
        }
        let store = DurableStore::open(&path).unwrap();
        assert_eq!(store.records_replayed(), 2);
        assert_eq!(store.sessions[&7].status, SessionStatus::Started);
        assert_eq!(
            store.inbox[&(7, "pay".into(), 0)],
            (1, vec![0xff, 0x00])
        );
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("node.wal");
        {
            let mut store = DurableStore::open(&path).unwrap();
            store.append(started(7)).unwrap();
        }
        // Simulate a crash mid-append.
        {
            let mut f = OpenOptions::new().append(true).open(&path).unwrap();
            f.write_all(&[0, 0, 0, 99, 1, 2, 3]).unwrap();
        }
        let store = DurableStore::open(&path).unwrap();
        assert_eq!(store.records_replayed(), 1);
        // The tail is gone: reopening again sees a clean log.
        let again = DurableStore::open(&path).unwrap();
        assert_eq!(again.records_replayed(), 1);
    }

    #[test]
    fn mid_log_corruption_halts() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("node.wal");
        {
            let mut store = DurableStore::open(&path).unwrap();
            store.append(started(7)).unwrap();
            store.append(started(8)).unwrap();
        }
        // Flip a payload byte of the first record.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[14] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            DurableStore::open(&path),
            Err(StoreError::Corrupt(0))
        ));
    }

    #[test]
    fn kill_switch_stops_appends() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("node.wal");
        let mut store = DurableStore::open_with_kill(&path, KillSwitch::after(1)).unwrap();
        store.append(started(1)).unwrap();
        assert!(matches!(
            store.append(started(2)),
            Err(StoreError::Killed(_))
        ));
        drop(store);
        let replayed = DurableStore::open(&path).unwrap();
        assert_eq!(replayed.records_replayed(), 1);
    }

    #[test]
    fn replay_is_idempotent() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("node.wal");
        {
            let mut store = DurableStore::open(&path).unwrap();
            store.append(started(7)).unwrap();
            store
                .append(WalRecord::TxnCommitted {
                    session: 7,
                    name: "reserve".into(),
                    input_digest: "aa".into(),
                    input_hex: "00".into(),
                    output_hex: "00".into(),
                })
                .unwrap();
        }
        let a = DurableStore::open(&path).unwrap().table_digest();
        let b = DurableStore::open(&path).unwrap().table_digest();
        assert_eq!(a, b);
    }

    #[test]
    fn compaction_preserves_tables() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("node.wal");
        let mut store = DurableStore::open(&path).unwrap();
        store.append(started(7)).unwrap();
        store
            .append(WalRecord::SessionStatusChanged {
                session: 7,
                status: SessionStatus::Completed,
                choreography: None,
            })
            .unwrap();
        store
            .append(WalRecord::OutboxAck {
                session: 7,
                receiver: "pay".into(),
                seqnum: 0,
                kind: 1,
                payload_hex: "beef".into(),
            })
            .unwrap();
        let before = store.table_digest();
        store.compact().unwrap();
        assert_eq!(store.table_digest(), before);
        let reopened = DurableStore::open(&path).unwrap();
        assert_eq!(reopened.table_digest(), before);
        assert_eq!(reopened.sessions[&7].status, SessionStatus::Completed);
    }
}
