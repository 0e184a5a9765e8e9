//! Append-only command journal with periodic snapshots.
//!
//! Layout of a journal directory:
//!
//! - `journal.jsonl`: one [`JournalRecord`] per line, sequence numbers
//!   gapless from 1.
//! - `snapshot.json`: the platform state after some record, rewritten
//!   atomically every `snapshot_every` records.
//! - `meta.json`: the platform configuration and signing key the journal was
//!   started with.
//!
//! A final line without its newline is a torn write and is dropped on open.
//! Any other unreadable line refuses the open with the sequence it should
//! have carried.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use miniorc_core::iam::SigningKey;
use miniorc_core::platform::{Command, Platform, PlatformConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal record {0} is corrupt")]
    Corrupt(u64),
    #[error("journal io: {0}")]
    Io(#[from] io::Error),
    #[error("journal metadata: {0}")]
    Meta(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    /// Logical clock at the moment the command was accepted.
    pub timestamp: u64,
    pub entity: String,
    pub operation: String,
    pub request_id: String,
    pub actor: Option<String>,
    pub payload: Command,
    /// Hex SHA-256 of the record serialized without this field.
    pub checksum: String,
}

#[derive(Serialize)]
struct RecordBody<'a> {
    seq: u64,
    timestamp: u64,
    entity: &'a str,
    operation: &'a str,
    request_id: &'a str,
    actor: Option<&'a str>,
    payload: &'a Command,
}

impl JournalRecord {
    pub fn new(seq: u64, timestamp: u64, request_id: String, actor: Option<String>, payload: Command) -> Self {
        let mut rec = JournalRecord {
            seq,
            timestamp,
            entity: payload.entity().to_string(),
            operation: payload.name().to_string(),
            request_id,
            actor,
            payload,
            checksum: String::new(),
        };
        rec.checksum = rec.digest();
        rec
    }

    fn digest(&self) -> String {
        let body = RecordBody {
            seq: self.seq,
            timestamp: self.timestamp,
            entity: &self.entity,
            operation: &self.operation,
            request_id: &self.request_id,
            actor: self.actor.as_deref(),
            payload: &self.payload,
        };
        let bytes = serde_json::to_vec(&body).expect("commands always serialize");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn verify(&self) -> bool {
        self.checksum == self.digest()
            && self.entity == self.payload.entity()
            && self.operation == self.payload.name()
    }
}

/// What a journal directory was created with.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Meta {
    pub platform: PlatformConfig,
    /// Hex-encoded HMAC key.
    pub signing_key: String,
}

impl Meta {
    pub fn key(&self) -> Result<SigningKey, JournalError> {
        let bytes = hex::decode(&self.signing_key).map_err(|e| JournalError::Meta(e.to_string()))?;
        SigningKey::new(&bytes).map_err(|e| JournalError::Meta(e.to_string()))
    }

    pub fn fresh_platform(&self) -> Result<Platform, JournalError> {
        Ok(Platform::new(self.platform.clone(), self.key()?))
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    platform: Platform,
}

#[derive(Clone, Debug)]
pub struct JournalOptions {
    pub fsync: bool,
    pub snapshot_every: u64,
}

impl Default for JournalOptions {
    fn default() -> Self {
        JournalOptions { fsync: false, snapshot_every: 1000 }
    }
}

/// A journal opened for appending, plus what was needed to rebuild state.
pub struct Opened {
    pub journal: Journal,
    pub meta: Meta,
    /// Snapshot state, or a fresh platform when no usable snapshot exists.
    pub base: Platform,
    /// Records after the base state, in order.
    pub tail: Vec<JournalRecord>,
    /// True when the directory held no journal before.
    pub fresh: bool,
}

pub struct Journal {
    dir: PathBuf,
    out: BufWriter<File>,
    last_seq: u64,
    options: JournalOptions,
}

impl Journal {
    /// Opens or creates the journal in `dir`. `meta` is used only when the
    /// directory has none yet.
    pub fn open(dir: &Path, meta: impl FnOnce() -> Meta, options: JournalOptions) -> Result<Opened, JournalError> {
        fs::create_dir_all(dir)?;
        let meta_path = dir.join(META_FILE);
        let journal_path = dir.join(JOURNAL_FILE);
        let meta = if meta_path.exists() {
            let text = fs::read_to_string(&meta_path)?;
            serde_json::from_str(&text).map_err(|e| JournalError::Meta(e.to_string()))?
        } else {
            let m = meta();
            write_atomic(&meta_path, &serde_json::to_vec_pretty(&m).expect("meta serializes"))?;
            m
        };
        let fresh = !journal_path.exists();

        let (records, keep) = read_records(&journal_path)?;
        if let Some(len) = keep {
            let f = OpenOptions::new().write(true).open(&journal_path)?;
            f.set_len(len)?;
            f.sync_all()?;
        }
        let last_seq = records.last().map_or(0, |r| r.seq);

        let snapshot = load_snapshot(&dir.join(SNAPSHOT_FILE)).filter(|s| s.seq <= last_seq);
        let (base, after) = match snapshot {
            Some(s) => (s.platform, s.seq),
            None => (meta.fresh_platform()?, 0),
        };
        let tail = records.into_iter().filter(|r| r.seq > after).collect();

        let file = OpenOptions::new().create(true).append(true).open(&journal_path)?;
        let journal = Journal { dir: dir.to_path_buf(), out: BufWriter::new(file), last_seq, options };
        Ok(Opened { journal, meta, base, tail, fresh })
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends one record and makes it durable before returning.
    pub fn append(
        &mut self,
        timestamp: u64,
        request_id: Option<String>,
        actor: Option<String>,
        payload: Command,
    ) -> Result<JournalRecord, JournalError> {
        let seq = self.last_seq + 1;
        let request_id = request_id.unwrap_or_else(|| format!("r{seq:08}"));
        let rec = JournalRecord::new(seq, timestamp, request_id, actor, payload);
        let mut line = serde_json::to_vec(&rec).expect("records serialize");
        line.push(b'\n');
        self.out.write_all(&line)?;
        self.out.flush()?;
        if self.options.fsync {
            self.out.get_ref().sync_data()?;
        }
        self.last_seq = seq;
        Ok(rec)
    }

    pub fn snapshot_due(&self) -> bool {
        self.options.snapshot_every > 0 && self.last_seq > 0 && self.last_seq % self.options.snapshot_every == 0
    }

    /// Writes the state reached after the last appended record.
    pub fn write_snapshot(&mut self, platform: &Platform) -> Result<(), JournalError> {
        let snap = Snapshot { seq: self.last_seq, platform: platform.clone() };
        let bytes = serde_json::to_vec(&snap).expect("platform serializes");
        write_atomic(&self.dir.join(SNAPSHOT_FILE), &bytes)
    }
}

/// Every record in the file, plus the length to truncate to when the last
/// line is torn.
fn read_records(path: &Path) -> Result<(Vec<JournalRecord>, Option<u64>), JournalError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(e.into()),
    }
    let mut records: Vec<JournalRecord> = Vec::new();
    let mut offset = 0usize;
    let mut truncate = None;
    while offset < bytes.len() {
        let expected = records.last().map_or(1, |r| r.seq + 1);
        let Some(end) = bytes[offset..].iter().position(|b| *b == b'\n') else {
            truncate = Some(offset as u64);
            break;
        };
        let line = &bytes[offset..offset + end];
        offset += end + 1;
        let rec: JournalRecord = serde_json::from_slice(line).map_err(|_| JournalError::Corrupt(expected))?;
        if rec.seq != expected || !rec.verify() {
            return Err(JournalError::Corrupt(expected));
        }
        records.push(rec);
    }
    Ok((records, truncate))
}

/// Reads every intact record of a journal file without touching it.
pub fn read_journal(path: &Path) -> Result<Vec<JournalRecord>, JournalError> {
    read_records(path).map(|(r, _)| r)
}

fn load_snapshot(path: &Path) -> Option<Snapshot> {
    let bytes = fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JournalError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Meta {
        Meta { platform: PlatformConfig::default(), signing_key: hex::encode([7u8; 32]) }
    }

    fn advance(dt: u64) -> Command {
        Command::Advance { dt }
    }

    #[test]
    fn append_then_reopen_returns_records_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut opened = Journal::open(dir.path(), meta, JournalOptions::default()).unwrap();
        assert!(opened.fresh);
        for dt in 1..=3 {
            opened.journal.append(0, None, None, advance(dt)).unwrap();
        }
        drop(opened);
        let again = Journal::open(dir.path(), meta, JournalOptions::default()).unwrap();
        assert!(!again.fresh);
        let seqs: Vec<u64> = again.tail.iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3]);
        assert_eq!(again.tail[0].request_id, "r00000001");
        assert_eq!(again.journal.last_seq(), 3);
    }

    #[test]
    fn torn_tail_is_dropped_and_appends_continue() {
        let dir = tempfile::tempdir().unwrap();
        let mut opened = Journal::open(dir.path(), meta, JournalOptions::default()).unwrap();
        opened.journal.append(0, None, None, advance(1)).unwrap();
        drop(opened);
        let path = dir.path().join(JOURNAL_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":2,\"timest").unwrap();
        drop(f);

        let mut again = Journal::open(dir.path(), meta, JournalOptions::default()).unwrap();
        assert_eq!(again.tail.len(), 1);
        again.journal.append(1, None, None, advance(2)).unwrap();
        drop(again);
        assert_eq!(read_journal(&path).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_middle_record_names_its_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let mut opened = Journal::open(dir.path(), meta, JournalOptions::default()).unwrap();
        for dt in 1..=3 {
            opened.journal.append(0, None, None, advance(dt)).unwrap();
        }
        drop(opened);
        let path = dir.path().join(JOURNAL_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("\"dt\":2", "\"dt\":9", 1)).unwrap();
        match Journal::open(dir.path(), meta, JournalOptions::default()) {
            Err(JournalError::Corrupt(seq)) => assert_eq!(seq, 2),
            other => panic!("expected corruption, got {:?}", other.err()),
        }
    }

    #[test]
    fn gap_in_sequence_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let mut opened = Journal::open(dir.path(), meta, JournalOptions::default()).unwrap();
        for dt in 1..=3 {
            opened.journal.append(0, None, None, advance(dt)).unwrap();
        }
        drop(opened);
        let path = dir.path().join(JOURNAL_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 1).map(|(_, l)| l).collect();
        fs::write(&path, kept.join("\n") + "\n").unwrap();
        assert!(matches!(
            Journal::open(dir.path(), meta, JournalOptions::default()),
            Err(JournalError::Corrupt(2))
        ));
    }

    #[test]
    fn snapshot_replaces_the_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let options = JournalOptions { fsync: false, snapshot_every: 2 };
        let mut opened = Journal::open(dir.path(), meta, options.clone()).unwrap();
        let mut platform = opened.base.clone();
        for dt in 1..=3 {
            let rec = opened.journal.append(platform.now(), None, None, advance(dt)).unwrap();
            platform.apply(rec.payload).unwrap();
            if opened.journal.snapshot_due() {
                opened.journal.write_snapshot(&platform).unwrap();
            }
        }
        drop(opened);
        let again = Journal::open(dir.path(), meta, options).unwrap();
        assert_eq!(again.base.now(), 3);
        assert_eq!(again.tail.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn checksum_covers_every_field() {
        let rec = JournalRecord::new(4, 10, "req".into(), Some("acct".into()), advance(3));
        assert!(rec.verify());
        let mut other = rec.clone();
        other.timestamp = 11;
        assert!(!other.verify());
        let mut other = rec.clone();
        other.actor = None;
        assert!(!other.verify());
        let mut other = rec;
        other.operation = "submit".into();
        assert!(!other.verify());
    }
}
