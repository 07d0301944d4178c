// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Mapping write-ahead log.
//!
//! Frame: `[payload_len:u16][payload][crc32(payload):u32]`, where the first
//! payload byte is the record type. Records between two commits form one
//! atomic unit on replay.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::EngineError;

const T_MAP: u8 = 1;
const T_OPEN: u8 = 2;
const T_CLOSE: u8 = 3;
const T_RESET: u8 = 4;
const T_COMMIT: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WalRecord {
    Map { lsn: u64, pid: u64, slot_lba: u64, offset: u16, len: u16 },
    ZoneOpen { zone: u32, group: u32, plid: Option<u16>, target: Option<f64> },
    ZoneClose { zone: u32 },
    ZoneReset { zone: u32 },
    Commit { lsn: u64 },
}

impl WalRecord {
    pub fn encode(&self, out: &mut Vec<u8>) {
        let mut p = Vec::with_capacity(32);
        match *self {
            WalRecord::Map { lsn, pid, slot_lba, offset, len } => {
                p.push(T_MAP);
                p.extend_from_slice(&lsn.to_le_bytes());
                p.extend_from_slice(&pid.to_le_bytes());
                p.extend_from_slice(&slot_lba.to_le_bytes());
                p.extend_from_slice(&offset.to_le_bytes());
                p.extend_from_slice(&len.to_le_bytes());
            }
            WalRecord::ZoneOpen { zone, group, plid, target } => {
                p.push(T_OPEN);
                p.extend_from_slice(&zone.to_le_bytes());
                p.extend_from_slice(&group.to_le_bytes());
                p.extend_from_slice(&plid.unwrap_or(u16::MAX).to_le_bytes());
                p.push(target.is_some() as u8);
                p.extend_from_slice(&target.unwrap_or(0.0).to_bits().to_le_bytes());
            }
            WalRecord::ZoneClose { zone } => {
                p.push(T_CLOSE);
                p.extend_from_slice(&zone.to_le_bytes());
            }
            WalRecord::ZoneReset { zone } => {
                p.push(T_RESET);
                p.extend_from_slice(&zone.to_le_bytes());
            }
            WalRecord::Commit { lsn } => {
                p.push(T_COMMIT);
                p.extend_from_slice(&lsn.to_le_bytes());
            }
        }
        out.extend_from_slice(&(p.len() as u16).to_le_bytes());
        out.extend_from_slice(&p);
        out.extend_from_slice(&crc32fast::hash(&p).to_le_bytes());
    }

    fn decode(p: &[u8]) -> Option<WalRecord> {
        let u16_at = |i: usize| u16::from_le_bytes(p[i..i + 2].try_into().unwrap());
        let u32_at = |i: usize| u32::from_le_bytes(p[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(p[i..i + 8].try_into().unwrap());
        Some(match (*p.first()?, p.len()) {
            (T_MAP, 29) => WalRecord::Map {
                lsn: u64_at(1),
                pid: u64_at(9),
                slot_lba: u64_at(17),
                offset: u16_at(25),
                len: u16_at(27),
            },
            (T_OPEN, 20) => WalRecord::ZoneOpen {
                zone: u32_at(1),
                group: u32_at(5),
                plid: Some(u16_at(9)).filter(|&v| v != u16::MAX),
                target: (p[11] != 0).then(|| f64::from_bits(u64_at(12))),
            },
            (T_CLOSE, 5) => WalRecord::ZoneClose { zone: u32_at(1) },
            (T_RESET, 5) => WalRecord::ZoneReset { zone: u32_at(1) },
            (T_COMMIT, 9) => WalRecord::Commit { lsn: u64_at(1) },
            _ => return None,
        })
    }
}

/// Decodes frames up to the first torn or corrupt one. Returns the records
/// and the byte length of the valid prefix.
pub fn decode_log(bytes: &[u8]) -> (Vec<WalRecord>, usize) {
    let mut out = Vec::new();
    let mut at = 0;
    while at + 2 <= bytes.len() {
        let len = u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
        let end = at + 2 + len + 4;
        if end > bytes.len() {
            break;
        }
        let payload = &bytes[at + 2..at + 2 + len];
        let crc = u32::from_le_bytes(bytes[at + 2 + len..end].try_into().unwrap());
        if crc32fast::hash(payload) != crc {
            break;
        }
        match WalRecord::decode(payload) {
            Some(r) => out.push(r),
            None => break,
        }
        at = end;
    }
    (out, at)
}

/// Where the log and checkpoint live.
#[derive(Debug)]
pub enum MetaStore {
    Memory { wal: Vec<u8>, checkpoint: Option<Vec<u8>> },
    Dir { path: PathBuf, wal: File },
}

const WAL_FILE: &str = "mapping.wal";
const CKPT_FILE: &str = "checkpoint.zssm";

fn io(e: std::io::Error) -> EngineError {
    EngineError::Io(e.to_string())
}

impl MetaStore {
    pub fn memory() -> Self {
        MetaStore::Memory { wal: Vec::new(), checkpoint: None }
    }

    /// Independent copy of an in-memory store. Directory stores share their
    /// files and cannot be copied.
    pub fn try_clone(&self) -> Result<Self, EngineError> {
        match self {
            MetaStore::Memory { wal, checkpoint } => Ok(MetaStore::Memory { wal: wal.clone(), checkpoint: checkpoint.clone() }),
            MetaStore::Dir { path, .. } => Err(EngineError::Io(format!("{} is a directory store and cannot be copied", path.display()))),
        }
    }

    /// Opens (creating if needed) a store in `dir`, keeping existing files.
    pub fn open_dir(dir: &Path) -> Result<Self, EngineError> {
        fs::create_dir_all(dir).map_err(io)?;
        let wal = OpenOptions::new().create(true).append(true).open(dir.join(WAL_FILE)).map_err(io)?;
        Ok(MetaStore::Dir { path: dir.to_path_buf(), wal })
    }

    fn append(&mut self, bytes: &[u8]) -> Result<(), EngineError> {
        match self {
            MetaStore::Memory { wal, .. } => {
                wal.extend_from_slice(bytes);
                Ok(())
            }
            MetaStore::Dir { wal, .. } => wal.write_all(bytes).map_err(io),
        }
    }

    pub fn wal_bytes(&self) -> Result<Vec<u8>, EngineError> {
        match self {
            MetaStore::Memory { wal, .. } => Ok(wal.clone()),
            MetaStore::Dir { path, .. } => {
                let mut buf = Vec::new();
                File::open(path.join(WAL_FILE)).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io)?;
                Ok(buf)
            }
        }
    }

    pub fn wal_len(&self) -> Result<u64, EngineError> {
        match self {
            MetaStore::Memory { wal, .. } => Ok(wal.len() as u64),
            MetaStore::Dir { wal, .. } => wal.metadata().map(|m| m.len()).map_err(io),
        }
    }

    pub fn checkpoint_bytes(&self) -> Result<Option<Vec<u8>>, EngineError> {
        match self {
            MetaStore::Memory { checkpoint, .. } => Ok(checkpoint.clone()),
            MetaStore::Dir { path, .. } => match fs::read(path.join(CKPT_FILE)) {
                Ok(b) => Ok(Some(b)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(io(e)),
            },
        }
    }

    /// Installs a new checkpoint atomically and empties the log.
    pub fn install_checkpoint(&mut self, bytes: &[u8]) -> Result<(), EngineError> {
        match self {
            MetaStore::Memory { wal, checkpoint } => {
                *checkpoint = Some(bytes.to_vec());
                wal.clear();
            }
            MetaStore::Dir { path, wal } => {
                let tmp = path.join(format!("{CKPT_FILE}.tmp"));
                let mut f = File::create(&tmp).map_err(io)?;
                f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io)?;
                fs::rename(&tmp, path.join(CKPT_FILE)).map_err(io)?;
                wal.set_len(0).map_err(io)?;
            }
        }
        Ok(())
    }

    /// Drops a torn tail so new appends follow the last valid record.
    pub fn truncate_wal(&mut self, len: u64) -> Result<(), EngineError> {
        match self {
            MetaStore::Memory { wal, .. } => wal.truncate(len as usize),
            MetaStore::Dir { wal, .. } => wal.set_len(len).map_err(io)?,
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrashPoint {
    /// Nothing of the record reaches the log.
    Before,
    /// Half of the frame reaches the log.
    Within,
    /// The whole record is durable, then the process dies.
    After,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultPlan {
    /// Zero-based index of the append, counted from engine start.
    pub append_index: u64,
    pub point: CrashPoint,
}

#[derive(Debug)]
pub struct Wal {
    store: MetaStore,
    appends: u64,
    fault: Option<FaultPlan>,
    crashed: bool,
    buf: Vec<u8>,
}

impl Wal {
    pub fn new(store: MetaStore) -> Self {
        Wal { store, appends: 0, fault: None, crashed: false, buf: Vec::with_capacity(64) }
    }

    pub fn set_fault(&mut self, plan: Option<FaultPlan>) {
        self.fault = plan;
    }

    pub fn try_clone(&self) -> Result<Self, EngineError> {
        Ok(Wal { store: self.store.try_clone()?, appends: self.appends, fault: self.fault, crashed: self.crashed, buf: Vec::new() })
    }

    pub fn appends(&self) -> u64 {
        self.appends
    }

    pub fn crashed(&self) -> bool {
        self.crashed
    }

    pub fn store(&self) -> &MetaStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut MetaStore {
        &mut self.store
    }

    pub fn into_store(self) -> MetaStore {
        self.store
    }

    pub fn append(&mut self, rec: WalRecord) -> Result<(), EngineError> {
        if self.crashed {
            return Err(EngineError::Crashed);
        }
        self.buf.clear();
        rec.encode(&mut self.buf);
        let idx = self.appends;
        self.appends += 1;
        match self.fault {
            Some(FaultPlan { append_index, point }) if append_index == idx => {
                self.crashed = true;
                match point {
                    CrashPoint::Before => {}
                    CrashPoint::Within => {
                        let half = self.buf.len() / 2;
                        let torn = self.buf[..half].to_vec();
                        self.store.append(&torn)?;
                    }
                    CrashPoint::After => {
                        let whole = std::mem::take(&mut self.buf);
                        self.store.append(&whole)?;
                        self.buf = whole;
                    }
                }
                Err(EngineError::Crashed)
            }
            _ => {
                let whole = std::mem::take(&mut self.buf);
                let r = self.store.append(&whole);
                self.buf = whole;
                r
            }
        }
    }
}
