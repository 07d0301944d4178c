// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use crate::deathtime::{WriteHistory, HISTORY_LEN};
use crate::flashsim::PAGE_SIZE;

use super::CodecError;

pub const PAGE_MAGIC: [u8; 4] = *b"ZPG1";
pub const HEADER_LEN: usize = 64;
pub const BODY_LEN: usize = PAGE_SIZE - HEADER_LEN;

/// Header flag: the page was relocated by GC before ever being updated.
pub const FLAG_NEVER_REWRITTEN: u8 = 0x01;

const PID: usize = 4;
const LSN: usize = 12;
const HIST: usize = 20;
const HIST_LEN: usize = 52;
const FLAGS: usize = 53;
const TREE: usize = 54;
const CRC: usize = 58;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct PageHeader {
    pub pid: u64,
    pub write_lsn: u64,
    pub history: WriteHistory,
    pub flags: u8,
    pub tree_id: u32,
}

impl PageHeader {
    pub fn never_rewritten(&self) -> bool {
        self.flags & FLAG_NEVER_REWRITTEN != 0
    }
}

/// A 4 KiB page image whose checksum is always consistent with its bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct PageImage {
    bytes: Box<[u8]>,
}

impl std::fmt::Debug for PageImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PageImage").field("header", &self.header()).finish_non_exhaustive()
    }
}

fn checksum(bytes: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&bytes[..CRC]);
    h.update(&bytes[CRC + 4..]);
    h.finalize()
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

impl PageImage {
    /// Builds an image; `body` shorter than [`BODY_LEN`] is zero padded.
    pub fn new(header: &PageHeader, body: &[u8]) -> Self {
        assert!(body.len() <= BODY_LEN, "body of {} bytes", body.len());
        let mut bytes = vec![0u8; PAGE_SIZE].into_boxed_slice();
        bytes[HEADER_LEN..HEADER_LEN + body.len()].copy_from_slice(body);
        let mut page = PageImage { bytes };
        page.set_header(header);
        page
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() != PAGE_SIZE {
            return Err(CodecError::PageSize(bytes.len()));
        }
        if bytes[..4] != PAGE_MAGIC {
            return Err(CodecError::Integrity("bad page magic".into()));
        }
        let stored = u32::from_le_bytes(bytes[CRC..CRC + 4].try_into().unwrap());
        if stored != checksum(bytes) {
            return Err(CodecError::Integrity("page checksum mismatch".into()));
        }
        let page = PageImage { bytes: bytes.into() };
        page.try_header()?;
        Ok(page)
    }

    fn try_header(&self) -> Result<PageHeader, CodecError> {
        let b = &self.bytes;
        let mut hist = [0u64; HISTORY_LEN];
        for (i, h) in hist.iter_mut().enumerate() {
            *h = u64_at(b, HIST + 8 * i);
        }
        let history = WriteHistory::from_parts(hist, b[HIST_LEN])
            .map_err(|e| CodecError::Integrity(format!("write history: {e}")))?;
        Ok(PageHeader {
            pid: u64_at(b, PID),
            write_lsn: u64_at(b, LSN),
            history,
            flags: b[FLAGS],
            tree_id: u32::from_le_bytes(b[TREE..TREE + 4].try_into().unwrap()),
        })
    }

    pub fn header(&self) -> PageHeader {
        self.try_header().expect("page header validated on construction")
    }

    pub fn set_header(&mut self, h: &PageHeader) {
        let b = &mut self.bytes;
        b[..4].copy_from_slice(&PAGE_MAGIC);
        b[PID..PID + 8].copy_from_slice(&h.pid.to_le_bytes());
        b[LSN..LSN + 8].copy_from_slice(&h.write_lsn.to_le_bytes());
        let (hist, n) = h.history.to_parts();
        for (i, v) in hist.iter().enumerate() {
            b[HIST + 8 * i..HIST + 8 * i + 8].copy_from_slice(&v.to_le_bytes());
        }
        b[HIST_LEN] = n;
        b[FLAGS] = h.flags;
        b[TREE..TREE + 4].copy_from_slice(&h.tree_id.to_le_bytes());
        b[CRC + 4..HEADER_LEN].fill(0);
        let crc = checksum(b);
        b[CRC..CRC + 4].copy_from_slice(&crc.to_le_bytes());
    }

    pub fn pid(&self) -> u64 {
        u64_at(&self.bytes, PID)
    }

    pub fn body(&self) -> &[u8] {
        &self.bytes[HEADER_LEN..]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}
