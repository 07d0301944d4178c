// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Best-fit-decreasing packing of stored pages into 4 KiB slots.
//!
//! Shared slot layout, little-endian:
//!
//! ```text
//! 0..4    magic "ZSLT"
//! 4       entry count n (1..=64)
//! 5..8    reserved, zero
//! 8..12   crc32 of bytes 0..8 and the directory
//! 12..    n directory entries {pid u64, offset u16, len u16, flags u8}
//! ...     entry payloads
//! ```
//!
//! A raw-spilled page occupies a whole slot as its plain page image, with no
//! slot header. Readers tell the two apart by the magic.

use crate::flashsim::PAGE_SIZE;

use super::{Codec, CodecError, PageImage, StoreFlag, StoredPage};

pub const SLOT_MAGIC: [u8; 4] = *b"ZSLT";
pub const SLOT_HEADER_LEN: usize = 12;
pub const DIR_ENTRY_LEN: usize = 13;
pub const MAX_ENTRIES: usize = 64;

const SLOT_CAPACITY: usize = PAGE_SIZE - SLOT_HEADER_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotEntry {
    pub pid: u64,
    pub offset: u16,
    pub len: u16,
    pub flag: StoreFlag,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedSlot {
    pub entries: Vec<SlotEntry>,
    pub bytes: Vec<u8>,
}

impl PackedSlot {
    pub fn is_raw(&self) -> bool {
        self.entries.len() == 1 && self.entries[0].flag == StoreFlag::RawSpilled
    }

    pub fn free_bytes(&self) -> usize {
        if self.is_raw() {
            return 0;
        }
        let used: usize = self.entries.iter().map(|e| e.len as usize + DIR_ENTRY_LEN).sum();
        SLOT_CAPACITY - used
    }

    pub fn pids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.pid)
    }

    fn build(items: &[&StoredPage]) -> PackedSlot {
        if let [only] = items {
            if only.flag == StoreFlag::RawSpilled {
                let entry = SlotEntry { pid: only.pid, offset: 0, len: PAGE_SIZE as u16, flag: only.flag };
                return PackedSlot { entries: vec![entry], bytes: only.data.clone() };
            }
        }
        let mut bytes = vec![0u8; PAGE_SIZE];
        bytes[..4].copy_from_slice(&SLOT_MAGIC);
        bytes[4] = items.len() as u8;
        let mut at = SLOT_HEADER_LEN + DIR_ENTRY_LEN * items.len();
        let mut entries = Vec::with_capacity(items.len());
        for (i, it) in items.iter().enumerate() {
            let e = SlotEntry { pid: it.pid, offset: at as u16, len: it.data.len() as u16, flag: it.flag };
            let d = SLOT_HEADER_LEN + DIR_ENTRY_LEN * i;
            bytes[d..d + 8].copy_from_slice(&e.pid.to_le_bytes());
            bytes[d + 8..d + 10].copy_from_slice(&e.offset.to_le_bytes());
            bytes[d + 10..d + 12].copy_from_slice(&e.len.to_le_bytes());
            bytes[d + 12] = e.flag as u8;
            bytes[at..at + it.data.len()].copy_from_slice(&it.data);
            at += it.data.len();
            entries.push(e);
        }
        let crc = dir_crc(&bytes, items.len());
        bytes[8..12].copy_from_slice(&crc.to_le_bytes());
        PackedSlot { entries, bytes }
    }
}

fn dir_crc(bytes: &[u8], n: usize) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&bytes[..8]);
    h.update(&bytes[SLOT_HEADER_LEN..SLOT_HEADER_LEN + DIR_ENTRY_LEN * n]);
    h.finalize()
}

struct Bin {
    items: Vec<usize>,
    residual: usize,
    raw: bool,
}

/// Items are taken largest first; each goes to the open slot whose remaining
/// space fits it most tightly (lowest slot on ties), or to a new slot.
pub fn pack(batch: &[StoredPage]) -> Vec<PackedSlot> {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| batch[b].stored_len().cmp(&batch[a].stored_len()));
    let mut bins: Vec<Bin> = Vec::new();
    for i in order {
        let item = &batch[i];
        if item.flag == StoreFlag::RawSpilled {
            bins.push(Bin { items: vec![i], residual: 0, raw: true });
            continue;
        }
        let need = item.stored_len() + DIR_ENTRY_LEN;
        let best = bins
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.raw && b.items.len() < MAX_ENTRIES && b.residual >= need)
            .min_by_key(|(idx, b)| (b.residual, *idx))
            .map(|(idx, _)| idx);
        match best {
            Some(idx) => {
                bins[idx].items.push(i);
                bins[idx].residual -= need;
            }
            None => bins.push(Bin { items: vec![i], residual: SLOT_CAPACITY - need, raw: false }),
        }
    }
    bins.iter()
        .map(|b| PackedSlot::build(&b.items.iter().map(|&i| &batch[i]).collect::<Vec<_>>()))
        .collect()
}

/// Parses a shared slot directory, validating its checksum and bounds.
fn directory(slot: &[u8]) -> Result<Vec<SlotEntry>, CodecError> {
    let bad = |m: &str| CodecError::Integrity(m.to_string());
    let n = slot[4] as usize;
    if n == 0 || n > MAX_ENTRIES {
        return Err(bad("slot entry count out of range"));
    }
    let stored = u32::from_le_bytes(slot[8..12].try_into().unwrap());
    if stored != dir_crc(slot, n) {
        return Err(bad("slot directory checksum mismatch"));
    }
    let dir_end = SLOT_HEADER_LEN + DIR_ENTRY_LEN * n;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let d = SLOT_HEADER_LEN + DIR_ENTRY_LEN * i;
        let offset = u16::from_le_bytes([slot[d + 8], slot[d + 9]]);
        let len = u16::from_le_bytes([slot[d + 10], slot[d + 11]]);
        if (offset as usize) < dir_end || offset as usize + len as usize > PAGE_SIZE {
            return Err(bad("slot entry out of bounds"));
        }
        if slot[d + 12] != StoreFlag::Compressed as u8 {
            return Err(bad("unexpected entry flag"));
        }
        out.push(SlotEntry {
            pid: u64::from_le_bytes(slot[d..d + 8].try_into().unwrap()),
            offset,
            len,
            flag: StoreFlag::Compressed,
        });
    }
    Ok(out)
}

/// Lists the pids stored in a slot image.
pub fn slot_pids(slot: &[u8]) -> Result<Vec<u64>, CodecError> {
    if slot.len() != PAGE_SIZE {
        return Err(CodecError::PageSize(slot.len()));
    }
    if slot[..4] != SLOT_MAGIC {
        return Ok(vec![PageImage::from_bytes(slot)?.pid()]);
    }
    Ok(directory(slot)?.iter().map(|e| e.pid).collect())
}

/// Extracts and verifies one page from a slot image.
pub fn unpack_read(codec: &dyn Codec, slot: &[u8], pid: u64) -> Result<PageImage, CodecError> {
    if slot.len() != PAGE_SIZE {
        return Err(CodecError::PageSize(slot.len()));
    }
    let page = if slot[..4] != SLOT_MAGIC {
        PageImage::from_bytes(slot)?
    } else {
        let entry = directory(slot)?
            .into_iter()
            .find(|e| e.pid == pid)
            .ok_or(CodecError::NotFound(pid))?;
        let range = entry.offset as usize..entry.offset as usize + entry.len as usize;
        PageImage::from_bytes(&codec.decompress(&slot[range], PAGE_SIZE)?)?
    };
    if page.pid() != pid {
        return Err(CodecError::NotFound(pid));
    }
    Ok(page)
}
