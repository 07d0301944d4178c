// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Per-page compression and packing of compressed pages into 4 KiB slots.

mod corpus;
mod pack;
mod page;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flashsim::PAGE_SIZE;

pub use corpus::synth_body;
pub use pack::{pack, slot_pids, unpack_read, PackedSlot, SlotEntry, DIR_ENTRY_LEN, MAX_ENTRIES, SLOT_HEADER_LEN, SLOT_MAGIC};
pub use page::{PageHeader, PageImage, BODY_LEN, FLAG_NEVER_REWRITTEN, HEADER_LEN, PAGE_MAGIC};

/// Largest codec output that could share a slot: one slot header plus one
/// directory entry must still fit.
pub const MAX_STORED_LEN: usize = PAGE_SIZE - SLOT_HEADER_LEN - DIR_ENTRY_LEN;

/// Codec output is kept only when it saves at least 1/32 of a page; smaller
/// gains leave no room for a co-tenant and are stored raw instead.
pub const SPILL_THRESHOLD: usize = PAGE_SIZE - PAGE_SIZE / 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("page {0} not present in slot")]
    NotFound(u64),
    #[error("page image must be {PAGE_SIZE} bytes, got {0}")]
    PageSize(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum StoreFlag {
    Compressed = 1,
    RawSpilled = 2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredPage {
    pub pid: u64,
    pub data: Vec<u8>,
    pub flag: StoreFlag,
}

impl StoredPage {
    pub fn stored_len(&self) -> usize {
        self.data.len()
    }
}

pub trait Codec: Send + Sync {
    fn kind(&self) -> CodecKind;
    fn compress(&self, raw: &[u8]) -> Vec<u8>;
    fn decompress(&self, stored: &[u8], raw_len: usize) -> Result<Vec<u8>, CodecError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Identity,
    Lz4,
}

impl CodecKind {
    pub fn codec(self) -> &'static dyn Codec {
        match self {
            CodecKind::Identity => &Identity,
            CodecKind::Lz4 => &Lz4,
        }
    }
}

/// Stores bytes unchanged, so every page spills into a slot of its own.
pub struct Identity;

impl Codec for Identity {
    fn kind(&self) -> CodecKind {
        CodecKind::Identity
    }

    fn compress(&self, raw: &[u8]) -> Vec<u8> {
        raw.to_vec()
    }

    fn decompress(&self, stored: &[u8], raw_len: usize) -> Result<Vec<u8>, CodecError> {
        if stored.len() != raw_len {
            return Err(CodecError::Integrity("identity length mismatch".into()));
        }
        Ok(stored.to_vec())
    }
}

pub struct Lz4;

impl Codec for Lz4 {
    fn kind(&self) -> CodecKind {
        CodecKind::Lz4
    }

    fn compress(&self, raw: &[u8]) -> Vec<u8> {
        lz4_flex::block::compress(raw)
    }

    fn decompress(&self, stored: &[u8], raw_len: usize) -> Result<Vec<u8>, CodecError> {
        let out = lz4_flex::block::decompress(stored, raw_len)
            .map_err(|e| CodecError::Integrity(format!("lz4: {e}")))?;
        if out.len() != raw_len {
            return Err(CodecError::Integrity("lz4 output length mismatch".into()));
        }
        Ok(out)
    }
}

/// Compresses a whole page image (header included). Output that would not
/// leave room for a directory entry falls back to the raw image.
pub fn compress_page(codec: &dyn Codec, page: &PageImage) -> StoredPage {
    let raw = page.as_bytes();
    let out = codec.compress(raw);
    let (data, flag) = if out.len() <= SPILL_THRESHOLD.min(MAX_STORED_LEN) {
        (out, StoreFlag::Compressed)
    } else {
        (raw.to_vec(), StoreFlag::RawSpilled)
    };
    StoredPage { pid: page.pid(), data, flag }
}

/// Like [`compress_page`] for an image that has not been validated yet.
pub fn compress_raw(codec: &dyn Codec, raw: &[u8]) -> Result<StoredPage, CodecError> {
    Ok(compress_page(codec, &PageImage::from_bytes(raw)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn page(pid: u64, body: &[u8]) -> PageImage {
        PageImage::new(&PageHeader { pid, ..Default::default() }, body)
    }

    #[test]
    fn zero_page_compresses_small() {
        let s = compress_page(&Lz4, &page(1, &[]));
        assert_eq!(s.flag, StoreFlag::Compressed);
        assert!(s.stored_len() < 256, "{}", s.stored_len());
    }

    #[test]
    fn random_page_spills_raw() {
        let mut body = vec![0u8; BODY_LEN];
        ChaCha8Rng::seed_from_u64(1).fill_bytes(&mut body);
        let p = page(2, &body);
        let s = compress_page(&Lz4, &p);
        assert_eq!(s.flag, StoreFlag::RawSpilled);
        assert_eq!(s.stored_len(), PAGE_SIZE);
        assert_eq!(s.data, p.as_bytes());
    }

    #[test]
    fn identity_always_spills() {
        let s = compress_page(&Identity, &page(3, &[]));
        assert_eq!(s.flag, StoreFlag::RawSpilled);
    }

    #[test]
    fn corrupt_input_rejected() {
        let p = page(4, b"abc");
        let mut b = p.as_bytes().to_vec();
        b[70] ^= 1;
        assert!(matches!(compress_raw(&Lz4, &b), Err(CodecError::Integrity(_))));
        assert!(compress_raw(&Lz4, p.as_bytes()).is_ok());
    }

    #[test]
    fn round_trip_through_codec() {
        let p = page(5, &synth_body(7, 5, 0, 0.4));
        let s = compress_page(&Lz4, &p);
        let back = Lz4.decompress(&s.data, PAGE_SIZE).unwrap();
        assert_eq!(back, p.as_bytes());
    }

    #[test]
    fn corpus_ratio_in_oltp_band() {
        // Mixed-compressibility corpus; aggregate ratio is stored / raw bytes.
        let mut stored = 0usize;
        let mut raw = 0usize;
        for pid in 0..2000u64 {
            let target = [0.15, 0.3, 0.45][pid as usize % 3];
            let s = compress_page(&Lz4, &page(pid, &synth_body(11, pid, 0, target)));
            stored += s.stored_len();
            raw += PAGE_SIZE;
        }
        let ratio = stored as f64 / raw as f64;
        assert!((0.14..=0.49).contains(&ratio), "ratio {ratio}");
    }
}
