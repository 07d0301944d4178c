// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Per-page write history and expected-deathtime (EDT) estimation.

use std::cmp::Ordering;

use thiserror::Error;

pub const HISTORY_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeathtimeError {
    #[error("lsn {lsn} precedes last recorded lsn {last}")]
    LsnRegression { lsn: u64, last: u64 },
    #[error("history entries are not ordered")]
    Unordered,
    #[error("history length {0} exceeds {HISTORY_LEN}")]
    TooLong(u8),
}

/// Ring of the most recent persist LSNs, oldest first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct WriteHistory {
    entries: [u64; HISTORY_LEN],
    len: u8,
}

impl WriteHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a history from its header encoding. Slots past `len` must be
    /// zero so that equal histories have equal encodings.
    pub fn from_parts(entries: [u64; HISTORY_LEN], len: u8) -> Result<Self, DeathtimeError> {
        if len as usize > HISTORY_LEN {
            return Err(DeathtimeError::TooLong(len));
        }
        let live = &entries[..len as usize];
        if live.windows(2).any(|w| w[0] > w[1]) || entries[len as usize..].iter().any(|&e| e != 0) {
            return Err(DeathtimeError::Unordered);
        }
        Ok(WriteHistory { entries, len })
    }

    pub fn to_parts(&self) -> ([u64; HISTORY_LEN], u8) {
        (self.entries, self.len)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entries(&self) -> &[u64] {
        &self.entries[..self.len as usize]
    }

    pub fn newest(&self) -> Option<u64> {
        self.entries().last().copied()
    }

    /// Appends `lsn` unless the write was issued by garbage collection.
    pub fn record(&mut self, lsn: u64, is_gc_write: bool) -> Result<(), DeathtimeError> {
        if let Some(last) = self.newest() {
            if lsn < last {
                return Err(DeathtimeError::LsnRegression { lsn, last });
            }
        }
        if is_gc_write {
            return Ok(());
        }
        if self.len() == HISTORY_LEN {
            self.entries.copy_within(1.., 0);
            self.entries[HISTORY_LEN - 1] = lsn;
        } else {
            self.entries[self.len()] = lsn;
            self.len += 1;
        }
        Ok(())
    }
}

/// Expected deathtime. Variants are ordered: every estimate sorts before
/// every tree fallback, which sorts before the cold sentinel.
#[derive(Clone, Copy, Debug)]
pub enum Edt {
    Estimated(f64),
    FallbackByTree(u32),
    ColdMax,
}

impl Edt {
    pub fn value(&self) -> Option<f64> {
        match self {
            Edt::Estimated(v) => Some(*v),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Edt::Estimated(_) => 0,
            Edt::FallbackByTree(_) => 1,
            Edt::ColdMax => 2,
        }
    }
}

impl Ord for Edt {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Edt::Estimated(a), Edt::Estimated(b)) => a.total_cmp(b),
            (Edt::FallbackByTree(a), Edt::FallbackByTree(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Edt {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Edt {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Edt {}

/// Extrapolates the next overwrite from the mean interval between recorded
/// writes. `never_rewritten` marks pages that survived GC without ever being
/// updated after their first write.
pub fn estimate_edt(
    history: &WriteHistory,
    current_lsn: u64,
    tree_id: u32,
    never_rewritten: bool,
) -> Edt {
    if never_rewritten {
        return Edt::ColdMax;
    }
    let wh = history.entries();
    if wh.len() < 2 {
        return Edt::FallbackByTree(tree_id);
    }
    let span = (wh[wh.len() - 1] - wh[0]) as f64;
    Edt::Estimated(current_lsn as f64 + span / (wh.len() - 1) as f64)
}
