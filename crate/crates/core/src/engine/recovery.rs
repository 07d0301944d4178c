// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Checkpointing and crash recovery of the mapping state.

use std::collections::{BTreeSet, HashMap};

use super::wal::{decode_log, Wal, WalRecord};
use super::{Engine, EngineConfig, EngineError, EngineMode, MetaStore};
use crate::codec::{self, CodecKind};
use crate::deathtime::estimate_edt;
use crate::flashsim::{DeviceMode, FlashDevice};
use crate::spacemap::{Group, Location, Snapshot, SpaceMap, ZoneRecord, ZoneState, NO_GROUP};

/// Zone and group tables as rebuilt from a checkpoint plus the log.
struct Replay {
    zone_pages: u32,
    zones: Vec<ZoneRecord>,
    groups: Vec<Group>,
    map: HashMap<u64, Location>,
    lsn: u64,
}

impl Replay {
    fn zone_of(&self, lba: u64) -> Result<usize, EngineError> {
        let z = (lba / self.zone_pages as u64) as usize;
        if z >= self.zones.len() {
            return Err(EngineError::Recovery(format!("logged slot {lba} lies outside every zone")));
        }
        Ok(z)
    }

    fn apply(&mut self, rec: WalRecord) -> Result<(), EngineError> {
        match rec {
            WalRecord::Map { pid, slot_lba, offset, len, .. } => {
                let z = self.zone_of(slot_lba)?;
                if let Some(prev) = self.map.insert(pid, Location { slot_lba, offset, len }) {
                    let pz = self.zone_of(prev.slot_lba)?;
                    self.zones[pz].invalid += 1;
                }
                let base = z as u64 * self.zone_pages as u64;
                let end = (slot_lba - base + 1) as u32;
                let zr = &mut self.zones[z];
                if end > zr.write_ptr {
                    let grown = (end - zr.write_ptr) as u64;
                    zr.write_ptr = end;
                    if let Some(g) = self.groups.get_mut(zr.group as usize) {
                        if let Some(i) = g.members.iter().position(|&m| m as usize == z) {
                            g.appended[i] += grown;
                        }
                    }
                }
            }
            WalRecord::ZoneOpen { zone, group, plid, target } => {
                let z = zone as usize;
                if z >= self.zones.len() {
                    return Err(EngineError::Recovery(format!("logged open of unknown zone {zone}")));
                }
                while self.groups.len() as u32 <= group {
                    let id = self.groups.len() as u32;
                    self.groups.push(Group { id, members: Vec::new(), appended: Vec::new(), rewritten: BTreeSet::new() });
                }
                let g = &mut self.groups[group as usize];
                if g.members.contains(&zone) {
                    g.rewritten.remove(&zone);
                } else {
                    g.members.push(zone);
                    g.appended.push(0);
                }
                let zr = &mut self.zones[z];
                zr.state = ZoneState::Active;
                zr.group = group;
                zr.plid = plid;
                zr.target_edt = target;
            }
            WalRecord::ZoneClose { zone } => {
                let zp = self.zone_pages;
                if let Some(zr) = self.zones.get_mut(zone as usize) {
                    zr.state = if zr.write_ptr == zp { ZoneState::Full } else { ZoneState::Partial };
                }
            }
            WalRecord::ZoneReset { zone } => {
                let zr = self.zones.get_mut(zone as usize).ok_or_else(|| EngineError::Recovery(format!("reset of unknown zone {zone}")))?;
                if let Some(g) = self.groups.get_mut(zr.group as usize) {
                    g.rewritten.insert(zone);
                }
                *zr = empty_record(zone);
            }
            WalRecord::Commit { lsn } => self.lsn = self.lsn.max(lsn),
        }
        Ok(())
    }
}

fn empty_record(zone: u32) -> ZoneRecord {
    ZoneRecord { zone, state: ZoneState::Empty, write_ptr: 0, group: NO_GROUP, plid: None, target_edt: None, invalid: 0 }
}

impl Engine {
    /// Persists the mapping table, zone table and group history, then
    /// empties the log. Returns the snapshot's LSN.
    pub fn checkpoint(&mut self) -> Result<u64, EngineError> {
        self.live()?;
        if self.cfg.mode != EngineMode::Oop {
            return Err(EngineError::WrongMode("checkpoint"));
        }
        let bytes = self.space.snapshot(self.last_lsn).encode();
        self.wal.store_mut().install_checkpoint(&bytes)?;
        Ok(self.last_lsn)
    }

    /// Rebuilds an engine from the latest checkpoint and the committed part
    /// of the log. Uncommitted records and a torn tail are discarded.
    pub fn recover(cfg: EngineConfig, mut dev: FlashDevice, mut store: MetaStore) -> Result<Engine, EngineError> {
        cfg.validate(dev.config())?;
        if cfg.mode != EngineMode::Oop {
            return Err(EngineError::WrongMode("recover"));
        }
        let zone_count = cfg.zone_count(dev.config());
        let zp = cfg.zone_pages;
        let mut replay = match store.checkpoint_bytes()? {
            Some(bytes) => {
                let s = Snapshot::decode(&bytes)?;
                if s.zones.len() as u32 != zone_count {
                    return Err(EngineError::Recovery(format!("checkpoint has {} zones, config {zone_count}", s.zones.len())));
                }
                Replay { zone_pages: zp, zones: s.zones, groups: s.groups, map: s.mappings.into_iter().collect(), lsn: s.lsn }
            }
            None => Replay {
                zone_pages: zp,
                zones: (0..zone_count).map(empty_record).collect(),
                groups: Vec::new(),
                map: HashMap::new(),
                lsn: 0,
            },
        };
        let log = store.wal_bytes()?;
        let (records, valid_len) = decode_log(&log);
        store.truncate_wal(valid_len as u64)?;
        let mut pending = Vec::new();
        for rec in records {
            pending.push(rec);
            if matches!(rec, WalRecord::Commit { .. }) {
                for r in pending.drain(..) {
                    replay.apply(r)?;
                }
            }
        }
        // Slots written after the last commit are unknown to the log. A zns
        // zone cannot rewind, so its device write pointer wins; elsewhere the
        // stale pages of empty zones are trimmed again.
        let zns = dev.config().mode == DeviceMode::Zns;
        for zr in &mut replay.zones {
            if zns {
                let wp = dev.zone_write_pointer(zr.zone)?;
                if zr.state == ZoneState::Empty {
                    if wp > 0 {
                        dev.zone_reset(zr.zone)?;
                    }
                    continue;
                }
                zr.write_ptr = zr.write_ptr.max(wp);
            } else if zr.state == ZoneState::Empty {
                let base = zr.zone as u64 * zp as u64;
                let lbas: Vec<u64> = (base..base + zp as u64).filter(|&l| dev.is_mapped(l)).collect();
                if !lbas.is_empty() {
                    dev.discard(&lbas)?;
                }
            }
            if zr.state != ZoneState::Empty && zr.write_ptr == zp {
                zr.state = ZoneState::Full;
            }
        }
        let kind = if cfg.compression_enabled { CodecKind::Lz4 } else { CodecKind::Identity };
        let c = kind.codec();
        let mut bad = None;
        let space = SpaceMap::rebuild(zp, &replay.zones, replay.groups, replay.map, |pid, loc| {
            let page = dev.peek(loc.slot_lba).ok_or(()).and_then(|slot| codec::unpack_read(c, slot, pid).map_err(|_| ()));
            match page {
                Ok(p) => {
                    let h = p.header();
                    estimate_edt(&h.history, h.write_lsn, h.tree_id, h.never_rewritten()).value()
                }
                Err(()) => {
                    bad.get_or_insert(pid);
                    None
                }
            }
        })?;
        if let Some(pid) = bad {
            return Err(EngineError::Recovery(format!("pid {pid} maps to a slot that does not hold it")));
        }
        let mut engine = Engine::assemble(cfg, dev, space, Wal::new(store), replay.lsn);
        engine.space.reassign_edt_ranks();
        Ok(engine)
    }
}
