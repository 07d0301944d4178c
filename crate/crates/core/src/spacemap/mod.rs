// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Zone-structured logical space: PID mapping, slot occupancy, zone
//! metadata and the history of zone cohorts opened together.

mod snapshot;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::DIR_ENTRY_LEN;
use crate::flashsim::PAGE_SIZE;

pub use snapshot::{Snapshot, ZoneRecord, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

pub const NO_GROUP: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("pid {0} is not mapped")]
    NotFound(u64),
    #[error("placement error: {0}")]
    Placement(String),
    #[error("open-zone limit {limit} reached")]
    OpenLimit { limit: u32 },
    #[error("no zone available to open")]
    NoZone,
    #[error("zone {zone} still holds {valid} live pages")]
    ZoneNotEmpty { zone: u32, valid: u32 },
    #[error("zone {0} out of range")]
    ZoneOutOfRange(u32),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub slot_lba: u64,
    pub offset: u16,
    /// Stored length; [`PAGE_SIZE`] for a raw slot.
    pub len: u16,
}

impl Location {
    pub fn raw(slot_lba: u64) -> Self {
        Location { slot_lba, offset: 0, len: PAGE_SIZE as u16 }
    }

    /// Bytes of slot space the entry consumes, directory entry included.
    pub fn footprint(&self) -> u64 {
        if self.len as usize == PAGE_SIZE {
            PAGE_SIZE as u64
        } else {
            self.len as u64 + DIR_ENTRY_LEN as u64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum ZoneState {
    Empty = 0,
    Active = 1,
    /// Closed before reaching the end; may be reopened at its write pointer.
    Partial = 2,
    Full = 3,
}

impl ZoneState {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => ZoneState::Empty,
            1 => ZoneState::Active,
            2 => ZoneState::Partial,
            3 => ZoneState::Full,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZoneMeta {
    pub zone_id: u32,
    pub lba_base: u64,
    pub zone_pages: u32,
    pub write_ptr: u32,
    pub state: ZoneState,
    pub valid_page_count: u32,
    pub invalid_page_count: u32,
    /// Slots that still hold at least one live page.
    pub live_slots: u32,
    /// Slot bytes held by live pages, directory entries included.
    pub live_bytes: u64,
    edt_sum: f64,
    edt_count: u32,
    pub edt_range_rank: u32,
    /// Placement target chosen when the zone was opened, if any.
    pub target_edt: Option<f64>,
    pub group: u32,
    pub plid: Option<u16>,
}

impl ZoneMeta {
    fn new(zone_id: u32, zone_pages: u32) -> Self {
        ZoneMeta {
            zone_id,
            lba_base: zone_id as u64 * zone_pages as u64,
            zone_pages,
            write_ptr: 0,
            state: ZoneState::Empty,
            valid_page_count: 0,
            invalid_page_count: 0,
            live_slots: 0,
            live_bytes: 0,
            edt_sum: 0.0,
            edt_count: 0,
            edt_range_rank: 0,
            target_edt: None,
            group: NO_GROUP,
            plid: None,
        }
    }

    /// Mean estimated deathtime of live pages; pages without an estimate are
    /// counted in `valid_page_count` but not in the mean.
    pub fn avg_edt(&self) -> Option<f64> {
        (self.edt_count > 0).then(|| self.edt_sum / self.edt_count as f64)
    }

    pub fn contains(&self, lba: u64) -> bool {
        (self.lba_base..self.lba_base + self.zone_pages as u64).contains(&lba)
    }

    pub fn free_slots(&self) -> u32 {
        self.zone_pages - self.write_ptr
    }

    /// Slot bytes that a full drain of this zone would give back.
    pub fn reclaimable_bytes(&self) -> u64 {
        self.zone_pages as u64 * PAGE_SIZE as u64 - self.live_bytes
    }

    fn reset(&mut self) {
        let (id, zp) = (self.zone_id, self.zone_pages);
        *self = ZoneMeta::new(id, zp);
    }
}

/// Zones opened while the same cohort was being written.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub id: u32,
    pub members: Vec<u32>,
    pub appended: Vec<u64>,
    pub rewritten: BTreeSet<u32>,
}

impl Group {
    pub fn is_retired(&self) -> bool {
        self.rewritten.len() == self.members.len()
    }

    /// A proper, nonempty subset of the members has been reset.
    pub fn is_imbalanced(&self) -> bool {
        !self.rewritten.is_empty() && !self.is_retired()
    }

    pub fn pending(&self) -> impl Iterator<Item = u32> + '_ {
        self.members.iter().copied().filter(|z| !self.rewritten.contains(z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    loc: Location,
    edt: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpenFrom {
    Empty,
    Partial,
}

#[derive(Clone, Debug)]
pub struct SpaceMap {
    zone_pages: u32,
    zones: Vec<ZoneMeta>,
    forward: Vec<Option<Entry>>,
    reverse: Vec<Vec<u64>>,
    groups: Vec<Group>,
    mapped: u64,
}

impl SpaceMap {
    pub fn new(zone_count: u32, zone_pages: u32) -> Self {
        SpaceMap {
            zone_pages,
            zones: (0..zone_count).map(|z| ZoneMeta::new(z, zone_pages)).collect(),
            forward: Vec::new(),
            reverse: vec![Vec::new(); zone_count as usize * zone_pages as usize],
            groups: Vec::new(),
            mapped: 0,
        }
    }

    pub fn zone_pages(&self) -> u32 {
        self.zone_pages
    }

    pub fn zone_count(&self) -> u32 {
        self.zones.len() as u32
    }

    pub fn zones(&self) -> &[ZoneMeta] {
        &self.zones
    }

    pub fn zone(&self, id: u32) -> &ZoneMeta {
        &self.zones[id as usize]
    }

    pub fn set_zone_target(&mut self, id: u32, target: Option<f64>) {
        self.zones[id as usize].target_edt = target;
    }

    pub fn set_zone_plid(&mut self, id: u32, plid: Option<u16>) {
        self.zones[id as usize].plid = plid;
    }

    pub fn zone_of(&self, lba: u64) -> u32 {
        (lba / self.zone_pages as u64) as u32
    }

    pub fn mapped_count(&self) -> u64 {
        self.mapped
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, id: u32) -> Option<&Group> {
        self.groups.get(id as usize)
    }

    pub fn active_zones(&self) -> impl Iterator<Item = &ZoneMeta> + '_ {
        self.zones.iter().filter(|z| z.state == ZoneState::Active)
    }

    pub fn active_count(&self) -> u32 {
        self.active_zones().count() as u32
    }

    pub fn count_in(&self, state: ZoneState) -> u32 {
        self.zones.iter().filter(|z| z.state == state).count() as u32
    }

    pub fn lookup(&self, pid: u64) -> Result<Location, SpaceError> {
        self.entry(pid).map(|e| e.loc).ok_or(SpaceError::NotFound(pid))
    }

    pub fn edt_of(&self, pid: u64) -> Option<f64> {
        self.entry(pid).and_then(|e| e.edt)
    }

    fn entry(&self, pid: u64) -> Option<&Entry> {
        self.forward.get(pid as usize).and_then(|e| e.as_ref())
    }

    pub fn occupants(&self, slot_lba: u64) -> &[u64] {
        &self.reverse[slot_lba as usize]
    }

    /// Iterates `(pid, location)` over all mapped pages in pid order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, Location)> + '_ {
        self.forward.iter().enumerate().filter_map(|(p, e)| e.map(|e| (p as u64, e.loc)))
    }

    /// Live pids of a zone, in slot order.
    pub fn live_pids(&self, zone: u32) -> Vec<u64> {
        let z = &self.zones[zone as usize];
        (z.lba_base..z.lba_base + z.write_ptr as u64)
            .flat_map(|lba| self.reverse[lba as usize].iter().copied())
            .collect()
    }

    fn current_group_open(&self) -> bool {
        self.groups
            .last()
            .is_some_and(|g| g.members.iter().any(|&m| self.zones[m as usize].state == ZoneState::Active && self.zones[m as usize].group == g.id))
    }

    /// Opens the lowest-numbered zone from the requested list. A new group
    /// record starts whenever no member of the latest group is still active.
    pub fn open_zone(&mut self, from: OpenFrom, max_open: u32) -> Result<u32, SpaceError> {
        if self.active_count() >= max_open {
            return Err(SpaceError::OpenLimit { limit: max_open });
        }
        let want = match from {
            OpenFrom::Empty => ZoneState::Empty,
            OpenFrom::Partial => ZoneState::Partial,
        };
        let id = self.zones.iter().find(|z| z.state == want).map(|z| z.zone_id).ok_or(SpaceError::NoZone)?;
        self.activate(id, None)?;
        Ok(id)
    }

    /// Activates a specific zone, optionally into a named group (used when
    /// replaying logged zone events).
    pub fn activate(&mut self, id: u32, group: Option<u32>) -> Result<u32, SpaceError> {
        let z = self.zones.get(id as usize).ok_or(SpaceError::ZoneOutOfRange(id))?;
        if !matches!(z.state, ZoneState::Empty | ZoneState::Partial) {
            return Err(SpaceError::Placement(format!("zone {id} is {:?}", z.state)));
        }
        let gid = match group {
            Some(g) => g,
            None if self.current_group_open() => self.groups.len() as u32 - 1,
            None => self.groups.len() as u32,
        };
        while self.groups.len() as u32 <= gid {
            let id = self.groups.len() as u32;
            self.groups.push(Group { id, members: Vec::new(), appended: Vec::new(), rewritten: BTreeSet::new() });
        }
        let g = &mut self.groups[gid as usize];
        if let Some(pos) = g.members.iter().position(|&m| m == id) {
            // Reopening a partial zone keeps its membership.
            g.rewritten.remove(&g.members[pos]);
        } else {
            g.members.push(id);
            g.appended.push(0);
        }
        let z = &mut self.zones[id as usize];
        z.state = ZoneState::Active;
        z.group = gid;
        Ok(gid)
    }

    /// Closes an active zone early; it becomes partial unless already full.
    pub fn close_zone(&mut self, id: u32) {
        let z = &mut self.zones[id as usize];
        if z.state == ZoneState::Active {
            z.state = if z.write_ptr == z.zone_pages { ZoneState::Full } else { ZoneState::Partial };
        }
    }

    /// Claims the next slot of an active zone and returns its address.
    pub fn append_slot(&mut self, id: u32) -> Result<u64, SpaceError> {
        let z = &mut self.zones[id as usize];
        if z.state != ZoneState::Active || z.write_ptr == z.zone_pages {
            return Err(SpaceError::Placement(format!("zone {id} cannot take a slot")));
        }
        let lba = z.lba_base + z.write_ptr as u64;
        z.write_ptr += 1;
        if z.write_ptr == z.zone_pages {
            z.state = ZoneState::Full;
        }
        let gid = z.group;
        if let Some(g) = self.groups.get_mut(gid as usize) {
            if let Some(i) = g.members.iter().position(|&m| m == id) {
                g.appended[i] += 1;
            }
        }
        Ok(lba)
    }

    /// Points `pid` at `loc`, which must lie in a slot already claimed with
    /// [`SpaceMap::append_slot`]. Returns the previous location.
    pub fn install_mapping(&mut self, pid: u64, loc: Location, edt: Option<f64>) -> Result<Option<Location>, SpaceError> {
        let zid = self.zone_of(loc.slot_lba);
        let z = self.zones.get(zid as usize).ok_or(SpaceError::ZoneOutOfRange(zid))?;
        let written = !matches!(z.state, ZoneState::Empty) && loc.slot_lba < z.lba_base + z.write_ptr as u64;
        if !written {
            return Err(SpaceError::Placement(format!("slot {} is beyond zone {zid}'s frontier", loc.slot_lba)));
        }
        Ok(self.install_unchecked(pid, loc, edt))
    }

    fn install_unchecked(&mut self, pid: u64, loc: Location, edt: Option<f64>) -> Option<Location> {
        if self.forward.len() <= pid as usize {
            self.forward.resize(pid as usize + 1, None);
        }
        let old = self.forward[pid as usize].replace(Entry { loc, edt });
        if let Some(o) = old {
            self.unlink(pid, o);
        } else {
            self.mapped += 1;
        }
        let occ = &mut self.reverse[loc.slot_lba as usize];
        occ.push(pid);
        let first_in_slot = occ.len() == 1;
        let zid = self.zone_of(loc.slot_lba);
        let z = &mut self.zones[zid as usize];
        z.valid_page_count += 1;
        z.live_bytes += loc.footprint();
        if first_in_slot {
            z.live_slots += 1;
        }
        if let Some(v) = edt {
            z.edt_sum += v;
            z.edt_count += 1;
        }
        old.map(|o| o.loc)
    }

    fn unlink(&mut self, pid: u64, old: Entry) {
        let occ = &mut self.reverse[old.loc.slot_lba as usize];
        let pos = occ.iter().position(|&p| p == pid).expect("reverse map out of sync");
        occ.swap_remove(pos);
        let emptied = occ.is_empty();
        let zid = self.zone_of(old.loc.slot_lba);
        let z = &mut self.zones[zid as usize];
        z.valid_page_count -= 1;
        z.invalid_page_count += 1;
        z.live_bytes -= old.loc.footprint();
        if emptied {
            z.live_slots -= 1;
        }
        if let Some(v) = old.edt {
            z.edt_count -= 1;
            z.edt_sum = if z.edt_count == 0 { 0.0 } else { z.edt_sum - v };
        }
    }

    /// Returns a drained zone to the empty list and records the rewrite in
    /// its group.
    pub fn reset_zone(&mut self, id: u32) -> Result<(), SpaceError> {
        let z = self.zones.get(id as usize).ok_or(SpaceError::ZoneOutOfRange(id))?;
        if z.valid_page_count != 0 {
            return Err(SpaceError::ZoneNotEmpty { zone: id, valid: z.valid_page_count });
        }
        if z.state == ZoneState::Empty {
            return Ok(());
        }
        if let Some(g) = self.groups.get_mut(z.group as usize) {
            g.rewritten.insert(id);
        }
        self.zones[id as usize].reset();
        Ok(())
    }

    /// Orders zones for deathtime ranges: emptied zones first (by id), then
    /// partially written zones, then full ones, each by descending average
    /// EDT. Returns the zone ids in rank order.
    pub fn reassign_edt_ranks(&mut self) -> Vec<u32> {
        let class = |z: &ZoneMeta| match z.state {
            ZoneState::Empty => 0,
            ZoneState::Active | ZoneState::Partial => 1,
            ZoneState::Full => 2,
        };
        let mut order: Vec<u32> = (0..self.zones.len() as u32).collect();
        order.sort_by(|&a, &b| {
            let (za, zb) = (&self.zones[a as usize], &self.zones[b as usize]);
            let edt = |z: &ZoneMeta| z.avg_edt().unwrap_or(f64::NEG_INFINITY);
            class(za)
                .cmp(&class(zb))
                .then_with(|| if class(za) == 0 { std::cmp::Ordering::Equal } else { edt(zb).total_cmp(&edt(za)) })
                .then(a.cmp(&b))
        });
        for (rank, &z) in order.iter().enumerate() {
            self.zones[z as usize].edt_range_rank = rank as u32;
        }
        order
    }

    /// Full recount of every derived quantity against the forward table.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut valid = vec![0u32; self.zones.len()];
        let mut bytes = vec![0u64; self.zones.len()];
        let mut mapped = 0;
        for (pid, loc) in self.iter() {
            mapped += 1;
            let zid = self.zone_of(loc.slot_lba) as usize;
            let z = &self.zones[zid];
            if loc.slot_lba >= z.lba_base + z.write_ptr as u64 {
                return Err(format!("pid {pid} maps past zone {zid}'s write pointer"));
            }
            if !self.reverse[loc.slot_lba as usize].contains(&pid) {
                return Err(format!("pid {pid} missing from slot {}", loc.slot_lba));
            }
            valid[zid] += 1;
            bytes[zid] += loc.footprint();
        }
        if mapped != self.mapped {
            return Err(format!("mapped count {} != recount {mapped}", self.mapped));
        }
        for (lba, occ) in self.reverse.iter().enumerate() {
            for &pid in occ {
                if self.lookup(pid).map(|l| l.slot_lba) != Ok(lba as u64) {
                    return Err(format!("slot {lba} lists pid {pid} that lives elsewhere"));
                }
            }
        }
        for (z, meta) in self.zones.iter().enumerate() {
            let slots = (meta.lba_base..meta.lba_base + meta.zone_pages as u64)
                .filter(|&l| !self.reverse[l as usize].is_empty())
                .count() as u32;
            if meta.valid_page_count != valid[z] || meta.live_bytes != bytes[z] || meta.live_slots != slots {
                return Err(format!("zone {z} counters disagree with recount"));
            }
            if meta.write_ptr > meta.zone_pages
                || (meta.state == ZoneState::Full) != (meta.write_ptr == meta.zone_pages)
                || (meta.state == ZoneState::Empty && meta.write_ptr != 0)
            {
                return Err(format!("zone {z} state {:?} inconsistent with wp {}", meta.state, meta.write_ptr));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self, lsn: u64) -> Snapshot {
        Snapshot {
            lsn,
            mappings: self.iter().collect(),
            zones: self.zones.iter().map(snapshot::ZoneRecord::from).collect(),
            groups: self.groups.clone(),
        }
    }

    /// Rebuilds the map from a forward table plus zone and group tables.
    /// Valid counts, live bytes, live slots and EDT sums are recomputed from
    /// the mappings; `edt` supplies per-pid estimates.
    pub fn rebuild(
        zone_pages: u32,
        zones: &[snapshot::ZoneRecord],
        groups: Vec<Group>,
        mappings: impl IntoIterator<Item = (u64, Location)>,
        mut edt: impl FnMut(u64, Location) -> Option<f64>,
    ) -> Result<Self, SpaceError> {
        let mut map = SpaceMap::new(zones.len() as u32, zone_pages);
        for r in zones {
            let z = map.zones.get_mut(r.zone as usize).ok_or(SpaceError::ZoneOutOfRange(r.zone))?;
            z.state = r.state;
            z.write_ptr = r.write_ptr;
            z.group = r.group;
            z.plid = r.plid;
            z.target_edt = r.target_edt;
            z.invalid_page_count = r.invalid;
        }
        map.groups = groups;
        for (pid, loc) in mappings {
            let zid = map.zone_of(loc.slot_lba);
            if zid as usize >= map.zones.len() {
                return Err(SpaceError::ZoneOutOfRange(zid));
            }
            let e = edt(pid, loc);
            map.install_unchecked(pid, loc, e);
        }
        Ok(map)
    }
}
