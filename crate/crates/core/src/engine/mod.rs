// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Storage engine: the out-of-place zoned write path with DB-level GC, the
//! in-place baseline with a double-write buffer, and mapping recovery.

mod config;
mod gc;
mod recovery;
pub mod wal;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, pack, CodecError, CodecKind, PackedSlot, PageImage, StoredPage};
use crate::deathtime::{estimate_edt, DeathtimeError, Edt};
use crate::flashsim::{DeviceError, DeviceMode, FlashDevice};
use crate::spacemap::{Location, OpenFrom, SpaceError, SpaceMap, ZoneMeta, ZoneState};

pub use config::{EngineConfig, EngineMode, GcPolicy};
pub use gc::GcReport;
pub use wal::{CrashPoint, FaultPlan, MetaStore, WalRecord};

use wal::Wal;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("device: {0}")]
    Device(#[from] DeviceError),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("space map: {0}")]
    Space(#[from] SpaceError),
    #[error("write history: {0}")]
    History(#[from] DeathtimeError),
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("{0} is not available in this engine mode")]
    WrongMode(&'static str),
    #[error("engine stopped by an injected crash")]
    Crashed,
    #[error("metadata i/o: {0}")]
    Io(String),
    #[error("recovery: {0}")]
    Recovery(String),
    #[error("invariant breach: {0}")]
    Invariant(String),
}

/// Source of clean, already-persisted page images (e.g. a buffer pool) that
/// GC may use instead of reading the device.
pub trait PagePeek {
    fn peek(&self, pid: u64) -> Option<PageImage>;
}

pub struct NoPeek;

impl PagePeek for NoPeek {
    fn peek(&self, _pid: u64) -> Option<PageImage> {
        None
    }
}

/// Engine-side write accounting. Page counts are 4 KiB device writes; the
/// `*_relocated` fields count logical pages moved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCounters {
    /// Logical pages handed to the engine by eviction.
    pub user_pages: u64,
    /// Device pages written for them (fewer than `user_pages` when packed).
    pub user_slots: u64,
    pub dwb_pages: u64,
    pub db_gc_pages: u64,
    pub db_gc_relocated: u64,
    pub comp_pages: u64,
    pub comp_relocated: u64,
    pub gc_cycles: u64,
    pub gc_victims: u64,
    /// Valid pages in GC victims at selection time, summed over victims.
    pub gc_victim_valid: u64,
    pub read_calls: u64,
    /// Cohort opens that went ahead although the NoWA budget was exceeded.
    pub nowa_overruns: u64,
}

impl EngineCounters {
    /// Device pages written on the engine's behalf.
    pub fn db_issued(&self) -> u64 {
        self.user_slots + self.dwb_pages + self.db_gc_pages + self.comp_pages
    }

    pub fn since(&self, e: &EngineCounters) -> EngineCounters {
        EngineCounters {
            user_pages: self.user_pages - e.user_pages,
            user_slots: self.user_slots - e.user_slots,
            dwb_pages: self.dwb_pages - e.dwb_pages,
            db_gc_pages: self.db_gc_pages - e.db_gc_pages,
            db_gc_relocated: self.db_gc_relocated - e.db_gc_relocated,
            comp_pages: self.comp_pages - e.comp_pages,
            comp_relocated: self.comp_relocated - e.comp_relocated,
            gc_cycles: self.gc_cycles - e.gc_cycles,
            gc_victims: self.gc_victims - e.gc_victims,
            gc_victim_valid: self.gc_victim_valid - e.gc_victim_valid,
            read_calls: self.read_calls - e.read_calls,
            nowa_overruns: self.nowa_overruns - e.nowa_overruns,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlushReceipt {
    pub pages: u32,
    pub slots: u32,
    /// Distinct zones that received slots from this batch.
    pub zones: Vec<u32>,
    pub gc: Vec<GcReport>,
}

/// Why slots are being placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Purpose {
    User,
    Gc,
    Compensation,
}

/// A set of pages placed together.
struct PlacementGroup {
    /// Mean estimated deathtime; `INFINITY` for pages without an estimate.
    key: f64,
    pages: Vec<StoredPage>,
}

fn dist(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

pub struct Engine {
    cfg: EngineConfig,
    dev: FlashDevice,
    space: SpaceMap,
    codec: &'static dyn codec::Codec,
    wal: Wal,
    counters: EngineCounters,
    last_lsn: u64,
    dwb_cursor: u64,
    rr_cursor: u32,
    unit_pages: u32,
    min_cohort: u32,
    /// EDT per pid for the pages currently being placed.
    placing_edt: HashMap<u64, Option<f64>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("cfg", &self.cfg).field("counters", &self.counters).finish_non_exhaustive()
    }
}

impl Engine {
    /// Creates an engine over a device whose engine-managed space is empty.
    pub fn new(cfg: EngineConfig, dev: FlashDevice, store: MetaStore) -> Result<Self, EngineError> {
        cfg.validate(dev.config())?;
        let zones = if cfg.mode == EngineMode::Oop { cfg.zone_count(dev.config()) } else { 0 };
        let space = SpaceMap::new(zones, cfg.zone_pages.max(1));
        Ok(Self::assemble(cfg, dev, space, Wal::new(store), 0))
    }

    fn assemble(cfg: EngineConfig, dev: FlashDevice, space: SpaceMap, wal: Wal, last_lsn: u64) -> Self {
        let unit_pages = dev.unit_pages();
        let min_cohort = cfg.min_cohort(unit_pages);
        let kind = if cfg.compression_enabled { CodecKind::Lz4 } else { CodecKind::Identity };
        Engine {
            codec: kind.codec(),
            cfg,
            dev,
            space,
            wal,
            counters: EngineCounters::default(),
            last_lsn,
            dwb_cursor: 0,
            rr_cursor: 0,
            unit_pages,
            min_cohort,
            placing_edt: HashMap::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn device(&self) -> &FlashDevice {
        &self.dev
    }

    pub fn space(&self) -> &SpaceMap {
        &self.space
    }

    pub fn counters(&self) -> EngineCounters {
        self.counters
    }

    pub fn last_lsn(&self) -> u64 {
        self.last_lsn
    }

    pub fn wal_appends(&self) -> u64 {
        self.wal.appends()
    }

    pub fn meta_store(&self) -> &MetaStore {
        self.wal.store()
    }

    /// Arms a crash at the given WAL append (counted from engine start).
    pub fn set_fault(&mut self, plan: Option<FaultPlan>) {
        self.wal.set_fault(plan);
    }

    /// Copies the engine, device included, for crash experiments. Needs an
    /// in-memory metadata store.
    pub fn try_fork(&self) -> Result<Engine, EngineError> {
        Ok(Engine {
            cfg: self.cfg.clone(),
            dev: self.dev.clone(),
            space: self.space.clone(),
            codec: self.codec,
            wal: self.wal.try_clone()?,
            counters: self.counters,
            last_lsn: self.last_lsn,
            dwb_cursor: self.dwb_cursor,
            rr_cursor: self.rr_cursor,
            unit_pages: self.unit_pages,
            min_cohort: self.min_cohort,
            placing_edt: self.placing_edt.clone(),
        })
    }

    /// Stops the engine, handing back the device and the metadata store as
    /// a crashed process would leave them.
    pub fn into_parts(self) -> (FlashDevice, MetaStore) {
        (self.dev, self.wal.into_store())
    }

    fn live(&self) -> Result<(), EngineError> {
        if self.wal.crashed() {
            Err(EngineError::Crashed)
        } else {
            Ok(())
        }
    }

    // ---- write path ----

    /// Persists a batch of evicted pages written at `lsn`. Each header gets
    /// its write history advanced in place before the page is stored.
    pub fn flush_batch(&mut self, pages: &mut [PageImage], lsn: u64, peek: &dyn PagePeek) -> Result<FlushReceipt, EngineError> {
        self.live()?;
        let mut seen = HashSet::with_capacity(pages.len());
        if let Some(p) = pages.iter().find(|p| !seen.insert(p.pid())) {
            return Err(EngineError::Invariant(format!("pid {} appears twice in one batch", p.pid())));
        }
        let mut edts = Vec::with_capacity(pages.len());
        for page in pages.iter_mut() {
            let mut h = page.header();
            h.history.record(lsn, false)?;
            h.write_lsn = lsn;
            h.flags &= !codec::FLAG_NEVER_REWRITTEN;
            page.set_header(&h);
            edts.push(estimate_edt(&h.history, lsn, h.tree_id, false));
        }
        self.last_lsn = self.last_lsn.max(lsn);
        if self.cfg.mode == EngineMode::InplaceDwb {
            for page in pages.iter() {
                self.inplace_write(page)?;
            }
            let n = pages.len() as u32;
            return Ok(FlushReceipt { pages: n, slots: n, zones: Vec::new(), gc: Vec::new() });
        }
        let items: Vec<(Edt, StoredPage)> =
            edts.into_iter().zip(pages.iter()).map(|(e, p)| (e, codec::compress_page(self.codec, p))).collect();
        let groups = self.partition(items, false);
        let packed: Vec<(f64, Vec<PackedSlot>)> = groups.iter().map(|g| (g.key, pack(&g.pages))).collect();
        let slots: u32 = packed.iter().map(|(_, s)| s.len() as u32).sum();

        let gc = self.ensure_space(slots, peek)?;
        let mut zones = Vec::new();
        for (key, group_slots) in packed {
            self.place(key, group_slots, Purpose::User, lsn, &mut zones)?;
        }
        self.placing_edt.clear();
        self.wal.append(WalRecord::Commit { lsn })?;
        self.counters.user_pages += pages.len() as u64;
        self.counters.user_slots += slots as u64;
        zones.sort_unstable();
        zones.dedup();
        Ok(FlushReceipt { pages: pages.len() as u32, slots, zones, gc })
    }

    /// Splits pages into placement groups. With the GDT policy, estimated
    /// pages form up to `edt_group_count` quantile groups and the rest are
    /// bucketed by tree id, with never-rewritten pages in a final group. The
    /// greedy policy keeps one group in arrival order.
    fn partition(&mut self, mut items: Vec<(Edt, StoredPage)>, descending: bool) -> Vec<PlacementGroup> {
        for (e, p) in &items {
            self.placing_edt.insert(p.pid, e.value());
        }
        if self.cfg.gc_policy == GcPolicy::Greedy {
            let pages = items.into_iter().map(|(_, p)| p).collect();
            return vec![PlacementGroup { key: f64::INFINITY, pages }];
        }
        items.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.pid.cmp(&b.1.pid)));
        let n_est = items.iter().take_while(|(e, _)| matches!(e, Edt::Estimated(_))).count();
        let mut rest = items.split_off(n_est);
        let k = (self.cfg.edt_group_count as usize).min(n_est.max(1));
        let mut groups = Vec::new();
        let mut it = items.into_iter();
        for i in 0..k {
            let take = (i + 1) * n_est / k - i * n_est / k;
            let chunk: Vec<(Edt, StoredPage)> = it.by_ref().take(take).collect();
            if chunk.is_empty() {
                continue;
            }
            let key = chunk.iter().filter_map(|(e, _)| e.value()).sum::<f64>() / chunk.len() as f64;
            groups.push(PlacementGroup { key, pages: chunk.into_iter().map(|(_, p)| p).collect() });
        }
        let mut buckets: BTreeMap<Edt, Vec<StoredPage>> = BTreeMap::new();
        for (e, p) in rest.drain(..) {
            buckets.entry(e).or_default().push(p);
        }
        groups.extend(buckets.into_values().map(|pages| PlacementGroup { key: f64::INFINITY, pages }));
        if descending {
            groups.reverse();
        }
        groups
    }

    /// Writes packed slots for one group, choosing zones as it goes.
    fn place(&mut self, key: f64, slots: Vec<PackedSlot>, purpose: Purpose, lsn: u64, used: &mut Vec<u32>) -> Result<(), EngineError> {
        let mut zone: Option<u32> = None;
        for slot in slots {
            let z = match zone {
                Some(z) if self.cfg.gc_policy == GcPolicy::Gdt && self.space.zone(z).state == ZoneState::Active => z,
                _ => self.select_zone_for(key, purpose)?,
            };
            self.write_slot(z, &slot, lsn)?;
            if used.last() != Some(&z) {
                used.push(z);
            }
            zone = Some(z);
        }
        Ok(())
    }

    fn write_slot(&mut self, z: u32, slot: &PackedSlot, lsn: u64) -> Result<(), EngineError> {
        let lba = self.space.append_slot(z)?;
        match self.dev.config().mode {
            DeviceMode::Zns => {
                let got = self.dev.zone_append_page(z, &slot.bytes)?;
                if got != lba {
                    return Err(EngineError::Invariant(format!("zone {z} appended at {got}, expected {lba}")));
                }
            }
            DeviceMode::Fdp if self.cfg.fdp_hints_enabled => {
                let plid = self.space.zone(z).plid.unwrap_or(0);
                self.dev.host_write_hinted_page(lba, plid, &slot.bytes)?;
            }
            _ => self.dev.host_write_page(lba, &slot.bytes)?,
        }
        let raw = slot.is_raw();
        for e in &slot.entries {
            let loc = if raw { Location::raw(lba) } else { Location { slot_lba: lba, offset: e.offset, len: e.len } };
            self.wal.append(WalRecord::Map { lsn, pid: e.pid, slot_lba: lba, offset: loc.offset, len: loc.len })?;
            let edt = self.placing_edt.get(&e.pid).copied().flatten();
            self.space.install_mapping(e.pid, loc, edt)?;
        }
        if self.space.zone(z).state == ZoneState::Full {
            self.wal.append(WalRecord::ZoneClose { zone: z })?;
        }
        Ok(())
    }

    // ---- zone selection ----

    fn empty_zones(&self) -> u32 {
        self.space.count_in(ZoneState::Empty)
    }

    fn active_room(&self) -> u64 {
        self.space.active_zones().map(|z| z.free_slots() as u64).sum()
    }

    /// Empty zones that user opens must leave behind for GC.
    fn gc_reserve(&self) -> u32 {
        let gc_open = if self.cfg.nowa_enabled { self.min_cohort } else { 1 };
        self.cfg.gc_trigger_free_zones.max(gc_open)
    }

    fn zone_key(z: &ZoneMeta) -> Option<f64> {
        z.avg_edt().or(z.target_edt)
    }

    /// Picks the active zone for a group with mean deathtime `group_edt`
    /// (`None` for pages without an estimate), opening zones when allowed.
    pub fn select_zone(&mut self, group_edt: Option<f64>) -> Result<u32, EngineError> {
        self.live()?;
        if self.cfg.mode != EngineMode::Oop {
            return Err(EngineError::WrongMode("select_zone"));
        }
        self.select_zone_for(group_edt.unwrap_or(f64::INFINITY), Purpose::User)
    }

    fn select_zone_for(&mut self, key: f64, purpose: Purpose) -> Result<u32, EngineError> {
        if self.cfg.nowa_enabled {
            return self.select_nowa(key, purpose);
        }
        let reserve = if purpose == Purpose::User { self.gc_reserve() } else { 0 };
        let can_open = self.space.active_count() < self.cfg.max_open_zones && self.empty_zones() > reserve;
        match self.cfg.gc_policy {
            GcPolicy::Greedy => {
                if can_open {
                    return self.open_logged(None);
                }
                self.round_robin()
            }
            GcPolicy::Gdt => {
                let best = self.nearest(key);
                match best {
                    Some((z, d)) if d == 0.0 || !can_open => Ok(z),
                    None if !can_open => Err(self.no_zone()),
                    _ => self.open_logged(Some(key)),
                }
            }
        }
    }

    fn no_zone(&self) -> EngineError {
        EngineError::Invariant(format!(
            "no zone available: {} active, {} empty, {} open allowed",
            self.space.active_count(),
            self.empty_zones(),
            self.cfg.max_open_zones
        ))
    }

    /// Nearest assigned active zone by deathtime.
    fn nearest(&self, key: f64) -> Option<(u32, f64)> {
        self.space
            .active_zones()
            .filter_map(|z| Self::zone_key(z).map(|k| (z.zone_id, dist(k, key))))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    fn round_robin(&mut self) -> Result<u32, EngineError> {
        let active: Vec<u32> = self.space.active_zones().map(|z| z.zone_id).collect();
        if active.is_empty() {
            return Err(self.no_zone());
        }
        let z = active.iter().copied().find(|&z| z >= self.rr_cursor).unwrap_or(active[0]);
        self.rr_cursor = z + 1;
        Ok(z)
    }

    /// NoWA placement: zones open only in whole cohorts, and only once every
    /// zone of the previous cohort is full. Fresh cohort zones are claimed by
    /// the first group that has no close match.
    fn select_nowa(&mut self, key: f64, purpose: Purpose) -> Result<u32, EngineError> {
        if self.space.active_count() == 0 {
            let size = if purpose == Purpose::User { self.cfg.max_open_zones } else { self.min_cohort };
            self.open_cohort(size)?;
        }
        if self.cfg.gc_policy == GcPolicy::Greedy {
            return self.round_robin();
        }
        let best = self.nearest(key);
        let free = self.space.active_zones().find(|z| Self::zone_key(z).is_none()).map(|z| z.zone_id);
        match (best, free) {
            (Some((z, 0.0)), _) => Ok(z),
            (_, Some(f)) => {
                self.space.set_zone_target(f, Some(key));
                Ok(f)
            }
            (Some((z, _)), None) => Ok(z),
            (None, None) => Err(self.no_zone()),
        }
    }

    fn open_cohort(&mut self, size: u32) -> Result<(), EngineError> {
        if self.empty_zones() < size {
            return Err(EngineError::Invariant(format!(
                "cohort of {size} zones needed but only {} are empty",
                self.empty_zones()
            )));
        }
        if !self.nowa_budget_ok(self.cohort_units(size)) {
            self.counters.nowa_overruns += 1;
        }
        for _ in 0..size {
            self.open_logged(None)?;
        }
        Ok(())
    }

    fn open_logged(&mut self, target: Option<f64>) -> Result<u32, EngineError> {
        let z = self.space.open_zone(OpenFrom::Empty, self.cfg.max_open_zones)?;
        let plid = self.cfg.fdp_hints_enabled.then(|| self.pick_plid(z));
        self.space.set_zone_target(z, target);
        self.space.set_zone_plid(z, plid);
        let group = self.space.zone(z).group;
        self.wal.append(WalRecord::ZoneOpen { zone: z, group, plid, target })?;
        Ok(z)
    }

    /// Placement handle for a new zone: `zone mod ruh_count` when no other
    /// active zone holds it, else the lowest free handle.
    fn pick_plid(&self, z: u32) -> u16 {
        let ruh = self.dev.config().ruh_count;
        let taken: HashSet<u16> = self.space.active_zones().filter(|m| m.zone_id != z).filter_map(|m| m.plid).collect();
        let pref = (z % ruh as u32) as u16;
        if !taken.contains(&pref) {
            return pref;
        }
        (0..ruh).find(|p| !taken.contains(p)).unwrap_or(pref)
    }

    // ---- reads ----

    /// Reads the newest image of `pid` with exactly one device page read.
    pub fn read_page(&mut self, pid: u64) -> Result<PageImage, EngineError> {
        self.live()?;
        self.counters.read_calls += 1;
        match self.cfg.mode {
            EngineMode::InplaceDwb => {
                let img = PageImage::from_bytes(self.dev.read(pid)?)?;
                if img.pid() != pid {
                    return Err(CodecError::NotFound(pid).into());
                }
                Ok(img)
            }
            EngineMode::Oop => {
                let loc = self.space.lookup(pid)?;
                let slot = self.dev.read(loc.slot_lba)?;
                Ok(codec::unpack_read(self.codec, slot, pid)?)
            }
        }
    }

    // ---- in-place baseline ----

    fn dwb_base(&self) -> u64 {
        self.dev.config().capacity_pages - self.cfg.dwb_pages as u64
    }

    /// Writes `page` to the next double-write buffer slot, then to its home
    /// address `pid`.
    pub fn inplace_write(&mut self, page: &PageImage) -> Result<(), EngineError> {
        self.live()?;
        if self.cfg.mode != EngineMode::InplaceDwb {
            return Err(EngineError::WrongMode("inplace_write"));
        }
        let pid = page.pid();
        if pid >= self.dwb_base() {
            return Err(EngineError::Invariant(format!("pid {pid} collides with the double-write buffer")));
        }
        let dwb = self.dwb_base() + self.dwb_cursor;
        self.dwb_cursor = (self.dwb_cursor + 1) % self.cfg.dwb_pages as u64;
        self.dev.host_write_page(dwb, page.as_bytes())?;
        self.dev.host_write_page(pid, page.as_bytes())?;
        self.counters.dwb_pages += 1;
        self.counters.user_pages += 1;
        self.counters.user_slots += 1;
        Ok(())
    }

    /// Largest pid the engine can hold.
    pub fn page_capacity(&self) -> u64 {
        match self.cfg.mode {
            EngineMode::InplaceDwb => self.dwb_base(),
            EngineMode::Oop => self.space.zone_count() as u64 * self.cfg.zone_pages as u64,
        }
    }
}

#[cfg(test)]
mod tests;
