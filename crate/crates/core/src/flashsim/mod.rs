// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Deterministic flash device model.
//!
//! The device exposes 4 KiB logical pages and appends every host write to an
//! open superblock (or reclaim unit in FDP mode). Overwrites invalidate the
//! previous physical copy; when free superblocks drop below the threshold,
//! greedy GC relocates the valid pages of the emptiest closed superblock and
//! erases it. In ZNS mode the host owns placement through zone append and
//! reset, and no device GC ever runs.
//!
//! Page payloads are kept per logical address: where a page physically lives
//! never changes its contents, so the physical layout only tracks ownership.

mod config;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{DeviceConfig, DeviceMode};

pub const PAGE_SIZE: usize = 4096;

const NO_LBA: u32 = u32::MAX;
const NO_PPA: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("logical address {lba} out of range (capacity {capacity})")]
    AddressOutOfRange { lba: u64, capacity: u64 },
    #[error("placement id {plid} out of range ({ruh_count} handles)")]
    InvalidHint { plid: u16, ruh_count: u16 },
    #[error("{op} is not supported in {mode} mode")]
    WrongMode { op: &'static str, mode: DeviceMode },
    #[error("zone {zone} out of range")]
    ZoneOutOfRange { zone: u32 },
    #[error("zone {zone} is full")]
    ZoneFull { zone: u32 },
    #[error("open zone limit {limit} reached")]
    OpenZoneLimit { limit: u32 },
    #[error("device full: no reclaimable superblock")]
    DeviceFull,
    #[error("logical address {lba} holds no data")]
    Unmapped { lba: u64 },
    #[error("payload must be exactly {PAGE_SIZE} bytes, got {0}")]
    PayloadSize(usize),
    #[error("invalid device configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuperblockState {
    Free,
    Active,
    Closed,
}

impl SuperblockState {
    fn as_str(self) -> &'static str {
        match self {
            SuperblockState::Free => "free",
            SuperblockState::Active => "active",
            SuperblockState::Closed => "closed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Superblock {
    pub id: u32,
    pub state: SuperblockState,
    pub write_ptr: u32,
    pub valid_count: u32,
    /// Owning logical address of each programmed page.
    back_ref: Vec<u32>,
    valid: Vec<bool>,
}

impl Superblock {
    fn new(id: u32, pages: u32) -> Self {
        Superblock {
            id,
            state: SuperblockState::Free,
            write_ptr: 0,
            valid_count: 0,
            back_ref: vec![NO_LBA; pages as usize],
            valid: vec![false; pages as usize],
        }
    }

    fn erase(&mut self) {
        self.state = SuperblockState::Free;
        self.write_ptr = 0;
        self.valid_count = 0;
        self.back_ref.fill(NO_LBA);
        self.valid.fill(false);
    }

    pub fn is_valid(&self, page: u32) -> bool {
        self.valid[page as usize]
    }

    /// Logical owner of a page if that page still holds valid data.
    pub fn lba_at(&self, page: u32) -> Option<u64> {
        self.valid[page as usize].then(|| self.back_ref[page as usize] as u64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashCounters {
    pub host_write_pages: u64,
    pub nand_write_pages: u64,
    pub gc_relocated_pages: u64,
    pub erase_count: u64,
    pub read_pages: u64,
}

impl FlashCounters {
    pub fn ssd_waf(&self) -> f64 {
        if self.host_write_pages == 0 {
            1.0
        } else {
            self.nand_write_pages as f64 / self.host_write_pages as f64
        }
    }

    /// Counter growth since `earlier`.
    pub fn since(&self, earlier: &FlashCounters) -> FlashCounters {
        FlashCounters {
            host_write_pages: self.host_write_pages - earlier.host_write_pages,
            nand_write_pages: self.nand_write_pages - earlier.nand_write_pages,
            gc_relocated_pages: self.gc_relocated_pages - earlier.gc_relocated_pages,
            erase_count: self.erase_count - earlier.erase_count,
            read_pages: self.read_pages - earlier.read_pages,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ZoneCondition {
    Empty,
    Open,
    Full,
}

#[derive(Clone)]
pub struct FlashDevice {
    cfg: DeviceConfig,
    unit_pages: u32,
    units: Vec<Superblock>,
    free: BTreeSet<u32>,
    /// Open unit per append stream. Host streams come first; the last entry
    /// is the GC stream.
    streams: Vec<Option<u32>>,
    l2p: Vec<u32>,
    /// Shared so that cloning a device stays cheap.
    data: Vec<Option<Arc<[u8]>>>,
    counters: FlashCounters,
    /// ZNS zone conditions, one per unit.
    zones: Vec<ZoneCondition>,
    open_zones: u32,
}

impl FlashDevice {
    pub fn new(cfg: DeviceConfig) -> Result<Self, DeviceError> {
        cfg.validate()?;
        let unit_pages = cfg.unit_pages();
        let n_units = cfg.physical_units();
        let units = (0..n_units).map(|id| Superblock::new(id, unit_pages)).collect();
        let streams = vec![None; cfg.host_streams() as usize + 1];
        let zones = if cfg.mode == DeviceMode::Zns {
            vec![ZoneCondition::Empty; n_units as usize]
        } else {
            Vec::new()
        };
        Ok(FlashDevice {
            unit_pages,
            units,
            free: (0..n_units).collect(),
            streams,
            l2p: vec![NO_PPA; cfg.capacity_pages as usize],
            data: vec![None; cfg.capacity_pages as usize],
            counters: FlashCounters::default(),
            zones,
            open_zones: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn counters(&self) -> FlashCounters {
        self.counters
    }

    pub fn unit_pages(&self) -> u32 {
        self.unit_pages
    }

    pub fn physical_units(&self) -> u32 {
        self.units.len() as u32
    }

    pub fn free_units(&self) -> u32 {
        self.free.len() as u32
    }

    pub fn superblocks(&self) -> &[Superblock] {
        &self.units
    }

    pub fn capacity_pages(&self) -> u64 {
        self.cfg.capacity_pages
    }

    fn check_lba(&self, lba: u64) -> Result<(), DeviceError> {
        if lba >= self.cfg.capacity_pages {
            return Err(DeviceError::AddressOutOfRange { lba, capacity: self.cfg.capacity_pages });
        }
        Ok(())
    }

    fn require_block_mode(&self, op: &'static str) -> Result<(), DeviceError> {
        if self.cfg.mode == DeviceMode::Zns {
            return Err(DeviceError::WrongMode { op, mode: self.cfg.mode });
        }
        Ok(())
    }

    fn split_ppa(&self, ppa: u32) -> (usize, usize) {
        ((ppa / self.unit_pages) as usize, (ppa % self.unit_pages) as usize)
    }

    fn invalidate(&mut self, lba: u64) {
        let ppa = self.l2p[lba as usize];
        if ppa == NO_PPA {
            return;
        }
        let (u, p) = self.split_ppa(ppa);
        let sb = &mut self.units[u];
        debug_assert!(sb.valid[p]);
        sb.valid[p] = false;
        sb.valid_count -= 1;
        self.l2p[lba as usize] = NO_PPA;
    }

    fn allocate(&mut self) -> Result<u32, DeviceError> {
        let id = self.free.pop_first().ok_or(DeviceError::DeviceFull)?;
        self.units[id as usize].state = SuperblockState::Active;
        Ok(id)
    }

    /// Appends one page for `lba` to `stream`, returning its physical page.
    fn program(&mut self, stream: usize, lba: u64) -> Result<u32, DeviceError> {
        let unit = match self.streams[stream] {
            Some(u) if self.units[u as usize].write_ptr < self.unit_pages => u,
            current => {
                if let Some(u) = current {
                    self.units[u as usize].state = SuperblockState::Closed;
                }
                let u = self.allocate()?;
                self.streams[stream] = Some(u);
                u
            }
        };
        let sb = &mut self.units[unit as usize];
        let page = sb.write_ptr;
        sb.back_ref[page as usize] = lba as u32;
        sb.valid[page as usize] = true;
        sb.valid_count += 1;
        sb.write_ptr += 1;
        if sb.write_ptr == self.unit_pages {
            sb.state = SuperblockState::Closed;
            self.streams[stream] = None;
        }
        let ppa = unit * self.unit_pages + page;
        self.l2p[lba as usize] = ppa;
        self.counters.nand_write_pages += 1;
        Ok(ppa)
    }

    fn write_one(&mut self, stream: usize, lba: u64, payload: Option<&[u8]>) -> Result<(), DeviceError> {
        self.check_lba(lba)?;
        if let Some(p) = payload {
            if p.len() != PAGE_SIZE {
                return Err(DeviceError::PayloadSize(p.len()));
            }
        }
        self.invalidate(lba);
        self.program(stream, lba)?;
        self.counters.host_write_pages += 1;
        self.data[lba as usize] = payload.map(Arc::from);
        while self.free_units() < self.cfg.free_sb_threshold {
            self.device_gc_step()?;
        }
        Ok(())
    }

    /// Appends each address, in order, to the host stream.
    pub fn host_write(&mut self, lbas: &[u64]) -> Result<(), DeviceError> {
        self.require_block_mode("host_write")?;
        for &lba in lbas {
            self.write_one(0, lba, None)?;
        }
        Ok(())
    }

    /// Writes one page with its payload through the host stream.
    pub fn host_write_page(&mut self, lba: u64, payload: &[u8]) -> Result<(), DeviceError> {
        self.require_block_mode("host_write")?;
        self.write_one(0, lba, Some(payload))
    }

    fn hint_stream(&self, plid: u16) -> Result<usize, DeviceError> {
        if self.cfg.mode != DeviceMode::Fdp {
            return Err(DeviceError::WrongMode { op: "host_write_hinted", mode: self.cfg.mode });
        }
        if plid >= self.cfg.ruh_count {
            return Err(DeviceError::InvalidHint { plid, ruh_count: self.cfg.ruh_count });
        }
        Ok(plid as usize)
    }

    /// Appends to the reclaim unit owned by handle `plid`.
    pub fn host_write_hinted(&mut self, lbas: &[u64], plid: u16) -> Result<(), DeviceError> {
        let stream = self.hint_stream(plid)?;
        for &lba in lbas {
            self.write_one(stream, lba, None)?;
        }
        Ok(())
    }

    pub fn host_write_hinted_page(&mut self, lba: u64, plid: u16, payload: &[u8]) -> Result<(), DeviceError> {
        let stream = self.hint_stream(plid)?;
        self.write_one(stream, lba, Some(payload))
    }

    fn gc_stream(&self) -> usize {
        if self.cfg.gc_stream_separate {
            self.streams.len() - 1
        } else {
            0
        }
    }

    /// Reclaims the closed superblock with the fewest valid pages.
    ///
    /// Returns the number of relocated pages.
    pub fn device_gc_step(&mut self) -> Result<u32, DeviceError> {
        let victim = self
            .units
            .iter()
            .filter(|sb| sb.state == SuperblockState::Closed)
            .min_by_key(|sb| (sb.valid_count, sb.id))
            .map(|sb| sb.id)
            .ok_or(DeviceError::DeviceFull)?;
        let v = victim as usize;
        if self.units[v].valid_count == self.unit_pages {
            return Err(DeviceError::DeviceFull);
        }
        let stream = self.gc_stream();
        let mut relocated = 0;
        for page in 0..self.unit_pages as usize {
            if !self.units[v].valid[page] {
                continue;
            }
            let lba = self.units[v].back_ref[page] as u64;
            self.invalidate(lba);
            self.program(stream, lba)?;
            self.counters.gc_relocated_pages += 1;
            relocated += 1;
        }
        self.units[v].erase();
        self.free.insert(victim);
        self.counters.erase_count += 1;
        Ok(relocated)
    }

    /// Clears the given addresses. Once nothing valid remains the device is
    /// returned to its pristine layout, as after a whole-device discard.
    pub fn discard(&mut self, lbas: &[u64]) -> Result<(), DeviceError> {
        for &lba in lbas {
            self.check_lba(lba)?;
        }
        if self.cfg.mode == DeviceMode::Zns {
            return self.discard_zones(lbas);
        }
        for &lba in lbas {
            self.invalidate(lba);
            self.data[lba as usize] = None;
        }
        if self.units.iter().all(|sb| sb.valid_count == 0) {
            self.format();
        }
        Ok(())
    }

    pub fn discard_all(&mut self) -> Result<(), DeviceError> {
        let all: Vec<u64> = (0..self.cfg.capacity_pages).collect();
        self.discard(&all)
    }

    fn format(&mut self) {
        for sb in &mut self.units {
            if sb.state != SuperblockState::Free {
                sb.erase();
            }
        }
        self.free = (0..self.units.len() as u32).collect();
        self.streams.fill(None);
    }

    fn discard_zones(&mut self, lbas: &[u64]) -> Result<(), DeviceError> {
        let covered: BTreeSet<u64> = lbas.iter().copied().collect();
        let zp = self.unit_pages as u64;
        for zone in 0..self.zones.len() as u64 {
            if (zone * zp..(zone + 1) * zp).all(|l| covered.contains(&l)) {
                self.reset_zone_inner(zone as u32, false);
            }
        }
        Ok(())
    }

    pub fn read(&mut self, lba: u64) -> Result<&[u8], DeviceError> {
        self.check_lba(lba)?;
        self.counters.read_pages += 1;
        self.data[lba as usize].as_deref().ok_or(DeviceError::Unmapped { lba })
    }

    /// Reads without touching the read counter (device-side inspection).
    pub fn peek(&self, lba: u64) -> Option<&[u8]> {
        self.data.get(lba as usize)?.as_deref()
    }

    pub fn is_mapped(&self, lba: u64) -> bool {
        match self.cfg.mode {
            DeviceMode::Zns => {
                let zp = self.unit_pages as u64;
                (lba % zp) < self.units[(lba / zp) as usize].write_ptr as u64
            }
            _ => self.l2p[lba as usize] != NO_PPA,
        }
    }

    // ---- ZNS ----

    pub fn zone_count(&self) -> u32 {
        self.zones.len() as u32
    }

    pub fn zone_pages(&self) -> u32 {
        self.unit_pages
    }

    pub fn zone_write_pointer(&self, zone: u32) -> Result<u32, DeviceError> {
        self.require_zns("zone_report")?;
        self.check_zone(zone)?;
        Ok(self.units[zone as usize].write_ptr)
    }

    fn require_zns(&self, op: &'static str) -> Result<(), DeviceError> {
        if self.cfg.mode != DeviceMode::Zns {
            return Err(DeviceError::WrongMode { op, mode: self.cfg.mode });
        }
        Ok(())
    }

    fn check_zone(&self, zone: u32) -> Result<(), DeviceError> {
        if zone as usize >= self.zones.len() {
            return Err(DeviceError::ZoneOutOfRange { zone });
        }
        Ok(())
    }

    fn zone_append_inner(&mut self, zone: u32, pages: &[Option<&[u8]>]) -> Result<u64, DeviceError> {
        self.require_zns("zone_append")?;
        self.check_zone(zone)?;
        if let Some(p) = pages.iter().flatten().find(|p| p.len() != PAGE_SIZE) {
            return Err(DeviceError::PayloadSize(p.len()));
        }
        let z = zone as usize;
        let wp = self.units[z].write_ptr;
        if self.zones[z] == ZoneCondition::Full || wp as usize + pages.len() > self.unit_pages as usize {
            return Err(DeviceError::ZoneFull { zone });
        }
        if self.zones[z] == ZoneCondition::Empty && !pages.is_empty() {
            if self.open_zones >= self.cfg.zns_open_limit {
                return Err(DeviceError::OpenZoneLimit { limit: self.cfg.zns_open_limit });
            }
            self.open_zones += 1;
            self.zones[z] = ZoneCondition::Open;
            self.free.remove(&zone);
            self.units[z].state = SuperblockState::Active;
        }
        let base = zone as u64 * self.unit_pages as u64;
        for (i, payload) in pages.iter().enumerate() {
            let page = wp as usize + i;
            let lba = base + page as u64;
            let sb = &mut self.units[z];
            sb.back_ref[page] = lba as u32;
            sb.valid[page] = true;
            sb.valid_count += 1;
            self.l2p[lba as usize] = zone * self.unit_pages + page as u32;
            self.data[lba as usize] = payload.map(Arc::from);
        }
        let sb = &mut self.units[z];
        sb.write_ptr += pages.len() as u32;
        if sb.write_ptr == self.unit_pages {
            sb.state = SuperblockState::Closed;
            self.zones[z] = ZoneCondition::Full;
            self.open_zones -= 1;
        }
        self.counters.host_write_pages += pages.len() as u64;
        self.counters.nand_write_pages += pages.len() as u64;
        Ok(base + wp as u64)
    }

    /// Appends `count` pages (without payload) at the zone's write pointer.
    /// Returns the first assigned logical address.
    pub fn zone_append(&mut self, zone: u32, count: u32) -> Result<u64, DeviceError> {
        let pages = vec![None; count as usize];
        self.zone_append_inner(zone, &pages)
    }

    pub fn zone_append_page(&mut self, zone: u32, payload: &[u8]) -> Result<u64, DeviceError> {
        self.zone_append_inner(zone, &[Some(payload)])
    }

    pub fn zone_reset(&mut self, zone: u32) -> Result<(), DeviceError> {
        self.require_zns("zone_reset")?;
        self.check_zone(zone)?;
        self.reset_zone_inner(zone, true);
        Ok(())
    }

    fn reset_zone_inner(&mut self, zone: u32, _explicit: bool) {
        let z = zone as usize;
        if self.zones[z] == ZoneCondition::Empty {
            return;
        }
        if self.zones[z] == ZoneCondition::Open {
            self.open_zones -= 1;
        }
        let base = zone as u64 * self.unit_pages as u64;
        for lba in base..base + self.units[z].write_ptr as u64 {
            self.l2p[lba as usize] = NO_PPA;
            self.data[lba as usize] = None;
        }
        self.units[z].erase();
        self.free.insert(zone);
        self.zones[z] = ZoneCondition::Empty;
        self.counters.erase_count += 1;
    }

    /// One line per superblock: `sb=<id> state=<..> wp=<n> valid=<n>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for sb in &self.units {
            let _ = writeln!(
                out,
                "sb={} state={} wp={} valid={}",
                sb.id,
                sb.state.as_str(),
                sb.write_ptr,
                sb.valid_count
            );
        }
        out
    }

    /// Full consistency scan; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let c = &self.counters;
        if c.nand_write_pages != c.host_write_pages + c.gc_relocated_pages {
            return Err(format!("accounting identity broken: {c:?}"));
        }
        for sb in &self.units {
            if sb.valid_count > sb.write_ptr || sb.write_ptr > self.unit_pages {
                return Err(format!("superblock {} counts out of order", sb.id));
            }
            if sb.state == SuperblockState::Free && (sb.write_ptr != 0 || sb.valid_count != 0) {
                return Err(format!("free superblock {} is not empty", sb.id));
            }
            let valid = sb.valid.iter().filter(|&&v| v).count() as u32;
            if valid != sb.valid_count {
                return Err(format!("superblock {} valid_count {} != bitmap {}", sb.id, sb.valid_count, valid));
            }
            for (page, &ok) in sb.valid.iter().enumerate() {
                if ok {
                    let lba = sb.back_ref[page];
                    let ppa = sb.id * self.unit_pages + page as u32;
                    if self.l2p[lba as usize] != ppa {
                        return Err(format!("valid page {ppa} not referenced by lba {lba}"));
                    }
                }
            }
        }
        for (lba, &ppa) in self.l2p.iter().enumerate() {
            if ppa == NO_PPA {
                continue;
            }
            let (u, p) = self.split_ppa(ppa);
            let sb = &self.units[u];
            if !sb.valid[p] || sb.back_ref[p] != lba as u32 {
                return Err(format!("lba {lba} maps to stale page {ppa}"));
            }
        }
        Ok(())
    }
}
