// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! DB-level garbage collection and NoWA compensation.

use serde::Serialize;

use super::{Engine, EngineError, EngineMode, GcPolicy, PagePeek, Purpose, WalRecord};
use crate::codec::{self, pack};
use crate::deathtime::estimate_edt;
use crate::flashsim::{DeviceMode, PAGE_SIZE};
use crate::spacemap::ZoneState;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GcReport {
    pub victims: Vec<u32>,
    /// Valid pages over capacity across the victims, at selection time.
    pub victim_valid_ratio: f64,
    pub relocated_pages: u64,
    pub relocated_slots: u64,
    pub compensation_pages: u64,
    pub freed_zones: u32,
}

impl GcReport {
    /// Device writes per reclaimed page for this cycle.
    pub fn cycle_waf(&self) -> f64 {
        1.0 / (1.0 - self.victim_valid_ratio)
    }
}

struct Drained {
    pages: u64,
    slots: u64,
}

impl Engine {
    /// Runs GC until `slots` more slots can be placed without dipping into
    /// the GC reserve.
    pub(super) fn ensure_space(&mut self, slots: u32, peek: &dyn PagePeek) -> Result<Vec<GcReport>, EngineError> {
        let mut reports = Vec::new();
        let zp = self.cfg.zone_pages as u64;
        let limit = 4 * self.space.zone_count() as usize + 16;
        for _ in 0..limit {
            let short = (slots as u64).saturating_sub(self.active_room());
            let needed = if self.cfg.nowa_enabled {
                // Zones open only in whole cohorts.
                let m = self.cfg.max_open_zones;
                short.div_ceil(m as u64 * zp) as u32 * m
            } else {
                short.div_ceil(zp) as u32
            };
            if needed == 0 || self.empty_zones() >= needed + self.gc_reserve() {
                return Ok(reports);
            }
            reports.push(self.db_gc(peek)?);
        }
        Err(EngineError::Invariant(format!("could not make room for {slots} slots")))
    }

    /// Chooses victims per the GC policy, relocates their live pages and
    /// returns the zones to the empty list. With NoWA, the other members of
    /// each victim's group are rewritten too (compensation), so no group is
    /// left half reset.
    pub fn db_gc(&mut self, peek: &dyn PagePeek) -> Result<GcReport, EngineError> {
        self.live()?;
        if self.cfg.mode != EngineMode::Oop {
            return Err(EngineError::WrongMode("db_gc"));
        }
        let start = self.empty_zones();
        let zone_bytes = self.cfg.zone_pages as u64 * PAGE_SIZE as u64;
        let mut victims = Vec::new();
        let mut claimed = Vec::new();
        let mut reclaim = 0;
        while reclaim < zone_bytes {
            let Some(v) = self.pick_victim(&claimed) else { break };
            for z in self.unit_of(v) {
                reclaim += self.space.zone(z).reclaimable_bytes();
                claimed.push(z);
            }
            victims.push(v);
        }
        if victims.is_empty() {
            return Err(EngineError::Invariant("db gc found no zone with reclaimable space".into()));
        }
        let mut report = GcReport::default();
        let mut valid = 0u64;
        let mut i = 0;
        loop {
            if i == victims.len() {
                if self.empty_zones() > start {
                    break;
                }
                let Some(v) = self.pick_victim(&claimed) else {
                    return Err(EngineError::Invariant("db gc could not free a zone".into()));
                };
                claimed.extend(self.unit_of(v));
                victims.push(v);
            }
            let v = victims[i];
            let rest: Vec<u32> = self.unit_of(v).into_iter().filter(|&z| z != v).collect();
            valid += self.space.zone(v).valid_page_count as u64;
            let d = self.drain(v, Purpose::Gc, peek)?;
            report.relocated_pages += d.pages;
            report.relocated_slots += d.slots;
            for z in rest {
                report.compensation_pages += self.drain(z, Purpose::Compensation, peek)?.pages;
                report.freed_zones += 1;
            }
            i += 1;
        }
        report.victim_valid_ratio = valid as f64 / (victims.len() as u64 * self.cfg.zone_pages as u64) as f64;
        report.freed_zones += victims.len() as u32;
        self.counters.gc_cycles += 1;
        self.counters.gc_victims += victims.len() as u64;
        self.counters.gc_victim_valid += valid;
        report.victims = victims;
        self.space.reassign_edt_ranks();
        Ok(report)
    }

    /// Zones that go together with victim `v`: itself, plus under NoWA the
    /// unreset members of its group.
    fn unit_of(&self, v: u32) -> Vec<u32> {
        if !self.cfg.nowa_enabled {
            return vec![v];
        }
        let mut out = vec![v];
        if let Some(g) = self.space.group(self.space.zone(v).group) {
            out.extend(g.pending().filter(|&z| z != v));
        }
        out
    }

    /// Fewest live bytes first. Under NoWA a victim drags its group along,
    /// so zones whose group is still being written are skipped, and GDT
    /// ranks by the live bytes of the whole group, preferring (within 10%
    /// of the cheapest) a zone that completes an already imbalanced group.
    fn pick_victim(&self, exclude: &[u32]) -> Option<u32> {
        let nowa = self.cfg.nowa_enabled;
        let group_busy = |gid: u32| {
            self.space.group(gid).is_some_and(|g| g.pending().any(|z| self.space.zone(z).state == ZoneState::Active))
        };
        let cands: Vec<_> = self
            .space
            .zones()
            .iter()
            .filter(|z| matches!(z.state, ZoneState::Full | ZoneState::Partial))
            .filter(|z| z.reclaimable_bytes() > 0 && !exclude.contains(&z.zone_id))
            .filter(|z| !nowa || !group_busy(z.group))
            .collect();
        let by_group = nowa && self.cfg.gc_policy == GcPolicy::Gdt;
        let cost = |z: &crate::spacemap::ZoneMeta| -> u64 {
            if by_group {
                self.unit_of(z.zone_id).iter().map(|&m| self.space.zone(m).live_bytes).sum()
            } else {
                z.live_bytes
            }
        };
        let best = cands.iter().min_by_key(|z| (cost(z), z.zone_id))?;
        if by_group {
            let limit = cost(best) + cost(best) / 10;
            let completes = |zid: u32, gid: u32| {
                self.space.group(gid).is_some_and(|g| !g.rewritten.is_empty() && g.pending().eq(std::iter::once(zid)))
            };
            if let Some(z) = cands
                .iter()
                .filter(|z| cost(z) <= limit && completes(z.zone_id, z.group))
                .min_by_key(|z| (cost(z), z.zone_id))
            {
                return Some(z.zone_id);
            }
        }
        Some(best.zone_id)
    }

    /// Moves every live page out of `v`, then resets and trims it.
    fn drain(&mut self, v: u32, purpose: Purpose, peek: &dyn PagePeek) -> Result<Drained, EngineError> {
        let pids = self.space.live_pids(v);
        let mut items = Vec::with_capacity(pids.len());
        let mut cached: Option<(u64, Vec<u8>)> = None;
        for &pid in &pids {
            let mut img = match peek.peek(pid) {
                Some(img) if img.pid() == pid => img,
                _ => {
                    let lba = self.space.lookup(pid)?.slot_lba;
                    if cached.as_ref().map(|c| c.0) != Some(lba) {
                        cached = Some((lba, self.dev.read(lba)?.to_vec()));
                    }
                    codec::unpack_read(self.codec, &cached.as_ref().unwrap().1, pid)?
                }
            };
            let mut h = img.header();
            if h.history.len() <= 1 && !h.never_rewritten() {
                h.flags |= codec::FLAG_NEVER_REWRITTEN;
                img.set_header(&h);
            }
            // Survivors are keyed from now, like a user write at this LSN.
            let now = self.last_lsn.max(h.write_lsn);
            let edt = estimate_edt(&h.history, now, h.tree_id, h.never_rewritten());
            items.push((edt, codec::compress_page(self.codec, &img)));
        }
        let lsn = self.last_lsn;
        let mut slots = 0u64;
        let mut used = Vec::new();
        for g in self.partition(items, true) {
            let packed = pack(&g.pages);
            slots += packed.len() as u64;
            self.place(g.key, packed, purpose, lsn, &mut used)?;
        }
        self.placing_edt.clear();
        if !pids.is_empty() {
            self.wal.append(WalRecord::Commit { lsn })?;
        }
        self.space.reset_zone(v)?;
        self.wal.append(WalRecord::ZoneReset { zone: v })?;
        self.wal.append(WalRecord::Commit { lsn })?;
        self.trim_zone(v)?;
        let pages = pids.len() as u64;
        match purpose {
            Purpose::Compensation => {
                self.counters.comp_pages += slots;
                self.counters.comp_relocated += pages;
            }
            _ => {
                self.counters.db_gc_pages += slots;
                self.counters.db_gc_relocated += pages;
            }
        }
        Ok(Drained { pages, slots })
    }

    /// Tells the device the zone's pages are dead.
    pub(super) fn trim_zone(&mut self, z: u32) -> Result<(), EngineError> {
        if self.dev.config().mode == DeviceMode::Zns {
            self.dev.zone_reset(z)?;
        } else {
            let base = z as u64 * self.cfg.zone_pages as u64;
            let lbas: Vec<u64> = (base..base + self.cfg.zone_pages as u64).collect();
            self.dev.discard(&lbas)?;
        }
        Ok(())
    }

    // ---- NoWA ----

    /// Device units covered by `zones` zones written as one cohort.
    pub(super) fn cohort_units(&self, zones: u32) -> u64 {
        (zones as u64 * self.cfg.zone_pages as u64).div_ceil(self.unit_pages as u64)
    }

    /// True when the units pinned by non-retired groups plus `extra` still
    /// leave the device one fully invalid unit above its GC threshold.
    pub(super) fn nowa_budget_ok(&self, extra: u64) -> bool {
        let dev = self.dev.config();
        let budget = dev.physical_units() as u64 - dev.free_sb_threshold as u64 - 1;
        let pinned: u64 =
            self.space.groups().iter().filter(|g| !g.is_retired()).map(|g| self.cohort_units(g.members.len() as u32)).sum();
        pinned + extra <= budget
    }

    /// Rewrites the remaining members of the cheapest imbalanced group
    /// whose members are all closed. Returns the pages moved, or `None`
    /// when no group qualifies.
    pub(super) fn compensate_one(&mut self, peek: &dyn PagePeek) -> Result<Option<u64>, EngineError> {
        let pick = self
            .space
            .groups()
            .iter()
            .filter(|g| g.is_imbalanced())
            .filter(|g| g.pending().all(|z| matches!(self.space.zone(z).state, ZoneState::Full | ZoneState::Partial)))
            .map(|g| {
                let cost: u64 = g.pending().map(|z| self.space.zone(z).live_bytes).sum();
                (cost, g.id, g.pending().collect::<Vec<_>>())
            })
            .min_by_key(|(cost, id, _)| (*cost, *id));
        let Some((_, _, members)) = pick else { return Ok(None) };
        let mut pages = 0;
        for z in members {
            pages += self.drain(z, Purpose::Compensation, peek)?.pages;
        }
        Ok(Some(pages))
    }

    /// Compensates every imbalanced group that is no longer being written.
    /// Returns the compensation pages written.
    pub fn nowa_maintain(&mut self, peek: &dyn PagePeek) -> Result<u64, EngineError> {
        self.live()?;
        if !self.cfg.nowa_enabled {
            return Ok(0);
        }
        let mut total = 0;
        while let Some(p) = self.compensate_one(peek)? {
            total += p;
        }
        Ok(total)
    }
}
