// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Trace drivers and brute-force oracles shared by the integration suites.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zonewaf::codec::{slot_pids, synth_body, PageHeader, PageImage};
use zonewaf::engine::{CrashPoint, Engine, EngineConfig, EngineError, FaultPlan, MetaStore, NoPeek};
use zonewaf::flashsim::{DeviceConfig, FlashDevice, PAGE_SIZE};
use zonewaf::workload::Zipf;

pub const BODY_SEED: u64 = 77;

pub fn new_engine(cfg: &EngineConfig, dev: &DeviceConfig) -> Engine {
    Engine::new(cfg.clone(), FlashDevice::new(dev.clone()).unwrap(), MetaStore::memory()).unwrap()
}

pub fn body(pid: u64, version: u64, target: f64) -> Vec<u8> {
    synth_body(BODY_SEED, pid, version, target)
}

/// Next image of `pid`, carrying its stored header forward.
pub fn next_image(e: &mut Engine, pid: u64, version: u64, target: f64) -> PageImage {
    let header = match e.space().lookup(pid) {
        Ok(_) => e.read_page(pid).unwrap().header(),
        Err(_) => PageHeader { pid, tree_id: (pid % 4) as u32, ..Default::default() },
    };
    PageImage::new(&header, &body(pid, version, target))
}

/// Independent recount of the space map: forward and reverse maps must be
/// inverse, per-zone valid counts must match, their sum must equal the
/// live pid set, and every mapped slot on the device must list its pid.
pub fn recount(e: &Engine, live: &HashSet<u64>) -> Result<(), String> {
    let s = e.space();
    let zp = s.zone_pages() as u64;
    let mut forward = HashMap::new();
    for (pid, loc) in s.iter() {
        forward.insert(pid, loc);
        if loc.offset as usize + loc.len as usize > PAGE_SIZE {
            return Err(format!("pid {pid} entry crosses its slot: {loc:?}"));
        }
    }
    let mut valid = vec![0u32; s.zone_count() as usize];
    let mut seen = 0usize;
    for lba in 0..s.zone_count() as u64 * zp {
        for &pid in s.occupants(lba) {
            seen += 1;
            match forward.get(&pid) {
                Some(loc) if loc.slot_lba == lba => valid[(lba / zp) as usize] += 1,
                other => return Err(format!("slot {lba} lists pid {pid}, forward map says {other:?}")),
            }
        }
    }
    if seen != forward.len() {
        return Err(format!("{seen} reverse entries for {} forward entries", forward.len()));
    }
    for z in s.zones() {
        if z.valid_page_count != valid[z.zone_id as usize] {
            return Err(format!("zone {} claims {} valid, recount {}", z.zone_id, z.valid_page_count, valid[z.zone_id as usize]));
        }
    }
    let total: u64 = s.zones().iter().map(|z| z.valid_page_count as u64).sum();
    let mapped: HashSet<u64> = forward.keys().copied().collect();
    if total != live.len() as u64 || &mapped != live {
        return Err(format!("sum of valid counts {total}, live pids {}, mapped {}", live.len(), mapped.len()));
    }
    for (pid, loc) in &forward {
        let slot = e.device().peek(loc.slot_lba).ok_or(format!("slot {} of pid {pid} is not on the device", loc.slot_lba))?;
        let pids = slot_pids(slot).map_err(|x| x.to_string())?;
        if !pids.contains(pid) {
            return Err(format!("device slot {} does not hold pid {pid}", loc.slot_lba));
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct TraceStats {
    pub page_writes: u64,
    pub reads: u64,
    /// `read_page` calls that did not cost exactly one device read.
    pub multi_read_calls: u64,
    pub wrong_versions: u64,
}

/// Random flushes (skewed pids, batch sizes 1..=64) mixed with random reads
/// until `page_writes` pages were written. Every read, header fetches
/// included, is checked for cost and content. Returns the live pid set.
pub fn random_trace(e: &mut Engine, pids: u64, page_writes: u64, target: f64, seed: u64) -> (TraceStats, HashSet<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = Zipf::new(pids, rng.gen_range(0.0..1.2), seed);
    let mut versions: HashMap<u64, u64> = HashMap::new();
    let mut st = TraceStats::default();
    let mut lsn = 0;
    while st.page_writes < page_writes {
        if rng.gen_bool(0.3) {
            let pid = zipf.sample(&mut rng);
            if let Some(&v) = versions.get(&pid) {
                checked_read(e, pid, v, target, &mut st);
            }
            continue;
        }
        let n = rng.gen_range(1..=64usize).min(pids as usize);
        let mut batch_pids = HashSet::new();
        while batch_pids.len() < n {
            batch_pids.insert(zipf.sample(&mut rng));
        }
        let mut batch = Vec::with_capacity(n);
        let mut next = Vec::with_capacity(n);
        for &p in &batch_pids {
            let header = match versions.get(&p) {
                Some(&v) => checked_read(e, p, v, target, &mut st).header(),
                None => PageHeader { pid: p, tree_id: (p % 4) as u32, ..Default::default() },
            };
            let v = versions.get(&p).map_or(0, |v| v + 1);
            batch.push(PageImage::new(&header, &body(p, v, target)));
            next.push((p, v));
        }
        lsn += 1;
        e.flush_batch(&mut batch, lsn, &NoPeek).unwrap();
        versions.extend(next);
        st.page_writes += n as u64;
    }
    (st, versions.into_keys().collect())
}

fn checked_read(e: &mut Engine, pid: u64, version: u64, target: f64, st: &mut TraceStats) -> PageImage {
    let before = e.device().counters().read_pages;
    let img = e.read_page(pid).unwrap();
    st.reads += 1;
    if e.device().counters().read_pages - before != 1 {
        st.multi_read_calls += 1;
    }
    if img.body() != &body(pid, version, target)[..] {
        st.wrong_versions += 1;
    }
    img
}

#[derive(Debug, Default)]
pub struct SweepStats {
    pub flushes: u64,
    pub appends_swept: u64,
    /// Crashes injected per point: before, within, after.
    pub crashes: [u64; 3],
    /// Crashes after a durable commit, recovered with the batch applied.
    pub durable_batches: u64,
    /// GC cycles run inside swept flushes.
    pub gc_cycles: u64,
    pub wrong_version_reads: u64,
    pub wrong_mapping_sets: u64,
    pub failures: Vec<String>,
}

impl SweepStats {
    pub fn clean(&self) -> bool {
        self.wrong_version_reads == 0 && self.wrong_mapping_sets == 0 && self.failures.is_empty()
    }
}

pub fn sweep_configs() -> (EngineConfig, DeviceConfig) {
    let dev = DeviceConfig { capacity_pages: 1024, superblock_pages: 16, ..Default::default() };
    let cfg = EngineConfig { zone_pages: 16, max_open_zones: 2, usable_zones: Some(32), ..Default::default() };
    (cfg, dev)
}

/// For each of `flushes` batches, forks the engine and crashes it before,
/// within and after every WAL append the batch makes, recovers each fork
/// and compares it with the acknowledged state. The main line then carries
/// on, alternately from a clean fork and from a recovered one.
pub fn crash_sweep(flushes: u64, seed: u64) -> SweepStats {
    const PIDS: u64 = 256;
    const BATCH: usize = 8;
    let (cfg, dev) = sweep_configs();
    let mut main = new_engine(&cfg, &dev);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acked: HashMap<u64, u64> = HashMap::new();
    let mut st = SweepStats::default();
    let mut lsn = 0u64;
    let fail = |st: &mut SweepStats, msg: String| {
        if st.failures.len() < 8 {
            st.failures.push(msg);
        }
    };

    for k in 0..flushes {
        // Load in pid order first, then random batches.
        let pids: Vec<u64> = if k < PIDS / BATCH as u64 {
            (k * BATCH as u64..(k + 1) * BATCH as u64).collect()
        } else {
            sample(&mut rng, PIDS as usize, BATCH).into_iter().map(|p| p as u64).collect()
        };
        let mut post = acked.clone();
        for &p in &pids {
            post.insert(p, acked.get(&p).map_or(0, |v| v + 1));
        }
        let batch: Vec<PageImage> = pids.iter().map(|&p| next_image(&mut main, p, post[&p], 1.0)).collect();
        lsn += 1;

        let mut clean = main.try_fork().unwrap();
        let base = clean.wal_appends();
        let gc0 = clean.counters().gc_cycles;
        if let Err(e) = clean.flush_batch(&mut batch.clone(), lsn, &NoPeek) {
            fail(&mut st, format!("flush {k}: clean run failed: {e}"));
            return st;
        }
        let appends = clean.wal_appends() - base;
        st.gc_cycles += clean.counters().gc_cycles - gc0;
        let mut carried = None;
        for j in 0..appends {
            for (pi, point) in [CrashPoint::Before, CrashPoint::Within, CrashPoint::After].into_iter().enumerate() {
                let mut f = main.try_fork().unwrap();
                f.set_fault(Some(FaultPlan { append_index: base + j, point }));
                match f.flush_batch(&mut batch.clone(), lsn, &NoPeek) {
                    Err(EngineError::Crashed) => {}
                    other => {
                        fail(&mut st, format!("flush {k} append {j} {point:?}: expected a crash, got {other:?}"));
                        continue;
                    }
                }
                st.crashes[pi] += 1;
                let (d, s) = f.into_parts();
                let mut r = match Engine::recover(cfg.clone(), d, s) {
                    Ok(r) => r,
                    Err(e) => {
                        fail(&mut st, format!("flush {k} append {j} {point:?}: recover failed: {e}"));
                        continue;
                    }
                };
                let durable = j == appends - 1 && point == CrashPoint::After;
                let want = if durable { &post } else { &acked };
                st.durable_batches += durable as u64;
                let got: HashSet<u64> = r.space().iter().map(|(p, _)| p).collect();
                if got != want.keys().copied().collect::<HashSet<_>>() {
                    st.wrong_mapping_sets += 1;
                }
                for (&p, &v) in want {
                    match r.read_page(p) {
                        Ok(img) if img.body() == &body(p, v, 1.0)[..] => {}
                        _ => st.wrong_version_reads += 1,
                    }
                }
                if let Err(e) = r.space().check_consistency() {
                    fail(&mut st, format!("flush {k} append {j} {point:?}: {e}"));
                }
                if durable {
                    carried = Some(r);
                }
            }
        }
        st.appends_swept += appends;
        st.flushes += 1;
        acked = post;
        main = match (k % 2, carried) {
            (1, Some(r)) => r,
            _ => clean,
        };
        if k % 20 == 19 {
            main.checkpoint().unwrap();
        }
    }
    st
}
