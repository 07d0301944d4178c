// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::codec::PageHeader;
use crate::flashsim::{DeviceConfig, SuperblockState};

fn page(pid: u64, version: u64) -> PageImage {
    let mut body = [0u8; 16];
    body[..8].copy_from_slice(&pid.to_le_bytes());
    body[8..].copy_from_slice(&version.to_le_bytes());
    PageImage::new(&PageHeader { pid, tree_id: (pid % 3) as u32, ..Default::default() }, &body)
}

fn version_of(img: &PageImage) -> u64 {
    u64::from_le_bytes(img.body()[8..16].try_into().unwrap())
}

fn small_dev(mode: DeviceMode) -> DeviceConfig {
    DeviceConfig { capacity_pages: 4096, superblock_pages: 64, mode, ..Default::default() }
}

fn engine(cfg: EngineConfig, dev: DeviceConfig) -> Engine {
    Engine::new(cfg, FlashDevice::new(dev).unwrap(), MetaStore::memory()).unwrap()
}

fn tiny(policy: GcPolicy) -> Engine {
    let cfg = EngineConfig { zone_pages: 8, max_open_zones: 1, gc_policy: policy, usable_zones: Some(16), ..Default::default() };
    engine(cfg, small_dev(DeviceMode::Standard))
}

/// Writes each pid once, as its own batch, at increasing LSNs.
fn write(e: &mut Engine, pids: &[u64], lsn: &mut u64, versions: &mut HashMap<u64, u64>) {
    let mut batch: Vec<PageImage> = pids
        .iter()
        .map(|&p| {
            let v = versions.entry(p).or_insert(0);
            *v += 1;
            let mut img = match e.space.lookup(p) {
                Ok(_) => e.read_page(p).unwrap(),
                Err(_) => page(p, 0),
            };
            let h = img.header();
            img = PageImage::new(&h, &page(p, *v).body()[..16]);
            img
        })
        .collect();
    *lsn += 1;
    e.flush_batch(&mut batch, *lsn, &NoPeek).unwrap();
}

#[test]
fn identity_batch_is_one_slot_per_page() {
    let mut e = engine(EngineConfig { zone_pages: 64, ..Default::default() }, small_dev(DeviceMode::Standard));
    let mut batch: Vec<_> = (0..64).map(|p| page(p, 1)).collect();
    let r = e.flush_batch(&mut batch, 1, &NoPeek).unwrap();
    assert_eq!(r.slots, 64);
    assert_eq!(e.counters().user_pages, 64);
    assert_eq!(e.counters().user_slots, 64);
    assert_eq!(e.device().counters().host_write_pages, 64);
}

#[test]
fn flush_stamps_history() {
    let mut e = engine(EngineConfig { zone_pages: 64, ..Default::default() }, small_dev(DeviceMode::Standard));
    let mut b = vec![page(5, 1)];
    e.flush_batch(&mut b, 10, &NoPeek).unwrap();
    e.flush_batch(&mut b, 30, &NoPeek).unwrap();
    let h = e.read_page(5).unwrap().header();
    assert_eq!(h.history.entries(), &[10, 30]);
    assert_eq!(h.write_lsn, 30);
    assert_eq!(e.space.edt_of(5), Some(50.0));
    assert!(matches!(e.flush_batch(&mut b, 20, &NoPeek), Err(EngineError::History(_))));
}

#[test]
fn duplicate_pid_rejected() {
    let mut e = engine(EngineConfig { zone_pages: 64, ..Default::default() }, small_dev(DeviceMode::Standard));
    let mut b = vec![page(1, 1), page(1, 2)];
    assert!(matches!(e.flush_batch(&mut b, 1, &NoPeek), Err(EngineError::Invariant(_))));
}

#[test]
fn two_edt_groups_land_in_two_zones() {
    let cfg = EngineConfig { zone_pages: 64, max_open_zones: 2, edt_group_count: 2, ..Default::default() };
    let mut e = engine(cfg, small_dev(DeviceMode::Standard));
    e.open_logged(Some(50.0)).unwrap();
    e.open_logged(Some(110.0)).unwrap();
    // Hot pages rewritten every tick, cold pages every 50 ticks.
    let mut hot: Vec<_> = (0..4).map(|p| page(p, 0)).collect();
    let mut cold: Vec<_> = (100..104).map(|p| page(p, 0)).collect();
    e.flush_batch(&mut cold, 1, &NoPeek).unwrap();
    e.flush_batch(&mut hot, 49, &NoPeek).unwrap();
    let mut all: Vec<_> = hot.into_iter().chain(cold).collect();
    let r = e.flush_batch(&mut all, 51, &NoPeek).unwrap();
    assert!(r.zones.len() >= 2, "{:?}", r.zones);
    assert_ne!(e.space.lookup(0).unwrap().slot_lba / 64, e.space.lookup(100).unwrap().slot_lba / 64);
}

#[test]
fn select_zone_picks_nearest() {
    let cfg = EngineConfig { zone_pages: 64, max_open_zones: 2, ..Default::default() };
    let mut e = engine(cfg, small_dev(DeviceMode::Standard));
    let a = e.open_logged(Some(100.0)).unwrap();
    let b = e.open_logged(Some(500.0)).unwrap();
    assert_eq!(e.select_zone(Some(480.0)), Ok(b));
    assert_eq!(e.select_zone(Some(120.0)), Ok(a));
}

#[test]
fn select_zone_opens_when_nothing_active() {
    let mut e = engine(EngineConfig { zone_pages: 64, ..Default::default() }, small_dev(DeviceMode::Standard));
    assert_eq!(e.space.groups().len(), 0);
    let z = e.select_zone(Some(7.0)).unwrap();
    assert_eq!(z, 0);
    assert_eq!(e.space.active_count(), 1);
    assert_eq!(e.space.groups().len(), 1);
}

#[test]
fn nowa_defers_opens_to_cohort_boundary() {
    let cfg = EngineConfig { zone_pages: 32, max_open_zones: 2, nowa_enabled: true, ..Default::default() };
    let mut e = engine(cfg, small_dev(DeviceMode::Standard));
    let first = e.select_zone(Some(10.0)).unwrap();
    assert_eq!(e.space.active_count(), 2);
    // Half-fill the first zone; a far request must still reuse the cohort.
    for _ in 0..16 {
        e.space.append_slot(first).unwrap();
    }
    let other = e.select_zone(Some(1e9)).unwrap();
    let again = e.select_zone(Some(2e9)).unwrap();
    assert_eq!(e.space.active_count(), 2);
    assert_ne!(other, first);
    assert!([first, other].contains(&again));
    for z in [first, other] {
        while e.space.zone(z).state == ZoneState::Active {
            e.space.append_slot(z).unwrap();
        }
    }
    e.select_zone(Some(10.0)).unwrap();
    assert_eq!(e.space.active_count(), 2);
    assert_eq!(e.space.groups().len(), 2);
}

#[test]
fn gc_three_quarters_valid_victim() {
    let mut e = tiny(GcPolicy::Greedy);
    let (mut lsn, mut vers) = (0, HashMap::new());
    write(&mut e, &(0..8).collect::<Vec<_>>(), &mut lsn, &mut vers);
    write(&mut e, &[0, 1], &mut lsn, &mut vers);
    let before = e.space.count_in(ZoneState::Empty);
    let r = e.db_gc(&NoPeek).unwrap();
    assert_eq!(r.victims, vec![0]);
    assert_eq!(r.victim_valid_ratio, 0.75);
    assert_eq!(r.relocated_pages, 6);
    assert_eq!(r.cycle_waf(), 4.0);
    let relocated = r.relocated_pages as f64;
    assert_eq!(relocated / (8.0 - relocated), 0.75 / (1.0 - 0.75));
    assert_eq!(e.counters().db_gc_pages, 6);
    assert!(e.space.count_in(ZoneState::Empty) > before);
    for p in 0..8 {
        assert_eq!(version_of(&e.read_page(p).unwrap()), vers[&p]);
    }
    e.space.check_consistency().unwrap();
}

#[test]
fn gc_empty_victim_moves_nothing() {
    let mut e = tiny(GcPolicy::Greedy);
    let (mut lsn, mut vers) = (0, HashMap::new());
    let pids: Vec<u64> = (0..8).collect();
    write(&mut e, &pids, &mut lsn, &mut vers);
    write(&mut e, &pids, &mut lsn, &mut vers);
    let r = e.db_gc(&NoPeek).unwrap();
    assert_eq!((r.relocated_pages, r.freed_zones), (0, 1));
    assert_eq!(e.space.zone(0).state, ZoneState::Empty);
}

#[test]
fn gc_does_not_touch_write_history() {
    let mut e = tiny(GcPolicy::Gdt);
    let (mut lsn, mut vers) = (0, HashMap::new());
    write(&mut e, &(0..8).collect::<Vec<_>>(), &mut lsn, &mut vers);
    write(&mut e, &[0, 1, 2], &mut lsn, &mut vers);
    write(&mut e, &[0, 1], &mut lsn, &mut vers);
    let before: Vec<_> = (0..8).map(|p| e.read_page(p).unwrap().header().history).collect();
    e.db_gc(&NoPeek).unwrap();
    for p in 0..8u64 {
        let h = e.read_page(p).unwrap().header();
        assert_eq!(h.history, before[p as usize]);
        // Pages written once become cold once GC has moved them.
        assert_eq!(h.never_rewritten(), h.history.len() == 1, "pid {p}");
    }
}

#[test]
fn gc_uses_peek_instead_of_device_reads() {
    struct Pool(HashMap<u64, PageImage>);
    impl PagePeek for Pool {
        fn peek(&self, pid: u64) -> Option<PageImage> {
            self.0.get(&pid).cloned()
        }
    }
    let mut e = tiny(GcPolicy::Greedy);
    let (mut lsn, mut vers) = (0, HashMap::new());
    write(&mut e, &(0..8).collect::<Vec<_>>(), &mut lsn, &mut vers);
    write(&mut e, &[0], &mut lsn, &mut vers);
    let pool = Pool((1..8).map(|p| (p, e.read_page(p).unwrap())).collect());
    let reads = e.device().counters().read_pages;
    e.db_gc(&pool).unwrap();
    assert_eq!(e.device().counters().read_pages, reads);
}

#[test]
fn inplace_doubles_every_write() {
    let cfg = EngineConfig { mode: EngineMode::InplaceDwb, dwb_pages: 4, ..Default::default() };
    let mut e = engine(cfg, small_dev(DeviceMode::Standard));
    e.inplace_write(&page(3, 1)).unwrap();
    assert_eq!(e.device().counters().host_write_pages, 2);
    let mut batch: Vec<_> = (0..9).map(|p| page(p, 2)).collect();
    e.flush_batch(&mut batch, 1, &NoPeek).unwrap();
    let c = e.counters();
    assert_eq!(c.db_issued(), 2 * c.user_pages);
    assert_eq!(c.user_pages, 10);
    assert_eq!(e.device().counters().host_write_pages, 20);
    assert_eq!(e.dwb_cursor, 10 % 4);
    assert_eq!(version_of(&e.read_page(3).unwrap()), 2);
    assert!(e.inplace_write(&page(4096 - 4, 1)).is_err());
}

#[test]
fn reads_are_single_device_reads() {
    let cfg = EngineConfig { zone_pages: 64, compression_enabled: true, ..Default::default() };
    let mut e = engine(cfg, small_dev(DeviceMode::Standard));
    let mut batch: Vec<_> = (0..64).map(|p| page(p, 1)).collect();
    let r = e.flush_batch(&mut batch, 1, &NoPeek).unwrap();
    assert!(r.slots < 64, "zero-heavy pages should pack");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let before = e.device().counters().read_pages;
    for _ in 0..10_000 {
        let p = rng.gen_range(0..64);
        assert_eq!(e.read_page(p).unwrap().pid(), p);
    }
    assert_eq!(e.device().counters().read_pages - before, 10_000);
    assert!(matches!(e.read_page(999), Err(EngineError::Space(SpaceError::NotFound(999)))));
}

#[test]
fn fdp_hint_per_zone() {
    let dev = DeviceConfig { mode: DeviceMode::Fdp, ruh_count: 4, ..small_dev(DeviceMode::Fdp) };
    let cfg = EngineConfig { zone_pages: 64, max_open_zones: 4, fdp_hints_enabled: true, ..Default::default() };
    let mut e = engine(cfg, dev);
    for _ in 0..4 {
        e.open_logged(None).unwrap();
    }
    let plids: Vec<_> = e.space.active_zones().map(|z| z.plid.unwrap()).collect();
    assert_eq!(plids, vec![0, 1, 2, 3]);
}

/// Random overwrite traffic across every placement mode; every pid must
/// read back its newest version and the device must stay consistent.
#[test]
fn random_traffic_all_modes() {
    let dev_std = small_dev(DeviceMode::Standard);
    let dev_fdp = DeviceConfig { ruh_count: 2, ..small_dev(DeviceMode::Fdp) };
    let dev_zns = small_dev(DeviceMode::Zns);
    let base = EngineConfig { zone_pages: 32, max_open_zones: 2, ..Default::default() };
    let cases = [
        (EngineConfig { gc_policy: GcPolicy::Greedy, ..base.clone() }, dev_std.clone()),
        (base.clone(), dev_std.clone()),
        (EngineConfig { nowa_enabled: true, ..base.clone() }, dev_std.clone()),
        (EngineConfig { compression_enabled: true, ..base.clone() }, dev_std),
        (EngineConfig { zone_pages: 64, fdp_hints_enabled: true, ..base.clone() }, dev_fdp),
        (EngineConfig { zone_pages: 64, ..base }, dev_zns),
    ];
    for (i, (cfg, dev)) in cases.into_iter().enumerate() {
        let mut e = engine(cfg.clone(), dev);
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let (mut lsn, mut vers) = (0, HashMap::new());
        let n = 3000u64;
        for chunk in (0..n).collect::<Vec<_>>().chunks(64) {
            write(&mut e, chunk, &mut lsn, &mut vers);
        }
        for _ in 0..300 {
            let mut pids: Vec<u64> = (0..64).map(|_| (rng.gen_range(0.0..n as f64).powi(2) / n as f64) as u64).collect();
            pids.sort_unstable();
            pids.dedup();
            write(&mut e, &pids, &mut lsn, &mut vers);
        }
        e.space.check_consistency().unwrap();
        e.device().check_invariants().unwrap();
        for p in 0..n {
            assert_eq!(version_of(&e.read_page(p).unwrap()), vers[&p], "case {i} pid {p}");
        }
        let c = e.counters();
        // Test pages are mostly zeros, so the compressed case fits without GC.
        assert!(cfg.compression_enabled || c.gc_cycles > 0, "case {i} never collected");
        assert_eq!(e.device().counters().host_write_pages, c.db_issued(), "case {i}");
        if cfg.nowa_enabled || cfg.fdp_hints_enabled || e.device().config().mode == DeviceMode::Zns {
            assert_eq!(e.device().counters().gc_relocated_pages, 0, "case {i}: {c:?}");
        }
    }
}

#[test]
fn compensation_frees_group_units() {
    // Two 8-page zones fill one 16-page superblock.
    let dev = DeviceConfig { capacity_pages: 512, superblock_pages: 16, ..Default::default() };
    let cfg = EngineConfig { zone_pages: 8, max_open_zones: 2, nowa_enabled: true, gc_policy: GcPolicy::Greedy, ..Default::default() };
    let mut e = engine(cfg, dev);
    let (mut lsn, mut vers) = (0, HashMap::new());
    write(&mut e, &(0..16).collect::<Vec<_>>(), &mut lsn, &mut vers);
    let in_a: Vec<u64> = e.space.live_pids(0);
    assert_eq!(in_a.len(), 8);
    write(&mut e, &in_a, &mut lsn, &mut vers);
    let r = e.db_gc(&NoPeek).unwrap();
    assert_eq!((r.relocated_pages, r.compensation_pages), (0, 8));
    assert!(e.space.groups()[0].is_retired());
    assert_eq!(e.counters().comp_relocated, 8);
    let sb0 = &e.device().superblocks()[0];
    assert_eq!((sb0.state, sb0.valid_count), (SuperblockState::Closed, 0));
    assert_eq!(e.compensate_one(&NoPeek).unwrap(), None);
    assert_eq!(e.nowa_maintain(&NoPeek).unwrap(), 0);
    for p in 0..16 {
        assert_eq!(version_of(&e.read_page(p).unwrap()), vers[&p]);
    }
}

// ---- recovery ----

fn recoverable() -> (EngineConfig, DeviceConfig) {
    (EngineConfig { zone_pages: 32, max_open_zones: 2, ..Default::default() }, small_dev(DeviceMode::Standard))
}

fn mappings(e: &Engine) -> Vec<(u64, Location)> {
    let mut m: Vec<_> = e.space.iter().collect();
    m.sort_by_key(|x| x.0);
    m
}

#[test]
fn checkpoint_then_recover_is_identical() {
    let (cfg, dev) = recoverable();
    let mut e = engine(cfg.clone(), dev);
    let (mut lsn, mut vers) = (0, HashMap::new());
    for k in 0..40u64 {
        write(&mut e, &(k * 10..k * 10 + 50).collect::<Vec<_>>(), &mut lsn, &mut vers);
    }
    e.checkpoint().unwrap();
    let want = mappings(&e);
    let zones = e.space.zones().to_vec();
    let groups = e.space.groups().to_vec();
    let (d, s) = e.into_parts();
    let r = Engine::recover(cfg, d, s).unwrap();
    assert_eq!(mappings(&r), want);
    assert_eq!(r.space.groups(), &groups[..]);
    for (a, b) in r.space.zones().iter().zip(&zones) {
        assert_eq!((a.state, a.write_ptr, a.valid_page_count, a.avg_edt()), (b.state, b.write_ptr, b.valid_page_count, b.avg_edt()));
    }
}

#[test]
fn crash_before_map_record_keeps_old_location() {
    let (cfg, dev) = recoverable();
    let mut e = engine(cfg.clone(), dev);
    let mut b = vec![page(7, 1)];
    e.flush_batch(&mut b, 1, &NoPeek).unwrap();
    let old = e.space.lookup(7).unwrap();
    e.set_fault(Some(FaultPlan { append_index: e.wal_appends(), point: CrashPoint::Before }));
    let mut b2 = vec![PageImage::new(&b[0].header(), &page(7, 2).body()[..16])];
    assert_eq!(e.flush_batch(&mut b2, 2, &NoPeek), Err(EngineError::Crashed));
    assert_eq!(e.read_page(7), Err(EngineError::Crashed));
    let (d, s) = e.into_parts();
    let mut r = Engine::recover(cfg, d, s).unwrap();
    assert_eq!(r.space.lookup(7), Ok(old));
    assert_eq!(version_of(&r.read_page(7).unwrap()), 1);
    // The engine keeps working after recovery.
    let mut b3 = vec![PageImage::new(&r.read_page(7).unwrap().header(), &page(7, 3).body()[..16])];
    r.flush_batch(&mut b3, 3, &NoPeek).unwrap();
    assert_eq!(version_of(&r.read_page(7).unwrap()), 3);
}

#[test]
fn torn_final_record_equals_prior_state() {
    let (cfg, dev) = recoverable();
    let mut e = engine(cfg.clone(), dev);
    let (mut lsn, mut vers) = (0, HashMap::new());
    write(&mut e, &(0..20).collect::<Vec<_>>(), &mut lsn, &mut vers);
    let want = mappings(&e);
    e.set_fault(Some(FaultPlan { append_index: e.wal_appends() + 3, point: CrashPoint::Within }));
    let mut b: Vec<_> = (0..20).map(|p| page(p, 9)).collect();
    assert!(e.flush_batch(&mut b, 99, &NoPeek).is_err());
    let (d, s) = e.into_parts();
    let r = Engine::recover(cfg, d, s).unwrap();
    assert_eq!(mappings(&r), want);
    assert_eq!(r.last_lsn(), 1);
}

#[test]
fn recovery_from_directory_store() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, dev) = recoverable();
    let mut e = Engine::new(cfg.clone(), FlashDevice::new(dev).unwrap(), MetaStore::open_dir(dir.path()).unwrap()).unwrap();
    let (mut lsn, mut vers) = (0, HashMap::new());
    write(&mut e, &(0..100).collect::<Vec<_>>(), &mut lsn, &mut vers);
    e.checkpoint().unwrap();
    write(&mut e, &(50..150).collect::<Vec<_>>(), &mut lsn, &mut vers);
    let want = mappings(&e);
    let (d, _) = e.into_parts();
    let r = Engine::recover(cfg, d, MetaStore::open_dir(dir.path()).unwrap()).unwrap();
    assert_eq!(mappings(&r), want);
}

#[test]
fn zns_recovery_discards_unlogged_appends() {
    let cfg = EngineConfig { zone_pages: 64, max_open_zones: 2, ..Default::default() };
    let dev = small_dev(DeviceMode::Zns);
    let mut e = engine(cfg.clone(), dev);
    let (mut lsn, mut vers) = (0, HashMap::new());
    write(&mut e, &(0..10).collect::<Vec<_>>(), &mut lsn, &mut vers);
    let want = mappings(&e);
    // The crash hits the first map record: the slot is on the device but
    // nothing about it is logged.
    e.set_fault(Some(FaultPlan { append_index: e.wal_appends(), point: CrashPoint::Before }));
    let mut b: Vec<_> = (10..20).map(|p| page(p, 1)).collect();
    assert!(e.flush_batch(&mut b, 5, &NoPeek).is_err());
    let (d, s) = e.into_parts();
    let mut r = Engine::recover(cfg, d, s).unwrap();
    assert_eq!(mappings(&r), want);
    write(&mut r, &(10..200).collect::<Vec<_>>(), &mut lsn, &mut vers);
    for p in 0..200 {
        assert_eq!(version_of(&r.read_page(p).unwrap()), vers[&p]);
    }
}
