// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::engine::{EngineConfig, EngineMode, MetaStore};
use crate::flashsim::{DeviceConfig, FlashDevice};

fn small_engine(mode: EngineMode) -> Engine {
    let dev = DeviceConfig { capacity_pages: 4096, superblock_pages: 64, ..Default::default() };
    let cfg = EngineConfig { mode, zone_pages: 64, ..Default::default() };
    Engine::new(cfg, FlashDevice::new(dev).unwrap(), MetaStore::memory()).unwrap()
}

fn small_cfg() -> WorkloadConfig {
    WorkloadConfig { page_count: 2000, total_ops: 20_000, seed: 5, ..Default::default() }
}

/// LRU hit ratio under independent references, by Che's approximation:
/// find T with sum(1 - exp(-p_i T)) = C, then hit = sum p_i (1 - exp(-p_i T)).
fn che_hit_ratio(n: u64, theta: f64, cache: usize) -> f64 {
    let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-theta)).collect();
    let total: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|x| x / total).collect();
    let filled = |t: f64| p.iter().map(|pi| 1.0 - (-pi * t).exp()).sum::<f64>();
    let (mut lo, mut hi) = (0.0, 1e12);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if filled(mid) < cache as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    p.iter().map(|pi| pi * (1.0 - (-pi * lo).exp())).sum()
}

#[test]
fn config_invariants() {
    assert!(WorkloadConfig::default().validate().is_ok());
    for bad in [
        WorkloadConfig { zipf_theta: -0.1, ..Default::default() },
        WorkloadConfig { pool_fraction: 0.0, ..Default::default() },
        WorkloadConfig { pool_fraction: 1.0, ..Default::default() },
        WorkloadConfig { eviction_batch: 0, ..Default::default() },
        WorkloadConfig { update_fraction: 1.5, ..Default::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert_eq!(WorkloadConfig { page_count: 1000, ..Default::default() }.pool_pages(), 100);
}

#[test]
fn load_writes_every_pid_once() {
    let mut e = small_engine(EngineMode::Oop);
    let cfg = small_cfg();
    load(&mut e, &cfg).unwrap();
    assert_eq!(e.counters().user_pages, cfg.page_count);
    for pid in 0..cfg.page_count {
        let img = e.read_page(pid).unwrap();
        assert_eq!(img.header().history.len(), 1);
        assert_eq!(img.body(), &synth_body(cfg.seed, pid, 0, cfg.compress_target)[..]);
    }
}

#[test]
fn pool_covering_the_dataset_never_evicts() {
    let mut e = small_engine(EngineMode::Oop);
    let cfg = small_cfg();
    let mut lsn = load(&mut e, &cfg).unwrap();
    let after_load = e.device().counters().host_write_pages;
    let mut pool = BufferPool::new(cfg.page_count as usize, cfg.page_count, 64, cfg.seed, cfg.compress_target);
    let zipf = Zipf::new(cfg.page_count, 0.8, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50_000 {
        pool.access(&mut e, zipf.sample(&mut rng), rng.gen_bool(0.5), &mut lsn).unwrap();
    }
    assert_eq!(pool.stats().evictions, 0);
    assert_eq!(e.device().counters().host_write_pages, after_load);
}

#[test]
fn read_only_traffic_flushes_nothing() {
    let mut e = small_engine(EngineMode::Oop);
    let out = run(&mut e, &WorkloadConfig { update_fraction: 0.0, ..small_cfg() }).unwrap();
    assert_eq!(out.pool.dirty_flushes, 0);
    assert_eq!(out.drilldown.host_pages(), 0);
    assert!(out.pool.evictions > 0);
}

#[test]
fn flushes_match_engine_user_writes() {
    for mode in [EngineMode::Oop, EngineMode::InplaceDwb] {
        let mut e = small_engine(mode);
        let out = run(&mut e, &small_cfg()).unwrap();
        assert!(out.pool.dirty_flushes > 0);
        assert_eq!(out.pool.dirty_flushes, out.engine.user_pages, "{mode}");
        assert_eq!(out.drilldown.evicted_pages, out.pool.dirty_flushes);
        assert_eq!(out.pool.accesses(), out.window_ops);
    }
}

#[test]
fn window_starts_after_steady_state() {
    let mut e = small_engine(EngineMode::Oop);
    let out = run(&mut e, &small_cfg()).unwrap();
    assert!(out.steady_state);
    assert!(out.host_writes_at_window >= steady_state_writes(&e));
    assert_eq!(out.window_ops, out.total_ops - (out.total_ops - out.total_ops / 4));
    assert!(out.total_ops >= small_cfg().total_ops);
}

#[test]
fn same_seed_same_outcome() {
    let a = run(&mut small_engine(EngineMode::Oop), &small_cfg()).unwrap();
    let b = run(&mut small_engine(EngineMode::Oop), &small_cfg()).unwrap();
    assert_eq!(a, b);
    let c = run(&mut small_engine(EngineMode::Oop), &WorkloadConfig { seed: 6, ..small_cfg() }).unwrap();
    assert_ne!(a.pool, c.pool);
}

#[test]
fn hit_ratio_tracks_lru_approximation() {
    // Clock approximates LRU. A one-page write queue keeps evicted pages
    // from lingering as extra hits.
    for pool_fraction in [0.05, 0.10] {
        let cfg = WorkloadConfig { pool_fraction, total_ops: 100_000, eviction_batch: 1, ..small_cfg() };
        let out = run(&mut small_engine(EngineMode::Oop), &cfg).unwrap();
        let want = che_hit_ratio(cfg.page_count, cfg.zipf_theta, cfg.pool_pages());
        let got = out.pool.hit_ratio();
        assert!((got - want).abs() < 0.03, "pool {pool_fraction}: hit {got}, lru estimate {want}");

        let batched = run(&mut small_engine(EngineMode::Oop), &WorkloadConfig { eviction_batch: 64, ..cfg }).unwrap();
        assert!(batched.pool.hit_ratio() >= got, "queued pages still count as resident");
    }
}

#[test]
fn every_page_reads_back_its_newest_version() {
    let mut e = small_engine(EngineMode::Oop);
    let cfg = small_cfg();
    let mut lsn = load(&mut e, &cfg).unwrap();
    let mut pool = BufferPool::new(cfg.pool_pages(), cfg.page_count, 64, cfg.seed, cfg.compress_target);
    let zipf = Zipf::new(cfg.page_count, 0.8, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..60_000 {
        pool.access(&mut e, zipf.sample(&mut rng), rng.gen_bool(0.5), &mut lsn).unwrap();
    }
    assert!(e.counters().gc_cycles > 0);
    let current: Vec<u64> = (0..cfg.page_count).map(|p| pool.current_version(p)).collect();
    pool.flush_all(&mut e, lsn).unwrap();
    for pid in 0..cfg.page_count {
        assert_eq!(pool.durable_version(pid), current[pid as usize]);
        let img = e.read_page(pid).unwrap();
        assert_eq!(img.body(), &pool.body(pid, current[pid as usize])[..], "pid {pid}");
    }
}

#[test]
fn oversized_dataset_is_a_config_error() {
    let mut e = small_engine(EngineMode::Oop);
    let err = run(&mut e, &WorkloadConfig { page_count: 1 << 20, ..small_cfg() }).unwrap_err();
    assert!(matches!(err, EngineError::Config(_)), "{err:?}");
}
