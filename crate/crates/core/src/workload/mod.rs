// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Seeded YCSB-A style page traffic driven through a small clock buffer pool.

mod pool;
mod zipf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use pool::{BufferPool, PoolStats};
pub use zipf::Zipf;

use crate::codec::{synth_body, PageHeader, PageImage};
use crate::engine::{Engine, EngineCounters, EngineError};
use crate::expctl::WriteDrilldown;
use crate::flashsim::FlashCounters;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub page_count: u64,
    pub zipf_theta: f64,
    pub update_fraction: f64,
    /// Minimum measured-phase operations; the run extends past this until
    /// the device reaches steady state.
    pub total_ops: u64,
    pub seed: u64,
    pub pool_fraction: f64,
    pub eviction_batch: u32,
    /// Approximate LZ4 stored/raw ratio of synthetic page bodies.
    pub compress_target: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            page_count: 14_745,
            zipf_theta: 0.8,
            update_fraction: 0.5,
            total_ops: 200_000,
            seed: 0,
            pool_fraction: 0.10,
            eviction_batch: 64,
            compress_target: 0.5,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.page_count == 0 {
            return Err("page_count must be positive".into());
        }
        if !(self.zipf_theta >= 0.0 && self.zipf_theta.is_finite()) {
            return Err(format!("zipf_theta {} must be a finite value >= 0", self.zipf_theta));
        }
        if !(0.0..=1.0).contains(&self.update_fraction) {
            return Err(format!("update_fraction {} outside [0, 1]", self.update_fraction));
        }
        if !(self.pool_fraction > 0.0 && self.pool_fraction < 1.0) {
            return Err(format!("pool_fraction {} outside (0, 1)", self.pool_fraction));
        }
        if self.eviction_batch == 0 {
            return Err("eviction_batch must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.compress_target) {
            return Err(format!("compress_target {} outside [0, 1]", self.compress_target));
        }
        Ok(())
    }

    /// Buffer pool size in pages.
    pub fn pool_pages(&self) -> usize {
        ((self.page_count as f64 * self.pool_fraction) as usize).max(1)
    }
}

/// Result of [`run`]: statistics over the final quarter of operations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutcome {
    pub pool: PoolStats,
    pub drilldown: WriteDrilldown,
    /// Operations in the measurement window.
    pub window_ops: u64,
    /// Operations executed after the load phase.
    pub total_ops: u64,
    /// Device host writes, load included, when the window opened.
    pub host_writes_at_window: u64,
    /// True when the window opened at or after the steady-state point.
    pub steady_state: bool,
    pub engine: EngineCounters,
    pub device: FlashCounters,
}

/// Host writes (load included) after which the device counts as warmed up.
pub fn steady_state_writes(engine: &Engine) -> u64 {
    let dev = engine.device().config();
    4 * dev.physical_units() as u64 * dev.unit_pages() as u64
}

/// Writes every page once, in pid order, in batches of `eviction_batch`.
/// Returns the next free LSN.
pub fn load(engine: &mut Engine, cfg: &WorkloadConfig) -> Result<u64, EngineError> {
    let mut lsn = 1;
    let batch = cfg.eviction_batch as u64;
    let mut start = 0;
    while start < cfg.page_count {
        let end = (start + batch).min(cfg.page_count);
        let mut pages: Vec<PageImage> = (start..end)
            .map(|pid| PageImage::new(&PageHeader { pid, ..Default::default() }, &synth_body(cfg.seed, pid, 0, cfg.compress_target)))
            .collect();
        engine.flush_batch(&mut pages, lsn, &crate::engine::NoPeek)?;
        lsn += 1;
        start = end;
    }
    Ok(lsn)
}

/// Loads the dataset, then runs YCSB-A style traffic until both
/// `total_ops` operations have run and the device has absorbed
/// [`steady_state_writes`]. Reported numbers cover the final 25% of the
/// operations, which always start after the steady-state point.
pub fn run(engine: &mut Engine, cfg: &WorkloadConfig) -> Result<RunOutcome, EngineError> {
    cfg.validate().map_err(EngineError::Config)?;
    if cfg.page_count > engine.page_capacity() {
        return Err(EngineError::Config(format!(
            "page_count {} exceeds the engine's {} pages",
            cfg.page_count,
            engine.page_capacity()
        )));
    }
    let mut lsn = load(engine, cfg)?;
    let zipf = Zipf::new(cfg.page_count, cfg.zipf_theta, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_EED0_F0B5);
    let mut pool = BufferPool::new(cfg.pool_pages(), cfg.page_count, cfg.eviction_batch as usize, cfg.seed, cfg.compress_target);
    let target = steady_state_writes(engine);
    let host = |e: &Engine| e.device().counters().host_write_pages;

    let mut ops = 0u64;
    let mut window_start: Option<u64> = None;
    let mut end = u64::MAX;
    let mut snap = (PoolStats::default(), EngineCounters::default(), FlashCounters::default(), 0u64);
    loop {
        // Read-only traffic never warms the device; measure after total_ops.
        let warmed = host(engine) >= target || (cfg.update_fraction == 0.0 && ops >= cfg.total_ops);
        if window_start.is_none() && warmed {
            // Size the run so the last quarter lies wholly past this point.
            end = cfg.total_ops.max((ops * 4).div_ceil(3));
            let ws = end - end / 4;
            window_start = Some(ws);
        }
        if let Some(ws) = window_start {
            if ops == ws {
                snap = (pool.stats(), engine.counters(), engine.device().counters(), host(engine));
            }
            if ops == end {
                break;
            }
        }
        let pid = zipf.sample(&mut rng);
        let update = rng.gen_bool(cfg.update_fraction);
        pool.access(engine, pid, update, &mut lsn)?;
        ops += 1;
    }

    let window_ops = end - window_start.unwrap_or(0);
    let eng = engine.counters().since(&snap.1);
    let dev = engine.device().counters().since(&snap.2);
    Ok(RunOutcome {
        pool: pool.stats().since(&snap.0),
        drilldown: WriteDrilldown::from_counters(&eng, &dev),
        window_ops,
        total_ops: ops,
        host_writes_at_window: snap.3,
        steady_state: snap.3 >= target,
        engine: eng,
        device: dev,
    })
}

#[cfg(test)]
mod tests;
