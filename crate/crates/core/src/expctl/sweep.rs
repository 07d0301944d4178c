// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_experiment, ExpError, ExperimentConfig, RunReport};
use crate::engine::EngineMode;
use crate::flashsim::{DeviceConfig, DeviceMode, FlashDevice};

/// Tolerance on "SSD WAF is 1".
pub const WAF_EPSILON: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcUnitInference {
    /// Smallest passing zone size, or the ceiling when none passed.
    pub unit_pages: u64,
    pub found: bool,
    /// Measured SSD WAF per candidate, in the order tried.
    pub measurements: Vec<(u32, f64)>,
}

/// Finds the smallest zone size at which zone-granular overwrites stop
/// causing device GC copies. For each candidate the host keeps one zone
/// open at a time: it picks a zone, trims it and rewrites it front to back.
/// The zone to reuse is drawn at random, since strictly FIFO reuse
/// invalidates superblocks in write order and hides the unit size.
pub fn infer_gc_unit(dev: &DeviceConfig, candidates: &[u32], ceiling: u64, seed: u64) -> Result<GcUnitInference, ExpError> {
    if candidates.is_empty() {
        return Err(ExpError::Config("no candidate zone sizes".into()));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExpError::Config("candidate zone sizes must be strictly ascending".into()));
    }
    if candidates[0] == 0 || candidates[candidates.len() - 1] as u64 > dev.capacity_pages {
        return Err(ExpError::Config("candidate zone sizes must lie in 1..=capacity_pages".into()));
    }
    dev.validate().map_err(|e| ExpError::Config(e.to_string()))?;
    if dev.mode == DeviceMode::Zns {
        // No device GC exists to amplify anything.
        return Ok(GcUnitInference { unit_pages: candidates[0] as u64, found: true, measurements: vec![(candidates[0], 1.0)] });
    }
    let mut measurements = Vec::new();
    for &z in candidates {
        let waf = zone_overwrite_waf(dev, z, seed)?;
        measurements.push((z, waf));
        if waf <= 1.0 + WAF_EPSILON {
            return Ok(GcUnitInference { unit_pages: z as u64, found: true, measurements });
        }
    }
    Ok(GcUnitInference { unit_pages: ceiling, found: false, measurements })
}

/// SSD WAF of the single-active-zone overwrite pattern, measured over the
/// last quarter of a run that writes at least four times the physical
/// capacity.
pub fn zone_overwrite_waf(dev_cfg: &DeviceConfig, zone_pages: u32, seed: u64) -> Result<f64, ExpError> {
    let inv = |e: crate::flashsim::DeviceError| ExpError::Invariant(e.to_string());
    let mut dev = FlashDevice::new(dev_cfg.clone()).map_err(|e| ExpError::Config(e.to_string()))?;
    let zp = zone_pages as u64;
    let zones = dev_cfg.capacity_pages / zp;
    let warm = 4 * dev_cfg.physical_units() as u64 * dev_cfg.unit_pages() as u64;
    let end = (warm * 4).div_ceil(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut written = 0u64;
    let mut snap = None;
    let mut zone = 0u64;
    while written < end {
        let lbas: Vec<u64> = (zone * zp..(zone + 1) * zp).collect();
        if written >= zones * zp {
            dev.discard(&lbas).map_err(inv)?;
        }
        for &lba in &lbas {
            if snap.is_none() && written >= warm {
                snap = Some(dev.counters());
            }
            dev.host_write(&[lba]).map_err(inv)?;
            written += 1;
        }
        // Sequential initial fill, then random reuse.
        zone = if written < zones * zp { zone + 1 } else { rng.gen_range(0..zones) };
    }
    let base = snap.unwrap_or_default();
    Ok(dev.counters().since(&base).ssd_waf())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpSplitPoint {
    pub fraction: f64,
    pub db_waf: f64,
    pub ssd_waf: f64,
    pub total_waf: f64,
    pub report: RunReport,
}

/// Runs `base` once per fraction, letting the engine use that fraction of
/// the device's zones. The dataset is fixed at half the device; the space
/// the engine does not use is left to the device as spare area.
pub fn op_split_sweep(base: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<OpSplitPoint>, ExpError> {
    if base.engine.mode != EngineMode::Oop {
        return Err(ExpError::Config("op split needs oop mode".into()));
    }
    let cap = base.device.capacity_pages;
    let logical = cap / 2;
    let zones = cap / base.engine.zone_pages.max(1) as u64;
    let min = logical as f64 / cap as f64;
    if let Some(f) = fractions.iter().find(|&&f| !(f > min && f <= 1.0)) {
        return Err(ExpError::Config(format!("fraction {f} outside ({min}, 1]")));
    }
    let mut points = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let mut cfg = base.clone();
        cfg.set("page_count", &logical.to_string()).map_err(ExpError::Config)?;
        cfg.engine.usable_zones = Some((f * zones as f64 + 1e-9).floor() as u32);
        cfg.run_id = format!("{}-op{f}", base.run_id);
        let report = run_experiment(&cfg)?;
        let d = report.drilldown;
        points.push(OpSplitPoint { fraction: f, db_waf: d.db_waf, ssd_waf: d.ssd_waf, total_waf: d.total_waf, report });
    }
    Ok(points)
}
