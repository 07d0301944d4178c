// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment runner: WAF accounting, sweeps and report emission.

mod config;
mod sweep;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig, KEYS};
pub use sweep::{infer_gc_unit, op_split_sweep, GcUnitInference, OpSplitPoint};

use crate::engine::{Engine, EngineCounters, EngineError, MetaStore};
use crate::flashsim::{FlashCounters, FlashDevice, PAGE_SIZE};
use crate::workload::{self, PoolStats};

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant breach: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(String),
}

impl ExpError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpError::Config(_) => 2,
            ExpError::Invariant(_) => 3,
            ExpError::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for ExpError {
    fn from(e: ConfigError) -> Self {
        ExpError::Config(e.to_string())
    }
}

impl From<EngineError> for ExpError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(m) => ExpError::Config(m),
            EngineError::Io(m) => ExpError::Io(m),
            other => ExpError::Invariant(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ExpError {
    fn from(e: std::io::Error) -> Self {
        ExpError::Io(e.to_string())
    }
}

/// Where device writes came from. Every count is 4 KiB device pages except
/// `evicted_pages`, the logical pages handed over by eviction, which is the
/// DB WAF denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WriteDrilldown {
    pub evicted_pages: u64,
    pub user_pages: u64,
    pub dwb_pages: u64,
    pub db_gc_pages: u64,
    pub compensation_pages: u64,
    pub ssd_gc_pages: u64,
    pub db_waf: f64,
    pub ssd_waf: f64,
    pub total_waf: f64,
}

impl WriteDrilldown {
    pub fn new(evicted: u64, user: u64, dwb: u64, db_gc: u64, comp: u64, ssd_gc: u64) -> Self {
        let host = user + dwb + db_gc + comp;
        let db_waf = if evicted == 0 { 0.0 } else { host as f64 / evicted as f64 };
        let ssd_waf = if host == 0 { 1.0 } else { (host + ssd_gc) as f64 / host as f64 };
        WriteDrilldown {
            evicted_pages: evicted,
            user_pages: user,
            dwb_pages: dwb,
            db_gc_pages: db_gc,
            compensation_pages: comp,
            ssd_gc_pages: ssd_gc,
            db_waf,
            ssd_waf,
            total_waf: db_waf * ssd_waf,
        }
    }

    pub fn from_counters(e: &EngineCounters, d: &FlashCounters) -> Self {
        Self::new(e.user_pages, e.user_slots, e.dwb_pages, e.db_gc_pages, e.comp_pages, d.gc_relocated_pages)
    }

    /// Pages the host (the engine) wrote to the device.
    pub fn host_pages(&self) -> u64 {
        self.user_pages + self.dwb_pages + self.db_gc_pages + self.compensation_pages
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub drilldown: WriteDrilldown,
    pub pool: PoolStats,
    pub hit_ratio: f64,
    /// Device-bound bytes per operation.
    pub logical_bytes_per_op: f64,
    /// NAND bytes per operation.
    pub physical_bytes_per_op: f64,
    pub window_ops: u64,
    pub steady_state: bool,
    pub gc_relocated_pages: u64,
    pub engine: EngineCounters,
}

/// One CSV row. Field order is the file header.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CsvRow {
    pub run_id: String,
    pub mode: String,
    pub zipf_theta: f64,
    pub fill: f64,
    pub zone_pages: u32,
    pub max_open_zones: u32,
    pub gc_policy: String,
    pub nowa: bool,
    pub compression: bool,
    pub fdp: bool,
    pub user_pages: u64,
    pub dwb_pages: u64,
    pub db_gc_pages: u64,
    pub comp_pages: u64,
    pub ssd_gc_pages: u64,
    pub db_waf: f64,
    pub ssd_waf: f64,
    pub total_waf: f64,
    pub hit_ratio: f64,
    pub logical_bytes_per_op: f64,
    pub physical_bytes_per_op: f64,
}

pub const CSV_HEADER: &str = "run_id,mode,zipf_theta,fill,zone_pages,max_open_zones,gc_policy,nowa,compression,fdp,user_pages,dwb_pages,db_gc_pages,comp_pages,ssd_gc_pages,db_waf,ssd_waf,total_waf,hit_ratio,logical_bytes_per_op,physical_bytes_per_op";

impl RunReport {
    pub fn csv_row(&self) -> CsvRow {
        let (c, d) = (&self.config, &self.drilldown);
        CsvRow {
            run_id: self.run_id.clone(),
            mode: c.engine.mode.to_string(),
            zipf_theta: c.workload.zipf_theta,
            fill: c.fill,
            zone_pages: c.engine.zone_pages,
            max_open_zones: c.engine.max_open_zones,
            gc_policy: c.engine.gc_policy.to_string(),
            nowa: c.engine.nowa_enabled,
            compression: c.engine.compression_enabled,
            fdp: c.engine.fdp_hints_enabled,
            user_pages: d.user_pages,
            dwb_pages: d.dwb_pages,
            db_gc_pages: d.db_gc_pages,
            comp_pages: d.compensation_pages,
            ssd_gc_pages: d.ssd_gc_pages,
            db_waf: d.db_waf,
            ssd_waf: d.ssd_waf,
            total_waf: d.total_waf,
            hit_ratio: self.hit_ratio,
            logical_bytes_per_op: self.logical_bytes_per_op,
            physical_bytes_per_op: self.physical_bytes_per_op,
        }
    }
}

/// Resets a fresh device, loads the dataset, runs to steady state and
/// reports the measurement window.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, ExpError> {
    let mut cfg = cfg.clone();
    cfg.finalize()?;
    let mut dev = FlashDevice::new(cfg.device.clone()).map_err(|e| ExpError::Config(e.to_string()))?;
    dev.discard_all().map_err(|e| ExpError::Invariant(e.to_string()))?;
    let mut engine = Engine::new(cfg.engine.clone(), dev, MetaStore::memory())?;
    let out = workload::run(&mut engine, &cfg.workload)?;

    // Counter audit over the whole run and over the window.
    let total = engine.counters().db_issued();
    let host = engine.device().counters().host_write_pages;
    if total != host {
        return Err(ExpError::Invariant(format!("device saw {host} host writes, engine issued {total}")));
    }
    let d = out.drilldown;
    if d.host_pages() != out.device.host_write_pages {
        return Err(ExpError::Invariant(format!(
            "window: device saw {} host writes, drilldown sums to {}",
            out.device.host_write_pages,
            d.host_pages()
        )));
    }
    if out.device.nand_write_pages != out.device.host_write_pages + out.device.gc_relocated_pages {
        return Err(ExpError::Invariant("nand writes differ from host plus relocated writes".into()));
    }
    // Floors: the device never writes less than it is sent, and the engine
    // writes at least the packed user slots.
    let floor = if d.evicted_pages == 0 { 0.0 } else { d.user_pages as f64 / d.evicted_pages as f64 };
    if d.ssd_waf < 1.0 || d.db_waf < floor {
        return Err(ExpError::Invariant(format!("waf below floor: db {} ssd {}", d.db_waf, d.ssd_waf)));
    }
    engine.device().check_invariants().map_err(ExpError::Invariant)?;
    engine.space().check_consistency().map_err(|e| ExpError::Invariant(e.to_string()))?;

    let ops = out.window_ops.max(1) as f64;
    Ok(RunReport {
        run_id: cfg.run_id.clone(),
        drilldown: d,
        pool: out.pool,
        hit_ratio: out.pool.hit_ratio(),
        logical_bytes_per_op: (out.device.host_write_pages * PAGE_SIZE as u64) as f64 / ops,
        physical_bytes_per_op: (out.device.nand_write_pages * PAGE_SIZE as u64) as f64 / ops,
        window_ops: out.window_ops,
        steady_state: out.steady_state,
        gc_relocated_pages: out.device.gc_relocated_pages,
        engine: out.engine,
        config: cfg,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

/// Writes the reports as a JSON array or as CSV with the fixed header.
pub fn emit_report<W: Write>(reports: &[RunReport], format: ReportFormat, out: W) -> Result<(), ExpError> {
    match format {
        ReportFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, reports).map_err(|e| ExpError::Io(e.to_string()))?;
            writeln!(out)?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            if reports.is_empty() {
                w.write_record(CSV_HEADER.split(',')).map_err(|e| ExpError::Io(e.to_string()))?;
            }
            for r in reports {
                w.serialize(r.csv_row()).map_err(|e| ExpError::Io(e.to_string()))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Reads reports written by [`emit_report`] in JSON form (one report or an
/// array).
pub fn read_reports(text: &str) -> Result<Vec<RunReport>, ExpError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| ExpError::Config(e.to_string()))?;
    let res = if v.is_array() { serde_json::from_value(v) } else { serde_json::from_value(v).map(|r| vec![r]) };
    res.map_err(|e| ExpError::Config(e.to_string()))
}

#[cfg(test)]
mod tests;
