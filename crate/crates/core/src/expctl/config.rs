// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration and its `key = value` text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, EngineMode};
use crate::flashsim::DeviceConfig;
use crate::workload::WorkloadConfig;

/// Everything one run needs. `fill` sets the dataset size as a fraction of
/// the device's logical capacity unless `page_count` is given explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub fill: f64,
    pub device: DeviceConfig,
    pub engine: EngineConfig,
    pub workload: WorkloadConfig,
    #[serde(skip)]
    page_count_set: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run_id: "run".into(),
            fill: 0.9,
            device: DeviceConfig::default(),
            engine: EngineConfig::default(),
            workload: WorkloadConfig::default(),
            page_count_set: false,
        }
    }
}

/// Keys accepted in config files; CLI flags are the kebab-case forms.
pub const KEYS: &[&str] = &[
    "run_id",
    "fill",
    // device
    "capacity_pages",
    "superblock_pages",
    "op_fraction",
    "free_sb_threshold",
    "device_mode",
    "ruh_count",
    "ru_pages",
    "gc_stream_separate",
    "zns_open_limit",
    // engine
    "mode",
    "zone_pages",
    "max_open_zones",
    "gc_policy",
    "nowa_enabled",
    "compression_enabled",
    "fdp_hints_enabled",
    "gc_trigger_free_zones",
    "edt_group_count",
    "usable_zones",
    "dwb_pages",
    // workload
    "page_count",
    "zipf_theta",
    "update_fraction",
    "total_ops",
    "seed",
    "pool_fraction",
    "eviction_batch",
    "compress_target",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<String> for ConfigError {
    fn from(msg: String) -> Self {
        ConfigError { line: None, msg }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| format!("bad value `{v}` for {key}: {e}"))
}

impl ExperimentConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let (d, e, w) = (&mut self.device, &mut self.engine, &mut self.workload);
        match key {
            "run_id" => {
                if v.is_empty() || v.contains([',', '"', '\n']) {
                    return Err(format!("run_id `{v}` must be non-empty and free of commas and quotes"));
                }
                self.run_id = v.to_string();
            }
            "fill" => self.fill = parse(key, v)?,
            "capacity_pages" => d.capacity_pages = parse(key, v)?,
            "superblock_pages" => d.superblock_pages = parse(key, v)?,
            "op_fraction" => d.op_fraction = parse(key, v)?,
            "free_sb_threshold" => d.free_sb_threshold = parse(key, v)?,
            "device_mode" => d.mode = parse(key, v)?,
            "ruh_count" => d.ruh_count = parse(key, v)?,
            "ru_pages" => d.ru_pages = parse(key, v)?,
            "gc_stream_separate" => d.gc_stream_separate = parse(key, v)?,
            "zns_open_limit" => d.zns_open_limit = parse(key, v)?,
            "mode" => e.mode = parse(key, v)?,
            "zone_pages" => e.zone_pages = parse(key, v)?,
            "max_open_zones" => e.max_open_zones = parse(key, v)?,
            "gc_policy" => e.gc_policy = parse(key, v)?,
            "nowa_enabled" => e.nowa_enabled = parse(key, v)?,
            "compression_enabled" => e.compression_enabled = parse(key, v)?,
            "fdp_hints_enabled" => e.fdp_hints_enabled = parse(key, v)?,
            "gc_trigger_free_zones" => e.gc_trigger_free_zones = parse(key, v)?,
            "edt_group_count" => e.edt_group_count = parse(key, v)?,
            "usable_zones" => e.usable_zones = if v == "all" { None } else { Some(parse(key, v)?) },
            "dwb_pages" => e.dwb_pages = parse(key, v)?,
            "page_count" => {
                w.page_count = parse(key, v)?;
                self.page_count_set = true;
            }
            "zipf_theta" => w.zipf_theta = parse(key, v)?,
            "update_fraction" => w.update_fraction = parse(key, v)?,
            "total_ops" => w.total_ops = parse(key, v)?,
            "seed" => w.seed = parse(key, v)?,
            "pool_fraction" => w.pool_fraction = parse(key, v)?,
            "eviction_batch" => w.eviction_batch = parse(key, v)?,
            "compress_target" => w.compress_target = parse(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError { line: Some(i + 1), msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    /// Derives the dataset size from `fill` unless it was set explicitly,
    /// then checks every section.
    pub fn finalize(&mut self) -> Result<(), ConfigError> {
        self.device.validate().map_err(|e| e.to_string())?;
        if !self.page_count_set {
            if !(self.fill > 0.0 && self.fill <= 1.0) {
                return Err(format!("fill {} outside (0, 1]", self.fill).into());
            }
            self.workload.page_count = (self.device.capacity_pages as f64 * self.fill).floor() as u64;
        } else {
            self.fill = self.workload.page_count as f64 / self.device.capacity_pages as f64;
        }
        self.engine.validate(&self.device).map_err(|e| e.to_string())?;
        self.workload.validate()?;
        let room = match self.engine.mode {
            EngineMode::InplaceDwb => self.device.capacity_pages - self.engine.dwb_pages as u64,
            EngineMode::Oop => self.engine.zone_count(&self.device) as u64 * self.engine.zone_pages as u64,
        };
        if self.workload.page_count > room {
            return Err(format!("{} pages do not fit the engine's {room} pages", self.workload.page_count).into());
        }
        Ok(())
    }

    /// Renders the config in the text form accepted by [`parse_text`].
    ///
    /// [`parse_text`]: ExperimentConfig::parse_text
    pub fn to_text(&self) -> String {
        let (d, e, w) = (&self.device, &self.engine, &self.workload);
        let usable = e.usable_zones.map_or("all".to_string(), |u| u.to_string());
        let vals: Vec<(&str, String)> = vec![
            ("run_id", self.run_id.clone()),
            ("fill", self.fill.to_string()),
            ("capacity_pages", d.capacity_pages.to_string()),
            ("superblock_pages", d.superblock_pages.to_string()),
            ("op_fraction", d.op_fraction.to_string()),
            ("free_sb_threshold", d.free_sb_threshold.to_string()),
            ("device_mode", d.mode.to_string()),
            ("ruh_count", d.ruh_count.to_string()),
            ("ru_pages", d.ru_pages.to_string()),
            ("gc_stream_separate", d.gc_stream_separate.to_string()),
            ("zns_open_limit", d.zns_open_limit.to_string()),
            ("mode", e.mode.to_string()),
            ("zone_pages", e.zone_pages.to_string()),
            ("max_open_zones", e.max_open_zones.to_string()),
            ("gc_policy", e.gc_policy.to_string()),
            ("nowa_enabled", e.nowa_enabled.to_string()),
            ("compression_enabled", e.compression_enabled.to_string()),
            ("fdp_hints_enabled", e.fdp_hints_enabled.to_string()),
            ("gc_trigger_free_zones", e.gc_trigger_free_zones.to_string()),
            ("edt_group_count", e.edt_group_count.to_string()),
            ("usable_zones", usable),
            ("dwb_pages", e.dwb_pages.to_string()),
            ("page_count", w.page_count.to_string()),
            ("zipf_theta", w.zipf_theta.to_string()),
            ("update_fraction", w.update_fraction.to_string()),
            ("total_ops", w.total_ops.to_string()),
            ("seed", w.seed.to_string()),
            ("pool_fraction", w.pool_fraction.to_string()),
            ("eviction_batch", w.eviction_batch.to_string()),
            ("compress_target", w.compress_target.to_string()),
        ];
        vals.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
