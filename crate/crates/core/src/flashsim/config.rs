// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DeviceError;

/// Host interface exposed by the simulated device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceMode {
    Standard,
    Zns,
    Fdp,
}

impl fmt::Display for DeviceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceMode::Standard => "standard",
            DeviceMode::Zns => "zns",
            DeviceMode::Fdp => "fdp",
        })
    }
}

impl FromStr for DeviceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(DeviceMode::Standard),
            "zns" => Ok(DeviceMode::Zns),
            "fdp" => Ok(DeviceMode::Fdp),
            other => Err(format!("unknown device mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    /// 4 KiB logical pages exposed to the host.
    pub capacity_pages: u64,
    pub superblock_pages: u32,
    /// Extra physical superblocks reserved for internal GC, as a fraction of
    /// the logical superblock count. Ignored in ZNS mode.
    pub op_fraction: f64,
    pub free_sb_threshold: u32,
    pub mode: DeviceMode,
    /// Reclaim unit handles (FDP only).
    pub ruh_count: u16,
    /// Pages per reclaim unit (FDP only). Zero means "same as superblock".
    pub ru_pages: u32,
    pub gc_stream_separate: bool,
    /// Maximum simultaneously open zones (ZNS only).
    pub zns_open_limit: u32,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            capacity_pages: 16_384,
            superblock_pages: 256,
            op_fraction: 0.10,
            free_sb_threshold: 2,
            mode: DeviceMode::Standard,
            ruh_count: 1,
            ru_pages: 0,
            gc_stream_separate: true,
            zns_open_limit: 16,
        }
    }
}

impl DeviceConfig {
    /// Erase/append unit used by the device: the reclaim unit in FDP mode,
    /// otherwise the superblock (which is also the ZNS zone size).
    pub fn unit_pages(&self) -> u32 {
        match self.mode {
            DeviceMode::Fdp if self.ru_pages != 0 => self.ru_pages,
            _ => self.superblock_pages,
        }
    }

    pub fn logical_units(&self) -> u32 {
        self.capacity_pages.div_ceil(self.unit_pages() as u64) as u32
    }

    /// Number of host append streams that can hold an open unit at once.
    pub fn host_streams(&self) -> u32 {
        match self.mode {
            DeviceMode::Fdp => self.ruh_count as u32,
            _ => 1,
        }
    }

    pub fn physical_units(&self) -> u32 {
        let logical = self.logical_units();
        if self.mode == DeviceMode::Zns {
            return logical;
        }
        // Guard against 64 * 1.1 = 70.400000001 style noise pushing ceil up.
        let scaled = (logical as f64 * (1.0 + self.op_fraction) - 1e-9).ceil() as u32;
        // Enough spare units that a closed victim with an invalid page always
        // exists, whatever the host does.
        let floor = logical + self.free_sb_threshold + self.host_streams() - 1
            + self.gc_stream_separate as u32;
        scaled.max(floor)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |msg: String| Err(DeviceError::InvalidConfig(msg));
        if self.capacity_pages == 0 || self.capacity_pages > u32::MAX as u64 {
            return bad(format!("capacity_pages {} out of range", self.capacity_pages));
        }
        if self.superblock_pages == 0 {
            return bad("superblock_pages must be positive".into());
        }
        if !(0.0..1.0).contains(&self.op_fraction) {
            return bad(format!("op_fraction {} not in [0, 1)", self.op_fraction));
        }
        if self.free_sb_threshold == 0 {
            return bad("free_sb_threshold must be at least 1".into());
        }
        match self.mode {
            DeviceMode::Zns => {
                if !self.capacity_pages.is_multiple_of(self.superblock_pages as u64) {
                    return bad("zns capacity must be a whole number of zones".into());
                }
                if self.zns_open_limit == 0 {
                    return bad("zns_open_limit must be positive".into());
                }
            }
            DeviceMode::Fdp => {
                if self.ruh_count == 0 {
                    return bad("fdp mode needs at least one reclaim unit handle".into());
                }
                if self.ru_pages != 0 && !self.ru_pages.is_multiple_of(self.superblock_pages) {
                    return bad(format!(
                        "ru_pages {} is not a multiple of superblock_pages {}",
                        self.ru_pages, self.superblock_pages
                    ));
                }
            }
            DeviceMode::Standard => {}
        }
        Ok(())
    }
}
