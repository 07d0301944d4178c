// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::flashsim::{DeviceConfig, DeviceMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    /// Fixed home location per pid, protected by a double-write buffer.
    InplaceDwb,
    /// Out-of-place, zone-structured log.
    Oop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GcPolicy {
    Greedy,
    Gdt,
}

macro_rules! text_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),+ })
            }
        }

        impl FromStr for $t {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($s => Ok(Self::$v),)+
                    other => Err(format!("unknown value `{other}`")),
                }
            }
        }
    };
}

text_enum!(EngineMode, InplaceDwb => "inplace_dwb", Oop => "oop");
text_enum!(GcPolicy, Greedy => "greedy", Gdt => "gdt");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub mode: EngineMode,
    pub zone_pages: u32,
    pub max_open_zones: u32,
    pub gc_policy: GcPolicy,
    pub nowa_enabled: bool,
    pub compression_enabled: bool,
    pub fdp_hints_enabled: bool,
    /// DB GC keeps at least this many zones empty for its own destinations.
    pub gc_trigger_free_zones: u32,
    pub edt_group_count: u32,
    /// Zones the engine may use; `None` means every zone that fits the
    /// device. Smaller values leave the rest of the device as spare area.
    pub usable_zones: Option<u32>,
    pub dwb_pages: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: EngineMode::Oop,
            zone_pages: 256,
            max_open_zones: 4,
            gc_policy: GcPolicy::Gdt,
            nowa_enabled: false,
            compression_enabled: false,
            fdp_hints_enabled: false,
            gc_trigger_free_zones: 1,
            edt_group_count: 4,
            usable_zones: None,
            dwb_pages: 128,
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl EngineConfig {
    /// Zones in the smallest cohort whose pages fill whole device units.
    pub fn min_cohort(&self, unit_pages: u32) -> u32 {
        (unit_pages as u64 / gcd(self.zone_pages as u64, unit_pages as u64)) as u32
    }

    /// Zones the engine manages on `dev`.
    pub fn zone_count(&self, dev: &DeviceConfig) -> u32 {
        let fit = (dev.capacity_pages / self.zone_pages.max(1) as u64) as u32;
        self.usable_zones.map_or(fit, |u| u.min(fit))
    }

    pub fn validate(&self, dev: &DeviceConfig) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.mode == EngineMode::InplaceDwb {
            if self.nowa_enabled {
                return bad("nowa requires oop mode".into());
            }
            if dev.mode == DeviceMode::Zns {
                return bad("in-place writes are impossible on a zns device".into());
            }
            if self.fdp_hints_enabled {
                return bad("fdp hints require oop mode".into());
            }
            if self.dwb_pages == 0 || self.dwb_pages as u64 >= dev.capacity_pages {
                return bad(format!("dwb_pages {} out of range", self.dwb_pages));
            }
            return Ok(());
        }
        if self.zone_pages == 0 || self.max_open_zones == 0 || self.edt_group_count == 0 {
            return bad("zone_pages, max_open_zones and edt_group_count must be positive".into());
        }
        if self.gc_trigger_free_zones == 0 {
            return bad("gc_trigger_free_zones must be at least 1".into());
        }
        let unit = dev.unit_pages();
        let zones = self.zone_count(dev);
        let reserve = self.gc_trigger_free_zones.max(if self.nowa_enabled { self.min_cohort(unit) } else { 1 });
        if zones < self.max_open_zones + reserve + 1 {
            return bad(format!("{zones} zones cannot hold {} open zones plus a gc reserve", self.max_open_zones));
        }
        match dev.mode {
            DeviceMode::Zns => {
                if self.zone_pages != dev.superblock_pages {
                    return bad(format!("zone_pages {} must equal the device zone size {}", self.zone_pages, dev.superblock_pages));
                }
                if self.max_open_zones > dev.zns_open_limit {
                    return bad(format!("max_open_zones {} exceeds the device open limit {}", self.max_open_zones, dev.zns_open_limit));
                }
            }
            DeviceMode::Fdp | DeviceMode::Standard => {}
        }
        if self.fdp_hints_enabled {
            if dev.mode != DeviceMode::Fdp {
                return bad("fdp hints need an fdp device".into());
            }
            if self.max_open_zones > dev.ruh_count as u32 {
                return bad(format!("max_open_zones {} exceeds ruh_count {}", self.max_open_zones, dev.ruh_count));
            }
            if self.zone_pages != unit {
                return bad(format!("zone_pages {} must equal the reclaim unit ({unit} pages)", self.zone_pages));
            }
        }
        if self.nowa_enabled {
            if dev.mode == DeviceMode::Zns {
                return bad("nowa targets conventional devices, not zns".into());
            }
            if !(self.max_open_zones as u64 * self.zone_pages as u64).is_multiple_of(unit as u64) {
                return bad(format!(
                    "max_open_zones x zone_pages = {} is not a multiple of the device unit ({unit} pages)",
                    self.max_open_zones as u64 * self.zone_pages as u64
                ));
            }
        }
        Ok(())
    }
}
