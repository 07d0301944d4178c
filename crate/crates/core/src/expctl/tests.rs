// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::flashsim::{DeviceConfig, DeviceMode};

fn small(extra: &[(&str, &str)]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [("capacity_pages", "4096"), ("superblock_pages", "64"), ("zone_pages", "64"), ("total_ops", "20000"), ("seed", "3")]
        .iter()
        .chain(extra)
    {
        cfg.set(k, v).unwrap();
    }
    cfg
}

#[test]
fn drilldown_identities() {
    let d = WriteDrilldown::new(100, 80, 0, 30, 10, 60);
    assert_eq!(d.host_pages(), 120);
    assert_eq!(d.db_waf, 1.2);
    assert_eq!(d.ssd_waf, 1.5);
    assert_eq!(d.total_waf, 1.2 * 1.5);

    let idle = WriteDrilldown::new(0, 0, 0, 0, 0, 0);
    assert_eq!((idle.db_waf, idle.ssd_waf, idle.total_waf), (0.0, 1.0, 0.0));
}

#[test]
fn exit_codes() {
    assert_eq!(ExpError::Config(String::new()).exit_code(), 2);
    assert_eq!(ExpError::Invariant(String::new()).exit_code(), 3);
    assert_eq!(ExpError::Io(String::new()).exit_code(), 1);
    let e: ExpError = EngineError::Config("x".into()).into();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn csv_header_is_fixed() {
    let mut out = Vec::new();
    emit_report(&[], ReportFormat::Csv, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), format!("{CSV_HEADER}\n"));
    assert_eq!(CSV_HEADER.split(',').count(), 21);
}

#[test]
fn small_run_passes_audits() {
    let r = run_experiment(&small(&[])).unwrap();
    let d = r.drilldown;
    assert!(r.steady_state);
    assert!(d.evicted_pages > 0 && d.user_pages > 0);
    assert!((d.total_waf - d.db_waf * d.ssd_waf).abs() < 1e-12);
    assert!(d.ssd_waf >= 1.0);
    assert_eq!(r.pool.dirty_flushes, d.evicted_pages);
    assert_eq!(r.config.workload.page_count, (4096.0 * 0.9) as u64);
    let host = d.host_pages() as f64 * 4096.0 / r.window_ops as f64;
    assert!((r.logical_bytes_per_op - host).abs() < 1e-6);
    assert!(r.physical_bytes_per_op >= r.logical_bytes_per_op);
}

#[test]
fn inplace_writes_each_page_twice() {
    let r = run_experiment(&small(&[("mode", "inplace_dwb")])).unwrap();
    assert_eq!(r.drilldown.db_waf, 2.0);
    assert_eq!(r.drilldown.dwb_pages, r.drilldown.user_pages);
}

#[test]
fn csv_and_json_agree() {
    let r = run_experiment(&small(&[("run_id", "agree")])).unwrap();
    let mut json = Vec::new();
    emit_report(std::slice::from_ref(&r), ReportFormat::Json, &mut json).unwrap();
    let back = read_reports(std::str::from_utf8(&json).unwrap()).unwrap();
    assert_eq!(back, vec![r.clone()]);

    let mut csv_out = Vec::new();
    emit_report(&back, ReportFormat::Csv, &mut csv_out).unwrap();
    let text = String::from_utf8(csv_out).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<CsvRow> = rd.deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(rows, vec![r.csv_row()]);
    assert_eq!(rows[0].db_waf, r.drilldown.db_waf);
    assert_eq!(rows[0].mode, "oop");
}

#[test]
fn bad_config_is_a_config_error() {
    let err = run_experiment(&small(&[("fill", "1.5")])).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    let err = run_experiment(&small(&[("page_count", "5000")])).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

fn dev(sb: u32) -> DeviceConfig {
    DeviceConfig { capacity_pages: 8192, superblock_pages: sb, ..Default::default() }
}

#[test]
fn gc_unit_found_at_superblock_size() {
    let r = infer_gc_unit(&dev(64), &[16, 32, 64, 128], 8192, 1).unwrap();
    assert!(r.found, "{r:?}");
    assert_eq!(r.unit_pages, 64);
    // Smaller zones all paid for device GC.
    assert!(r.measurements[..2].iter().all(|&(_, w)| w > 1.0 + sweep::WAF_EPSILON), "{r:?}");
}

#[test]
fn gc_unit_falls_back_to_ceiling() {
    let r = infer_gc_unit(&dev(256), &[16, 32, 64], 8192, 1).unwrap();
    assert!(!r.found);
    assert_eq!(r.unit_pages, 8192);
    assert_eq!(r.measurements.len(), 3);
}

#[test]
fn gc_unit_on_zns_is_the_smallest_candidate() {
    let zns = DeviceConfig { mode: DeviceMode::Zns, ..dev(64) };
    let r = infer_gc_unit(&zns, &[32, 64], 8192, 1).unwrap();
    assert_eq!((r.unit_pages, r.found), (32, true));
}

#[test]
fn gc_unit_rejects_bad_candidates() {
    for c in [&[][..], &[64, 32], &[0, 32], &[64, 1 << 20]] {
        assert_eq!(infer_gc_unit(&dev(64), c, 8192, 1).unwrap_err().exit_code(), 2, "{c:?}");
    }
}

#[test]
fn op_split_checks_its_inputs() {
    let base = small(&[]);
    for f in [0.5, 0.3, 1.1] {
        assert_eq!(op_split_sweep(&base, &[f]).unwrap_err().exit_code(), 2, "{f}");
    }
    let inplace = small(&[("mode", "inplace_dwb")]);
    assert!(op_split_sweep(&inplace, &[0.8]).is_err());
}

#[test]
fn op_split_trades_engine_space_for_device_space() {
    let pts = op_split_sweep(&small(&[("run_id", "s")]), &[0.7, 1.0]).unwrap();
    assert_eq!(pts[0].report.run_id, "s-op0.7");
    assert_eq!(pts[0].report.config.engine.usable_zones, Some(44));
    assert_eq!(pts[1].report.config.engine.usable_zones, Some(64));
    assert!(pts[0].db_waf > pts[1].db_waf, "{} {}", pts[0].db_waf, pts[1].db_waf);
    assert!(pts[0].ssd_waf < pts[1].ssd_waf, "{} {}", pts[0].ssd_waf, pts[1].ssd_waf);
    for p in &pts {
        assert_eq!(p.report.config.workload.page_count, 2048);
        assert!((p.total_waf - p.db_waf * p.ssd_waf).abs() < 1e-12);
    }
}
