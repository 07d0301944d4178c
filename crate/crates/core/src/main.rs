// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::io::{self, Write};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use zonewaf::expctl::{
    emit_report, infer_gc_unit, op_split_sweep, read_reports, run_experiment, ExpError, ExperimentConfig, ReportFormat, KEYS,
};

fn kebab(key: &str) -> String {
    key.replace('_', "-")
}

/// One flag per config key. Experiments must state their seed.
fn key_args(cmd: Command, seed_required: bool) -> Command {
    KEYS.iter().fold(cmd, |cmd, &key| {
        let arg = Arg::new(key).long(kebab(key)).value_name("VALUE").help(format!("Overrides `{key}`"));
        cmd.arg(arg.required(seed_required && key == "seed"))
    })
}

fn output_args(cmd: Command) -> Command {
    cmd.arg(Arg::new("json").long("json").value_name("PATH").help("Write the JSON report here"))
        .arg(Arg::new("csv").long("csv").value_name("PATH").help("Write the CSV report here"))
}

fn cli() -> Command {
    let config = Arg::new("config").long("config").short('c').value_name("FILE").help("key = value config file");
    Command::new("zonewaf")
        .about("Write-amplification experiments on a simulated flash device")
        .subcommand_required(true)
        .subcommand(output_args(key_args(Command::new("run").about("Run one experiment").arg(config.clone()), true)))
        .subcommand(
            key_args(Command::new("op-split").about("Sweep the engine/device space split").arg(config.clone()), true)
                .arg(
                    Arg::new("fractions")
                        .long("fractions")
                        .value_delimiter(',')
                        .default_value("0.6,0.7,0.8,0.9,1.0")
                        .help("Engine space as fractions of the device"),
                )
                .arg(Arg::new("json").long("json").value_name("PATH").help("Write every run report here")),
        )
        .subcommand(
            key_args(Command::new("infer-gc-unit").about("Find the device GC unit from outside").arg(config), false)
                .arg(
                    Arg::new("candidates")
                        .long("candidates")
                        .value_delimiter(',')
                        .required(true)
                        .help("Ascending zone sizes in pages"),
                )
                .arg(Arg::new("ceiling").long("ceiling").help("Answer when no candidate passes (default: capacity)")),
        )
        .subcommand(
            Command::new("report")
                .about("Convert JSON reports to CSV or merge them")
                .arg(Arg::new("inputs").required(true).action(ArgAction::Append).help("JSON report files"))
                .arg(Arg::new("format").long("format").default_value("csv").value_parser(["csv", "json"])),
        )
}

fn load_config(m: &ArgMatches) -> Result<ExperimentConfig, ExpError> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| ExpError::Config(format!("{path}: {e}")))?;
            ExperimentConfig::parse_text(&text).map_err(|e| ExpError::Config(format!("{path}: {e}")))?
        }
        None => ExperimentConfig::default(),
    };
    for &key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v).map_err(|e| ExpError::Config(format!("--{}: {e}", kebab(key))))?;
        }
    }
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(m: &ArgMatches, id: &str) -> Result<Vec<T>, ExpError> {
    m.get_many::<String>(id)
        .into_iter()
        .flatten()
        .map(|s| s.trim().parse().map_err(|_| ExpError::Config(format!("bad --{id} entry `{s}`"))))
        .collect()
}

fn write_file(path: &str, f: impl FnOnce(&mut fs::File) -> Result<(), ExpError>) -> Result<(), ExpError> {
    let mut file = fs::File::create(path).map_err(|e| ExpError::Io(format!("{path}: {e}")))?;
    f(&mut file)
}

fn run(m: &ArgMatches) -> Result<(), ExpError> {
    let cfg = load_config(m)?;
    let report = run_experiment(&cfg)?;
    let reports = [report];
    if let Some(p) = m.get_one::<String>("json") {
        write_file(p, |f| emit_report(&reports, ReportFormat::Json, f))?;
    }
    if let Some(p) = m.get_one::<String>("csv") {
        write_file(p, |f| emit_report(&reports, ReportFormat::Csv, f))?;
    }
    emit_report(&reports, ReportFormat::Csv, io::stdout().lock())
}

fn op_split(m: &ArgMatches) -> Result<(), ExpError> {
    let cfg = load_config(m)?;
    let fractions: Vec<f64> = parse_list(m, "fractions")?;
    let points = op_split_sweep(&cfg, &fractions)?;
    if let Some(p) = m.get_one::<String>("json") {
        let reports: Vec<_> = points.iter().map(|p| p.report.clone()).collect();
        write_file(p, |f| emit_report(&reports, ReportFormat::Json, f))?;
    }
    let mut out = io::stdout().lock();
    writeln!(out, "fraction,db_waf,ssd_waf,total_waf")?;
    for p in &points {
        writeln!(out, "{},{},{},{}", p.fraction, p.db_waf, p.ssd_waf, p.total_waf)?;
    }
    Ok(())
}

fn infer(m: &ArgMatches) -> Result<(), ExpError> {
    let cfg = load_config(m)?;
    let candidates: Vec<u32> = parse_list(m, "candidates")?;
    let ceiling = match m.get_one::<String>("ceiling") {
        Some(c) => c.parse().map_err(|_| ExpError::Config(format!("bad --ceiling `{c}`")))?,
        None => cfg.device.capacity_pages,
    };
    let r = infer_gc_unit(&cfg.device, &candidates, ceiling, cfg.workload.seed)?;
    let mut out = io::stdout().lock();
    for (z, waf) in &r.measurements {
        writeln!(out, "zone_pages={z} ssd_waf={waf}")?;
    }
    if r.found {
        writeln!(out, "gc_unit_pages={}", r.unit_pages)?;
    } else {
        writeln!(out, "gc_unit_pages={} not_found", r.unit_pages)?;
    }
    Ok(())
}

fn report(m: &ArgMatches) -> Result<(), ExpError> {
    let mut all = Vec::new();
    for path in m.get_many::<String>("inputs").into_iter().flatten() {
        let text = fs::read_to_string(path)?;
        all.extend(read_reports(&text).map_err(|e| ExpError::Config(format!("{path}: {e}")))?);
    }
    let format = m.get_one::<String>("format").unwrap().parse().map_err(ExpError::Config)?;
    emit_report(&all, format, io::stdout().lock())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let res = match matches.subcommand() {
        Some(("run", m)) => run(m),
        Some(("op-split", m)) => op_split(m),
        Some(("infer-gc-unit", m)) => infer(m),
        Some(("report", m)) => report(m),
        _ => unreachable!("subcommand required"),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zonewaf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
