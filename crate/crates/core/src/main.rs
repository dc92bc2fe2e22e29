//! Command-line runner for the link simulator.
//!
//! Subcommands:
//! - `run --config <path.json> --out <dir> [--seed N] [--preset lab|field] [--scenario <name>]`
//! - `validate-screens [--out <dir>] [--seed N] [--preset lab|field]`
//! - `report <dir>`: print a run's metrics.json as a table
//!
//! Exit code 0 on success; on failure a machine-readable error JSON is
//! printed to stderr and the exit code is nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use serde_json::{json, Value};

use pairlink::error::Error;
use pairlink::scenarios::{run_scenario, Preset, ScenarioConfig, ScenarioKind};

const USAGE: &str = "\
pairlink - entangled-photon link simulator through emulated turbulence

USAGE:
  pairlink run --config <path.json> --out <dir> [--seed N] [--preset lab|field] [--scenario <name>]
  pairlink run --scenario <name> --out <dir> [--seed N] [--preset lab|field]
  pairlink validate-screens [--out <dir>] [--seed N] [--preset lab|field]
  pairlink report <dir>

SCENARIOS:
  screen-validate   ensemble structure-function validation
  speckle           paired pump / two-photon speckle through one screen
  optimize-static   partitioning optimization against a static screen
  optimize-dynamic  optimization against a drifting screen, then frozen
  higher-mode       pi-step overlay on the optimized state

The config file is a JSON ScenarioConfig; omitted fields take preset
defaults. --seed and --scenario override the file.
";

fn parse_kind(name: &str) -> Result<ScenarioKind, Error> {
    match name {
        "screen-validate" => Ok(ScenarioKind::ScreenValidate),
        "speckle" => Ok(ScenarioKind::Speckle),
        "optimize-static" => Ok(ScenarioKind::OptimizeStatic),
        "optimize-dynamic" => Ok(ScenarioKind::OptimizeDynamic),
        "higher-mode" => Ok(ScenarioKind::HigherMode),
        other => Err(Error::Config(format!("unknown scenario '{other}'"))),
    }
}

fn parse_preset(name: &str) -> Result<Preset, Error> {
    match name {
        "lab" => Ok(Preset::Lab),
        "field" => Ok(Preset::Field),
        other => Err(Error::Config(format!("unknown preset '{other}' (expected lab or field)"))),
    }
}

struct RunArgs {
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    preset: Preset,
    scenario: Option<ScenarioKind>,
}

fn parse_run_args(args: &[String], default_scenario: Option<ScenarioKind>) -> Result<RunArgs, Error> {
    let mut parsed = RunArgs {
        config: None,
        out: PathBuf::from("out"),
        seed: None,
        preset: Preset::Lab,
        scenario: default_scenario,
    };
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut take = |name: &str| -> Result<String, Error> {
            it.next()
                .cloned()
                .ok_or_else(|| Error::Config(format!("{name} expects a value")))
        };
        match arg.as_str() {
            "--config" => parsed.config = Some(PathBuf::from(take("--config")?)),
            "--out" => parsed.out = PathBuf::from(take("--out")?),
            "--seed" => {
                let v = take("--seed")?;
                parsed.seed = Some(
                    v.parse()
                        .map_err(|_| Error::Config(format!("invalid seed '{v}'")))?,
                );
            }
            "--preset" => parsed.preset = parse_preset(&take("--preset")?)?,
            "--scenario" => parsed.scenario = Some(parse_kind(&take("--scenario")?)?),
            other => return Err(Error::Config(format!("unknown argument '{other}'"))),
        }
    }
    Ok(parsed)
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)?
        }
        None => {
            let kind = args.scenario.ok_or_else(|| {
                Error::Config("provide --config or --scenario".to_string())
            })?;
            ScenarioConfig::preset(kind, args.preset)
        }
    };
    if let Some(kind) = args.scenario {
        cfg.scenario = kind;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_run(args: &[String], default_scenario: Option<ScenarioKind>) -> Result<Value, Error> {
    let parsed = parse_run_args(args, default_scenario)?;
    let cfg = load_config(&parsed)?;
    let metrics = run_scenario(&cfg, &parsed.out)?;
    Ok(json!({
        "scenario": cfg.scenario.name(),
        "out": parsed.out.display().to_string(),
        "metrics": metrics,
    }))
}

fn flatten(prefix: &str, value: &Value, rows: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, rows);
            }
        }
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

fn cmd_report(args: &[String]) -> Result<Value, Error> {
    let dir = args
        .first()
        .ok_or_else(|| Error::Config("report expects a run directory".to_string()))?;
    let path = PathBuf::from(dir).join("metrics.json");
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let mut rows = Vec::new();
    flatten("", &metrics, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in &rows {
        println!("{k:width$}  {v}");
    }
    Ok(metrics)
}

fn dispatch() -> Result<(), Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.first().map(String::as_str) {
        Some("run") => {
            let report = cmd_run(&args[1..], None)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Some("validate-screens") => {
            let report = cmd_run(&args[1..], Some(ScenarioKind::ScreenValidate))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Some("report") => {
            cmd_report(&args[1..])?;
            Ok(())
        }
        Some("--help") | Some("-h") | Some("help") | None => {
            print!("{USAGE}");
            Ok(())
        }
        Some(other) => Err(Error::Config(format!("unknown subcommand '{other}'"))),
    }
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report = json!({ "error": { "kind": err.kind(), "message": err.to_string() } });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
