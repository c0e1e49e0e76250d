use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use fkneq_core::config::RunConfig;
use fkneq_core::exec::configure_threads;
use fkneq_core::pipeline;
use fkneq_core::Error;

/// Thread count override, read before any parallel work starts.
const THREADS_VAR: &str = "FKNEQ_THREADS";

#[derive(Parser, Debug)]
#[command(name = "fkneq", author, version, about = "Driven Falicov-Kimball model: transient nonequilibrium DMFT and its long-time extension")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Configuration sources. Later ones win: file, shortcuts, `--set`.
#[derive(Args, Debug)]
struct Overrides {
    /// TOML configuration file; defaults are used for anything missing.
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Any configuration entry, e.g. `--set bridge.t_patch=12` or `--set contour.dt=[0.1]`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (`output.dir`).
    #[arg(short, long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Interaction strength (`model.u`).
    #[arg(long, global = true)]
    u: Option<f64>,

    /// Field strength (`field.e`).
    #[arg(long, global = true)]
    e: Option<f64>,

    /// Initial temperature (`thermal.temperature`).
    #[arg(long, global = true)]
    temperature: Option<f64>,

    /// Final real time (`contour.t_max`).
    #[arg(long, global = true)]
    t_max: Option<f64>,

    /// Time steps, comma separated (`contour.dt`).
    #[arg(long, global = true, value_delimiter = ',')]
    dt: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibrium self-energy and DOS panels plus the energy calibration.
    Equilibrium,
    /// Transient runs for every time step, extrapolation, observables and Wigner tables.
    Transient,
    /// Fit, extend and re-solve the finest stored run to `bridge.t_max_new`.
    Bridge,
    /// Particle-hole, half-relation, thermalization and fluctuation-dissipation checks on stored runs.
    Analyze,
    /// Invariant suite on stored kernels.
    Verify,
    /// Print the configuration in effect (the defaults when no overrides are given).
    Config,
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), Error> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in '{key}'")))?;
    let mut t = root;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{p}' in '{key}' is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(text: &str) -> toml::Value {
    // Bare strings are accepted as well as TOML literals.
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn load_config(o: &Overrides) -> Result<RunConfig, Error> {
    let text = match &o.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut root: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(d) = &o.out {
        set_path(&mut root, "output.dir", toml::Value::String(d.display().to_string()))?;
    }
    for (key, v) in [("model.u", o.u), ("field.e", o.e), ("thermal.temperature", o.temperature), ("contour.t_max", o.t_max)] {
        if let Some(v) = v {
            set_path(&mut root, key, toml::Value::Float(v))?;
        }
    }
    if let Some(dts) = &o.dt {
        set_path(&mut root, "contour.dt", toml::Value::Array(dts.iter().map(|&d| toml::Value::Float(d)).collect()))?;
    }
    for s in &o.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
        set_path(&mut root, k.trim(), parse_value(v.trim()))?;
    }
    let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
    RunConfig::from_toml(&text)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Process exit status of an error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NotConverged { .. } => 3,
        Error::Patch(_) | Error::Fit(_) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    let cfg = load_config(&cli.overrides)?;
    match cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml()?);
        }
        Command::Equilibrium => {
            let panels = pipeline::cmd_equilibrium(&cfg)?;
            if panels.is_empty() {
                info!("empty U list, nothing to do");
            }
            print_json(&panels)?;
        }
        Command::Transient => {
            let out = pipeline::cmd_transient(&cfg, |dt, st| info!("dt = {dt} iteration {} residual {:.3e}", st.iteration, st.residual))?;
            print_json(&out.records)?;
        }
        Command::Bridge => {
            let out = pipeline::cmd_bridge(&cfg)?;
            print_json(&out.report)?;
        }
        Command::Analyze => {
            print_json(&pipeline::cmd_analyze(&cfg)?)?;
        }
        Command::Verify => {
            let runs = pipeline::cmd_verify(&cfg)?;
            let mut ok = true;
            for (dt, checks) in &runs {
                for c in checks {
                    let status = if c.pass() { "PASS" } else { "FAIL" };
                    println!("{status} dt={dt} {} = {:.3e} (limit {:.1e})", c.name, c.value, c.limit);
                    ok &= c.pass();
                }
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var(THREADS_VAR).ok().and_then(|v| v.parse::<usize>().ok()) {
        configure_threads(n);
    }
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_creates_sections_and_parses_literals() {
        let mut t = toml::Table::new();
        set_path(&mut t, "bridge.t_patch", parse_value("12.0")).unwrap();
        set_path(&mut t, "output.dir", parse_value("runs/a")).unwrap();
        assert_eq!(t["bridge"]["t_patch"].as_float(), Some(12.0));
        assert_eq!(t["output"]["dir"].as_str(), Some("runs/a"));
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::Config(String::new())),
            exit_code(&Error::NotConverged { iterations: 1, last: 1.0, history: vec![] }),
            exit_code(&Error::Patch(String::new())),
        ];
        assert_eq!(codes, [2, 3, 4]);
    }
}
