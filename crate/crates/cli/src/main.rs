//! Single entry-point binary for the contracting-model pipelines:
//! `facelift`, `first-best`, `second-best`, `simulate` and `table1`.
//!
//! Configuration comes from an optional JSON file (`--config`) overlaid with
//! dot-path overrides (`--set model.m=0.1`), is strictly validated (unknown
//! keys rejected), and is embedded in every emitted JSON summary. Outputs are
//! deterministic byte-for-byte for a fixed config and seed.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use parachute_core::facelift::{Facelift, UtilityKind};
use parachute_core::firstbest::FirstBest;
use parachute_core::model::{ModelParams, Regime};
use parachute_core::montecarlo::{aggregates, promise_keeping, simulate, SimConfig};
use parachute_core::secondbest::{max_value, solve, stopping_region, SolveMode, SolverConfig};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "parachute",
    version,
    about = "Principal-agent contracting with accident risk"
)]
struct Cli {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dot-path config overrides, e.g. --set model.m=0.1
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Face-lifted utility Fbar with thresholds; CSV columns y, F, Fbar, w0, regime.
    Facelift {
        /// Evaluate with the experimental shifted utility F(y) = -y^g - g*y.
        #[arg(long)]
        shifted_utility: bool,
    },
    /// First-best value function and its scalar report.
    FirstBest,
    /// Second-best obstacle HJB solve; CSV of value, barrier and controls.
    SecondBest,
    /// Monte Carlo simulation of optimal contracts under the solved policy.
    Simulate,
    /// Table of second-best maxima and relative losses across accident sizes.
    Table1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    model: ModelParams,
    solver: SolverConfig,
    sim: SimConfig,
    output_dir: PathBuf,
    emit: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            solver: SolverConfig::default(),
            sim: SimConfig::default(),
            output_dir: PathBuf::from("out"),
            emit: vec!["csv".into(), "json".into()],
        }
    }
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Numeric(String),
}

impl From<parachute_core::Error> for CliError {
    fn from(e: parachute_core::Error) -> Self {
        match e {
            parachute_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, msg, code) = match err {
                CliError::Config(m) => ("config", m, 2),
                CliError::Numeric(m) => ("numeric", m, 3),
            };
            let payload = json!({ "error": { "kind": kind, "message": msg } });
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli).map_err(|e| CliError::Config(format!("{e:#}")))?;
    config.model.validate()?;
    config.solver.validate()?;
    config.sim.validate()?;
    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir: {e}")))?;
    match cli.cmd {
        Cmd::Facelift { shifted_utility } => cmd_facelift(&config, shifted_utility),
        Cmd::FirstBest => cmd_first_best(&config),
        Cmd::SecondBest => cmd_second_best(&config),
        Cmd::Simulate => cmd_simulate(&config),
        Cmd::Table1 => cmd_table1(&config),
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let overlay: Value =
            serde_json::from_str(&text).with_context(|| "config file is not valid JSON")?;
        merge(&mut value, overlay);
    }
    for set in &cli.sets {
        let (path, raw) = set
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {set:?}"))?;
        let parsed: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        if path == "model.delta" {
            // delta = r/rho is derived; setting it rescales r at the current rho.
            let delta = parsed
                .as_f64()
                .ok_or_else(|| anyhow!("model.delta must be a number, got {raw:?}"))?;
            let rho = value["model"]["rho"]
                .as_f64()
                .ok_or_else(|| anyhow!("model.rho must be set before model.delta"))?;
            set_path(&mut value, "model.r", json!(delta * rho))?;
            continue;
        }
        set_path(&mut value, path, parsed)?;
    }
    let mut config: RunConfig =
        serde_json::from_value(value).with_context(|| "invalid configuration")?;
    if let Ok(dir) = std::env::var("PARACHUTE_OUTPUT_DIR") {
        config.output_dir = PathBuf::from(dir);
    }
    Ok(config)
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, path: &str, new: Value) -> anyhow::Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| anyhow!("config path {path:?} does not address an object"))?;
        if i + 1 == parts.len() {
            map.insert((*part).to_string(), new);
            return Ok(());
        }
        cursor = map
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(anyhow!("empty --set path"))
}

/// 17-significant-digit float formatting for exact CSV round trips.
fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        let x = if x == 0.0 { 0.0 } else { x }; // normalise -0.0
        format!("{x:.16e}")
    }
}

fn write_output(config: &RunConfig, name: &str, contents: &str) -> Result<(), CliError> {
    let path = config.output_dir.join(name);
    let mut file = fs::File::create(&path)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| CliError::Numeric(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn emit_csv(config: &RunConfig) -> bool {
    config.emit.iter().any(|e| e == "csv")
}

fn emit_json(config: &RunConfig) -> bool {
    config.emit.iter().any(|e| e == "json")
}

fn finish(config: &RunConfig, name: &str, mut summary: Value) -> Result<(), CliError> {
    summary["schema_version"] = json!(SCHEMA_VERSION);
    summary["config"] = serde_json::to_value(config).expect("config serialises");
    let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
    if emit_json(config) {
        write_output(config, &format!("{name}.json"), &text)?;
    }
    println!("{text}");
    Ok(())
}

fn regime_tag(regime: &Regime) -> &'static str {
    match regime {
        Regime::EquallyImpatient => "equally-impatient",
        Regime::ImpatientAgentSmallM => "impatient-agent-small-m",
        Regime::ImpatientAgentLargeM { .. } => "impatient-agent-large-m",
        Regime::DegeneratePrincipal { .. } => "degenerate-principal",
        Regime::ImpatientPrincipalNondegenerate { .. } => "impatient-principal-nondegenerate",
    }
}

fn cmd_facelift(config: &RunConfig, shifted: bool) -> Result<(), CliError> {
    let kind = if shifted {
        UtilityKind::ShiftedPower
    } else {
        UtilityKind::Power
    };
    let lift = Facelift::with_utility(&config.model, kind)?;
    let tag = regime_tag(lift.regime());
    let n = config.solver.n_nodes;
    let y_max = config.solver.y_max;
    let w0_defined = config.model.gamma * config.model.delta() > 1.0 && !shifted;
    if emit_csv(config) {
        let mut csv = String::from("y,F,Fbar,w0,regime\n");
        for i in 0..n {
            let y = y_max * i as f64 / (n - 1) as f64;
            let f = if shifted {
                -y.powf(config.model.gamma) - config.model.gamma * y
            } else {
                config.model.f_eval(y)?
            };
            let fbar = lift.eval(y)?;
            let w0 = if w0_defined { lift.w0(y)? } else { f64::NAN };
            csv.push_str(&format!(
                "{},{},{},{},{tag}\n",
                fmt(y),
                fmt(f),
                fmt(fbar),
                fmt(w0)
            ));
        }
        write_output(config, "facelift.csv", &csv)?;
    }
    let summary = json!({
        "regime": tag,
        "experimental_shifted_utility": shifted,
        "thresholds": {
            "y_bar": lift.y_bar(),
            "y_hat": lift.y_hat(),
            "y_tilde": lift.y_tilde(),
            "p_star": lift.p_star(),
        },
        "contact_threshold": finite_or_null(lift.contact_threshold()),
    });
    finish(config, "facelift", summary)
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn cmd_first_best(config: &RunConfig) -> Result<(), CliError> {
    let fb = FirstBest::new(&config.model)?;
    let n = config.solver.n_nodes;
    let y_max = config.solver.y_max;
    if emit_csv(config) {
        let mut csv = String::from("y,vFB,F,Fbar\n");
        for i in 0..n {
            let y = y_max * i as f64 / (n - 1) as f64;
            csv.push_str(&format!(
                "{},{},{},{}\n",
                fmt(y),
                fmt(fb.eval(y)?),
                fmt(config.model.f_eval(y)?),
                fmt(fb.facelift().eval(y)?)
            ));
        }
        write_output(config, "first_best.csv", &csv)?;
    }
    let summary = json!({
        "regime": regime_tag(fb.regime()),
        "report": fb.report(),
    });
    finish(config, "first_best", summary)
}

fn cmd_second_best(config: &RunConfig) -> Result<(), CliError> {
    let sol = solve(&config.model, &config.solver)?;
    let (y_argmax, v_max) = max_value(&sol.value);
    let (y_stop, persistent) = stopping_region(&sol.value, &sol.barrier);
    if emit_csv(config) {
        let mut csv = String::from("y,v,F,Fbar,contact,a,b,z,U,eta\n");
        for i in 0..sol.value.ys.len() {
            let y = sol.value.ys[i];
            let p = &sol.policy.0[i];
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                fmt(y),
                fmt(sol.value.v[i]),
                fmt(config.model.f_eval(y)?),
                fmt(sol.barrier[i]),
                u8::from(sol.value.contact[i]),
                fmt(p.a),
                fmt(p.b),
                fmt(p.z),
                fmt(p.u),
                fmt(p.eta)
            ));
        }
        write_output(config, "second_best.csv", &csv)?;
    }
    let summary = json!({
        "mode": sol.config.mode,
        "v_max": v_max,
        "y_argmax": y_argmax,
        "y_stop": y_stop,
        "stop_persistent": persistent,
        "iters": sol.report.iters,
        "residual": sol.report.residual,
        "grid_extensions": sol.report.extensions,
    });
    finish(config, "second_best", summary)
}

fn cmd_simulate(config: &RunConfig) -> Result<(), CliError> {
    let sol = solve(&config.model, &config.solver)?;
    let batch = simulate(&sol, &config.model, &config.sim)?;
    let agg = aggregates(&batch);
    let (pk, pk_se) = promise_keeping(&batch);
    if emit_csv(config) {
        let mut csv = String::from("path,t,X,Y,a,b\n");
        for (idx, p) in batch.paths.iter().enumerate() {
            for k in 0..p.times.len() {
                csv.push_str(&format!(
                    "{idx},{},{},{},{},{}\n",
                    fmt(p.times[k]),
                    fmt(p.xs[k]),
                    fmt(p.ys[k]),
                    fmt(p.a[k]),
                    fmt(p.b[k])
                ));
            }
        }
        write_output(config, "paths.csv", &csv)?;
    }
    let summary = json!({
        "unstopped_fraction": agg.unstopped_fraction,
        "mean_X_tau": agg.mean_x_final,
        "mean_tau": agg.mean_tau,
        "mean_xi": agg.mean_xi,
        "mean_jumps": agg.mean_jumps,
        "n_errors": agg.n_errors,
        "promise_keeping": { "estimate": pk, "se": pk_se, "target": config.sim.y0 },
    });
    finish(config, "simulate", summary)
}

fn cmd_table1(config: &RunConfig) -> Result<(), CliError> {
    let free_cfg = SolverConfig {
        mode: SolveMode::AccidentFree,
        ..config.solver
    };
    let free = solve(&config.model, &free_cfg)?;
    let (y_free, v_free) = max_value(&free.value);
    let mut rows = vec![json!({
        "label": "accident-free",
        "m": Value::Null,
        "v_max": v_free,
        "y_argmax": y_free,
        "relative_loss": Value::Null,
    })];
    let mut csv = String::from("label,m,v_max,y_argmax,relative_loss\n");
    csv.push_str(&format!(
        "accident-free,,{},{},\n",
        fmt(v_free),
        fmt(y_free)
    ));
    let with_cfg = SolverConfig {
        mode: SolveMode::WithAccidents,
        ..config.solver
    };
    for m in [0.1, 0.2, 0.3] {
        let params = ModelParams {
            m,
            eps_m: config.model.eps_m.min(m),
            ..config.model
        };
        let sol = solve(&params, &with_cfg)?;
        let (y_argmax, v_max) = max_value(&sol.value);
        let loss = 1.0 - v_max / v_free;
        rows.push(json!({
            "label": format!("m={m}"),
            "m": m,
            "v_max": v_max,
            "y_argmax": y_argmax,
            "relative_loss": loss,
        }));
        csv.push_str(&format!(
            "m={m},{},{},{},{}\n",
            fmt(m),
            fmt(v_max),
            fmt(y_argmax),
            fmt(loss)
        ));
    }
    if emit_csv(config) {
        write_output(config, "table1.csv", &csv)?;
    }
    finish(config, "table1", json!({ "rows": rows }))
}
