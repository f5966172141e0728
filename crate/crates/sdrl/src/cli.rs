//! The `sdrl` command line.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for bad models, configs
//! or arguments.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use sdrl_core::agents::{cem_train, CemConfig, Policy};
use sdrl_core::{
    CompiledModel, EngineError, Env, Injection, Integrator, ModelIr, SimState, VariableId,
};

use crate::config::load_config;
use crate::format::{fmt_g17, trajectory_csv};
use crate::manifest::{sha256_hex, write_atomic, RunManifest};
use crate::{load_model, model_to_json, play_episode, AgentChoice, Error};

#[derive(Debug, Parser)]
#[command(
    name = "sdrl",
    version,
    about = "Stock-and-flow models as RL environments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a model to its stop time without interventions.
    Simulate {
        model: PathBuf,
        #[arg(long, default_value = "euler")]
        integrator: Integrator,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Initial override of a constant, `name=value`. Repeatable.
        #[arg(long = "set", value_name = "VAR=VALUE")]
        set: Vec<String>,
        /// Trajectory CSV path; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Show a model's variables, constant converters and evaluation order.
    Inspect {
        model: PathBuf,
        /// Print the model as IR JSON instead.
        #[arg(long)]
        json: bool,
    },
    /// Play one episode of an environment config.
    Episode {
        config: PathBuf,
        /// `noop`, `random`, or a policy JSON file.
        #[arg(long, default_value = "noop")]
        agent: String,
        /// Seed of the random agent; defaults to the config seed.
        #[arg(long)]
        agent_seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        episode: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Train a linear policy with the cross-entropy method.
    Train {
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 16)]
        pop: usize,
        #[arg(long, default_value_t = 0.25)]
        elite: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        init_std: Option<f64>,
        #[arg(long)]
        extra_std: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Per-generation JSON lines; defaults to `<out>.report.jsonl`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_set(s: &str) -> Result<Injection, Error> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set `{s}`: expected VAR=VALUE")))?;
    let var = VariableId::new(name)
        .ok_or_else(|| Error::Config(format!("--set `{s}`: empty variable name")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("--set `{s}`: `{value}` is not a number")))?;
    Ok(Injection::new(var, value))
}

fn engine_init_error(e: EngineError) -> Error {
    match e {
        EngineError::NonFinite { .. } => Error::Runtime(e.to_string()),
        other => Error::Config(other.to_string()),
    }
}

fn write_output(path: &Path, bytes: &[u8], manifest: &mut RunManifest) -> Result<(), Error> {
    write_atomic(path, bytes).map_err(|e| Error::io(path, e))?;
    manifest.record(path, bytes);
    Ok(())
}

fn finish_manifest(mut manifest: RunManifest, started: Instant) -> Result<(), Error> {
    let Some(first) = manifest.outputs.first().map(|o| o.path.clone()) else {
        return Ok(());
    };
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    let path = RunManifest::path_for(&first);
    write_atomic(&path, &manifest.to_json()).map_err(|e| Error::io(&path, e))
}

/// Runs `model` to its stop time with initial overrides.
pub fn simulate(
    model: &ModelIr,
    integrator: Integrator,
    seed: u64,
    set: &[Injection],
) -> Result<SimState, Error> {
    let compiled = CompiledModel::new(model).map_err(engine_init_error)?;
    let mut state =
        SimState::init(Arc::new(compiled), seed, integrator, set).map_err(engine_init_error)?;
    state
        .run_to_end()
        .map_err(|e| Error::Runtime(e.to_string()))?;
    Ok(state)
}

fn inspect_text(model: &ModelIr) -> String {
    let mut s = String::new();
    let specs = model.specs();
    s.push_str(&format!(
        "time: {} to {} step {}{}\n",
        specs.start,
        specs.stop,
        specs.dt,
        if specs.time_units.is_empty() {
            String::new()
        } else {
            format!(" {}", specs.time_units)
        }
    ));
    s.push_str("variables:\n");
    for v in model.variables().values() {
        let kind = format!("{:?}", v.kind).to_lowercase();
        let mut line = format!("  {:<32} {:<10}", v.id.as_str(), kind);
        if let Some(u) = &v.units {
            line.push_str(&format!(" units={u}"));
        }
        if let Some(l) = &v.limits {
            line.push_str(&format!(" limits=[{}, {}]", l.min, l.max));
        }
        if let Some(x) = v.value {
            line.push_str(&format!(" value={x}"));
        }
        if v.non_negative {
            line.push_str(" non_negative");
        }
        s.push_str(line.trim_end());
        s.push('\n');
    }
    let constants = model.constant_converters();
    s.push_str(&format!("constant converters ({}):\n", constants.len()));
    for c in constants {
        s.push_str(&format!("  {c}\n"));
    }
    s.push_str("dependency order:\n");
    for v in model.dependency_order() {
        s.push_str(&format!("  {v}\n"));
    }
    if !model.tables().is_empty() {
        s.push_str("graphical functions:\n");
        for (id, t) in model.tables() {
            s.push_str(&format!("  {id} ({} points)\n", t.x_points.len()));
        }
    }
    s
}

fn load_agent(spec: &str, seed: u64) -> Result<AgentChoice, Error> {
    Ok(match spec {
        "noop" => AgentChoice::Noop,
        "random" => AgentChoice::Random { seed },
        path => {
            let p = Path::new(path);
            let bytes =
                std::fs::read(p).map_err(|e| Error::Config(format!("agent {path}: {e}")))?;
            let policy: Policy = serde_json::from_slice(&bytes)
                .map_err(|e| Error::Config(format!("policy {path}: {e}")))?;
            AgentChoice::Policy(Box::new(policy))
        }
    })
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), Error> {
    let started = Instant::now();
    let out_err = |e: std::io::Error| Error::Runtime(format!("stdout: {e}"));
    match cli.command {
        Command::Simulate {
            model,
            integrator,
            seed,
            set,
            csv,
        } => {
            let bytes = std::fs::read(&model).map_err(|e| Error::io(&model, e))?;
            let ir = crate::load_model_bytes(&model, &bytes)?;
            let set = set
                .iter()
                .map(|s| parse_set(s))
                .collect::<Result<Vec<_>, _>>()?;
            let state = simulate(&ir, integrator, seed, &set)?;
            let data = trajectory_csv(&state);
            match csv {
                Some(path) => {
                    let mut args = vec![
                        format!("integrator={integrator:?}").to_lowercase(),
                        format!("seed={seed}"),
                    ];
                    args.extend(
                        set.iter()
                            .map(|i| format!("set {}={}", i.variable, fmt_g17(i.value))),
                    );
                    let mut m = RunManifest {
                        command: "simulate".into(),
                        args,
                        config_sha256: None,
                        model_sha256: sha256_hex(&bytes),
                        seeds: vec![seed],
                        outputs: vec![],
                        wall_clock_s: 0.0,
                    };
                    write_output(&path, &data, &mut m)?;
                    finish_manifest(m, started)?;
                }
                None => stdout.write_all(&data).map_err(out_err)?,
            }
        }
        Command::Inspect { model, json } => {
            let ir = load_model(&model)?;
            let text = if json {
                model_to_json(&ir)
            } else {
                inspect_text(&ir).into_bytes()
            };
            stdout.write_all(&text).map_err(out_err)?;
        }
        Command::Episode {
            config,
            agent,
            agent_seed,
            episode,
            csv,
            summary,
        } => {
            let loaded = load_config(&config)?;
            let base_seed = loaded.config.seed;
            let mut env = Env::new(loaded.config)?;
            let agent_seed = agent_seed.unwrap_or(base_seed);
            let choice = load_agent(&agent, agent_seed)?;
            let s = play_episode(&mut env, &choice, episode)?;
            let mut m = RunManifest {
                command: "episode".into(),
                args: vec![
                    format!("agent={agent}"),
                    format!("agent_seed={agent_seed}"),
                    format!("episode={episode}"),
                ],
                config_sha256: Some(sha256_hex(&loaded.config_bytes)),
                model_sha256: sha256_hex(&loaded.model_bytes),
                seeds: vec![s.seed, agent_seed],
                outputs: vec![],
                wall_clock_s: 0.0,
            };
            if let Some(path) = &csv {
                let data = trajectory_csv(env.state().expect("episode ran"));
                write_output(path, &data, &mut m)?;
            }
            if let Some(path) = &summary {
                let mut data = serde_json::to_vec_pretty(&s).expect("summary serializes");
                data.push(b'\n');
                write_output(path, &data, &mut m)?;
            }
            writeln!(
                stdout,
                "agent {} episode {} seed {} steps {} return {}",
                s.agent,
                s.episode,
                s.seed,
                s.steps,
                fmt_g17(s.total_return)
            )
            .map_err(out_err)?;
            finish_manifest(m, started)?;
        }
        Command::Train {
            config,
            iters,
            pop,
            elite,
            seed,
            init_std,
            extra_std,
            out,
            report,
        } => {
            let loaded = load_config(&config)?;
            let mut env = Env::new(loaded.config)?;
            if !env.has_reward() {
                return Err(Error::Config("config has no reward to train on".into()));
            }
            let mut cfg = CemConfig::new(iters, pop, elite, seed);
            if let Some(s) = init_std {
                cfg.init_std = s;
            }
            if let Some(s) = extra_std {
                cfg.extra_std = s;
            }
            let (policy, rep) = cem_train(&mut env, &cfg)?;
            let mut m = RunManifest {
                command: "train".into(),
                args: vec![
                    format!("iters={iters}"),
                    format!("pop={pop}"),
                    format!("elite={}", fmt_g17(elite)),
                    format!("init_std={}", fmt_g17(cfg.init_std)),
                    format!("extra_std={}", fmt_g17(cfg.extra_std)),
                ],
                config_sha256: Some(sha256_hex(&loaded.config_bytes)),
                model_sha256: sha256_hex(&loaded.model_bytes),
                seeds: vec![seed, rep.env_seed],
                outputs: vec![],
                wall_clock_s: 0.0,
            };
            let mut data = serde_json::to_vec_pretty(&policy).expect("policy serializes");
            data.push(b'\n');
            write_output(&out, &data, &mut m)?;
            let report_path = report.unwrap_or_else(|| {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".report.jsonl");
                out.with_file_name(name)
            });
            let mut lines = Vec::new();
            for g in &rep.generations {
                serde_json::to_writer(&mut lines, g).expect("record serializes");
                lines.push(b'\n');
            }
            write_output(&report_path, &lines, &mut m)?;
            match rep.best_return {
                Some(r) => writeln!(stdout, "best return {} ({})", fmt_g17(r), rep.best_snapshot),
                None => writeln!(stdout, "no generations run; wrote the initial policy"),
            }
            .map_err(out_err)?;
            finish_manifest(m, started)?;
        }
    }
    Ok(())
}
