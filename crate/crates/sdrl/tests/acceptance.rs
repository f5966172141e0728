//! Acceptance checks, one line per criterion.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use sdrl::cli::simulate;
use sdrl::config::load_config;
use sdrl::format::trajectory_csv;
use sdrl::{load_model, play_episode, AgentChoice};
use sdrl_core::agents::{cem_train, run_episode, Agent, CemConfig, NoopAgent, RandomAgent};
use sdrl_core::space::ActionDomain;
use sdrl_core::{
    Action, ActionSpec, ActionValue, CompiledModel, ComputedState, Direction, Env, FlatSpec,
    Integrator, ModelIr, RewardSpec, RewardTarget, SimSpecs, SimState, VariableId,
};

const DECAY_EXACT: f64 = 36.787944117144235;
const EULER_RATIO: (f64, f64) = (1.8, 2.2);
const RK4_RATIO: (f64, f64) = (12.0, 20.0);
const CONSERVATION_TOL: f64 = 1e-9;
const CONTINUOUS_REL_TOL: f64 = 1e-12;
const ALGEBRA_CASES: u32 = 1000;
const TELESCOPE_TOL: f64 = 1e-9;
const EPISODE_STEPS: usize = 1000;
// Set from the first calibration run (trained 92.0, untrained 67.1, noop
// 48.5 return on episode 0) and locked.
const LEARN_MARGIN: f64 = 10.0;
const CEM_ITERS: usize = 20;
const CEM_POP: usize = 24;
const CEM_ELITE: f64 = 0.25;
const CEM_SEED: u64 = 1;

type Outcome = Result<String, String>;
type RunOutputs = (Vec<u8>, Vec<Vec<u8>>, Option<serde_json::Value>);
type Criterion = (&'static str, fn() -> Outcome, Option<f64>);

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn model_path(name: &str) -> PathBuf {
    crate_dir().join("models").join(name)
}

fn config_path(name: &str) -> PathBuf {
    crate_dir().join("configs").join(name)
}

fn id(s: &str) -> VariableId {
    VariableId::new(s).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(elapsed: Duration, limit_s: f64, out: Outcome) -> Outcome {
    let t = elapsed.as_secs_f64();
    match out {
        Ok(d) if t < limit_s => Ok(format!("{d}; {t:.3}s < {limit_s}s")),
        Ok(d) => Err(format!("{d}; took {t:.3}s, limit {limit_s}s")),
        Err(d) => Err(format!("{d}; {t:.3}s")),
    }
}

fn final_value(m: &ModelIr, integrator: Integrator, var: &str) -> Result<f64, String> {
    let c = Arc::new(CompiledModel::new(m).map_err(err)?);
    let mut s = SimState::init(c, 0, integrator, &[]).map_err(err)?;
    s.run_to_end().map_err(err)?;
    s.value(var).ok_or_else(|| format!("no {var}"))
}

fn convergence() -> Outcome {
    let base = load_model(&model_path("decay.xmile")).map_err(err)?;
    let at = |dt: f64, integ| -> Result<f64, String> {
        let m = base.with_specs(SimSpecs::new(0.0, 10.0, dt)).map_err(err)?;
        Ok((final_value(&m, integ, "s")? - DECAY_EXACT).abs())
    };
    let euler = at(0.1, Integrator::Euler)? / at(0.05, Integrator::Euler)?;
    let rk4 = at(1.0, Integrator::Rk4)? / at(0.5, Integrator::Rk4)?;
    let ok = (EULER_RATIO.0..=EULER_RATIO.1).contains(&euler)
        && (RK4_RATIO.0..=RK4_RATIO.1).contains(&rk4);
    check(ok, format!("euler ratio {euler:.4}, rk4 ratio {rk4:.4}"))
}

fn conservation() -> Outcome {
    let m = load_model(&model_path("transfer.xmile")).map_err(err)?;
    let c = Arc::new(CompiledModel::new(&m).map_err(err)?);
    let (a, b) = (c.column_index("a").unwrap(), c.column_index("b").unwrap());
    let mut s = SimState::init(c, 0, Integrator::Euler, &[]).map_err(err)?;
    s.run_to_end().map_err(err)?;
    let total0 = s.history_row(0)[a] + s.history_row(0)[b];
    let worst = s
        .history_rows()
        .map(|r| (r[a] + r[b] - total0).abs())
        .fold(0.0, f64::max);
    let steps = s.history_len() - 1;
    check(
        steps == 1000 && worst <= CONSERVATION_TOL,
        format!("{steps} Euler steps, max |A+B drift| {worst:.3e}"),
    )
}

fn parity() -> Outcome {
    let mut lines = Vec::new();
    for (cfg, model) in [
        ("ev.json", "ev_surrogate.xmile"),
        ("bathtub.json", "bathtub.xmile"),
    ] {
        let loaded = load_config(&config_path(cfg)).map_err(err)?;
        let mut env = Env::new(loaded.config).map_err(err)?;
        play_episode(&mut env, &AgentChoice::Noop, 0).map_err(err)?;
        let episode = trajectory_csv(env.state().unwrap());
        let ir = load_model(&model_path(model)).map_err(err)?;
        let plain =
            trajectory_csv(&simulate(&ir, Integrator::Euler, env.seed_for(0), &[]).map_err(err)?);
        if episode != plain {
            return Err(format!("{cfg}: noop episode CSV differs from simulate"));
        }
        lines.push(format!("{cfg} {} bytes", plain.len()));
    }
    Ok(format!("bit-identical: {}", lines.join(", ")))
}

fn spec_strategy() -> impl Strategy<Value = ActionSpec> {
    prop_oneof![
        (-1e6..1e6f64, 1e-3..1e6f64).prop_map(|(min, w)| ActionSpec::continuous(
            id("c"),
            min,
            min + w
        )
        .unwrap()),
        (-1_000_000i64..1_000_000, 1i64..2_000_000).prop_map(|(min, w)| ActionSpec::discrete(
            id("d"),
            min as f64,
            (min + w) as f64
        )
        .unwrap()),
        prop::collection::btree_set(-100_000i64..100_000, 2..12).prop_map(|set| {
            ActionSpec::categorical(id("k"), set.into_iter().map(|c| c as f64 / 100.0).collect())
                .unwrap()
        }),
    ]
}

fn value_in(spec: &ActionSpec) -> BoxedStrategy<ActionValue> {
    match &spec.domain {
        ActionDomain::Continuous { min, max } => {
            (*min..=*max).prop_map(ActionValue::Continuous).boxed()
        }
        ActionDomain::Discrete { min, max } => {
            (*min..=*max).prop_map(ActionValue::Discrete).boxed()
        }
        ActionDomain::Categorical { categories } => (0..categories.len())
            .prop_map(ActionValue::Categorical)
            .boxed(),
    }
}

fn scale(spec: &ActionSpec) -> f64 {
    match &spec.domain {
        ActionDomain::Continuous { min, max } => max.abs().max(min.abs()).max(max - min),
        _ => 1.0,
    }
}

fn action_algebra() -> Outcome {
    let strategy = (prop::collection::vec(spec_strategy(), 1..10), any::<bool>()).prop_flat_map(
        |(specs, p)| {
            let values: Vec<_> = specs.iter().map(value_in).collect();
            (Just(FlatSpec::new(specs, p)), values)
        },
    );
    let mut runner = TestRunner::new(Config {
        cases: ALGEBRA_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |(space, action)| {
            let flat = space
                .flatten(&action)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = space
                .unflatten(&flat)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            for ((spec, a), b) in space.specs.iter().zip(&action).zip(&back) {
                match (a, b) {
                    (ActionValue::Continuous(x), ActionValue::Continuous(y)) => {
                        prop_assert!((x - y).abs() <= CONTINUOUS_REL_TOL * scale(spec));
                    }
                    _ => prop_assert_eq!(a, b),
                }
            }
            Ok(())
        })
        .map_err(|e| format!("property: {e}"))?;

    let price =
        ActionSpec::continuous(id("price_ec_without_taxes"), 20000.0, 100000.0).map_err(err)?;
    let vat = ActionSpec::categorical(id("vat"), vec![0.15, 0.3, 0.44, 0.5]).map_err(err)?;
    let mid = price
        .to_model_value(price.unflatten_one(0.0))
        .map_err(err)?;
    let lo = vat.to_model_value(vat.unflatten_one(-1.0)).map_err(err)?;
    let hi = vat.to_model_value(vat.unflatten_one(1.0)).map_err(err)?;
    check(
        mid == 60000.0 && lo == 0.15 && hi == 0.5,
        format!("{ALGEBRA_CASES} random spaces round-trip; price midpoint {mid}, vat endpoints {lo}/{hi}"),
    )
}

fn ev_env(reward: Option<RewardSpec>, initials: &[(&str, f64)]) -> Result<Env, String> {
    let mut loaded = load_config(&config_path("ev.json")).map_err(err)?;
    if let Some(r) = reward {
        loaded.config.reward = Some(r);
    }
    for (k, v) in initials {
        loaded.config.stock_initials.insert(id(k), *v);
    }
    Env::new(loaded.config).map_err(err)
}

fn ev_share() -> RewardTarget {
    RewardTarget::Computed(
        ComputedState::expression("ec_share", "ec_in_use / (ec_in_use + pc_in_use) * 100").unwrap(),
    )
}

fn share_of(env: &Env) -> f64 {
    let s = env.state().unwrap();
    let (ec, pc) = (s.value("ec_in_use").unwrap(), s.value("pc_in_use").unwrap());
    ec / (ec + pc) * 100.0
}

fn reward_contracts() -> Outcome {
    let mut env = ev_env(None, &[])?;
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut agent = RandomAgent::new(env.action_width(), seed);
        env.reset_episode(seed).map_err(err)?;
        let first = env.reward_baseline().unwrap();
        env.reset_episode(seed).map_err(err)?;
        let out = run_episode(&mut env, &mut agent, seed, None).map_err(err)?;
        worst = worst.max((out.total_return - (share_of(&env) - first)).abs());
    }

    let mut binarized = 0usize;
    for direction in [Direction::Increase, Direction::Decrease] {
        let mut env = ev_env(
            Some(RewardSpec::BinarizedDelta {
                target: ev_share(),
                direction,
            }),
            &[],
        )?;
        let mut agent = RandomAgent::new(env.action_width(), 3);
        let mut obs = env.reset().map_err(err)?;
        loop {
            let tr = env.step(&Action::Flat(agent.act(&obs))).map_err(err)?;
            if tr.reward != 0.0 && tr.reward != 1.0 {
                return Err(format!("binarized reward {}", tr.reward));
            }
            binarized += 1;
            obs = tr.observation;
            if tr.done {
                break;
            }
        }
    }

    let mut env = ev_env(None, &[("ec_in_use", 100000.0), ("pc_in_use", 300000.0)])?;
    env.reset().map_err(err)?;
    let share = env.reward_baseline().unwrap();
    check(
        worst <= TELESCOPE_TOL && share == 25.0,
        format!("telescoping error {worst:.3e}; {binarized} binarized rewards in {{0,1}}; share {share}"),
    )
}

fn episode_shape() -> Outcome {
    let mut env = ev_env(None, &[])?;
    let mut agent = NoopAgent::new(&env).map_err(err)?;
    let out = run_episode(&mut env, &mut agent, 0, None).map_err(err)?;
    let horizon = env.config().model.specs().stop - env.config().model.specs().start;
    check(
        out.steps == EPISODE_STEPS,
        format!(
            "horizon {horizon}, env step 0.1: {} env steps before done, expected {EPISODE_STEPS}",
            out.steps
        ),
    )
}

fn learnability() -> Outcome {
    let mut env = ev_env(None, &[])?;
    let mut noop = NoopAgent::new(&env).map_err(err)?;
    let noop_ret = run_episode(&mut env, &mut noop, 0, None)
        .map_err(err)?
        .total_return;
    let noop_share = share_of(&env);

    let (mut untrained, _) =
        cem_train(&mut env, &CemConfig::new(0, CEM_POP, CEM_ELITE, CEM_SEED)).map_err(err)?;
    let untrained_ret = run_episode(&mut env, &mut untrained, 0, None)
        .map_err(err)?
        .total_return;
    let untrained_share = share_of(&env);

    let (mut trained, report) = cem_train(
        &mut env,
        &CemConfig::new(CEM_ITERS, CEM_POP, CEM_ELITE, CEM_SEED),
    )
    .map_err(err)?;
    let trained_ret = run_episode(&mut env, &mut trained, 0, None)
        .map_err(err)?
        .total_return;
    let trained_share = share_of(&env);

    let ok = trained_ret >= noop_ret.max(untrained_ret) + LEARN_MARGIN
        && trained_share >= noop_share.max(untrained_share) + LEARN_MARGIN;
    check(
        ok,
        format!(
            "return trained {trained_ret:.2} / untrained {untrained_ret:.2} / noop {noop_ret:.2}; \
             final share {trained_share:.2}% / {untrained_share:.2}% / {noop_share:.2}%; \
             margin {LEARN_MARGIN}; best {}",
            report.best_snapshot
        ),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let bin = env!("CARGO_BIN_EXE_sdrl");
    let ev = config_path("ev.json");
    let runs: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        (
            "simulate",
            vec![
                "simulate".into(),
                model_path("ev_surrogate.xmile").display().to_string(),
                "--seed".into(),
                "9".into(),
                "--csv".into(),
                "sim.csv".into(),
            ],
            vec!["sim.csv"],
        ),
        (
            "inspect",
            vec![
                "inspect".into(),
                model_path("ev_surrogate.xmile").display().to_string(),
                "--json".into(),
            ],
            vec![],
        ),
        (
            "episode",
            vec![
                "episode".into(),
                ev.display().to_string(),
                "--agent".into(),
                "random".into(),
                "--csv".into(),
                "ep.csv".into(),
                "--summary".into(),
                "ep.json".into(),
            ],
            vec!["ep.csv", "ep.json"],
        ),
        (
            "train",
            vec![
                "train".into(),
                ev.display().to_string(),
                "--iters".into(),
                "3".into(),
                "--pop".into(),
                "8".into(),
                "--seed".into(),
                "4".into(),
                "--out".into(),
                "p.json".into(),
            ],
            vec!["p.json", "p.json.report.jsonl"],
        ),
    ];
    let manifest = |p: &Path| -> Result<serde_json::Value, String> {
        let mut v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(p).map_err(err)?).map_err(err)?;
        v.as_object_mut().unwrap().remove("wall_clock_s");
        Ok(v)
    };
    let mut compared = 0;
    for (name, args, files) in &runs {
        let mut seen: Vec<RunOutputs> = Vec::new();
        for round in 0..2 {
            let cwd = dir.path().join(format!("{name}{round}"));
            std::fs::create_dir(&cwd).map_err(err)?;
            let out = Command::new(bin)
                .args(args)
                .current_dir(&cwd)
                .output()
                .map_err(err)?;
            if !out.status.success() {
                return Err(format!("{name}: {}", String::from_utf8_lossy(&out.stderr)));
            }
            let bytes = files
                .iter()
                .map(|f| std::fs::read(cwd.join(f)).map_err(err))
                .collect::<Result<Vec<_>, _>>()?;
            let m = match files.first() {
                Some(f) => Some(manifest(&cwd.join(format!("{f}.manifest.json")))?),
                None => None,
            };
            seen.push((out.stdout, bytes, m));
        }
        if seen[0] != seen[1] {
            return Err(format!("{name}: outputs differ between runs"));
        }
        compared += 1 + files.len();
    }
    Ok(format!(
        "{compared} outputs byte-identical across reruns of 4 commands"
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("integrator convergence", convergence, Some(1.0)),
        ("conservation", conservation, Some(1.0)),
        ("noop parity", parity, Some(1.0)),
        ("action algebra", action_algebra, Some(5.0)),
        ("reward contracts", reward_contracts, Some(1.0)),
        ("episode shape", episode_shape, Some(5.0)),
        ("learnability", learnability, Some(300.0)),
        ("determinism", cli_determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = f();
        let out = match limit {
            Some(l) => within(start.elapsed(), *l, out),
            None => out,
        };
        match out {
            Ok(d) => println!("criterion {}: PASS {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {d}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
