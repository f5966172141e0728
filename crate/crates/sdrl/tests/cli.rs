use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn model(name: &str) -> PathBuf {
    crate_dir().join("models").join(name)
}

fn config(name: &str) -> PathBuf {
    crate_dir().join("configs").join(name)
}

fn sdrl(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sdrl"));
    for a in args {
        c.arg(a);
    }
    c.output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifest_without_clock(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_s");
    v
}

#[test]
fn simulate_writes_one_row_per_dt_plus_header() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("teacup.csv");
    ok(sdrl(&[&"simulate", &model("teacup.xmile"), &"--csv", &csv]));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 1 + 240);
    assert_eq!(
        lines[0],
        "time,characteristic_time,room_temperature,heat_loss_to_room,teacup_temperature"
    );
    assert!(dir.path().join("teacup.csv.manifest.json").exists());
}

#[test]
fn zero_rate_holds_the_stock() {
    let out = ok(sdrl(&[
        &"simulate",
        &model("decay.xmile"),
        &"--set",
        &"k=0",
    ]));
    let mut rows = out.lines();
    let col = rows
        .next()
        .unwrap()
        .split(',')
        .position(|c| c == "s")
        .unwrap();
    assert_eq!(rows.clone().count(), 101);
    assert!(rows.all(|r| r.split(',').nth(col).unwrap() == "100"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| -> Vec<(PathBuf, PathBuf)> {
        let d = dir.path().join(tag);
        std::fs::create_dir(&d).unwrap();
        let sim = d.join("sim.csv");
        ok(sdrl(&[
            &"simulate",
            &model("ev_surrogate.xmile"),
            &"--seed",
            &"5",
            &"--csv",
            &sim,
        ]));
        let ep = d.join("ep.csv");
        let sum = d.join("ep.json");
        ok(sdrl(&[
            &"episode",
            &config("ev.json"),
            &"--agent",
            &"random",
            &"--csv",
            &ep,
            &"--summary",
            &sum,
        ]));
        let pol = d.join("policy.json");
        ok(sdrl(&[
            &"train",
            &config("bathtub.json"),
            &"--iters",
            &"3",
            &"--pop",
            &"8",
            &"--seed",
            &"2",
            &"--out",
            &pol,
        ]));
        let rep = d.join("policy.json.report.jsonl");
        vec![
            (sim.clone(), d.join("sim.csv.manifest.json")),
            (ep.clone(), d.join("ep.csv.manifest.json")),
            (sum, d.join("ep.csv.manifest.json")),
            (pol.clone(), d.join("policy.json.manifest.json")),
            (rep, d.join("policy.json.manifest.json")),
        ]
    };
    let a = run("a");
    let b = run("b");
    for ((fa, ma), (fb, mb)) in a.iter().zip(&b) {
        assert_eq!(
            std::fs::read(fa).unwrap(),
            std::fs::read(fb).unwrap(),
            "{}",
            fa.display()
        );
        let mut va = manifest_without_clock(ma);
        let mut vb = manifest_without_clock(mb);
        // Output paths differ by directory; hashes must not.
        for v in [&mut va, &mut vb] {
            for o in v["outputs"].as_array_mut().unwrap() {
                o.as_object_mut().unwrap().remove("path");
            }
        }
        assert_eq!(va, vb, "{}", ma.display());
    }
    let i1 = ok(sdrl(&[&"inspect", &model("ev_surrogate.xmile")]));
    let i2 = ok(sdrl(&[&"inspect", &model("ev_surrogate.xmile")]));
    assert_eq!(i1, i2);
}

#[test]
fn noop_episode_matches_plain_simulation() {
    for (cfg, m, seed) in [
        ("ev.json", "ev_surrogate.xmile", "42"),
        ("bathtub.json", "bathtub.xmile", "7"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let ep = dir.path().join("ep.csv");
        ok(sdrl(&[&"episode", &config(cfg), &"--csv", &ep]));
        let sim = ok(sdrl(&[&"simulate", &model(m), &"--seed", &seed]));
        assert_eq!(std::fs::read_to_string(&ep).unwrap(), sim, "{cfg}");
    }
}

#[test]
fn zero_iterations_write_the_initial_policy() {
    let dir = tempfile::tempdir().unwrap();
    let pol = dir.path().join("p.json");
    let out = ok(sdrl(&[
        &"train",
        &config("bathtub.json"),
        &"--iters",
        &"0",
        &"--out",
        &pol,
    ]));
    assert!(out.contains("no generations run"));
    let report = std::fs::read(dir.path().join("p.json.report.jsonl")).unwrap();
    assert!(report.is_empty());
    let out = ok(sdrl(&[
        &"episode",
        &config("bathtub.json"),
        &"--agent",
        &pol,
    ]));
    assert!(out.starts_with("agent policy episode 0 seed 7 steps 40 return "));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let code = |o: Output| o.status.code().unwrap();

    let bad = dir.path().join("bad.xmile");
    std::fs::write(&bad, "<xmile><model>").unwrap();
    assert_eq!(code(sdrl(&[&"simulate", &bad])), 2);

    assert_eq!(
        code(sdrl(&[&"episode", &dir.path().join("missing.json")])),
        2
    );
    assert_eq!(
        code(sdrl(&[
            &"simulate",
            &model("decay.xmile"),
            &"--set",
            &"decay=1"
        ])),
        2
    );
    assert_eq!(
        code(sdrl(&[
            &"train",
            &config("bathtub.json"),
            &"--pop",
            &"4",
            &"--out",
            &dir.path().join("p.json")
        ])),
        2
    );

    let no_reward = dir.path().join("plain.json");
    let cfg = format!(
        r#"{{"model": {:?}, "env_step": 1, "actionables": ["valve"], "parameterize_action_space": true}}"#,
        model("bathtub.xmile")
    );
    std::fs::write(&no_reward, cfg).unwrap();
    assert_eq!(
        code(sdrl(&[
            &"train",
            &no_reward,
            &"--out",
            &dir.path().join("p.json")
        ])),
        2
    );
    ok(sdrl(&[&"episode", &no_reward]));

    let uneven = dir.path().join("uneven.json");
    let cfg = format!(
        r#"{{"model": {:?}, "env_step": 0.3}}"#,
        model("bathtub.xmile")
    );
    std::fs::write(&uneven, cfg).unwrap();
    assert_eq!(code(sdrl(&[&"episode", &uneven])), 2);
}

#[test]
fn inspect_lists_levers_and_order() {
    let out = ok(sdrl(&[&"inspect", &model("teacup.xmile")]));
    assert!(out.contains("constant converters (2):\n  characteristic_time\n  room_temperature\n"));
    assert!(out.contains(
        "dependency order:\n  characteristic_time\n  room_temperature\n  heat_loss_to_room\n"
    ));
    let json = ok(sdrl(&[&"inspect", &model("teacup.xmile"), &"--json"]));
    let back = sdrl::model_from_json(json.as_bytes()).unwrap();
    assert_eq!(back, sdrl::load_model(&model("teacup.xmile")).unwrap());
}
