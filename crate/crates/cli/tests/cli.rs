use std::path::Path;
use std::process::{Command, Output};

fn evgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evgrid")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_scenario(dir: &Path) {
    let o = evgrid(&["gen-scenario", "--out", s(dir), "--evs", "12", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_validate_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = tmp.path().join("scn");
    small_scenario(&scn);
    for f in ["scenario.json", "network.json", "evs.json", "stations.json", "pdn.json"] {
        assert!(scn.join(f).is_file(), "{f}");
    }
    let o = evgrid(&["validate", "--scenario", s(&scn)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok"));

    let out = tmp.path().join("run");
    let o = evgrid(&["simulate", "--scenario", s(&scn), "--out", s(&out), "--seed", "9", "--no-warmup", "--strategy", "distance"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["stats"]["steps"], 86_400);
    let fcs = std::fs::read_to_string(out.join("fcs_load.csv")).unwrap();
    assert!(fcs.starts_with("t,CS"));
    assert_eq!(fcs.lines().count(), 1 + 1440);
    let pdn = std::fs::read_to_string(out.join("pdn.csv")).unwrap();
    assert_eq!(pdn.lines().count(), 1 + 96);
    assert!(out.join("v2g.csv").is_file() && out.join("ev_state.csv").is_file() && out.join("scs_load.csv").is_file());
}

#[test]
fn parallel_matches_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    small_scenario(&tmp.path().join("scn"));
    let single = tmp.path().join("single");
    let o = evgrid(&[
        "simulate", "--scenario", s(&tmp.path().join("scn")), "--out", s(&single), "--seed", "2", "--no-warmup", "--no-v2g",
    ]);
    assert_eq!(code(&o), 0);
    let cases = r#"[
        {"scenario": "scn", "out": "a", "seed": 2, "warmup": false, "v2g": false},
        {"scenario": "scn", "out": "b", "seed": 3, "warmup": false, "v2g": false}
    ]"#;
    std::fs::write(tmp.path().join("cases.json"), cases).unwrap();
    let o = evgrid(&["parallel", "--manifest", s(&tmp.path().join("cases.json")), "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["fcs_load.csv", "scs_load.csv", "ev_state.csv", "pdn.csv", "v2g.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(single.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(tmp.path().join("a/ev_state.csv")).unwrap(),
        std::fs::read(tmp.path().join("b/ev_state.csv")).unwrap()
    );
}

#[test]
fn generators_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = tmp.path().join("scn");
    small_scenario(&scn);
    let gen = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = evgrid(&["gen-trips", "--scenario", s(&scn), "--seed", seed, "--days", "2", "--first-day", "-1", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let a = gen("t1.json", "5");
    assert_eq!(a, gen("t2.json", "5"));
    assert_ne!(a, gen("t3.json", "6"));
    let chains: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(chains.as_array().unwrap().len(), 12);

    let evs = tmp.path().join("evs.json");
    let o = evgrid(&["gen-evs", "--scenario", s(&scn), "--count", "30", "--seed", "1", "--soc-min", "0.5", "--out", s(&evs)]);
    assert_eq!(code(&o), 0);
    let fleet: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&evs).unwrap()).unwrap();
    let fleet = fleet.as_array().unwrap();
    assert_eq!(fleet.len(), 30);
    assert!(fleet.iter().all(|e| (0.5..=1.0).contains(&e["soc"].as_f64().unwrap())));

    let st = tmp.path().join("st.json");
    let o = evgrid(&["gen-stations", "--scenario", s(&scn), "--fcs-piles", "3", "--out", s(&st)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(&st).unwrap(), std::fs::read_to_string(scn.join("stations.json")).unwrap().replace("\"piles\": 10", "\"piles\": 3"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = tmp.path().join("scn");
    small_scenario(&scn);
    let out = tmp.path().join("o");
    assert_eq!(code(&evgrid(&["validate", "--scenario", s(&tmp.path().join("missing"))])), 2);
    let o = evgrid(&["simulate", "--scenario", s(&scn), "--out", s(&out), "--pdn-dt", "700"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt_pdn"));
    assert_eq!(code(&evgrid(&["simulate", "--scenario", s(&scn), "--out", s(&out), "--strategy", "nearest"])), 2);

    let mut evs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scn.join("evs.json")).unwrap()).unwrap();
    evs[0]["home"] = "nowhere".into();
    std::fs::write(scn.join("evs.json"), evs.to_string()).unwrap();
    let o = evgrid(&["validate", "--scenario", s(&scn)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("evs"));

    // a run that cannot write its output fails at runtime
    let scn2 = tmp.path().join("scn2");
    small_scenario(&scn2);
    let blocked = tmp.path().join("file");
    std::fs::write(&blocked, "").unwrap();
    let o = evgrid(&["simulate", "--scenario", s(&scn2), "--out", s(&blocked), "--no-warmup", "--no-v2g"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
