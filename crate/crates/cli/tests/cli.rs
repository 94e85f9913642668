use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strongstab"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_trace_that_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--scenario"])
        .arg(scenarios().join("st-path3-byz.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.starts_with("ss-st n=3 f=1"));
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
    let report = fs::read_to_string(tmp.path().join("report.json")).unwrap();
    assert!(report.trim_start().starts_with('{') && report.contains("\"disruptions\":"));

    let trace = tmp.path().join("trace.jsonl");
    let replay = bin().arg("replay").arg(&trace).output().unwrap();
    assert_eq!(replay.status.code(), Some(0));
    assert!(stdout(&replay).starts_with("replay ok"));

    // Change one level in the last step record: replay must flag it.
    let lines: Vec<String> = fs::read_to_string(&trace).unwrap().lines().map(String::from).collect();
    let i = lines.len() - 2;
    let tampered = lines[i].replacen("\"level\":", "\"level\":9", 1);
    assert_ne!(tampered, lines[i]);
    let mut bad = lines.clone();
    bad[i] = tampered;
    let bad_path = write(tmp.path(), "bad.jsonl", &(bad.join("\n") + "\n"));
    let replay = bin().arg("replay").arg(&bad_path).output().unwrap();
    assert_eq!(replay.status.code(), Some(1));
    assert!(stdout(&replay).contains("replay failed"));
}

#[test]
fn expect_unbounded_on_chain_replay() {
    let out = bin()
        .args(["run", "--expect-unbounded", "--scenario"])
        .arg(scenarios().join("to-chain5-replay.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("PASS repeated disruptions"));

    // A fault-free run has no disruptions at all.
    let out = bin()
        .args(["run", "--expect-unbounded=1", "--scenario"])
        .arg(scenarios().join("to-path2.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL repeated disruptions: 0"));
}

#[test]
fn oracle_reports_small_instance() {
    let out = bin()
        .args(["oracle", "--protocol", "ss-st", "--topology"])
        .arg(scenarios().join("topologies/st-path3-byz.topo"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("converges: yes"));
    assert!(text.contains("worst disruptions: 1 (bound 2)"));
}

#[test]
fn oracle_cap_is_an_error() {
    let out = bin()
        .args(["oracle", "--property", "converges-to", "--scenario"])
        .arg(scenarios().join("to-tree10-flat.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_input_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = bin().args(["run", "--scenario"]).arg(tmp.path().join("nope.toml")).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let bad = write(tmp.path(), "bad.toml", "protocol = \"ss-xx\"\n");
    let out = bin().args(["run", "--scenario"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_sweep_prints_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = write(
        tmp.path(),
        "grid.toml",
        "protocol = \"ss-to\"\nfamily = \"random-tree\"\nsizes = []\nreplications = 3\nmax_steps = 100\n",
    );
    let out = bin().args(["sweep", "--scenario"]).arg(&grid).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("protocol,n,f,adversary,runs"));
    assert_eq!(fs::read_to_string(tmp.path().join("sweep.csv")).unwrap(), text);
}

#[test]
fn seed_override_changes_and_repeats_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str, dir: &str| {
        let d = tmp.path().join(dir);
        let out = bin()
            .env("STRONGSTAB_SEED", seed)
            .args(["run", "--scenario"])
            .arg(scenarios().join("st-star6.toml"))
            .arg("--out")
            .arg(&d)
            .output()
            .unwrap();
        assert!(out.status.code().is_some_and(|c| c < 2), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(d.join("trace.jsonl")).unwrap()
    };
    let a = run("11", "a");
    assert_eq!(a, run("11", "b"));
    assert_ne!(a, run("12", "c"));

    let out = bin()
        .env("STRONGSTAB_SEED", "not-a-number")
        .args(["run", "--scenario"])
        .arg(scenarios().join("st-star6.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
