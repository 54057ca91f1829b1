use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SUM: &str =
    "kernel sum(n:i32){ s = 0; i = 1; do { s = s + i; i = i + 1; } while (i <= n); return s; }";

fn ehls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehls"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_kernel(dir: &Path, name: &str, src: &str, sidecar: Option<&str>) -> String {
    let path = dir.join(format!("{name}.rk"));
    fs::write(&path, src).unwrap();
    if let Some(json) = sidecar {
        fs::write(dir.join(format!("{name}.json")), json).unwrap();
    }
    path.to_string_lossy().into_owned()
}

#[test]
fn run_prints_cycles_and_return_value() {
    let dir = tempfile::tempdir().unwrap();
    let k = write_kernel(dir.path(), "sum", SUM, Some(r#"{"args":{"n":3}}"#));
    let out = ehls(&["run", &k]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("return 6"), "{text}");
    assert!(text.contains("\"config\":\""), "{text}");
}

#[test]
fn explicit_inputs_override_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let k = write_kernel(dir.path(), "sum", SUM, Some(r#"{"args":{"n":3}}"#));
    let other = dir.path().join("four.json");
    fs::write(&other, r#"{"args":{"n":4}}"#).unwrap();
    let out = ehls(&["run", &k, "--inputs", other.to_str().unwrap()]);
    assert!(stdout(&out).contains("return 10"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_kernel(dir.path(), "bad", "kernel bad(", None);
    assert_eq!(ehls(&["run", &bad]).status.code(), Some(1));

    let k = write_kernel(dir.path(), "sum", SUM, Some(r#"{"args":{"n":100}}"#));
    assert_eq!(
        ehls(&["run", &k, "--max-cycles", "10"]).status.code(),
        Some(3)
    );
    assert_eq!(
        ehls(&["run", &k, "--no-addrq", "--addrq-capacity", "4"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(ehls(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ehls(&["--help"]).status.code(), Some(0));

    let wrong = write_kernel(dir.path(), "wrong", SUM, Some(r#"{"args":{"m":3}}"#));
    assert_eq!(ehls(&["run", &wrong]).status.code(), Some(1));
}

#[test]
fn check_matrix_reports_every_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let k = write_kernel(
        dir.path(),
        "st",
        "kernel st(a:i32[4]){ a[1] = 5; x = a[1]; return x; }",
        None,
    );
    let out = ehls(&["check", &k, "--matrix"]);
    assert_eq!(out.status.code(), Some(0));
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|v| v["pass"] == true));
}

#[test]
fn build_writes_netlist_files() {
    let dir = tempfile::tempdir().unwrap();
    let k = write_kernel(dir.path(), "sum", SUM, None);
    let out_dir = dir.path().join("out");
    let out = ehls(&[
        "build",
        &k,
        "--emit",
        "both",
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("sum.netlist.json")).unwrap())
            .unwrap();
    assert!(json.is_object());
    assert!(fs::read_to_string(out_dir.join("sum.netlist.dot"))
        .unwrap()
        .starts_with("digraph"));

    let out = ehls(&[
        "build",
        &k,
        "--stop-after",
        "lower-gamma",
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out_dir.join("sum.lower-gamma.json").exists());
}

#[test]
fn bench_on_an_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = ehls(&["bench", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out),
        "kernel,noq_cycles,full_cycles,full_over_noq,status\n"
    );
}

#[test]
fn bench_marks_broken_kernels_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    write_kernel(
        dir.path(),
        "ok",
        "kernel ok(a:i32[4]){ a[0] = 1; return a[0]; }",
        None,
    );
    write_kernel(dir.path(), "broken", "kernel broken( {", None);
    let csv = dir.path().join("out.csv");
    let out = ehls(&[
        "bench",
        dir.path().to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.contains("\nbroken,,,,\"FAILED"), "{text}");
    assert!(text.contains("\nok,"), "{text}");
}

#[test]
fn fuzz_prints_one_verdict_per_configuration() {
    let out = ehls(&["fuzz", "--seed", "3", "--count", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 12);
    assert_eq!(
        text,
        stdout(&ehls(&["fuzz", "--seed", "3", "--count", "4"]))
    );
}

#[test]
fn viz_emits_dot() {
    let dir = tempfile::tempdir().unwrap();
    let k = write_kernel(dir.path(), "sum", SUM, None);
    let out = ehls(&["viz", &k, "--stage", "build-rvsdg"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("digraph"));
}

#[test]
fn noq_histogram_takes_longer() {
    let k = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/histogram.rk");
    let k = k.to_str().unwrap();
    let cycles = |extra: &[&str]| {
        let mut args = vec!["run", k];
        args.extend_from_slice(extra);
        let out = ehls(&args);
        assert_eq!(out.status.code(), Some(0));
        let text = stdout(&out);
        text.lines()
            .find_map(|l| l.strip_prefix("cycles "))
            .and_then(|c| c.parse::<u64>().ok())
            .unwrap_or_else(|| panic!("{text}"))
    };
    let full = cycles(&[]);
    let noq = cycles(&["--no-addrq"]);
    assert!(noq > full, "{noq} vs {full}");
}
