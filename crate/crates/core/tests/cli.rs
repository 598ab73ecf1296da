use std::path::Path;
use std::process::{Command, Output};

fn lutfit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lutfit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn fit_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&lutfit(
            &["fit", "--function", "hswish", "--entries", "8", "--seed", "1,2", "--out", out],
            dir.path(),
        ));
    }
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        listing(&a),
        ["fit_log.csv", "hswish-8-best.json", "hswish-8-seed1.json", "hswish-8-seed2.json"]
    );
    for name in listing(&a) {
        let (x, y) = (std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
        if name == "fit_log.csv" {
            assert_eq!(x, y);
        } else {
            // artifacts record their output directory; everything else matches
            let strip = |v: Vec<u8>| String::from_utf8(v).unwrap().replace("\"dir\": \"a\"", "").replace("\"dir\": \"b\"", "");
            assert_eq!(strip(x), strip(y), "{name}");
        }
    }
    let log = std::fs::read_to_string(a.join("fit_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 * 500);
}

#[test]
fn export_round_trip_and_memh() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&lutfit(&["fit", "--function", "exp", "--entries", "8", "--seed", "3", "--out", "o"], d));
    ok(&lutfit(
        &["export", "--table", "o/exp-8-best.json", "--format", "data", "--scale-exp", "-4", "--out", "t.table.json"],
        d,
    ));
    ok(&lutfit(
        &["export", "--table", "o/exp-8-best.json", "--format", "memh", "--scale-exp", "-4", "--out", "a.memh"],
        d,
    ));
    ok(&lutfit(&["export", "--table", "t.table.json", "--format", "memh", "--out", "b.memh"], d));
    let a = std::fs::read_to_string(d.join("a.memh")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.join("b.memh")).unwrap());
    let lines: Vec<&str> = a.lines().filter(|l| !l.starts_with("//")).collect();
    assert!(!lines.is_empty() && lines.len() <= 8);
    for l in &lines {
        assert_eq!(l.len(), 6);
        assert!(l.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_lowercase()));
    }
    // entry 0 carries the minimum breakpoint code
    assert!(lines[0].ends_with("80"));

    let reexport = lutfit(&["export", "--table", "t.table.json", "--format", "data", "--out", "u.table.json"], d);
    ok(&reexport);
    assert_eq!(
        std::fs::read(d.join("t.table.json")).unwrap(),
        std::fs::read(d.join("u.table.json")).unwrap()
    );
}

#[test]
fn eval_writes_seven_scales_and_refuses_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&lutfit(&["fit", "--function", "gelu", "--seed", "1", "--out", "o"], d));
    ok(&lutfit(&["eval", "--table", "o/gelu-8-best.json", "--out", "r"], d));
    let csv = std::fs::read_to_string(d.join("r/eval-gelu-8.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "exponent,scale,mse");
    assert_eq!(rows.len(), 1 + 7 + 1);
    assert!(rows[8].starts_with("average,,"));

    let bad = lutfit(&["eval", "--table", "o/gelu-8-best.json", "--function", "exp"], d);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("fitted for gelu"));
}

#[test]
fn invalid_config_names_the_field_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "schema_version = 1\n[function]\nkind = \"gelu\"\nentries = 8\n[ga]\nrm_prob = 2.0\n",
    )
    .unwrap();
    let out = lutfit(&["fit", "--config", "run.toml", "--out", "o"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ga.rm_prob"));
    assert!(!d.join("o").exists());

    let unknown = lutfit(&["export", "--table", "x", "--format", "csv"], d);
    assert_eq!(unknown.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&unknown.stderr);
    assert!(msg.contains("data") && msg.contains("header") && msg.contains("memh"));
}
