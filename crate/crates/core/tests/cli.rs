use std::process::{Command, Output};

fn qrkhs(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qrkhs"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("QRKHS_THREADS", t),
        None => cmd.env_remove("QRKHS_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    qrkhs(args, None).status.code().expect("exit code")
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["trace-a"]), 0);
    assert_eq!(code(&["orthogonality", "--tol", "0"]), 1);
    assert_eq!(code(&["orthogonality", "--family", "hermite", "--epsilon", "1.2"]), 2);
    assert_eq!(code(&["orthogonality", "--no-such-flag"]), 2);
    assert_eq!(code(&["kernel-compare", "--grid", "3:1:0.5"]), 2);
    assert_eq!(code(&["trace-a", "--config", "/nonexistent/run.toml"]), 2);

    let dir = tempfile::tempdir().unwrap();
    let overlapping = dir.path().join("cells.txt");
    std::fs::write(&overlapping, "a: r < 1\nb: r < 2\n").unwrap();
    assert_eq!(code(&["pov", "--radial", "4", "--theta2", "8", "--partition", overlapping.to_str().unwrap()]), 3);
    let garbled = dir.path().join("bad.txt");
    std::fs::write(&garbled, "a r < 1\n").unwrap();
    assert_eq!(code(&["pov", "--partition", garbled.to_str().unwrap()]), 2);
}

#[test]
fn json_report_schema() {
    let out = qrkhs(&["orthogonality", "--family", "laguerre", "--alpha", "0.5", "--max-n", "3"], None);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["command"], "orthogonality");
    assert_eq!(v["passed"], true);
    assert_eq!(v["config"]["family"]["kind"], "laguerre");
    assert_eq!(v["config"]["family"]["alpha"], 0.5);
    assert!(v["provenance"].as_array().unwrap().iter().any(|p| p.as_str().unwrap().starts_with("rule v1")));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 16);
    for r in rows {
        assert!(r["value"].as_f64().unwrap() <= r["tol"].as_f64().unwrap());
        assert_eq!(r["passed"], true);
    }
}

#[test]
fn csv_report_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let out = qrkhs(&["quat-selftest", "--cases", "200", "--format", "csv", "--out", path.to_str().unwrap()], None);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("schema,command,check,case,value,tol,passed,provenance"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|l| l.starts_with("1,quat-selftest,") && l.contains(",true,")));
}

#[test]
fn reports_are_deterministic_across_thread_counts() {
    for args in [
        &["pov", "--radial", "6", "--theta2", "16"][..],
        &["gram-check", "--family", "hermite", "--seed", "3"][..],
        &["naimark"][..],
    ] {
        let a = qrkhs(args, Some("1"));
        let b = qrkhs(args, Some("4"));
        let c = qrkhs(args, None);
        assert!(a.status.success(), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
        assert_eq!(a.stdout, c.stdout, "{args:?}");
    }
    assert_eq!(qrkhs(&["trace-a"], Some("zero")).status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "command = \"kernel-compare\"\nfamily = \"hermite\"\nepsilon = 0.3\ngrid = \"-1:1:1\"\n").unwrap();
    let out = qrkhs(&["--config", path.to_str().unwrap(), "--epsilon", "0.7"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["family"]["epsilon"], 0.7);
    assert_eq!(v["rows"].as_array().unwrap().len(), 9);
}
