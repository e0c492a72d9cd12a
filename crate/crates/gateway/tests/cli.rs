use std::process::Command;

use crisis_core::cloud::persist;

fn crisis() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crisis"))
}

#[test]
fn run_query_verify() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.log");
    let metrics = dir.path().join("metrics.json");
    let out = crisis()
        .args(["run", "--scenario", "nuclear", "--decisions", "scripted", "--speed", "max"])
        .arg("--log")
        .arg(&log)
        .arg("--metrics")
        .arg(&metrics)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(!table.contains("FAIL") && table.contains("vehicles-released"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(report["rates"][2]["per_minute"], 660.0);

    let out = crisis()
        .args(["query", "--etype", "RadiationMeasure", "--from", "0", "--to", "300000", "--log"])
        .arg(&log)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 50);

    let out = crisis()
        .args(["query", "--etype", "RadiationMeasure", "--where", "value>2", "--log"])
        .arg(&log)
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 30);

    let out = crisis().arg("verify").arg("--log").arg(&log).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    // Move the first radiation alert to t0+8.
    let mut events = persist::read_log(&log).unwrap();
    let alert = events.iter_mut().find(|e| e.etype == "AlertRSN").unwrap();
    alert.ts = 480_000;
    let tampered = dir.path().join("tampered.log");
    persist::write_log(&tampered, &events).unwrap();
    let out = crisis().arg("verify").arg("--log").arg(&tampered).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL"));
}

#[test]
fn errors_exit_nonzero() {
    let out = crisis().args(["run", "--scenario", "/no/such.scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = crisis().args(["run", "--speed", "fast"]).output().unwrap();
    assert!(!out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.log");
    std::fs::write(&bad, "{not json\n").unwrap();
    let out = crisis().arg("query").arg("--log").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn interactive_run_reads_choices_from_stdin() {
    use std::io::Write;
    let mut child = crisis()
        .args(["run", "--decisions", "interactive"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    // Answers in the order the points and proposals come up.
    let answers = "bogus\nextend-30km\nask-advice-irsn\nextend-regional\nconfine-5km\nvalidate\npublish\nrequest-3\n\
                   DispatchResidualTasksOnRemainingResources\nRequireImmediateReporting\n";
    child.stdin.take().unwrap().write_all(answers.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("choose one of"));
}

#[test]
fn serve_reports_port_in_use() {
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port();
    let out = crisis().args(["serve", "--decisions", "scripted"]).env("CRISIS_PORT", port.to_string()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("already in use"));
}
