use std::path::Path;
use std::process::{Command, Output};

fn trustreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trustreg")).args(args).output().expect("binary runs")
}

fn scenario_into(dir: &Path, name: &str, extra: &[&str]) -> Output {
    let mut args = vec!["--data-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["scenario", name]);
    let out = trustreg(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn lists_bundled_scenarios() {
    let out = trustreg(&["scenario", "--list"]);
    let names = String::from_utf8(out.stdout).unwrap();
    assert!(names.lines().any(|l| l == "corrupt-maintainer"));
    assert_eq!(names.lines().count(), 6);
}

#[test]
fn scenario_reports_are_reproducible() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = scenario_into(a.path(), "busy-web", &[]);
    let second = scenario_into(b.path(), "busy-web", &[]);
    assert_eq!(first.stdout, second.stdout);
    for file in ["report.json", "events.log", "commitments.log", "config.toml"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    let reseeded = scenario_into(c.path(), "busy-web", &["--seed", "99"]);
    assert_ne!(first.stdout, reseeded.stdout);
}

#[test]
fn scenario_files_run_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("tiny.scn");
    std::fs::write(&script, "seed 3\nissuer A\nissuer B\nverifier V\nedge A B 0.9\nepoch\nquery V A B 0.5\nepoch\nclaim B\n")
        .unwrap();
    let out = trustreg(&["scenario", script.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["scenario"], "tiny");
    assert_eq!(report["queries"]["answered"], 1);
    assert_eq!(report["conservation"]["holds"], true);

    std::fs::write(&script, "issuer A\nseed 3\n").unwrap();
    let out = trustreg(&["scenario", script.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn replay_checks_logs_and_commitments() {
    let dir = tempfile::tempdir().unwrap();
    scenario_into(dir.path(), "corrupt-maintainer", &[]);
    let data = dir.path().to_str().unwrap();

    let out = trustreg(&["--data-dir", data, "replay"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["published_commitments_match"], true);
    assert!(summary["commitments_checked"].as_u64().unwrap() > 0);

    let events = dir.path().join("events.log");
    let text = std::fs::read_to_string(&events).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<&str> = lines[4].split(' ').collect();
    let bumped = (fields[4].parse::<u64>().unwrap() + 1).to_string();
    fields[4] = &bumped;
    lines[4] = fields.join(" ");
    std::fs::write(&events, lines.join("\n") + "\n").unwrap();

    let out = trustreg(&["--data-dir", data, "replay"]);
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["status"], "corrupt");
    assert_eq!(summary["index"], 4);
}

#[test]
fn signed_envelopes_verify_against_derived_keys() {
    let out = trustreg(&["--seed", "5", "sign", "--did", "V", "--nonce", "1", r#"{"faucet":{"amount":5}}"#]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let envelope: trustreg_service::ApiEnvelope = serde_json::from_slice(&out.stdout).unwrap();
    let key = trustreg_core::quorum::Participant::derived(5, "V").key.verifying_key();
    assert!(envelope.body.verify(&key));

    let out = trustreg(&["sign", "--maintainer", "9", "--nonce", "1", r#"{"faucet":{"amount":5}}"#]);
    assert!(!out.status.success());
}

#[test]
fn transcripts_verify_against_their_reveals() {
    let run = trustreg_core::scenario::bundled_scenario("three-issuer-chain").unwrap().unwrap().run().unwrap();
    let closed = run.cluster.reference().closed_epoch(1).expect("epoch 1 closed");
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.txt");
    let reveal = dir.path().join("reveal.json");
    std::fs::write(&transcript, closed.transcripts[3].to_text()).unwrap();
    let check = |reveal_json: String| {
        std::fs::write(&reveal, reveal_json).unwrap();
        let out = trustreg(&["--seed", "7", "verify-transcript", transcript.to_str().unwrap(), reveal.to_str().unwrap()]);
        (out.status.success(), String::from_utf8(out.stdout).unwrap())
    };
    assert_eq!(check(serde_json::to_string(&closed.reveals[3]).unwrap()), (true, "accept\n".into()));
    assert_eq!(check(serde_json::to_string(&closed.reveals[2]).unwrap()), (false, "reject\n".into()));
}
