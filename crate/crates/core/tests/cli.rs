use std::process::{Command, Output};

use locklab::harness::{OutcomeMatrix, ScenarioReport};

fn locklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locklab"))
        .args(args)
        .output()
        .expect("run locklab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn scenario_exit_code_tracks_expectation() {
    let ok = locklab(&["scenario", "droplock_e2e", "--profile", "hardened"]);
    assert_eq!(ok.status.code(), Some(0));
    let text = stdout(&ok);
    assert!(
        text.contains("outcome: FAILS_AT:session_init:AUTH_FAILED"),
        "{text}"
    );
    assert!(text.contains("(met)"));

    let ablated = locklab(&[
        "scenario",
        "droplock_e2e",
        "--profile",
        "hardened",
        "--ablate",
        "session_auth",
        "--ablate",
        "dfu_integrity",
    ]);
    assert_eq!(ablated.status.code(), Some(0));
    assert!(stdout(&ablated).contains("FAILS_AT:harvest:BLOCKED_BY_ISOLATION"));
}

#[test]
fn unknown_scenario_is_an_error() {
    let o = locklab(&["scenario", "no_such_thing", "--profile", "vulnerable"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("UNKNOWN_SCENARIO"));
}

#[test]
fn bad_arguments_are_rejected() {
    assert_ne!(
        locklab(&["scenario", "droplock_e2e", "--profile", "medium"])
            .status
            .code(),
        Some(0)
    );
    assert_ne!(
        locklab(&[
            "scenario",
            "droplock_e2e",
            "--profile",
            "hardened",
            "--ablate",
            "Z"
        ])
        .status
        .code(),
        Some(0)
    );
    assert_ne!(
        locklab(&["matrix", "--transport", "carrier-pigeon"])
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn unmet_expectation_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("wishful.toml"),
        r#"
name = "wishful"
description = "expects the hardened lock to fall"

[[steps]]
op = "offline_enroll"

[[expect]]
profile = "hardened"
outcome = "SUCCEEDS"
"#,
    )
    .unwrap();
    let d = dir.path().to_str().unwrap();
    let o = locklab(&[
        "scenario",
        "wishful",
        "--profile",
        "hardened",
        "--scenario-dir",
        d,
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("NOT MET"), "{}", stdout(&o));
    let listed = stdout(&locklab(&["list", "--scenario-dir", d]));
    assert!(listed.lines().any(|l| l == "wishful"));
}

#[test]
fn machine_output_parses_back() {
    let o = locklab(&[
        "scenario",
        "stolen_identity",
        "--profile",
        "vulnerable",
        "--seed",
        "4",
        "--format",
        "machine",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let r: ScenarioReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r.seed, 4);
    assert_eq!(r.schema, "locklab.scenario/1");
    assert_eq!(r.to_json(), stdout(&o).trim_end());

    let m = locklab(&["matrix", "--format", "machine", "--transport", "loopback"]);
    assert_eq!(m.status.code(), Some(0));
    let parsed: OutcomeMatrix = serde_json::from_str(&stdout(&m)).unwrap();
    assert!(parsed.soundness().sound);
    assert_eq!(parsed.to_json(), stdout(&m).trim_end());
}

#[test]
fn report_names_the_goal_and_all_verdicts() {
    let text = locklab(&["report", "--format", "text"]);
    assert_eq!(text.status.code(), Some(0));
    let t = stdout(&text);
    assert!(t.contains("goal TA04 (biometric data retrieval)"));
    assert!(t.contains("unenumerated"));

    let machine = locklab(&["report", "--format", "machine", "--seed", "3"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&machine)).unwrap();
    assert_eq!(v["schema"], "locklab.report/1");
    assert_eq!(v["seed"], 3);
    assert_eq!(v["threat_model"]["goal"], "TA04");
    let verdicts = v["control_verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 11);
    assert!(
        verdicts.iter().all(|c| c["verdict"] == "EFFECTIVE"),
        "{verdicts:?}"
    );
    assert_eq!(v["matrix"]["rows"].as_array().unwrap().len(), 10);
}

#[test]
fn scan_verdicts() {
    for (target, profile, verdict) in [
        ("genuine", "hardened", "GENUINE"),
        ("genuine", "vulnerable", "UNVERIFIED"),
        ("impostor", "hardened", "UNVERIFIED"),
        ("tampered", "hardened", "FIRMWARE_MISMATCH"),
    ] {
        let o = locklab(&["scan", "--target", target, "--profile", profile]);
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(stdout(&o).trim(), verdict, "{target} {profile}");
    }
}

#[test]
fn dfu_pack_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("image.bin");
    std::fs::write(&image, b"some firmware image").unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let img = image.to_str().unwrap();

    let pack = |out: &str, integrity: &str, behavior: &str| {
        locklab(&[
            "dfu",
            "pack",
            "--image",
            img,
            "--out",
            out,
            "--integrity",
            integrity,
            "--behavior",
            behavior,
            "--version",
            "2.0.0",
        ])
    };
    let verify = |pkg: &str, integrity: &str, seed: &str| {
        let o = locklab(&[
            "dfu",
            "verify",
            "--package",
            pkg,
            "--integrity",
            integrity,
            "--seed",
            seed,
        ]);
        (o.status.code(), stdout(&o).trim().to_string())
    };

    let crc_only = p("crc.pkg");
    assert_eq!(pack(&crc_only, "crc16", "droplock").status.code(), Some(0));
    assert_eq!(verify(&crc_only, "crc16", "1"), (Some(0), "OK".into()));
    assert_eq!(
        verify(&crc_only, "signature", "1"),
        (Some(1), "INTEGRITY_FAILED".into())
    );

    let signed = p("signed.pkg");
    assert_eq!(
        pack(&signed, "signature", "legitimate").status.code(),
        Some(0)
    );
    assert_eq!(verify(&signed, "signature", "1"), (Some(0), "OK".into()));
    assert_eq!(
        verify(&signed, "signature", "2"),
        (Some(1), "INTEGRITY_FAILED".into())
    );

    let mut bytes = std::fs::read(&signed).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    let broken = p("broken.pkg");
    std::fs::write(&broken, bytes).unwrap();
    assert_eq!(verify(&broken, "signature", "1").0, Some(1));
}
