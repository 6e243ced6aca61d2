use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dlens(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlens"))
        .args(args)
        .current_dir(dir)
        .env_remove("DLENS_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path) {
    ok(&dlens(
        &[
            "synth", "--out", "syn", "--files", "60", "--lines", "40", "--seed", "3",
        ],
        dir,
    ));
}

fn first_defective(dir: &Path) -> String {
    let table = fs::read_to_string(dir.join("syn/metrics.csv")).unwrap();
    table
        .lines()
        .skip(1)
        .find(|l| l.ends_with(",1"))
        .and_then(|l| l.split(',').next())
        .unwrap()
        .to_string()
}

#[test]
fn metric_pipeline_writes_reports_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let stdout = ok(&dlens(
        &[
            "train",
            "--data",
            "syn/metrics.csv",
            "--model",
            "m.json",
            "--seed",
            "7",
        ],
        dir,
    ));
    assert!(stdout.contains("OOB accuracy"), "{stdout}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("m.json.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["n_trees"], 100);
    assert_eq!(manifest["inputs"][0]["path"], "syn/metrics.csv");
    assert_eq!(manifest["output_digest"].as_str().unwrap().len(), 64);

    let id = first_defective(dir);
    let expl_args = [
        "explain",
        "--model",
        "m.json",
        "--data",
        "syn/metrics.csv",
        "--file-id",
        &id,
    ];
    let json = ok(&dlens(
        &[&expl_args[..], &["--format", "json"]].concat(),
        dir,
    ));
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed["file_id"], id.as_str());
    assert_eq!(parsed["seed"], 42);
    let md = ok(&dlens(
        &[&expl_args[..], &["--format", "markdown"]].concat(),
        dir,
    ));
    assert!(md.contains("risk score"));
    let html = ok(&dlens(
        &[&expl_args[..], &["--format", "html", "--out", "e.html"]].concat(),
        dir,
    ));
    assert!(html.is_empty());
    assert!(fs::read_to_string(dir.join("e.html"))
        .unwrap()
        .contains("<table>"));
    assert!(dir.join("e.html.manifest.json").exists());

    let plan = ok(&dlens(
        &[
            "guide",
            "--model",
            "m.json",
            "--data",
            "syn/metrics.csv",
            "--file-id",
            &id,
            "--format",
            "markdown",
        ],
        dir,
    ));
    assert!(
        plan.contains("to less than") || plan.contains("to more than"),
        "{plan}"
    );

    let eval = ok(&dlens(
        &["evaluate", "--model", "m.json", "--data", "syn/metrics.csv"],
        dir,
    ));
    let eval: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!(eval["accuracy"].as_f64().unwrap() > 0.5);

    let preds = ok(&dlens(
        &["predict", "--model", "m.json", "--data", "syn/metrics.csv"],
        dir,
    ));
    assert_eq!(preds.lines().count(), 61);
    assert!(preds.starts_with("file_id,risk,predicted_defective\n"));
}

#[test]
fn token_model_localizes_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let corpus = [
        "--corpus",
        "syn/corpus",
        "--annotations",
        "syn/annotations.csv",
    ];
    let stdout = ok(&dlens(
        &[
            &["train"][..],
            &corpus,
            &["--model", "tok.json", "--trees", "40"],
        ]
        .concat(),
        dir,
    ));
    assert!(stdout.contains("vocabulary:"));
    let id = first_defective(dir);
    let out = ok(&dlens(
        &[
            &["localize", "--model", "tok.json"][..],
            &corpus,
            &["--file-id", &id, "--samples", "1000"],
        ]
        .concat(),
        dir,
    ));
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["lines"].as_array().unwrap().len(), 40);
    assert!(report["metrics"]["recall_at_effort"]["0.2"].is_number());

    let expl = ok(&dlens(
        &[
            &["explain", "--model", "tok.json"][..],
            &corpus,
            &["--file-id", &id, "--samples", "500"],
        ]
        .concat(),
        dir,
    ));
    assert!(expl.contains("\"feature\""));
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let id = first_defective(dir);
    for run in ["a", "b"] {
        ok(&dlens(
            &[
                "train",
                "--data",
                "syn/metrics.csv",
                "--model",
                &format!("{run}/m.json"),
                "--trees",
                "30",
            ],
            dir,
        ));
        ok(&dlens(
            &[
                "explain",
                "--model",
                &format!("{run}/m.json"),
                "--data",
                "syn/metrics.csv",
                "--file-id",
                &id,
                "--samples",
                "800",
                "--out",
                &format!("{run}/e.json"),
            ],
            dir,
        ));
    }
    for name in ["m.json", "e.json"] {
        assert_eq!(
            fs::read(dir.join("a").join(name)).unwrap(),
            fs::read(dir.join("b").join(name)).unwrap()
        );
        let digest = |run: &str| {
            let m: serde_json::Value = serde_json::from_str(
                &fs::read_to_string(dir.join(run).join(format!("{name}.manifest.json"))).unwrap(),
            )
            .unwrap();
            m["output_digest"].clone()
        };
        assert_eq!(digest("a"), digest("b"));
    }
}

#[test]
fn seed_comes_from_environment_when_flag_absent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let run = |env_seed: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_dlens"));
        cmd.current_dir(dir).env_remove("DLENS_SEED");
        if let Some(s) = env_seed {
            cmd.env("DLENS_SEED", s);
        }
        let args = [
            &[
                "train",
                "--data",
                "syn/metrics.csv",
                "--model",
                "m.json",
                "--trees",
                "5",
            ][..],
            extra,
        ]
        .concat();
        ok(&cmd.args(args).output().unwrap());
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("m.json.manifest.json")).unwrap())
                .unwrap();
        m["seed"].as_u64().unwrap()
    };
    assert_eq!(run(None, &[]), 42);
    assert_eq!(run(Some("9"), &[]), 9);
    assert_eq!(run(Some("9"), &["--seed", "5"]), 5);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let unknown = dlens(&["frobnicate"], dir);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(
        dlens(&["explain", "--model", "m.json"], dir).status.code(),
        Some(2)
    );
    let missing = dlens(
        &["evaluate", "--model", "nope.json", "--data", "nope.csv"],
        dir,
    );
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.json"));
}
