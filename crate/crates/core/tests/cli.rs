use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dcc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcc"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("DCC_OUTPUT_ROOT")
        .output()
        .expect("run dcc")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &str = r#"
[run]
seed = 3
[model]
fov = 5
conv_channels = [4]
hidden = 8
pos_embed = 4
heads = 2
key_dim = 4
"#;

/// Untrained checkpoint plus a two-cell suite.
fn fixture(dir: &Path) {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    ok(&dcc(
        &[
            "train",
            "--config",
            "tiny.toml",
            "--steps",
            "0",
            "--out",
            "run",
        ],
        dir,
    ));
    ok(&dcc(
        &[
            "suite", "--out", "suite", "--seed", "4", "--cases", "3", "--sizes", "8", "--agents",
            "1,3",
        ],
        dir,
    ));
}

#[test]
fn train_zero_steps_writes_a_deterministic_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let first = fs::read(dir.path().join("run/latest.ckpt")).unwrap();
    ok(&dcc(
        &[
            "train",
            "--config",
            "tiny.toml",
            "--steps",
            "0",
            "--out",
            "again",
        ],
        dir.path(),
    ));
    assert_eq!(
        first,
        fs::read(dir.path().join("again/latest.ckpt")).unwrap()
    );

    // resuming without a config keeps the embedded one
    ok(&dcc(
        &["train", "--resume", "--steps", "0", "--out", "run"],
        dir.path(),
    ));
    assert_eq!(first, fs::read(dir.path().join("run/latest.ckpt")).unwrap());
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dcc"))
        .args(["suite", "--cases", "1", "--sizes", "6", "--agents", "1"])
        .current_dir(dir.path())
        .env("DCC_OUTPUT_ROOT", dir.path().join("root"))
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("root/suite/manifest.toml").is_file());
}

#[test]
fn config_errors_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("typo.toml"), "[replay]\nbatch_sise = 4\n").unwrap();
    let out = dcc(
        &["train", "--config", "typo.toml", "--out", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("batch_sise"), "{}", stderr(&out));

    fs::write(dir.path().join("range.toml"), "[replay]\nalpha = 2.0\n").unwrap();
    let out = dcc(
        &["train", "--config", "range.toml", "--out", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("replay.alpha"), "{}", stderr(&out));
    assert!(!dir.path().join("run").exists());

    let out = dcc(&["train", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_missing_checkpoint_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = dcc(
        &[
            "evaluate",
            "--checkpoint",
            "nope.ckpt",
            "--suite",
            "suite",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("eval").exists());
}

#[test]
fn evaluate_is_byte_identical_and_compare_pairs_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    for mode in ["dcc", "rr-n2"] {
        ok(&dcc(
            &[
                "evaluate",
                "--checkpoint",
                "run/latest.ckpt",
                "--suite",
                "suite",
                "--mode",
                mode,
                "--out",
                "a",
            ],
            d,
        ));
    }
    ok(&dcc(
        &[
            "evaluate",
            "--checkpoint",
            "run/latest.ckpt",
            "--suite",
            "suite",
            "--workers",
            "3",
            "--out",
            "b",
        ],
        d,
    ));
    let a = fs::read_to_string(d.join("a/report-dcc.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(d.join("b/report-dcc.csv")).unwrap());
    assert_eq!(
        fs::read(d.join("a/cases-dcc.csv")).unwrap(),
        fs::read(d.join("b/cases-dcc.csv")).unwrap()
    );
    assert!(a.contains("# suite_hash="));
    assert!(a.contains("# config="), "resolved config is echoed");
    assert!(a.contains("size,agents,mode,cases,success_rate,mean_steps,mean_comm_pairs"));

    let out = dcc(
        &[
            "compare",
            "--dcc",
            "a/report-dcc.csv",
            "--rr-n2",
            "a/report-rr-n2.csv",
        ],
        d,
    );
    ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        table.lines().filter(|l| !l.starts_with('#')).count(),
        3,
        "{table}"
    );

    // a report from another suite cannot be paired
    ok(&dcc(
        &[
            "suite", "--out", "other", "--seed", "5", "--cases", "3", "--sizes", "8", "--agents",
            "1,3",
        ],
        d,
    ));
    ok(&dcc(
        &[
            "evaluate",
            "--checkpoint",
            "run/latest.ckpt",
            "--suite",
            "other",
            "--mode",
            "rr-n2",
            "--out",
            "c",
        ],
        d,
    ));
    let out = dcc(
        &[
            "compare",
            "--dcc",
            "a/report-dcc.csv",
            "--rr-n2",
            "c/report-rr-n2.csv",
            "--out",
            "cmp.csv",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("hash"), "{}", stderr(&out));
    assert!(!d.join("cmp.csv").exists());
}

#[test]
fn tampered_suite_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let inst = fs::read_dir(d.join("suite/instances"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let text = fs::read_to_string(&inst).unwrap();
    fs::write(&inst, format!("{text}\n")).unwrap();
    let out = dcc(
        &[
            "evaluate",
            "--checkpoint",
            "run/latest.ckpt",
            "--suite",
            "suite",
            "--out",
            "eval",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("eval").exists());
}

#[test]
fn suite_generation_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["s1", "s2"] {
        ok(&dcc(
            &[
                "suite", "--out", out, "--seed", "9", "--cases", "2", "--sizes", "6,8", "--agents",
                "2",
            ],
            d,
        ));
    }
    let list = |p: &str| {
        let mut v: Vec<_> = fs::read_dir(d.join(p).join("instances"))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(list("s1"), list("s2"));
    assert_eq!(list("s1").len(), 4);
    assert_eq!(
        fs::read(d.join("s1/manifest.toml")).unwrap(),
        fs::read(d.join("s2/manifest.toml")).unwrap()
    );
}

#[test]
fn plotdata_shapes_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("empty.csv"),
        "size,agents,mode,cases,success_rate,mean_steps,mean_comm_pairs\n",
    )
    .unwrap();
    let out = dcc(&["plotdata", "empty.csv"], d);
    ok(&out);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        "size,x_agents,series,metric,y\n"
    );

    fs::write(
        d.join("two.csv"),
        "# suite_hash=abc\nsize,agents,mode,cases,success_rate,mean_steps,mean_comm_pairs\n\
         10,1,dcc,5,1,12.5,0\n10,2,dcc,5,0.8,20,1.5\n",
    )
    .unwrap();
    ok(&dcc(&["plotdata", "two.csv", "--out", "plot/two.csv"], d));
    let plot = fs::read_to_string(d.join("plot/two.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 2 * 3);

    fs::write(
        d.join("bad.csv"),
        "size,agents,mode,cases,success_rate,mean_steps,mean_comm_pairs\n10,1,dcc,5,1,12.5,0\n10,x,dcc,5,1,1,0\n",
    )
    .unwrap();
    let out = dcc(&["plotdata", "bad.csv"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.csv:3"), "{}", stderr(&out));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcc(&["selftest"], dir.path());
    ok(&out);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout)
            .lines()
            .filter(|l| l.starts_with("PASS"))
            .count(),
        5
    );
}
