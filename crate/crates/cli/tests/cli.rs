use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn redistnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redistnet")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &[&str] = &[
    "--hidden-layers", "2",
    "--hidden-width", "16",
    "--gen-hidden-layers", "2",
    "--gen-hidden-width", "8",
    "--max-steps", "40",
    "--warm-start-max-steps", "40",
    "--validation-every", "20",
    "--validation-size", "100",
    "--curriculum-every", "20",
    "--checkpoint-every", "20",
    "--test-size", "300",
];

fn train_small(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["train", "--out", out];
    for pair in SMALL.chunks(2) {
        if !extra.contains(&pair[0]) {
            args.extend_from_slice(pair);
        }
    }
    args.extend_from_slice(extra);
    redistnet(&args)
}

#[test]
fn missing_prior_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let o = redistnet(&["train", "--out", tmp.path().to_str().unwrap(), "--n", "3", "--objective", "expectation"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("prior"), "{}", stderr(&o));
}

#[test]
fn unknown_key_in_config_file_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "n = 3\nobjective = expectation\nprior = uniform\nbogus_key = 1\n").unwrap();
    let o = redistnet(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("run").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus_key"), "{}", stderr(&o));
}

#[test]
fn bad_value_and_unknown_flag_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = redistnet(&["train", "--out", out, "--n", "3", "--objective", "expectation", "--prior", "normal:0.5:-1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = redistnet(&["train", "--out", out, "--no-such-flag", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(redistnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn worstcase_run_directory_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("wc");
    let o = train_small(&run, &["--n", "4", "--objective", "worstcase", "--prior", "uniform", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("alpha="));
    for f in ["config.txt", "model.json", "adversary.json", "loss.csv", "train_report.json", "run.log", "eval_report.json", "histogram.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert!(run.join("checkpoints/adversary_step0000020.json").exists());
    let log = fs::read_to_string(run.join("run.log")).unwrap();
    assert!(log.contains("seed = 3") && log.contains("wall_clock_seconds"));

    let o = redistnet(&["eval", "--run", run.to_str().unwrap(), "--size", "1234", "--tolerance", "1e9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("alpha=") && line.contains("violations=") && line.contains(" E="), "{line}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["test_size"], 1234);

    let o = redistnet(&["compare", "--run", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("0.634"));
    assert!(run.join("comparison.csv").exists());
}

#[test]
fn expectation_run_has_no_adversary_and_evals_under_two_priors() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("ex");
    let o = train_small(&run, &["--n", "3", "--objective", "expectation", "--prior", "uniform"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run.join("model.json").exists());
    assert!(!run.join("adversary.json").exists());

    let out = tmp.path().join("two");
    let o = redistnet(&[
        "eval", "--run", run.to_str().unwrap(), "--prior", "uniform", "--prior", "normal:0.5:0.1",
        "--tolerance", "1e9", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
    assert!(out.join("eval_report_0.json").exists() && out.join("eval_report_1.json").exists());
}

#[test]
fn eval_flags_infeasible_models() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("ex");
    let o = train_small(
        &run,
        &["--n", "3", "--objective", "expectation", "--prior", "uniform", "--warm-start", "none", "--max-steps", "0", "--calibrate", "false"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = redistnet(&["eval", "--run", run.to_str().unwrap(), "--out", tmp.path().join("e").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn eval_rejects_generator_for_other_n() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(train_small(&a, &["--n", "3", "--objective", "worstcase", "--prior", "uniform"]).status.code(), Some(0));
    assert_eq!(train_small(&b, &["--n", "4", "--objective", "worstcase", "--prior", "uniform"]).status.code(), Some(0));
    let o = redistnet(&[
        "eval", "--model", a.join("model.json").to_str().unwrap(),
        "--generator", b.join("adversary.json").to_str().unwrap(),
        "--out", tmp.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("generator"), "{}", stderr(&o));
}

#[test]
fn repeated_train_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--n", "3", "--objective", "worstcase", "--prior", "uniform", "--seed", "11"];
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(train_small(&a, &args).status.code(), Some(0));
    assert_eq!(train_small(&b, &args).status.code(), Some(0));
    for f in ["model.json", "adversary.json", "train_report.json", "eval_report.json", "loss.csv", "checkpoints/h_step0000040.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn gen_data_writes_csv() {
    let o = redistnet(&["gen-data", "--n", "3", "--size", "5", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "theta0,theta1,theta2");
    assert_eq!(lines.len(), 6);
    for l in &lines[1..] {
        for v in l.split(',') {
            let x: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&x));
        }
    }
    assert_eq!(stdout(&redistnet(&["gen-data", "--n", "3", "--size", "5", "--seed", "2"])), text);
}

#[test]
fn grad_check_passes_and_fails_on_tiny_tolerance() {
    let o = redistnet(&["grad-check", "--networks", "3", "--inputs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("max_rel_error="));
    let o = redistnet(&["grad-check", "--networks", "3", "--inputs", "2", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
