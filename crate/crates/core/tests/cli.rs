use std::fs;
use std::path::Path;
use std::process::Command;

fn stratlearn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stratlearn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn run_writes_one_row_per_step_plus_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = stratlearn(&[
        "run", "--env", "classification", "--method", "iterative", "--n", "1000", "--T", "1000", "--seed", "7",
        "--eval-reps", "2000", "--out-dir", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("run_classification_iterative_seed7_trajectory.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1001);
    assert_eq!(lines[0], "t,beta_0,beta_1,gamma_hat_0,gamma_hat_1,batch_mean_pi,eval_pi");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 7 && !l.contains(",,")));
    let fig = read(&dir.path().join("run_classification_figure.csv"));
    assert_eq!(fig.lines().count(), 1001);
}

#[test]
fn identical_command_lines_give_identical_files() {
    let args = ["reproduce", "table2", "--n", "200", "--T", "30", "--seeds", "2", "--eval-reps", "3000", "--seed", "11"];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let mut full = args.to_vec();
        full.extend(["--out-dir", dir.path().to_str().unwrap()]);
        let o = stratlearn(&full);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 4 * 2 + 2);
    for name in names {
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn summary_json_carries_every_summary_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = stratlearn(&[
        "run", "--env", "pricing", "--method", "naive", "--n", "300", "--T", "20", "--eval-reps", "3000", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(&dir.path().join("run_pricing_summary.json"))).unwrap();
    for key in ["command", "config", "beta_star", "pi_star", "pi_star_se", "summaries", "table"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let s = &v["summaries"][0];
    for key in [
        "env", "method", "seed", "steps", "avg_objective", "avg_mse", "avg_regret", "weighted_regret", "terminal_beta",
        "terminal_error", "max_gradient_norm", "diverged", "oscillating",
    ] {
        assert!(s.get(key).is_some(), "missing summaries[0].{key}");
    }
    assert_eq!(s["method"], "naive");
    assert!(s["avg_mse"].is_null());

    // A naive run has no gradient estimates: those fields are empty.
    let csv = read(&dir.path().join("run_pricing_naive_seed0_trajectory.csv"));
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), 7);
    assert!(row[3].is_empty() && row[4].is_empty());
    assert!(!row[6].is_empty());
}

#[test]
fn fig2_omits_rrm_unless_requested() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let base = ["reproduce", "fig2", "--n", "200", "--T", "10", "--eval-reps", "2000", "--out-dir", out];
    assert!(stratlearn(&base).status.success());
    let fig = read(&dir.path().join("fig2_figure.csv"));
    assert!(!fig.contains("\nrrm,"));
    assert!(fig.contains("\niterative,") && fig.contains("\nnaive,") && fig.contains("\nfull_info,"));

    let mut with = base.to_vec();
    with.push("--include-rrm");
    assert!(stratlearn(&with).status.success());
    assert!(read(&dir.path().join("fig2_figure.csv")).contains("\nrrm,"));
}

#[test]
fn exit_codes_distinguish_config_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = stratlearn(&["run", "--alpha", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha must lie in (0, 0.5)"));

    assert_eq!(stratlearn(&["run", "--n", "3"]).status.code(), Some(1));
    assert_eq!(stratlearn(&["run", "--eta", "0.1,x"]).status.code(), Some(1));
    assert_eq!(stratlearn(&["reproduce", "table9"]).status.code(), Some(1));

    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "n = 100\nfoo = 1\n").unwrap();
    assert_eq!(stratlearn(&["run", "--config", conf.to_str().unwrap()]).status.code(), Some(1));

    // Output directory that is a regular file: runtime failure.
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = stratlearn(&[
        "run", "--n", "100", "--T", "2", "--eval-reps", "500", "--out-dir", blocker.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_gradients_reports_each_batch_size() {
    let dir = tempfile::tempdir().unwrap();
    let o = stratlearn(&[
        "check", "gradients", "--ns", "1000,4000", "--seeds", "3", "--eval-reps", "20000", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(&dir.path().join("check_gradients_summary.json"))).unwrap();
    assert_eq!(v["levels"].as_array().unwrap().len(), 2);
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);
    assert_eq!(read(&dir.path().join("check_gradients_figure.csv")).lines().count(), 7);
}
