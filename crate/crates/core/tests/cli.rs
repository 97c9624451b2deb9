use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gtflat::dynamics::{solve, DynamicsConfig};
use gtflat::experiment::{read_run_csv, RUN_CSV_HEADER, SUMMARY_CSV_HEADER, UPDATES_CSV_HEADER};
use gtflat::ParamVector;

fn gtflat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtflat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, out: &Path, repeats: usize, extra_train: &str) -> PathBuf {
    let text = format!(
        r#"
repeats = {repeats}
output_dir = "{}"

[train]
rounds = 2
clients = 2
active_ratio = 1.0
local_epochs = 1
lr = 0.05
batch_size = 8
seed = 11
{extra_train}

[dataset]
kind = "synthetic"
classes = 3
dim = 4
n_per_class = 20
test_per_class = 10
separation = 3.0

[partition]
alpha = 0.5
"#,
        out.display()
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("run_"))
        .collect();
    names.sort();
    names
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn minimal_run_writes_parseable_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &out, 1, "");
    let o = gtflat(&["run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    assert_eq!(
        run_files(&out),
        vec!["run_fedavg_11.csv", "run_gtflat_11.csv"]
    );
    for agg in ["fedavg", "gtflat"] {
        let path = out.join(format!("run_{agg}_11.csv"));
        assert_eq!(header(&path), RUN_CSV_HEADER);
        let rows = read_run_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        for (n, r) in rows.iter().enumerate() {
            assert_eq!(r.round, n + 1);
            assert_eq!(r.active_ids, vec![0, 1]);
            assert_eq!(r.omega.len(), 2);
            assert!((r.omega.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!((0.0..=1.0).contains(&r.test_accuracy));
        }
        let updates = out.join(format!("updates_{agg}_11.csv"));
        assert_eq!(header(&updates), UPDATES_CSV_HEADER);
    }
    let summary = out.join("summary.csv");
    assert_eq!(header(&summary), SUMMARY_CSV_HEADER);
    let firsts: Vec<String> = csv::Reader::from_path(&summary)
        .unwrap()
        .records()
        .map(|r| r.unwrap()[0].to_string())
        .collect();
    assert_eq!(firsts, vec!["11", "mean", "std"]);
}

#[test]
fn five_repeats_give_ten_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &out, 5, "");
    assert!(gtflat(&["run", cfg.to_str().unwrap()]).status.success());
    let files = run_files(&out);
    assert_eq!(files.len(), 10);
    for seed in 11..16 {
        for agg in ["fedavg", "gtflat"] {
            assert!(files.contains(&format!("run_{agg}_{seed}.csv")));
        }
    }
}

#[test]
fn paired_runs_share_first_round_updates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &out, 1, "");
    assert!(gtflat(&["run", cfg.to_str().unwrap()]).status.success());
    let first_round = |agg: &str| -> Vec<Vec<String>> {
        csv::Reader::from_path(out.join(format!("updates_{agg}_11.csv")))
            .unwrap()
            .records()
            .map(|r| r.unwrap().iter().map(str::to_string).collect::<Vec<_>>())
            .filter(|r| r[0] == "1")
            .collect()
    };
    let a = first_round("fedavg");
    assert_eq!(a.len(), 2);
    assert_eq!(a, first_round("gtflat"));
}

#[test]
fn invalid_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for bad in ["lr = -1.0", "typo_key = 3", "active_ratio = 1.5"] {
        // later duplicate keys are rejected too, so replace rather than append
        let cfg = write_config(dir.path(), &out, 1, "");
        let text = fs::read_to_string(&cfg).unwrap();
        let key = bad.split(' ').next().unwrap();
        let text = match text.lines().find(|l| l.starts_with(key)) {
            Some(line) => text.replace(line, bad),
            None => text.replace("[train]\n", &format!("[train]\n{bad}\n")),
        };
        fs::write(&cfg, text).unwrap();
        let o = gtflat(&["run", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{bad}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    }
    let o = gtflat(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn weights_for_two_updates_are_even() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.txt");
    fs::write(&path, "2 3\n1 2 3\n-4 5 0.5\n").unwrap();
    let o = gtflat(&["weights", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0.5,0.5");
}

#[test]
fn weights_for_identical_updates_are_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.txt");
    fs::write(&path, "4 2\n1.5 -2\n1.5 -2\n1.5 -2\n1.5 -2\n").unwrap();
    let o = gtflat(&["weights", path.to_str().unwrap()]);
    assert!(o.status.success());
    let w: Vec<f64> = stdout(&o)
        .trim()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(w.len(), 4);
    assert!(w.iter().all(|v| (v - 0.25).abs() <= 1e-15), "{w:?}");
}

#[test]
fn weights_match_in_process_solve() {
    let updates = [
        vec![0.0, 0.0, 0.1],
        vec![0.3, -0.2, 0.0],
        vec![4.0, 3.5, -2.0],
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.txt");
    let mut text = String::from("3 3\n");
    for u in &updates {
        text += &u
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        text += "\n";
    }
    fs::write(&path, text).unwrap();
    let o = gtflat(&["weights", path.to_str().unwrap()]);
    assert!(o.status.success());
    let got: Vec<f64> = stdout(&o)
        .trim()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();

    let models: Vec<ParamVector> = updates
        .iter()
        .map(|u| ParamVector::from_flat(u.clone()).unwrap())
        .collect();
    let want = solve(&models, &DynamicsConfig::default()).unwrap().weights;
    assert_eq!(got, want.as_slice());
}

#[test]
fn malformed_updates_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.txt");
    for bad in ["", "2 2\n1 2\n", "2 2\n1 2\n3\n", "1 1\nabc\n", "x y\n"] {
        fs::write(&path, bad).unwrap();
        let o = gtflat(&["weights", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{bad:?}");
    }
}

#[test]
fn verify_example1_reports_each_check() {
    let o = gtflat(&["verify-example1"]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[0].starts_with("[PASS] profile weights"));
    let all_pass = lines.iter().all(|l| l.starts_with("[PASS]"));
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 2 }));
}

#[test]
fn verify_example1_zero_tolerance_fails_equilibrium_check() {
    let o = gtflat(&["verify-example1", "--tol", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(
        text.lines()
            .any(|l| l.starts_with("[FAIL] equilibrium weights")),
        "{text}"
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("equilibrium weights"));
}
