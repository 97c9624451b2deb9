//! Experiment runner behind the `gtflat` binary: config parsing, paired
//! FedAvg/GTFLAT runs, CSV logs, and the standalone weighting commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dirichlet_partition, load_idx, make_synthetic, Dataset, PartitionSpec};
use crate::dynamics::{solve, solve_matrix, DynamicsConfig};
use crate::error::Error;
use crate::fl::{train, Aggregator, Federation, RoundRecord, TrainConfig};
use crate::game::{enumerate_payoff_table, weights_from_profile, EvalMatrix, StrategyProfile};
use crate::metrics::{effective_round, erir, AccuracySeries};
use crate::param_space::ParamVector;
use crate::rng::{stream_rng, Stream};

/// Tolerance used for effective rounds and ERIR in the summary.
pub const SUMMARY_EPS: f64 = 0.005;

pub const RUN_CSV_HEADER: [&str; 6] = [
    "round",
    "active_ids",
    "omega",
    "test_accuracy",
    "test_loss",
    "wall_time_s",
];

pub const UPDATES_CSV_HEADER: [&str; 3] = ["round", "client_id", "update_sha256"];

pub const SUMMARY_CSV_HEADER: [&str; 6] = [
    "seed",
    "fedavg_final_accuracy",
    "gtflat_final_accuracy",
    "fedavg_effective_round",
    "gtflat_effective_round",
    "erir_percent",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training settings. `aggregator` is ignored: every seed runs both.
    #[serde(default)]
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub output_dir: PathBuf,
}

fn default_repeats() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        classes: usize,
        dim: usize,
        n_per_class: usize,
        test_per_class: usize,
        separation: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub alpha: f64,
    pub min_per_client: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            min_per_client: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(self.repeats >= 1, "repeats must be >= 1");
        self.train.validate()?;
        self.partition_spec().validate()?;
        if let DatasetConfig::Synthetic {
            classes,
            dim,
            n_per_class,
            test_per_class,
            separation,
        } = &self.dataset
        {
            ensure!(
                *classes >= 2 && *dim >= 1,
                "synthetic data needs classes >= 2 and dim >= 1"
            );
            ensure!(
                *n_per_class >= 1 && *test_per_class >= 1,
                "synthetic sizes must be >= 1"
            );
            ensure!(*separation >= 0.0, "separation must be >= 0");
        }
        Ok(())
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            clients: self.train.clients,
            alpha: self.partition.alpha,
            min_per_client: self.partition.min_per_client,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64)
            .map(|r| self.train.seed + r)
            .collect()
    }
}

/// Train/test data and client split for one seed. Both aggregators of a pair
/// see exactly this federation.
pub fn build_federation(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<Federation> {
    let (train, test) = match &cfg.dataset {
        DatasetConfig::Synthetic {
            classes,
            dim,
            n_per_class,
            test_per_class,
            separation,
        } => {
            let mut train_rng = stream_rng(seed, Stream::TrainData, 0, 0);
            let mut test_rng = stream_rng(seed, Stream::TestData, 0, 0);
            (
                make_synthetic(*classes, *dim, *n_per_class, *separation, &mut train_rng)?,
                make_synthetic(*classes, *dim, *test_per_class, *separation, &mut test_rng)?,
            )
        }
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            let classes = train.classes().max(test.classes());
            (with_classes(train, classes)?, with_classes(test, classes)?)
        }
    };
    let parts = dirichlet_partition(
        &train,
        &cfg.partition_spec(),
        &mut stream_rng(seed, Stream::Partition, 0, 0),
    )?;
    Ok(Federation::from_partition(&train, &parts, test)?)
}

fn with_classes(ds: Dataset, classes: usize) -> crate::error::Result<Dataset> {
    let dim = ds.dim();
    Dataset::new(ds.features().to_vec(), ds.labels().to_vec(), dim, classes)
}

/// Both runs of one seed.
#[derive(Debug, Clone)]
pub struct PairedRun {
    pub seed: u64,
    pub fedavg: Vec<RoundRecord>,
    pub gtflat: Vec<RoundRecord>,
}

/// Per-seed summary row; `None` marks a target that was never reached.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub fedavg_final_accuracy: f64,
    pub gtflat_final_accuracy: f64,
    pub fedavg_effective_round: Option<usize>,
    pub gtflat_effective_round: Option<usize>,
    pub erir_percent: Option<f64>,
}

impl PairedRun {
    /// Effective rounds toward FedAvg's final accuracy, and the ERIR of
    /// GTFLAT over FedAvg at the final round.
    pub fn summarize(&self) -> anyhow::Result<SeedSummary> {
        let series =
            |r: &[RoundRecord]| AccuracySeries::new(r.iter().map(|x| x.test_accuracy).collect());
        let base = series(&self.fedavg)?;
        let gt = series(&self.gtflat)?;
        let last = base.len();
        let target = base.last();
        Ok(SeedSummary {
            seed: self.seed,
            fedavg_final_accuracy: target,
            gtflat_final_accuracy: gt.last(),
            fedavg_effective_round: effective_round(&base, target, SUMMARY_EPS),
            gtflat_effective_round: effective_round(&gt, target, SUMMARY_EPS),
            erir_percent: erir(&gt, &base, last, SUMMARY_EPS),
        })
    }
}

pub fn run_pair(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<PairedRun> {
    let fed = build_federation(cfg, seed)?;
    let run = |aggregator| -> anyhow::Result<Vec<RoundRecord>> {
        let tc = TrainConfig {
            aggregator,
            seed,
            ..cfg.train.clone()
        };
        Ok(train(&fed, &tc)
            .with_context(|| format!("{} run, seed {seed}", aggregator.name()))?
            .1)
    };
    Ok(PairedRun {
        seed,
        fedavg: run(Aggregator::FedAvg)?,
        gtflat: run(Aggregator::Gtflat)?,
    })
}

pub struct ExperimentOutput {
    pub runs: Vec<PairedRun>,
    pub summaries: Vec<SeedSummary>,
}

/// Runs every seed (in parallel) and writes all CSVs under `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutput> {
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let runs: Vec<PairedRun> = cfg
        .seeds()
        .into_par_iter()
        .map(|seed| run_pair(cfg, seed))
        .collect::<anyhow::Result<_>>()?;

    for run in &runs {
        for (agg, records) in [
            (Aggregator::FedAvg, &run.fedavg),
            (Aggregator::Gtflat, &run.gtflat),
        ] {
            let name = agg.name();
            write_run_csv(
                &cfg.output_dir.join(format!("run_{name}_{}.csv", run.seed)),
                records,
            )?;
            write_updates_csv(
                &cfg.output_dir
                    .join(format!("updates_{name}_{}.csv", run.seed)),
                records,
            )?;
        }
    }
    let summaries = runs
        .iter()
        .map(PairedRun::summarize)
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_summary_csv(&cfg.output_dir.join("summary.csv"), &summaries)?;
    Ok(ExperimentOutput { runs, summaries })
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("|")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_run_csv(path: &Path, records: &[RoundRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUN_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            join(&r.active_ids),
            join(r.omega.as_slice()),
            r.test_accuracy.to_string(),
            r.test_loss.to_string(),
            r.wall_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_updates_csv(path: &Path, records: &[RoundRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(UPDATES_CSV_HEADER)?;
    for r in records {
        for (id, digest) in r.active_ids.iter().zip(&r.update_digests) {
            w.write_record([r.round.to_string(), id.to_string(), digest.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// One row per seed followed by `mean` and `std` rows (sample standard
/// deviation over the seeds where the value exists).
pub fn write_summary_csv(path: &Path, rows: &[SeedSummary]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_CSV_HEADER)?;
    for s in rows {
        w.write_record([
            s.seed.to_string(),
            s.fedavg_final_accuracy.to_string(),
            s.gtflat_final_accuracy.to_string(),
            opt(s.fedavg_effective_round),
            opt(s.gtflat_effective_round),
            opt(s.erir_percent),
        ])?;
    }
    let columns: [Vec<f64>; 5] = [
        rows.iter().map(|s| s.fedavg_final_accuracy).collect(),
        rows.iter().map(|s| s.gtflat_final_accuracy).collect(),
        rows.iter()
            .filter_map(|s| s.fedavg_effective_round.map(|r| r as f64))
            .collect(),
        rows.iter()
            .filter_map(|s| s.gtflat_effective_round.map(|r| r as f64))
            .collect(),
        rows.iter().filter_map(|s| s.erir_percent).collect(),
    ];
    let stats: Vec<(Option<f64>, Option<f64>)> = columns.iter().map(|c| mean_std(c)).collect();
    let mut mean_row = vec!["mean".to_string()];
    let mut std_row = vec!["std".to_string()];
    for (m, s) in stats {
        mean_row.push(opt(m));
        std_row.push(opt(s));
    }
    w.write_record(&mean_row)?;
    w.write_record(&std_row)?;
    w.flush()?;
    Ok(())
}

/// A parsed line of a run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub round: usize,
    pub active_ids: Vec<usize>,
    pub omega: Vec<f64>,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub wall_time_s: f64,
}

pub fn read_run_csv(path: &Path) -> anyhow::Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path)?;
    ensure!(
        r.headers()?.iter().eq(RUN_CSV_HEADER),
        "unexpected header in {}",
        path.display()
    );
    let split = |cell: &str| -> Vec<String> {
        cell.split('|')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        ensure!(
            rec.len() == RUN_CSV_HEADER.len(),
            "short row in {}",
            path.display()
        );
        rows.push(RunRow {
            round: rec[0].parse()?,
            active_ids: split(&rec[1])
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_, _>>()?,
            omega: split(&rec[2])
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_, _>>()?,
            test_accuracy: rec[3].parse()?,
            test_loss: rec[4].parse()?,
            wall_time_s: rec[5].parse()?,
        });
    }
    Ok(rows)
}

pub fn cmd_run(config_path: &Path) -> i32 {
    let result = ExperimentConfig::load(config_path).and_then(|cfg| {
        let out = run_experiment(&cfg)?;
        for s in &out.summaries {
            println!(
                "seed {}: fedavg={:.4} gtflat={:.4} erir={}",
                s.seed,
                s.fedavg_final_accuracy,
                s.gtflat_final_accuracy,
                s.erir_percent
                    .map_or("n/a".to_string(), |e| format!("{e:+.2}%"))
            );
        }
        println!("wrote {}", cfg.output_dir.display());
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// The three-client worked example: evaluation matrix, expected weights for
/// profile (1,0,1), the 2-decimal payoff table and the reported final weights.
pub mod example1 {
    pub const PHI: [[f64; 3]; 3] = [
        [0.0, -0.53, -0.55],
        [-0.53, 0.0, -0.37],
        [-0.55, -0.37, 0.0],
    ];

    pub const PROFILE: [usize; 3] = [1, 0, 1];
    pub const PROFILE_WEIGHTS: [f64; 3] = [1.0 / 3.0, 2.0 / 3.0, 0.0];

    pub const PAYOFF_TABLE: [([usize; 3], [f64; 3]); 8] = [
        ([1, 0, 0], [-0.18, -0.35, -0.49]),
        ([1, 0, 1], [-0.35, -0.18, -0.42]),
        ([1, 2, 0], [-0.36, -0.30, -0.31]),
        ([1, 2, 1], [-0.54, -0.12, -0.25]),
        ([2, 0, 0], [-0.18, -0.48, -0.37]),
        ([2, 0, 1], [-0.36, -0.30, -0.31]),
        ([2, 2, 0], [-0.37, -0.42, -0.18]),
        ([2, 2, 1], [-0.54, -0.25, -0.12]),
    ];
    pub const PAYOFF_TOL: f64 = 0.005;

    pub const FINAL_WEIGHTS: [f64; 3] = [0.08, 0.46, 0.46];
    pub const FINAL_WEIGHTS_TOL: f64 = 0.05;
    pub const MSNE_TOL: f64 = 0.05;

    pub fn phi_rows() -> Vec<Vec<f64>> {
        PHI.iter().map(|r| r.to_vec()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs the worked-example checks against `phi_rows`. Fails before any check
/// if the matrix is not a valid evaluation matrix.
pub fn verify_example1_with(
    phi_rows: Vec<Vec<f64>>,
    weights_tol: f64,
) -> Result<Vec<Check>, Error> {
    let phi = EvalMatrix::from_rows(phi_rows)?;
    let mut checks = Vec::new();

    let w = weights_from_profile(&StrategyProfile::new(example1::PROFILE.to_vec())?);
    checks.push(Check {
        name: "profile weights",
        passed: w.as_slice() == example1::PROFILE_WEIGHTS,
        detail: format!("omega{:?} = {:?}", example1::PROFILE, w.as_slice()),
    });

    let table = enumerate_payoff_table(&phi)?;
    let mut misses = String::new();
    for (s, expect) in example1::PAYOFF_TABLE {
        let got = &table[&StrategyProfile::new(s.to_vec())?];
        for i in 0..3 {
            if (got[i] - expect[i]).abs() > example1::PAYOFF_TOL {
                let _ = write!(misses, " {s:?}/u{i}: {:.4} vs {:.2};", got[i], expect[i]);
            }
        }
    }
    checks.push(Check {
        name: "payoff table",
        passed: misses.is_empty() && table.len() == 8,
        detail: if misses.is_empty() {
            format!("{} profiles within {}", table.len(), example1::PAYOFF_TOL)
        } else {
            format!("outside {}:{misses}", example1::PAYOFF_TOL)
        },
    });

    let sol = solve_matrix(&phi, &DynamicsConfig::default())?;
    let w = sol.weights.as_slice();
    let worst = w
        .iter()
        .zip(example1::FINAL_WEIGHTS)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    checks.push(Check {
        name: "equilibrium weights",
        passed: worst <= weights_tol,
        detail: format!(
            "omega = {:?} after {} generations, max deviation {worst:.4} (tol {weights_tol})",
            w.iter()
                .map(|v| (v * 1e4).round() / 1e4)
                .collect::<Vec<_>>(),
            sol.generations_run
        ),
    });
    Ok(checks)
}

pub fn cmd_verify_example1(tol: Option<f64>) -> i32 {
    let tol = tol.unwrap_or(example1::FINAL_WEIGHTS_TOL);
    match verify_example1_with(example1::phi_rows(), tol) {
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
        Ok(checks) => {
            for c in &checks {
                println!(
                    "[{}] {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            let failed: Vec<&str> = checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name)
                .collect();
            if failed.is_empty() {
                0
            } else {
                eprintln!("failed checks: {}", failed.join(", "));
                2
            }
        }
    }
}

/// Parses the updates container: a `k d` header, then `k` lines of `d` reals.
pub fn parse_updates(text: &str) -> anyhow::Result<Vec<ParamVector>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().context("missing `k d` header")?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad header {header:?}"))?;
    let [k, d] = dims[..] else {
        bail!("header must be `k d`, got {header:?}");
    };
    ensure!(k >= 1 && d >= 1, "k and d must be >= 1");
    let mut updates = Vec::with_capacity(k);
    for n in 0..k {
        let line = lines
            .next()
            .with_context(|| format!("expected {k} updates, found {n}"))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .with_context(|| format!("update {n}: bad number"))?;
        ensure!(
            values.len() == d,
            "update {n} has {} values, expected {d}",
            values.len()
        );
        updates.push(ParamVector::from_flat(values)?);
    }
    ensure!(lines.next().is_none(), "more than {k} updates in file");
    Ok(updates)
}

pub fn format_weights(w: &[f64]) -> String {
    w.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Adaptive weights for the updates in `path` under the default dynamics.
pub fn weights_for_file(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let updates = parse_updates(&text)?;
    Ok(solve(&updates, &DynamicsConfig::default())?
        .weights
        .into_inner())
}

pub fn cmd_weights(updates_path: &Path) -> i32 {
    match weights_for_file(updates_path) {
        Ok(w) => {
            println!("{}", format_weights(&w));
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_config_keys_are_rejected() {
        let base = r#"
output_dir = "out"
[dataset]
kind = "synthetic"
classes = 2
dim = 2
n_per_class = 10
test_per_class = 5
separation = 3.0
"#;
        assert!(ExperimentConfig::from_toml(base).is_ok());
        assert!(ExperimentConfig::from_toml(&format!("{base}\n[train]\nroundz = 3\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("repeat = 2\n{base}")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("repeats = 0\n{base}")).is_err());
    }

    #[test]
    fn dynamics_table_parses() {
        let text = r#"
output_dir = "out"
repeats = 2
[train]
rounds = 3
clients = 4
active_ratio = 0.5
aggregator = "gtflat"
architecture = { kind = "mlp", hidden = 8 }
[train.dynamics]
generations = 10
fitness_shift = { fixed = 2.0 }
[partition]
alpha = 1.0
[dataset]
kind = "idx"
train_images = "a"
train_labels = "b"
test_images = "c"
test_labels = "d"
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.train.dynamics.generations, 10);
        assert_eq!(
            cfg.train.architecture,
            crate::model::Architecture::Mlp { hidden: 8 }
        );
        assert_eq!(cfg.seeds(), vec![0, 1]);
    }

    #[test]
    fn updates_parsing() {
        let u = parse_updates("2 3\n1 2 3\n4 5 6\n").unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u[1].flatten(), vec![4.0, 5.0, 6.0]);
        assert!(parse_updates("2 3\n1 2 3\n").is_err());
        assert!(parse_updates("1 2\n1 2 3\n").is_err());
        assert!(parse_updates("1 2\n1 x\n").is_err());
        assert!(parse_updates("1\n1\n").is_err());
        assert!(parse_updates("1 1\n1\n2\n").is_err());
    }

    #[test]
    fn perturbed_matrix_is_rejected_before_checks() {
        let mut rows = example1::phi_rows();
        rows[0][1] = -0.5;
        assert!(matches!(
            verify_example1_with(rows, example1::FINAL_WEIGHTS_TOL),
            Err(Error::InvalidEvalMatrix(_))
        ));
    }

    #[test]
    fn summary_stats() {
        assert_eq!(mean_std(&[]), (None, None));
        assert_eq!(mean_std(&[2.0]), (Some(2.0), Some(0.0)));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((s.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
