//! End-to-end plumbing tests for the experiment runner and the binary.

use std::io::Write;
use std::process::Command;

use mve_cli::config::{ExperimentConfig, Method, PartialConfig, SynthSpec};
use mve_cli::experiment::run_experiment;
use mve_cli::report::{load_and_verify, read_records};

fn synthetic_config(methods: Vec<Method>, reps: usize, m: usize) -> ExperimentConfig {
    ExperimentConfig {
        methods,
        repetitions: reps,
        synth: SynthSpec {
            d: 3,
            n: 2,
            m,
            data_seed: 3,
        },
        ..Default::default()
    }
}

#[test]
fn ge_sweep_produces_one_record_per_seed() {
    let cfg = synthetic_config(vec![Method::Ge], 2, 200);
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.records.len(), 2);
    assert!(report.failures.is_empty());
    assert_eq!(report.summary.aggregates.len(), 1);
    assert_eq!(report.summary.aggregates[0].count, 2);
    assert_eq!(report.summary.aggregates[0].method, "ge");
}

#[test]
fn oracle_sweep_hits_nominal_coverage_band() {
    let cfg = synthetic_config(vec![Method::Oracle], 20, 2_000);
    let report = run_experiment(&cfg).unwrap();
    assert!(report.failures.is_empty());
    let coverage = report.summary.aggregates[0].coverage_mean;
    assert!(
        (0.87..=0.93).contains(&coverage),
        "oracle mean coverage {coverage}"
    );
}

#[test]
fn methods_share_split_and_center_within_a_seed() {
    let cfg = synthetic_config(vec![Method::Ge, Method::Nle, Method::Oracle], 3, 300);
    let report = run_experiment(&cfg).unwrap();
    for seed in 0..3u64 {
        let checksums: Vec<&str> = report
            .records
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| r.split_checksum.as_str())
            .collect();
        assert_eq!(checksums.len(), 3);
        assert!(
            checksums.windows(2).all(|w| w[0] == w[1]),
            "split checksums diverged within seed {seed}: {checksums:?}"
        );
    }
}

#[test]
fn oracle_on_csv_data_is_recorded_as_failure_and_run_continues() {
    let mut file = tempfile::NamedTempFile::with_suffix(".csv").unwrap();
    writeln!(file, "a,b,y1,y2").unwrap();
    let mut rng_state = tiny_rng();
    for _ in 0..120 {
        let v: Vec<f64> = (0..4).map(|_| rng_state.next_float()).collect();
        writeln!(file, "{},{},{},{}", v[0], v[1], v[2], v[3]).unwrap();
    }
    file.flush().unwrap();

    let cfg = PartialConfig {
        dataset: Some(file.path().display().to_string()),
        labels: Some("y1,y2".into()),
        methods: Some("ge,oracle".into()),
        reps: Some(2),
        ..Default::default()
    }
    .finalize()
    .unwrap();
    let report = run_experiment(&cfg).unwrap();
    // GE succeeds on every seed, oracle fails on every seed.
    assert_eq!(report.records.len(), 2);
    assert_eq!(report.failures.len(), 2);
    assert_eq!(report.failed_seeds, 2);
    assert!(report.failures[0].error.contains("synthetic"));
}

/// Tiny deterministic generator so the toy CSV is stable without pulling
/// rand into the test.
struct TinyLcg(u64);

fn tiny_rng() -> TinyLcg {
    TinyLcg(0x12345678)
}

impl TinyLcg {
    fn next_float(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

#[test]
fn report_directory_round_trips_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_config(vec![Method::Ge, Method::Nle], 3, 250);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let report = run_experiment(&cfg).unwrap();

    let summary = load_and_verify(dir.path()).unwrap();
    assert_eq!(summary.aggregates, report.summary.aggregates);
    let records = read_records(dir.path()).unwrap();
    assert_eq!(records.len(), report.records.len());

    // The report binary re-renders the same table.
    let output = Command::new(env!("CARGO_BIN_EXE_mve"))
        .args(["report", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("ge"));
    assert!(stdout.contains("nle"));
}

#[test]
fn binary_runs_csv_dataset_end_to_end() {
    let mut file = tempfile::NamedTempFile::with_suffix(".csv").unwrap();
    writeln!(file, "f0,f1,t0,t1").unwrap();
    let mut gen = tiny_rng();
    for _ in 0..120 {
        let v: Vec<f64> = (0..4).map(|_| gen.next_float()).collect();
        writeln!(file, "{},{},{},{}", v[0], v[1], 2.0 * v[0] + v[2], v[1] - v[3]).unwrap();
    }
    file.flush().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_mve"))
        .args([
            "run",
            "--dataset",
            file.path().to_str().unwrap(),
            "--labels",
            "t0,t1",
            "--methods",
            "ge",
            "--reps",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(dir.path().join("records.jsonl").exists());
    assert!(dir.path().join("table.txt").exists());
}

#[test]
fn binary_merges_config_file_under_flags() {
    let mut config = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        config,
        "dataset = synthetic\nsynth-m = 200\nreps = 2\nmethods = ge\neta = 0.8"
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_mve"))
        .args([
            "run",
            "--config",
            config.path().to_str().unwrap(),
            "--eta",
            "0.9",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let echo = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(echo.contains("eta = 0.9"), "flag should win: {echo}");
    assert!(echo.contains("reps = 2"), "file should fill gaps: {echo}");
}

#[test]
fn lambda_is_recorded_and_reproducible() {
    let mut cfg = synthetic_config(vec![Method::Lmve], 1, 200);
    cfg.iters_init = Some(50);
    cfg.iters_train = Some(50);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    let la = a.records[0].lambda.expect("lmve records carry lambda");
    let lb = b.records[0].lambda.expect("lmve records carry lambda");
    assert!(la > 0.0);
    assert_eq!(la, lb);
}
