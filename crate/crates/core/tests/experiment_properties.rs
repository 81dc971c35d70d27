use fedsiam_core::config::ExperimentConfig;
use fedsiam_core::experiment::{load_runs, run_experiment, run_single, write_experiment};
use fedsiam_core::fedcore::Variant;

fn config() -> ExperimentConfig {
    ExperimentConfig::parse(
        "[experiment]\nvariant = MT\nrounds = 6\n\n[federation]\nclients = 6\nactive_clients = 2\nlocal_epochs = 1\n\n[data]\nblob_train_per_class = 30\nblob_test_per_class = 10\n",
        &[],
    )
    .unwrap()
}

#[test]
fn one_row_per_round_plus_summary() {
    let rec = run_single(&config(), 1).unwrap();
    let csv = rec.metrics_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 6 + 1);
    assert!(lines[7].starts_with("# summary"));
    for (i, line) in lines[1..7].iter().enumerate() {
        assert!(line.starts_with(&format!("{},MT,", i + 1)), "{line}");
    }
}

#[test]
fn snapshot_alone_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        seeds: vec![5, 6],
        ..config()
    };
    let records = run_experiment(&cfg, 2).unwrap();
    write_experiment(&records, dir.path()).unwrap();
    assert!(dir.path().join("summary.txt").is_file());
    for rec in &records {
        let sub = dir.path().join(format!("seed-{}", rec.config.seed));
        let snap = std::fs::read_to_string(sub.join("config.snapshot")).unwrap();
        let again = run_single(&ExperimentConfig::parse(&snap, &[]).unwrap(), 1).unwrap();
        let written = std::fs::read_to_string(sub.join("metrics.csv")).unwrap();
        assert_eq!(again.metrics_csv(), written);
    }
    let loaded = load_runs(dir.path()).unwrap();
    assert_eq!(loaded.len(), 2);
    assert!(loaded.iter().all(|r| r.config.variant == Variant::MT));
}
