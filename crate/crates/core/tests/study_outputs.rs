use std::fs;

use stwave::problems::ExampleId;
use stwave::study::{rates_from_csv, run_convergence_study, write_study, StudyManifest};

fn manifest() -> StudyManifest {
    StudyManifest {
        example: ExampleId::One,
        pairs: vec![(1, 1), (2, 1)],
        levels: (1, 3),
        timing: false,
        ..Default::default()
    }
}

#[test]
fn reruns_write_identical_files() {
    let m = manifest();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = write_study(&run_convergence_study(&m).unwrap(), m.example, a.path()).unwrap();
    let second = write_study(&run_convergence_study(&m).unwrap(), m.example, b.path()).unwrap();
    assert_eq!(first.len(), second.len());
    for (x, y) in first.iter().zip(&second) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs between runs", x.display());
    }
}

#[test]
fn rates_file_matches_a_refit_of_the_written_tables() {
    let m = manifest();
    let dir = tempfile::tempdir().unwrap();
    write_study(&run_convergence_study(&m).unwrap(), m.example, dir.path()).unwrap();
    let rates = fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    let mut lines = rates.lines();
    assert_eq!(lines.next(), Some("p,q,metric,beta,tau,r2"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for &(p, q) in &m.pairs {
        let table = fs::read_to_string(dir.path().join(format!("conv_p{p}_q{q}.csv"))).unwrap();
        let fits = rates_from_csv(&table).unwrap();
        assert!(!fits.is_empty());
        for (metric, fit) in fits {
            let row = rows
                .iter()
                .find(|r| r[0] == p.to_string() && r[1] == q.to_string() && r[2] == metric)
                .unwrap_or_else(|| panic!("no rate row for p={p} q={q} {metric}"));
            let tau: f64 = row[4].parse().unwrap();
            let beta: f64 = row[3].parse().unwrap();
            assert!((tau - fit.tau).abs() <= 1e-6, "{metric}: {tau} vs {}", fit.tau);
            assert!((beta / fit.beta - 1.0).abs() <= 1e-6, "{metric}: {beta} vs {}", fit.beta);
        }
    }
}

#[test]
fn study_writes_the_expected_files() {
    let m = manifest();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_convergence_study(&m).unwrap();
    assert!(!outcome.any_failure());
    write_study(&outcome, m.example, dir.path()).unwrap();
    for name in ["conv_p1_q1.csv", "conv_p2_q1.csv", "rates.csv", "solves.jsonl", "errors_ex1.svg"] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    assert!(!dir.path().join("failures.txt").exists());
    let jsonl = fs::read_to_string(dir.path().join("solves.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 6);
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["solve"]["status"], "ok");
        assert!(v["solve"]["residual"].as_f64().unwrap() <= 1e-8);
    }
    let table = fs::read_to_string(dir.path().join("conv_p2_q1.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",0.000")), "{table}");
}
