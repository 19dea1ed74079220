use bmlab::gaussproc::write_atomic;
use bmlab::lab::{run, verify, ExperimentConfig, Verdict};

fn config(out: &std::path::Path) -> ExperimentConfig {
    let text = format!(
        r#"
function = "hermite:2"
model = "geom:0.5"
n_grid = [256, 1024, 4096]
M = 2000
seed = 5
checks = ["variance", "tv"]
out = "{}"
"#,
        out.display()
    );
    toml::from_str(&text).unwrap()
}

#[test]
fn squared_hermite_variance_and_tv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h2");
    let report = run(&config(&out)).unwrap();
    for row in &report.rows {
        assert!((row.sigma2.unwrap() - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(row.verdicts["variance"], Verdict::Pass, "n={}", row.n);
        assert_eq!(row.verdicts["tv"], Verdict::Pass, "n={}", row.n);
        assert_eq!(row.version, env!("CARGO_PKG_VERSION"));
    }
    let tv: Vec<f64> = report.rows.iter().map(|r| r.tv.unwrap()).collect();
    assert!(tv[2] < tv[0], "{tv:?}");
    assert!(report.passed);
    assert!(verify(&out).unwrap().passed);
    // Only the two report files remain: no temporaries.
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["report.csv", "report.json"]);
}

#[test]
fn atomic_write_replaces_whole_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    std::fs::write(&path, "stale partial").unwrap();
    write_atomic(&path, b"n,var_hat\n1,2\n").unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "n,var_hat\n1,2\n");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
