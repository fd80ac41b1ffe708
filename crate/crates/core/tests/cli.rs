use std::path::Path;
use std::process::{Command, Output};

fn hiercp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiercp")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = hiercp(&["generate", "--hierarchy", "a1", "--t", "1000", "--seed", "7", "--out", path(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["dataset.csv", "spec.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
    }
    let csv = std::fs::read_to_string(a.join("dataset.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("x1,x2,x3,y1,"));
    assert!(header.ends_with(",y16"));
    assert_eq!(lines.count(), 1000);
}

#[test]
fn custom_hierarchy_shapes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("h.json");
    std::fs::write(&file, r#"{"m": 4, "n": 3, "h_sub": [[1, 1, 1]]}"#).unwrap();
    let out = dir.path().join("out");
    let spec = format!("custom:{}", path(&file));
    let o = hiercp(&["generate", "--hierarchy", &spec, "--t", "20", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "x1,x2,x3,y1,y2,y3,y4");
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((v[3] + v[4] + v[5] - v[6]).abs() < 1e-9 * (1.0 + v[6].abs()));
    }
}

#[test]
fn invalid_inputs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad_config = dir.path().join("bad.json");
    std::fs::write(&bad_config, r#"{"t": 100, "colour": "blue"}"#).unwrap();
    let bad_hierarchy = dir.path().join("h.json");
    std::fs::write(&bad_hierarchy, r#"{"m": 3, "n": 3, "h_sub": [[1, 1, 1]]}"#).unwrap();
    let custom = format!("custom:{}", path(&bad_hierarchy));
    let missing = dir.path().join("missing");
    let cases: Vec<Vec<&str>> = vec![
        vec!["generate", "--hierarchy", "c9", "--out", path(&out)],
        vec!["generate", "--hierarchy", &custom, "--out", path(&out)],
        vec!["generate", "--config", path(&bad_config), "--out", path(&out)],
        vec!["run", "--runs", "1", "--t", "100", "--out", path(&out)],
        vec!["run", "--alpha", "1.5", "--t", "100", "--runs", "2", "--out", path(&out)],
        vec!["run", "--methods", "direct,magic", "--out", path(&out)],
        vec!["report", path(&missing)],
    ];
    for args in cases {
        let o = hiercp(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).lines().any(|l| l.starts_with("error: kind=")), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let o = hiercp(&[
        "run", "--hierarchy", "a1", "--t", "2000", "--runs", "3", "--seed", "1", "--methods", "direct,wls",
        "--a-matrix", "identity", "--jobs", "2", "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for file in ["results_runs.csv", "results_summary.csv", "results.json", "hierarchy.json"] {
        assert!(out.join(file).is_file(), "{file} missing");
    }
    let summary = std::fs::read_to_string(out.join("results_summary.csv")).unwrap();
    assert!(summary.starts_with("method,metric,mean,gamma,n\n"));
    assert!(summary.lines().any(|l| l.starts_with("direct,coverage@1,")));
    assert!(summary.lines().any(|l| l.starts_with("wls,root_total_sq_length,")));
    assert!(summary.lines().any(|l| l.starts_with("ellipsoid_reconciled_identity,radius,")));
    assert!(!summary.contains("ols,"));

    let text = hiercp(&["report", path(&out)]);
    assert!(text.status.success(), "{}", stderr(&text));
    let table = String::from_utf8_lossy(&text.stdout);
    assert!(table.contains("direct") && table.contains("wls"));
    let plot = std::fs::read_to_string(out.join("plot_nodes.csv")).unwrap();
    assert_eq!(
        plot.lines().next().unwrap(),
        "method,node_id,level,coverage_mean,coverage_gamma,sq_length_mean,sq_length_gamma"
    );
    assert_eq!(plot.lines().count(), 1 + 2 * 16);

    let json = hiercp(&["report", "--format", "json", path(&out.join("results_summary.csv"))]);
    assert!(json.status.success(), "{}", stderr(&json));
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert!(v.is_object() || v.is_array());
}
