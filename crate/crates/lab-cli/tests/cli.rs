use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn lab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssl-lab")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, v: serde_json::Value) -> String {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_sweep(name: &str) -> serde_json::Value {
    json!({
        "name": name,
        "kind": "ode_sweep",
        "parameters": {
            "seeds": [0], "objectives": ["jepa", "mae"], "depths": [1, 3],
            "features": [{"lambda": 1.0, "rho": 0.7}, {"lambda": 2.0, "rho": 1.3}, {"lambda": 0.5, "rho": 1.0}],
            "epsilon": 0.01, "samples": 60, "axis": "log"
        }
    })
}

#[test]
fn list_experiments_names_every_bundled_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["list-experiments"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    for name in ["fig1_dist1", "fig1_dist2", "fig2_lambda_sweep", "fig2_rho_sweep", "fig2_inverse", "fig3_temporal", "fig4_depth_sweep", "masking_study"] {
        assert!(out.contains(name), "{name} missing from\n{out}");
    }
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep", small_sweep("sweep"));
    let o = lab(&["--output-dir", "a", "--threads", "2", "run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = lab(&["--output-dir", "b", "run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (a, b) = (dir.path().join("a/sweep"), dir.path().join("b/sweep"));
    let mut csvs: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
    csvs.sort();
    assert_eq!(csvs.len(), 2 * 2 * 3 + 1);
    for f in &csvs {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name:?} differs");
    }
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("metadata.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("wall_time_seconds");
        v
    };
    let meta = strip(&a);
    assert_eq!(meta, strip(&b));
    assert_eq!(meta["config"], small_sweep("sweep"));
    assert_eq!(meta["time_rescaling_l"], json!([1, 3]));
    for (file, n) in meta["records"].as_object().unwrap() {
        let rows = std::fs::read_to_string(a.join(file)).unwrap().lines().count() - 1;
        assert_eq!(rows as u64, n.as_u64().unwrap(), "{file}");
    }
}

#[test]
fn config_output_dir_is_used_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_sweep("placed");
    v["output_dir"] = json!("somewhere/exact");
    let cfg = write_config(dir.path(), "placed", v);
    let o = lab(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("somewhere/exact/metadata.json").exists());
}

#[test]
fn empty_seeds_is_a_usage_error_naming_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_sweep("bad");
    v["parameters"]["seeds"] = json!([]);
    let cfg = write_config(dir.path(), "bad", v);
    let o = lab(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("parameters.seeds"), "{}", stderr(&o));
}

#[test]
fn unknown_field_and_bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_sweep("bad");
    v["parameters"]["colour"] = json!("red");
    let cfg = write_config(dir.path(), "bad", v);
    assert_eq!(lab(&["run", &cfg], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["run", "no_such_experiment"], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["report"], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["--threads", "0", "list-experiments"], dir.path()).status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_1_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "boom",
        json!({"name": "boom", "kind": "net_train", "parameters": {
            "seeds": [1], "objectives": ["mae"], "d": 2, "depth": 1,
            "features": [{"index": 0, "lambda": 1.0, "rho": 1.0}],
            "init": {"kind": "structured", "epsilon": 0.5},
            "training": {"mode": "population"}, "lr": 1e6, "steps": 20, "max_lr_halvings": 0}}),
    );
    let o = lab(&["--output-dir", "out", "run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("experiment `boom`"), "{}", stderr(&o));
}

#[test]
fn report_and_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep", small_sweep("sweep"));
    assert_eq!(lab(&["--output-dir", "runs", "run", &cfg], dir.path()).status.code(), Some(0));
    let o = lab(&["report", "runs/sweep", "--kind", "ode_sweep", "--out", "report.md"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("| run | inputs | quantity | theory | measured | rel. error |"));
    assert!(md.contains("final w_bar"));

    assert_eq!(lab(&["report", "runs/sweep", "--kind", "ratio_study"], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["report", "runs/missing"], dir.path()).status.code(), Some(1));

    let o = lab(&["plot", "runs/sweep/traj_mae_L3_f0.csv", "--log-x", "--out", "p.svg"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = std::fs::read_to_string(dir.path().join("p.svg")).unwrap();
    assert!(svg.contains("viewBox=\"0 0 960 600\""));
    assert_eq!(svg.matches("<polyline").count(), 1);

    std::fs::write(dir.path().join("junk.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(lab(&["plot", "junk.csv"], dir.path()).status.code(), Some(1));
}

#[test]
fn seed_override_replaces_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "temporal",
        json!({"name": "temporal", "kind": "genmodel_temporal", "parameters": {
            "seeds": [1, 2, 3], "norms_sq": [1.0], "block_len": 2, "autocorr": [0.9],
            "noise_std": [1.0], "lengths": [200], "heatmap": false}}),
    );
    let o = lab(&["--output-dir", "o", "--seed-override", "42", "run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("o/temporal/temporal.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("42,"));
}
