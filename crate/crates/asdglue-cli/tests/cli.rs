use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const UNIT_MASS: f64 = 8.0 * PI * PI;

fn asdglue(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asdglue"))
        .current_dir(dir)
        .env_remove("ASDGLUE_THREADS")
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn coarse_grid(dir: &Path) -> PathBuf {
    write(
        dir,
        "grid.json",
        &json!({"per_decade": 4, "gauss_order": 6, "s3_order": 4, "root_inner": 0.01, "root_outer": 100.0}),
    )
}

#[test]
fn instanton_default_is_a_unit_charge() {
    let t = TempDir::new().unwrap();
    let o = asdglue(t.path(), &["instanton", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(t.path().join("o/instanton.json"));
    assert!((r["energy"].as_f64().unwrap() / UNIT_MASS - 1.0).abs() < 5e-3);
    assert_eq!(r["charge"], 1);
    assert!(r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["pass"] == true));
}

#[test]
fn instanton_scale_and_theta() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "c.json",
        &json!({"connection": {"bpst": {"q": [0, 0, 0, 0], "lambda": 0.1}}}),
    );
    let o = asdglue(
        t.path(),
        &["instanton", "--config", cfg.to_str().unwrap(), "--out", "a"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scale = read_json(t.path().join("a/instanton.json"))["scale"]
        .as_f64()
        .unwrap();
    assert!((scale / (SQRT_2 * 0.1) - 1.0).abs() < 1e-2, "{scale}");

    let cfg = write(t.path(), "t.json", &json!({"connection": "product"}));
    let o = asdglue(
        t.path(),
        &["instanton", "--config", cfg.to_str().unwrap(), "--out", "b"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(t.path().join("b/instanton.json"));
    assert_eq!(
        (r["energy"].as_f64(), r["scale"].as_f64()),
        (Some(0.0), Some(0.0))
    );
    assert_eq!(r["centre"], json!([0.0, 0.0, 0.0, 0.0]));
}

#[test]
fn instanton_on_a_truncated_grid_fails_its_charge_check() {
    let t = TempDir::new().unwrap();
    let grid = write(
        t.path(),
        "g.json",
        &json!({"r_min": 0.01, "r_max": 1.0, "panels": 8, "gauss_order": 6, "s3_order": 4, "region": "ball"}),
    );
    let o = asdglue(
        t.path(),
        &["instanton", "--grid", grid.to_str().unwrap(), "--out", "o"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("charge_integral"));
}

#[test]
fn config_errors_exit_with_three() {
    let t = TempDir::new().unwrap();
    let bad = write(
        t.path(),
        "bad.json",
        &json!({"connection": "product", "typo": 1}),
    );
    assert_eq!(
        code(&asdglue(
            t.path(),
            &["instanton", "--config", bad.to_str().unwrap()]
        )),
        3
    );
    assert_eq!(
        code(&asdglue(
            t.path(),
            &["instanton", "--config", "missing.json"]
        )),
        3
    );
    assert_eq!(code(&asdglue(t.path(), &["scan"])), 3);
    assert_eq!(code(&asdglue(t.path(), &["check", "--threads", "0"])), 3);
    let unknown = write(t.path(), "u.json", &json!({"family": "no_such_family"}));
    assert_eq!(
        code(&asdglue(
            t.path(),
            &["extract", "--config", unknown.to_str().unwrap()]
        )),
        3
    );
}

fn scan_config(expect: Value) -> Value {
    json!({
        "template": "bubble_on_instanton",
        "lambdas": [1e-8, 1e-9, 1e-10],
        "directions": [
            {"vertex": "1", "kind": "rotation", "v": [0.0, 0.0, 1.0]},
            {"vertex": "1", "kind": "scale"}
        ],
        "p_list": [2.0],
        "expect": expect
    })
}

#[test]
fn scan_reports_the_scaling_laws() {
    let t = TempDir::new().unwrap();
    let grid = coarse_grid(t.path());
    let cfg = write(
        t.path(),
        "s.json",
        &scan_config(json!([
            {"series": "rotation", "slope": 0.5, "tol": 0.15, "max_scaled_spread": 4.0},
            {"series": "selfdual_p2", "slope": 1.0, "tol": 0.15},
            {"series": "lambda", "norm": "base", "max_spread": 5.0}
        ])),
    );
    let args = [
        "scan",
        "--config",
        cfg.to_str().unwrap(),
        "--grid",
        grid.to_str().unwrap(),
        "--out",
    ];
    let o = asdglue(t.path(), &[&args[..], &["o"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(t.path().join("o/table.csv")).unwrap();
    assert!(table.starts_with("direction,vertex,lambda,norm_X,norm_base\n"));
    assert_eq!(table.lines().count(), 7);
    let sd = fs::read_to_string(t.path().join("o/selfdual.csv")).unwrap();
    assert!(sd.starts_with("p,vertex,lambda,value\n"));
    let fits = read_json(t.path().join("o/fits.json"));
    assert_eq!(fits["checks"].as_array().unwrap().len(), 4);

    // Same bytes on one thread.
    let o = Command::new(env!("CARGO_BIN_EXE_asdglue"))
        .current_dir(t.path())
        .env("ASDGLUE_THREADS", "1")
        .args([&args[..], &["p"]].concat())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    for f in ["table.csv", "selfdual.csv", "fits.json"] {
        assert_eq!(
            fs::read(t.path().join("o").join(f)).unwrap(),
            fs::read(t.path().join("p").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn scan_exit_code_reflects_tolerances() {
    let t = TempDir::new().unwrap();
    let grid = coarse_grid(t.path());
    let cfg = write(
        t.path(),
        "s.json",
        &scan_config(json!([{"series": "rotation", "slope": 2.0}])),
    );
    let o = asdglue(
        t.path(),
        &[
            "scan",
            "--config",
            cfg.to_str().unwrap(),
            "--grid",
            grid.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("rotation_x_slope"));
}

#[test]
fn scan_needs_three_lambdas() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "s.json",
        &json!({"template": "one_bubble", "lambdas": [1e-3]}),
    );
    let o = asdglue(t.path(), &["scan", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("need ≥ 3 samples"), "{}", stderr(&o));
}

#[test]
fn extract_round_trips_a_two_level_family() {
    let t = TempDir::new().unwrap();
    let cfg = write(t.path(), "e.json", &json!({"family": "bubble_on_bubble"}));
    let o = asdglue(
        t.path(),
        &["extract", "--config", cfg.to_str().unwrap(), "--out", "o"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rt = read_json(t.path().join("o/roundtrip.json"));
    assert_eq!(rt["extracted"], rt["truth"]);
    assert_eq!(rt["comparison"]["isomorphic"], true);
    let ideal = read_json(t.path().join("o/ideal.json"));
    assert_eq!(ideal["nodes"].as_array().unwrap().len(), 3);
    let necks = fs::read_to_string(t.path().join("o/necks.csv")).unwrap();
    assert!(necks.starts_with("vertex,alpha,neck,ball_defect\n"));
    assert_eq!(necks.lines().count(), 1 + 2 * 6);
}

#[test]
fn extract_of_a_constant_family_is_one_vertex() {
    let t = TempDir::new().unwrap();
    let family = json!({
        "template": {
            "N": 5.0,
            "nodes": [
                {"id": "0", "k": 0, "conn": "product"},
                {"id": "1", "parent": "0", "k": 1, "x": [0.3, 0.0, 0.0, 0.0], "lambda": 1e-3,
                 "conn": {"bpst": {"q": [0.0, 0.0, 0.0, 0.0], "lambda": FRAC_1_SQRT_2, "flavor": "singular"}}}
            ]
        },
        "alphas": [0.0, 1.0, 2.0, 3.0],
        "rates": {"1": 0.0},
        "cutoff_factor": 2.5
    });
    let cfg = write(t.path(), "e.json", &json!({"family": family}));
    let o = asdglue(
        t.path(),
        &["extract", "--config", cfg.to_str().unwrap(), "--out", "o"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ideal = read_json(t.path().join("o/ideal.json"));
    assert_eq!(ideal["nodes"].as_array().unwrap().len(), 1);
    assert!(!t.path().join("o/roundtrip.json").exists());
}

#[test]
fn extract_beyond_the_depth_cap_is_an_algorithm_failure() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "e.json",
        &json!({"family": "chain3", "thresholds": {"max_depth": 2}}),
    );
    let o = asdglue(t.path(), &["extract", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("algorithm failure"));
}

#[test]
fn check_passes_and_is_thread_independent() {
    let t = TempDir::new().unwrap();
    let o = asdglue(
        t.path(),
        &["check", "--seed", "11", "--out", "a", "--threads", "1"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_asdglue"))
        .current_dir(t.path())
        .env("ASDGLUE_THREADS", "4")
        .args(["check", "--seed", "11", "--out", "b"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (a, b) = (
        fs::read(t.path().join("a/check.json")).unwrap(),
        fs::read(t.path().join("b/check.json")).unwrap(),
    );
    assert_eq!(a, b);
    let r: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(
        (r["seed"].as_u64(), r["passed"].as_bool()),
        (Some(11), Some(true))
    );

    let o = asdglue(t.path(), &["check", "--seed", "12", "--out", "c"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(t.path().join("c/check.json")).unwrap(), a);
}

#[test]
fn injected_bad_cutoff_is_reported() {
    let t = TempDir::new().unwrap();
    let o = asdglue(t.path(), &["check", "--inject-bad-cutoff", "--out", "o"]);
    assert_eq!(code(&o), 2);
    let r = read_json(t.path().join("o/check.json"));
    assert_eq!(r["passed"], false);
    let failed: Vec<&str> = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["psi_bounds"]);
}
