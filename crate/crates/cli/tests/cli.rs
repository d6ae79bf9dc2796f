use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use majorant_cli::report::read_csv;
use majorant_cli::{RunConfig, DEFAULT_CONFIG};
use serde_json::Value;

fn majorant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_majorant")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn estimate(config: &Path, out: &Path) -> Output {
    majorant(&["estimate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

const SMALL: &str = "[mesh]\nresolution = 2\ntime_steps = 2\n";

#[test]
fn printed_default_config_is_the_default() {
    let out = majorant(&["--print-default-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, DEFAULT_CONFIG);
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
}

#[test]
fn default_estimate_reports_every_bound_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mp1.toml", "[problem]\nmanufactured = \"mp1\"\n");
    let json = dir.path().join("r.json");
    let out = estimate(&cfg, &json);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(r["schema"], "bound-report/1");
    let v = |k: &str| r["bounds"][k]["value"].as_f64().unwrap();
    let e = |k: &str| r["error_measures"][k]["total"].as_f64().unwrap();
    for k in ["majorant_I", "majorant_I_N", "majorant_II_N", "majorant_optimized"] {
        assert_eq!(r["bounds"][k]["status"], "ok");
        assert!(r["bounds"][k]["hypotheses"]["parameters"].as_bool().unwrap());
        assert!(r["bounds"][k]["hypotheses"]["mean_values"].as_bool().unwrap());
        assert!(e(k) <= v(k), "{k}");
        assert!(v("minorant") <= v(k), "{k}");
    }
    assert!(v("minorant") >= 0.0 && v("minorant") <= e("minorant"));
    assert!(v("majorant_optimized") <= v("majorant_I_N"));
    assert_eq!(r["sandwich"], true);
    assert_eq!(r["equivalence"]["status"], "ok");
    let sum: f64 = r["bounds"]["majorant_I_N"]["breakdown"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
    assert!((sum - v("majorant_I_N")).abs() <= 1e-12 * v("majorant_I_N"));
    assert!(r["wall_time_s"].as_f64().is_some());
}

#[test]
fn out_of_range_delta_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[parameters]\ndelta = 3.0\n");
    let out = estimate(&cfg, &dir.path().join("r.json"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(0, 2]"));
}

#[test]
fn malformed_configs_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.json");
    let typo = write(dir.path(), "typo.toml", "[mesh]\nresolutoin = 3\n");
    assert_eq!(estimate(&typo, &r).status.code(), Some(2));
    let missing = dir.path().join("absent.toml");
    assert_eq!(estimate(&missing, &r).status.code(), Some(2));
    let unknown = write(dir.path(), "mp9.toml", "[problem]\nmanufactured = \"mp9\"\n");
    assert_eq!(estimate(&unknown, &r).status.code(), Some(2));
    let bad_expr = INLINE.replace("source = \"1\"", "source = \"foo(x)\"");
    let bad_expr = write(dir.path(), "expr.toml", &bad_expr);
    assert_eq!(estimate(&bad_expr, &r).status.code(), Some(2));
}

const INLINE: &str = r#"
id = "inline"
[problem.inline]
horizon = 0.5
geometry = { type = "box", lower = [0.0, 0.0], upper = [1.0, 1.0] }
sides = ["dirichlet", "dirichlet", "robin", "robin"]
diffusion = "1 + x"
reaction = "if(x > 0.5, 2, 0)"
robin = "1"
lambda_min = 1.0
lambda_max = 2.0
reaction_bound = 2.0
robin_bound = 1.0
source = "1"
boundary = "0"
initial = "sin(pi*x)"
[mesh]
resolution = 4
time_steps = 2
"#;

#[test]
fn inline_problem_runs_without_error_measures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "inline.toml", INLINE);
    let json = dir.path().join("r.json");
    let out = estimate(&cfg, &json);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(r["problem"], "inline");
    assert!(r["error_measures"].is_null());
    assert!(r["bounds"]["majorant_I_N"]["value"].as_f64().unwrap() > 0.0);
    assert!(r["mesh"]["strong_cells"].as_u64().unwrap() > 0 && r["mesh"]["weak_cells"].as_u64().unwrap() > 0);
}

#[test]
fn unresolved_robin_part_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    // the split at x = 0.3 does not fall on a face boundary of a 4×4 mesh
    let text = INLINE.replace(
        "sides = [\"dirichlet\", \"dirichlet\", \"robin\", \"robin\"]",
        "sides = [\"dirichlet\", \"dirichlet\", \"robin\", { kind = \"robin\", patches = [{ coord = 0, lo = 0.0, hi = 0.3, kind = \"dirichlet\" }] }]",
    );
    let cfg = write(dir.path(), "split.toml", &text);
    let out = estimate(&cfg, &dir.path().join("r.json"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // a split on a mesh line is fine
    let ok = write(dir.path(), "ok.toml", &text.replace("hi = 0.3", "hi = 0.5"));
    assert!(estimate(&ok, &dir.path().join("r.json")).status.success());
}

#[test]
fn declared_bounds_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lambda.toml", &INLINE.replace("lambda_max = 2.0", "lambda_max = 1.5"));
    assert_eq!(estimate(&cfg, &dir.path().join("r.json")).status.code(), Some(3));
}

#[test]
fn skipped_mean_value_correction_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ga.toml", &format!("{SMALL}[flux]\nmethod = \"gradient_average\"\n"));
    let out = estimate(&cfg, &dir.path().join("r.json"));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean-value"));
}

#[test]
fn reports_are_bit_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "det.toml", &format!("[problem]\nmanufactured = \"mp2\"\n{SMALL}[output]\ntiming = false\n"));
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert!(estimate(&cfg, &a).status.success());
    assert!(estimate(&cfg, &b).status.success());
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    assert!(!String::from_utf8(a).unwrap().contains("wall_time_s"));
}

#[test]
fn convergence_rates_match_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let csv_path = dir.path().join("c.csv");
    let out = majorant(&["convergence", "--config", cfg.to_str().unwrap(), "--levels", "3", "--out", csv_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(std::fs::File::open(&csv_path).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.resolution).collect::<Vec<_>>(), [2, 4, 8]);
    assert!(rows[0].rate_error_measure.is_none());
    for k in 1..3 {
        let (p, c) = (&rows[k - 1], &rows[k]);
        let r = |a: Option<f64>, b: Option<f64>| (a.unwrap() / b.unwrap()).log2();
        assert_eq!(c.rate_error_measure, Some(r(p.error_measure, c.error_measure)));
        assert_eq!(c.rate_majorant_I_N, Some(r(p.majorant_I_N, c.majorant_I_N)));
        assert_eq!(c.rate_majorant_optimized, Some(r(p.majorant_optimized, c.majorant_optimized)));
        assert!(c.h < p.h && c.dt < p.dt);
    }
    let one = majorant(&["convergence", "--config", cfg.to_str().unwrap(), "--levels", "1"]);
    assert_eq!(one.status.code(), Some(2));
}

#[test]
fn constants_table() {
    let out = majorant(&["constants", "--shape", "rect", "1", "1", "--oracle-grid", "32"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let closed: f64 = rows[0][3].parse().unwrap();
    let oracle: f64 = rows[0][4].parse().unwrap();
    assert!((closed - 0.565244).abs() < 1e-6);
    assert!((closed - oracle).abs() / oracle < 0.01);
    assert!(rows.last().unwrap()[2].starts_with("poincare"));

    let out = majorant(&["constants", "--shape", "tri", "1", "--oracle-grid", "32"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0.656018"), "{text}");

    assert_eq!(majorant(&["constants", "--shape", "rect", "1"]).status.code(), Some(2));
    assert_eq!(majorant(&["constants", "--shape", "rect", "1", "-1"]).status.code(), Some(2));
    assert_eq!(majorant(&["constants", "--shape", "disk", "1"]).status.code(), Some(2));
}
