use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use coregen::cnf::parse_dimacs;
use coregen::sat::{is_unsat, SolverConfig};

const TRIVIAL_CORE: &str = "p cnf 2 4\n1 2 0\n-1 2 0\n1 -2 0\n-1 -2 0\n";

fn coregen(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coregen"))
        .args(args)
        .env("COREGEN_OUT_DIR", out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = coregen(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn files(dir: &Path, suffix: &str) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(suffix))
        .collect();
    v.sort();
    v
}

fn seeds(out: &Path, count: usize) -> String {
    let n = count.to_string();
    ok(out, &["sample-ksat", "--count", &n, "--mu-m", "90", "--sigma-m", "5", "--seed", "3"]);
    out.join("seeds").to_string_lossy().into_owned()
}

#[test]
fn extract_core_of_trivial_core() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.cnf");
    fs::write(&input, TRIVIAL_CORE).unwrap();
    let json = dir.path().join("t.json");
    ok(dir.path(), &["extract-core", input.to_str().unwrap(), "--output", json.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["core"], serde_json::json!([0, 1, 2, 3]));
    assert_eq!(v["source"], "oracle");
}

#[test]
fn extract_core_rejects_satisfiable_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.cnf");
    fs::write(&input, "p cnf 2 2\n1 2 0\n-1 0\n").unwrap();
    let o = coregen(dir.path(), &["extract-core", input.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("input is satisfiable"));
}

#[test]
fn missing_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = coregen(dir.path(), &["extract-core", "/nonexistent/x.cnf"]);
    assert!(!o.status.success());
}

#[test]
fn solve_reports_status() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.cnf");
    fs::write(&input, TRIVIAL_CORE).unwrap();
    let o = coregen(dir.path(), &["solve", input.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("s UNSATISFIABLE"));
}

#[test]
fn generate_writes_unsat_outputs_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = seeds(dir.path(), 2);
    ok(dir.path(), &["generate", &seeds, "--count", "3"]);
    let gen = dir.path().join("generated");
    let cnfs = files(&gen, ".cnf");
    assert_eq!(cnfs.len(), 6);
    assert_eq!(files(&gen, ".manifest.json").len(), 6);
    for f in cnfs {
        let cnf = parse_dimacs(&fs::read_to_string(gen.join(f)).unwrap()).unwrap();
        assert!(is_unsat(&cnf, &SolverConfig::default()).unwrap());
    }
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("generate.manifest.json")).unwrap()).unwrap();
    assert_eq!(run["root_seed"], 0);
    assert!(run["details"]["time_per_instance_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn generate_is_reproducible_across_job_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let seeds = seeds(a.path(), 3);
    ok(a.path(), &["generate", &seeds, "--count", "2", "--seed", "9", "--jobs", "1"]);
    ok(b.path(), &["generate", &seeds, "--count", "2", "--seed", "9", "--jobs", "3"]);
    let names = files(&a.path().join("generated"), ".cnf");
    assert_eq!(names, files(&b.path().join("generated"), ".cnf"));
    for n in names {
        let x = fs::read(a.path().join("generated").join(&n)).unwrap();
        let y = fs::read(b.path().join("generated").join(&n)).unwrap();
        assert_eq!(x, y, "{n} differs");
    }
}

#[test]
fn evaluate_identical_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = seeds(dir.path(), 4);
    ok(dir.path(), &["evaluate", &seeds, &seeds]);
    let report = dir.path().join("report");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("summary.json")).unwrap()).unwrap();
    assert_eq!(v["hardness_ratio"].as_f64().unwrap(), 100.0);
    assert!(v["mmd"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(
        fs::read_to_string(report.join("hardness_original.csv")).unwrap(),
        fs::read_to_string(report.join("hardness_generated.csv")).unwrap()
    );
}

#[test]
fn identity_augmentation_shows_no_gain() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = seeds(dir.path(), 12);
    ok(dir.path(), &["augment-bench", &seeds, "--generator", "identity", "--sizes", "8", "--trials", "6"]);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("augment/summary.json")).unwrap()).unwrap();
    assert!(v["wilcoxon_p"][0].as_f64().unwrap() >= 0.1);
    assert!(dir.path().join("augment/table.csv").exists());
}

#[test]
fn harvest_train_generate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = seeds(dir.path(), 2);
    ok(dir.path(), &["harvest", &seeds, "--iters", "10"]);
    let pairs = dir.path().join("pairs");
    assert!(!files(&pairs, ".core.json").is_empty());
    ok(dir.path(), &["train", pairs.to_str().unwrap(), "--epochs", "1"]);
    let model = dir.path().join("model.json");
    assert!(model.exists());
    ok(dir.path(), &["generate", &seeds, "--count", "1", "--model", model.to_str().unwrap(), "--iterations", "20"]);
    assert_eq!(files(&dir.path().join("generated"), ".cnf").len(), 2);
}

#[test]
fn gnn_generator_needs_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = seeds(dir.path(), 8);
    let o = coregen(dir.path(), &["augment-bench", &seeds, "--sizes", "5", "--trials", "5"]);
    assert!(!o.status.success());
}
