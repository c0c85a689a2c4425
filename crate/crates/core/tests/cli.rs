use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stochom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = stochom(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const SMALL: [&str; 8] = ["--set", "h=1/12", "--set", "h0=1/32", "--set", "h1=1/32", "--set", "L=6"];

#[test]
fn two_stage_writes_field_stats_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ts");
    let mut args = vec!["two-stage", "--set", "test_case=A_I", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    ok(&args);
    for f in ["u0_field.vtk", "u0_field.csv", "equivalent_stats.csv", "tensors.csv", "manifest.json", "config.ini"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let tensors = read(&out, "tensors.csv");
    assert!(tensors.starts_with("sample_index,block_k1,block_k2,a11,a12,a21,a22,cg_iterations\n"));
    assert_eq!(tensors.lines().count(), 7);
    let manifest: serde_json::Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert_eq!(manifest["subcommand"], "two-stage");
    assert_eq!(manifest["config"]["samples"], 6);
    assert!(manifest["seed"].is_u64());
    assert!(manifest["timings"]["total_seconds"].is_f64());
    assert_eq!(manifest["coefficient_reading"], "literal");
}

#[test]
fn rerun_from_recorded_config_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let mut args = vec!["two-stage", "--seed", "99", "--workers", "2", "--out", a.to_str().unwrap()];
    args.extend(SMALL);
    ok(&args);
    let b = tmp.path().join("b");
    let cfg = a.join("config.ini");
    ok(&["two-stage", "--config", cfg.to_str().unwrap(), "--workers", "1", "--out", b.to_str().unwrap()]);
    for f in ["tensors.csv", "equivalent_stats.csv", "u0_field.csv", "kl_decomposition.csv", "u0_field.vtk"] {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs");
    }
    assert!(read(&a, "config.ini").contains("seed = 99"));
}

#[test]
fn compare_after_two_stage_and_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let ts = tmp.path().join("ts");
    let rf = tmp.path().join("ref");
    let cmp = tmp.path().join("cmp");
    let mut a = vec!["two-stage", "--set", "diagonal_only=true", "--out", ts.to_str().unwrap()];
    a.extend(SMALL);
    ok(&a);
    let mut b = vec!["reference", "--set", "diagonal_only=true", "--out", rf.to_str().unwrap()];
    b.extend(SMALL);
    ok(&b);
    ok(&["compare", ts.to_str().unwrap(), rf.to_str().unwrap(), "--out", cmp.to_str().unwrap()]);
    let csv = read(&cmp, "relative_error.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "solution,reference,l2_error,reference_l2_norm,relative_error");
    let rel: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!(rel > 0.0 && rel < 0.5, "{rel}");
}

#[test]
fn study_samples_table_has_one_row_per_l() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    ok(&[
        "study-samples", "--set", "L_list=4,16,64", "--set", "replicates=2", "--set", "h=1/8",
        "--out", out.to_str().unwrap(),
    ]);
    let table = read(&out, "table1.csv");
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "L,N,mu11,astar11,error,error_std_error");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("4,2,") && lines[3].starts_with("64,8,"));
    assert_eq!(read(&out, "clt.csv").lines().count(), 4);
}

#[test]
fn other_subcommands_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |n: &str| tmp.path().join(n).to_str().unwrap().to_string();
    let (c, h, dir, v, dl) = (d("cell"), d("hom"), d("direct"), d("var"), d("delta"));
    ok(&["cell", "--set", "h=1/12", "--set", "test_case=C", "--out", &c]);
    assert_eq!(read(Path::new(&c), "cell_tensor.csv").lines().count(), 2);
    ok(&["homogenize", "--set", "h=1/12", "--set", "L=4", "--set", "sets=3", "--out", &h]);
    assert_eq!(read(Path::new(&h), "sets.csv").lines().count(), 2);
    ok(&["direct", "--set", "n_fine=32", "--set", "test_case=A_I", "--out", &dir]);
    assert!(Path::new(&dir).join("direct_field.vtk").is_file());
    ok(&["study-variance", "--set", "h=1/8", "--set", "L=4", "--set", "M_list=1,2", "--out", &v]);
    assert_eq!(read(Path::new(&v), "variance_decay.csv").lines().count(), 3);
    ok(&[
        "study-delta", "--set", "h=1/8", "--set", "h1=1/32", "--set", "L=4", "--set", "delta_samples=1",
        "--set", "diagonal_only=true", "--out", &dl,
    ]);
    assert_eq!(read(Path::new(&dl), "delta_scaling.csv").lines().count(), 5);
}

#[test]
fn indefinite_literal_sample_is_a_solver_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let mut args = vec!["reference", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    expect_failure(&args, 3, "solver");
}

fn expect_failure(args: &[&str], code: i32, category: &str) {
    let out = stochom(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}");
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{category}]: ")), "{err}");
}

#[test]
fn failures_map_to_stable_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = out.to_str().unwrap();
    expect_failure(&["cell", "--set", "bogus=1", "--out", o], 2, "config");
    expect_failure(&["cell", "--set", "epsilon=1/7", "--set", "M=2", "--out", o], 2, "config");
    expect_failure(&["direct", "--set", "n_fine=16", "--out", o], 2, "config");
    expect_failure(
        &["cell", "--set", "test_case=B", "--set", "n_ellipses=100", "--out", o],
        4,
        "placement",
    );
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("keep.txt"), "previous run").unwrap();
    expect_failure(&["cell", "--set", "h=1/8", "--out", o], 5, "io");
    assert_eq!(fs::read_to_string(out.join("keep.txt")).unwrap(), "previous run");
}
