use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use saltls::cli::{exit_code, run};
use saltls::generators::load_instance;
use saltls::textio::{load_matrix, KeyValues};
use saltls::Error;

fn saltls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saltls")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path, body: &str) -> String {
    let spec = dir.join("spec.cfg");
    fs::write(&spec, body).unwrap();
    path(&spec).to_string()
}

const SMALL: &str = "n = 40\nk = 2\nspectrum = 2, 1\nmu_target = 8\nseed = 1\n";

#[test]
fn generate_round_trips_and_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), SMALL);
    let inst = tmp.path().join("inst");
    assert_eq!(saltls(&["generate", "--spec", &spec, "--out", path(&inst)]).status.code(), Some(0));
    let truth = load_instance(&inst).unwrap();
    assert_eq!((truth.n(), truth.k()), (40, 2));
    assert!(truth.mu_u() <= 8.0);
    let saved = KeyValues::load(&inst.join("spec.cfg")).unwrap();
    assert_eq!(saved.require::<usize>("n").unwrap(), 40);

    let algo = tmp.path().join("algo.cfg");
    fs::write(&algo, "schedule = reuse\neps = 1e-6\n").unwrap();
    let out = tmp.path().join("run");
    let res = saltls(&["complete", "--instance", path(&inst), "--p", "1", "--config", path(&algo), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let x = load_matrix(&out.join("x.txt")).unwrap();
    let y = load_matrix(&out.join("y.txt")).unwrap();
    assert!((x * y.transpose() - truth.m()).norm() / truth.m().norm() < 1e-6);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("p,seed,subspace_err,subspace_err_last,frob_rel_err,success\n"));
    assert!(metrics.trim_end().ends_with(",1"));
    assert!(fs::read_to_string(out.join("trace.csv")).unwrap().starts_with("step,sin,tan,vnorm,gnorm,mu\n"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "p_grid = 0.5, 1\nseeds = 2\ninstance.n = 40\ninstance.k = 2\ninstance.spectrum = 2, 1\n\
         instance.mu_target = 8\ninstance.seed = 2\nalgo.schedule = reuse\nalgo.eps = 0.01\nrecord_wall_time = true\n",
    );
    let out = tmp.path().join("sweep");
    assert_eq!(saltls(&["sweep", "--spec", &spec, "--out", path(&out)]).status.code(), Some(0));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].ends_with(",wall_time"));
    assert!(lines[1].starts_with("5.0000000000000000e-1,0,") || lines[1].starts_with("0.5,0,"));
}

#[test]
fn nsi_trace_reaches_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/nsi.cfg");
    let out = tmp.path().join("nsi");
    assert_eq!(saltls(&["nsi", "--config", path(&cfg), "--out", path(&out)]).status.code(), Some(0));
    let text = fs::read_to_string(out.join("trace.csv")).unwrap();
    let last = text.lines().last().unwrap();
    let vnorm: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert!(vnorm <= 1e-3);
    assert_eq!(load_matrix(&out.join("x.txt")).unwrap().shape(), (100, 2));
}

#[test]
fn usage_and_input_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(["saltls", "bogus"]), 1);
    assert_eq!(run(["saltls", "complete", "--p", "0.5"]), 1);
    let missing = tmp.path().join("missing");
    assert_eq!(run(["saltls", "generate", "--spec", path(&missing), "--out", path(tmp.path())]), 1);
    let spec = write_spec(tmp.path(), "n = 40\nk = 2\nspectrum = 2, 1\nmu_target = 8\nflavor = sour\n");
    assert_eq!(run(["saltls", "generate", "--spec", &spec, "--out", path(&tmp.path().join("x"))]), 1);
}

#[test]
fn corrupted_instance_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), SMALL);
    let inst = tmp.path().join("inst");
    assert_eq!(run(["saltls", "generate", "--spec", &spec, "--out", path(&inst)]), 0);
    let basis = inst.join("basis.txt");
    let text = fs::read_to_string(&basis).unwrap();
    fs::write(&basis, &text[..text.len() / 2]).unwrap();
    let out = tmp.path().join("run");
    let res = saltls(&["complete", "--instance", path(&inst), "--p", "0.5", "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    assert!(!out.exists());
}

#[test]
fn infeasible_coherence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "n = 40\nk = 2\nspectrum = 2, 1\nmu_target = 1\nseed = 1\n");
    assert_eq!(run(["saltls", "generate", "--spec", &spec, "--out", path(&tmp.path().join("x"))]), 3);
}

#[test]
fn numerical_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), SMALL);
    let inst = tmp.path().join("inst");
    assert_eq!(run(["saltls", "generate", "--spec", &spec, "--out", path(&inst)]), 0);
    let out = tmp.path().join("run");
    assert_eq!(run(["saltls", "complete", "--instance", path(&inst), "--p", "0.001", "--out", path(&out)]), 2);
}

#[test]
fn exit_code_table() {
    assert_eq!(exit_code(&Error::ZeroInput), 2);
    assert_eq!(exit_code(&Error::RankFailure { step: Some(3), sigma_k: 0.0 }), 2);
    assert_eq!(exit_code(&Error::NoiseInfeasible("x".into())), 3);
    assert_eq!(exit_code(&Error::Parse("x".into())), 1);
}
