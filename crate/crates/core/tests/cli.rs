use std::fs;
use std::process::{Command, Output};

use qsd_core::io::read_table;

fn qsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsd")).args(args).output().expect("qsd runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let args = ["simulate", "--model", "pure-z:0", "--frame", "z", "--dt", "1e-3", "--steps", "500", "--seed", "7"];
    assert_eq!(stdout(&qsd(&args)), stdout(&qsd(&args)));
}

#[test]
fn ensembles_do_not_depend_on_worker_count() {
    let base = ["ensemble", "--frame", "theta", "--steps", "300", "--ntraj", "70", "--stride", "50", "--seed", "3"];
    let one = stdout(&qsd(&[&base[..], &["--workers", "1"]].concat()));
    let four = stdout(&qsd(&[&base[..], &["--workers", "4"]].concat()));
    assert_eq!(one, four);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# pure-state run\nmodel = pure-z:0\nframe = z\nsteps = 40\nseed = 5\ndt = 1e-3\n").unwrap();
    let from_file = read_table(&stdout(&qsd(&["simulate", "--config", cfg.to_str().unwrap()]))).unwrap();
    assert_eq!(from_file.rows.len(), 41);
    let overridden =
        read_table(&stdout(&qsd(&["simulate", "--config", cfg.to_str().unwrap(), "--steps", "10"]))).unwrap();
    assert_eq!(overridden.rows.len(), 11);
    assert_eq!(overridden.rows[..], from_file.rows[..11]);
}

#[test]
fn output_carries_a_versioned_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let out = qsd(&["simulate", "--steps", "5", "--out", path.to_str().unwrap()]);
    assert!(out.status.success() && out.stdout.is_empty());
    let table = read_table(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(table.schema.as_deref(), Some("qsd-csv/1 trajectory"));
    assert_eq!(table.columns, ["t", "x", "y", "z"]);
}

#[test]
fn single_member_ensemble_is_its_trajectory() {
    let common = ["--frame", "z", "--steps", "200", "--stride", "20", "--seed", "11"];
    let ens = read_table(&stdout(&qsd(&[&["ensemble", "--ntraj", "1"][..], &common].concat()))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.csv");
    let with_traces =
        qsd(&[&["ensemble", "--ntraj", "1", "--traces", traces.to_str().unwrap()][..], &common].concat());
    assert_eq!(read_table(&stdout(&with_traces)).unwrap(), ens);
    let mean = ens.column("mean_z").unwrap();
    assert!(ens.column("var_z").unwrap().iter().all(|v| *v == 0.0));
    let expected = ens.column("expected_mean_z").unwrap();
    assert_eq!(mean[0], 0.5);
    assert!((expected[0] - 0.5).abs() < 1e-15);
    let traces = read_table(&fs::read_to_string(&traces).unwrap()).unwrap();
    assert_eq!(traces.column("ds_env_0").unwrap(), ens.column("mean_ds_env").unwrap());
}

#[test]
fn stepping_choice_is_recorded_and_validated() {
    let text = stdout(&qsd(&["simulate", "--steps", "3", "--stepping", "cartesian"]));
    assert!(text.lines().nth(1).unwrap().ends_with("stepping=cartesian"));
    assert_eq!(qsd(&["simulate", "--frame", "z", "--stepping", "cartesian"]).status.code(), Some(1));
    assert_eq!(qsd(&["simulate", "--stepping", "rk4"]).status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| qsd(args).status.code();
    assert_eq!(code(&["simulate", "--steps", "0"]), Some(1));
    assert_eq!(code(&["simulate", "--model", "nope"]), Some(1));
    assert_eq!(code(&["simulate", "--no-such-flag"]), Some(1));
    assert_eq!(code(&["histogram", "--frame", "xyz"]), Some(1));
    assert_eq!(code(&["simulate", "--model", "quadratic-noise", "--dt", "10", "--steps", "200", "--init", "5"]), Some(2));
    assert_eq!(code(&["verify"]), Some(0));
    assert_eq!(code(&["verify", "--mutate", "z-drift-sign"]), Some(3));
    assert_eq!(code(&["--help"]), Some(0));
}

#[test]
fn verify_reports_residuals() {
    let text = stdout(&qsd(&["verify"]));
    assert!(text.lines().any(|l| l.starts_with("PASS") && l.contains("entropy-z-consistency")));
    let bad = qsd(&["verify", "--mutate", "z-drift-sign"]);
    let text = String::from_utf8(bad.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("FAIL") && l.contains("entropy-z-consistency")));
    assert!(text.lines().any(|l| l.starts_with("PASS") && l.contains("entropy-theta-consistency")));
}

#[test]
fn stationary_and_fpe_commands_write_densities() {
    let st = read_table(&stdout(&qsd(&["stationary", "--frame", "theta", "--cells", "400"]))).unwrap();
    let (a, f) = (st.column("density").unwrap(), st.column("fpe_density").unwrap());
    assert!(a.iter().zip(&f).all(|(u, v)| (u - v).abs() < 1e-3));
    let fpe = read_table(&stdout(&qsd(&[
        "fpe", "--frame", "z", "--cells", "200", "--dt", "1e-3", "--steps", "100", "--times", "0.05",
    ])))
    .unwrap();
    assert_eq!(fpe.columns, ["t", "z", "p"]);
    assert_eq!(fpe.rows.len(), 400);
}
