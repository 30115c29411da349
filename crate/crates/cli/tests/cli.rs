use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pstab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pstab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn pstab")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
name = "small"
[domain]
x = [0, "pi"]
n = 24
[operator]
c = -1
shift = "first-eigenvalue"
[perturbation]
expr = "cos(x)"
scale = 0.05
[forcing]
expr = "sin(2*x)"
[control]
K0 = "auto"
omega = [[0, "pi/2"]]
[sweep]
scales = [0.5, 1, 2]
m_E = [1, 0.5]
"#;

#[test]
fn unknown_command_prints_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pstab(&["frobnicate", "--config", "x.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_file_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pstab(&["eig", "--config", "absent.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let empty_omega = write(
        tmp.path(),
        "g.toml",
        "[domain]\nx = [0, \"pi\"]\nn = 16\n[control]\nomega = [[0.001, 0.002]]\n",
    );
    let out = pstab(&["gram", "--config", &empty_omega], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let bad_q = write(tmp.path(), "q.toml", "[domain]\nx = [0, 1]\nn = 16\n[perturbation]\nq = 2\n");
    assert_eq!(pstab(&["eig", "--config", &bad_q], tmp.path()).status.code(), Some(2));

    let outside = write(tmp.path(), "w.toml", "[domain]\nx = [0, 1]\nn = 16\n[control]\nomega = [[0.5, 2]]\n");
    assert_eq!(pstab(&["gram", "--config", &outside], tmp.path()).status.code(), Some(2));

    let cfg = write(tmp.path(), "s.toml", SMALL);
    assert_eq!(pstab(&["stabilize", "--config", &cfg, "--K0", "many"], tmp.path()).status.code(), Some(2));
    assert_eq!(pstab(&["stabilize", "--config", &cfg, "--steps", "3"], tmp.path()).status.code(), Some(2));
}

#[test]
fn ill_conditioned_localization_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let body = |w: f64| {
        format!(
            "[domain]\nx = [0, \"pi\"]\nn = 40\n[perturbation]\nexpr = \"0.01*cos(x)\"\n\
             [forcing]\nexpr = \"sin(2*x)\"\n[control]\nK0 = 4\nomega = [[0, {w}]]\n"
        )
    };
    let near_singular = write(tmp.path(), "a.toml", &body(1.0));
    assert_eq!(pstab(&["stabilize-local", "--config", &near_singular], tmp.path()).status.code(), Some(3));
    let degenerate = write(tmp.path(), "b.toml", &body(0.3));
    assert_eq!(pstab(&["stabilize-local", "--config", &degenerate], tmp.path()).status.code(), Some(8));
}

#[test]
fn stabilize_preset_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pstab(&["stabilize", "--config", "preset:section3-stabilized", "--out", "res"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("res/section3-stabilized");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("stabilize.json")).unwrap()).unwrap();
    let residual = doc["residual"].as_f64().unwrap();
    assert!(residual <= doc["residual_tolerance"].as_f64().unwrap());
    assert_eq!(doc["k0"].as_u64(), Some(1));
    let traj = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,y_1,"));
    assert_eq!(traj.lines().count(), 514);
}

#[test]
fn every_command_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    for cmd in ["eig", "periodic", "stabilize", "stabilize-local", "gram", "example3", "sweep"] {
        let out = pstab(&[cmd, "--config", &cfg, "--out", "o"], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let dir = tmp.path().join("o/small");
    for f in ["eig.json", "eigenbasis.csv", "spectrum.csv", "periodic.json", "stabilize.json", "stabilize-local.json", "control.csv", "gram.json", "gram.csv", "example3.json", "phi_e.csv", "sweep.csv", "sweep.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_csv_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    let a = pstab(&["sweep", "--config", &cfg, "--out", "a"], tmp.path());
    let b = pstab(&["sweep", "--config", &cfg, "--out", "b"], tmp.path());
    assert!(a.status.success() && b.status.success());
    let ca = fs::read(tmp.path().join("a/small/sweep.csv")).unwrap();
    let cb = fs::read(tmp.path().join("b/small/sweep.csv")).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epsilon,m_E,K0,norm_u,norm_u_sq,residual,sup_dev_sq,dissipation_dev,ratio_17,ratio_18,cond_Jstar,sigma_min_Jstar"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    // 17 significant digits: one leading digit and sixteen decimals
    let first = rows[0].split(',').next().unwrap();
    let mantissa = first.split('e').next().unwrap();
    assert_eq!(mantissa.trim_start_matches('-').len(), 18, "{first}");
}
