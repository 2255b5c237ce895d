use std::path::Path;
use std::process::Command;

use hamreach::cli::read_matrix;
use tempfile::TempDir;

fn hamreach(out: &Path, args: &[&str]) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_hamreach"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("HAMREACH_THREADS")
        .output()
        .expect("binary runs");
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn last_row(csv: &str) -> Vec<f64> {
    let line = csv.lines().nth(1).expect("a data row");
    line.split(',').map(|v| v.parse().unwrap()).collect()
}

#[test]
fn simulate_writes_trajectory_and_manifest() {
    let dir = TempDir::new().unwrap();
    let (code, err) = hamreach(dir.path(), &["simulate", "--model", "double-pendulum", "--eps", "0.5", "--t-max", "0.01", "--stride", "1"]);
    assert_eq!(code, 0, "{err}");
    let csv = read(dir.path(), "trajectory.csv");
    assert!(csv.starts_with("t,x1,x2,x3,x4\n"));
    assert_eq!(csv.lines().count(), 12);
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "simulate.manifest.json")).unwrap();
    assert_eq!(manifest["command"]["subcommand"], "simulate");
    assert_eq!(manifest["outputs"][0], "trajectory.csv");
}

#[test]
fn mfet_sweep_and_replay_are_identical() {
    let dir = TempDir::new().unwrap();
    let args = ["mfet", "--model", "double-pendulum", "--domain", "D1", "--inv-eps", "1,2,3", "--trials", "40", "--seed", "42"];
    let (code, err) = hamreach(dir.path(), &args);
    assert_eq!(code, 0, "{err}");
    let sweep = read(dir.path(), "mfet_sweep.csv");
    assert!(sweep.starts_with("eps,inv_eps,mean_tau,stderr,n,timeouts\n"));
    assert_eq!(sweep.lines().count(), 4);
    assert!(read(dir.path(), "mfet_fit.csv").starts_with("slope,intercept,r_squared\n"));

    let again = TempDir::new().unwrap();
    let manifest = dir.path().join("mfet.manifest.json");
    let (code, err) = hamreach(again.path(), &["replay", manifest.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(read(again.path(), "mfet_sweep.csv"), sweep);
    assert_eq!(read(again.path(), "mfet_fit.csv"), read(dir.path(), "mfet_fit.csv"));
}

#[test]
fn thread_count_does_not_change_results() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["hitprob", "--model", "ou:a=1", "--target", "above:1", "--horizon", "2", "--eps", "0.5", "--trials", "300", "--seed", "9"];
    let (code, _) = hamreach(a.path(), &[&["--threads", "1"][..], &args].concat());
    assert_eq!(code, 0);
    let o = Command::new(env!("CARGO_BIN_EXE_hamreach"))
        .arg("--out")
        .arg(b.path())
        .args(args)
        .env("HAMREACH_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(read(a.path(), "hitprob.csv"), read(b.path(), "hitprob.csv"));
    let manifest: serde_json::Value = serde_json::from_str(&read(b.path(), "hitprob.manifest.json")).unwrap();
    assert_eq!(manifest["threads"], 3);
}

#[test]
fn hitprob_and_committor_tables() {
    let dir = TempDir::new().unwrap();
    let (code, err) = hamreach(
        dir.path(),
        &["hitprob", "--model", "double-pendulum-linear", "--target", "not:D2", "--horizon", "1", "--inv-eps", "1,2", "--trials", "100"],
    );
    assert_eq!(code, 0, "{err}");
    let hp = read(dir.path(), "hitprob.csv");
    assert!(hp.starts_with("eps,inv_eps,horizon,p,stderr,value,n,hits\n"));
    assert_eq!(hp.lines().count(), 3);

    let (code, err) = hamreach(
        dir.path(),
        &["committor", "--model", "double-well", "--set-a", "below:-1", "--set-b", "above:1", "--x0", "0", "--eps", "0.5", "--trials", "200"],
    );
    assert_eq!(code, 0, "{err}");
    let row = last_row(&read(dir.path(), "committor.csv"));
    assert!((row[2] - 0.5).abs() < 4.0 * row[3]);
    assert_eq!(row[5] + row[6] + row[7], 200.0);
}

#[test]
fn inf_l_reports_boundary_infimum() {
    let dir = TempDir::new().unwrap();
    let (code, err) = hamreach(dir.path(), &["inf-l", "--model", "double-pendulum", "--domain", "D2"]);
    assert_eq!(code, 0, "{err}");
    let csv = read(dir.path(), "inf_l.csv");
    assert!(csv.starts_with("value,argmin_1,argmin_2,argmin_3,argmin_4,n_converged\n"));
    assert!((last_row(&csv)[0] - 0.8539).abs() < 1e-3);

    let (code, _) = hamreach(dir.path(), &["inf-l", "--model", "ou:a=1", "--domain", "unit"]);
    assert_eq!(code, 0);
    // Σ = 1/2 for the unit OU process, so the infimum is 1
    assert!((last_row(&read(dir.path(), "inf_l.csv"))[0] - 1.0).abs() < 1e-6);
}

#[test]
fn linearize_and_lyapunov_matrices() {
    let dir = TempDir::new().unwrap();
    assert_eq!(hamreach(dir.path(), &["linearize", "--model", "double-pendulum"]).0, 0);
    let a = read_matrix(&read(dir.path(), "linearize_a.csv")).unwrap();
    assert!((a[(2, 0)] + 31.0).abs() < 1e-6 && (a[(2, 1)] + 10.0).abs() < 1e-6);
    assert_eq!(read_matrix(&read(dir.path(), "linearize_c.csv")).unwrap().shape(), (4, 4));

    assert_eq!(hamreach(dir.path(), &["lyapunov", "--model", "double-pendulum-linear"]).0, 0);
    let sigma = read_matrix(&read(dir.path(), "lyapunov_sigma.csv")).unwrap();
    // S⁻¹ = [[5, 2], [2, 1]] in the momentum block
    assert!((sigma[(2, 2)] - 5.0).abs() < 1e-10 && (sigma[(2, 3)] - 2.0).abs() < 1e-10);
    assert!((sigma[(0, 0)] - 11.0 / 241.0).abs() < 1e-10);
}

#[test]
fn lyapunov_from_linear_model_file() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("model.toml");
    std::fs::write(&file, "a = [[-1.0, 0.0], [0.0, -2.0]]\nc = [[1.0, 0.0], [0.0, 2.0]]\n").unwrap();
    let model = format!("file:{}", file.display());
    assert_eq!(hamreach(dir.path(), &["lyapunov", "--model", &model]).0, 0);
    let sigma = read_matrix(&read(dir.path(), "lyapunov_sigma.csv")).unwrap();
    assert!((sigma[(0, 0)] - 0.5).abs() < 1e-14 && (sigma[(1, 1)] - 1.0).abs() < 1e-14);
}

#[test]
fn free_energy_surface() {
    let dir = TempDir::new().unwrap();
    let (code, err) = hamreach(dir.path(), &["free-energy", "--model", "double-pendulum-linear", "--eps", "0.3", "--grid", "-0.4:0.4:3"]);
    assert_eq!(code, 0, "{err}");
    let csv = read(dir.path(), "free_energy.csv");
    assert!(csv.starts_with("z1,z2,Lbar\n"));
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let quad = 0.5 * (31.0 * v[0] * v[0] + 20.0 * v[0] * v[1] + 11.0 * v[1] * v[1]);
        assert!((v[2] - quad).abs() < 1e-8, "{line}");
    }
    let (code, _) = hamreach(dir.path(), &["free-energy", "--model", "double-pendulum", "--limit", "--grid", "0.2:0.2:1"]);
    assert_eq!(code, 0);
}

#[test]
fn verify_passes() {
    let dir = TempDir::new().unwrap();
    let (code, err) = hamreach(dir.path(), &["verify", "--trials", "1000"]);
    assert_eq!(code, 0, "{err}");
    let csv = read(dir.path(), "verify.csv");
    assert!(csv.starts_with("check,value,tolerance,pass\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(hamreach(dir.path(), &["bogus"]).0, 2);
    assert_eq!(hamreach(dir.path(), &["mfet", "--model", "nope", "--domain", "D1", "--eps", "1"]).0, 2);
    assert_eq!(hamreach(dir.path(), &["mfet", "--model", "ou:a=1", "--domain", "unit", "--eps", "0"]).0, 2);
    assert_eq!(hamreach(dir.path(), &["inf-l", "--model", "double-pendulum", "--domain", "D9"]).0, 2);
    // A with a positive eigenvalue: the Gramian does not exist
    let file = dir.path().join("unstable.toml");
    std::fs::write(&file, "a = [[1.0, 0.0], [0.0, -2.0]]\nc = [[1.0], [1.0]]\n").unwrap();
    let model = format!("file:{}", file.display());
    let (code, err) = hamreach(dir.path(), &["lyapunov", "--model", &model]);
    assert_eq!(code, 1, "{err}");
}
