use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mclnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mclnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(str::to_string).collect()
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.toml");
    fs::write(
        &cfg,
        "n_trajectories = 4\npoints_per_trajectory = 5\nhidden = [4, 4]\nn_samples = 60\nminibatch = 20\ncheckpoint_every = 2\n",
    )
    .unwrap();
    cfg
}

struct Setup {
    tmp: TempDir,
    cfg: PathBuf,
}

impl Setup {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path());
        Setup { tmp, cfg }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    fn generate(&self, name: &str, task: &str, model: &str) -> PathBuf {
        let out = self.path(name);
        ok(mclnn(&[
            "generate", "--task", task, "--model", model, "--config", p(&self.cfg), "--out",
            p(&out),
        ]));
        out
    }

    fn train(&self, data: &Path, name: &str, model: &str, epochs: &str) -> PathBuf {
        let out = self.path(name);
        ok(mclnn(&[
            "train", "--data", p(data), "--model", model, "--config", p(&self.cfg), "--epochs",
            epochs, "--out", p(&out),
        ]));
        out
    }
}

#[test]
fn generate_defaults_write_one_file_per_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    let res = ok(mclnn(&["generate", "--task", "linear_spring", "--out", p(&out)]));
    let csvs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 100);
    assert!(out.join("manifest.json").exists());
    assert!(out.join("run.json").exists());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("100 trajectories") && text.contains("conservation check passed"));
    assert_eq!(csv_rows(&out.join("trajectory_0000.csv")).len(), 20 * 3);
}

#[test]
fn existing_output_needs_force() {
    let s = Setup::new();
    let data = s.generate("data", "gravity", "mclnn");
    let again = mclnn(&[
        "generate", "--task", "gravity", "--config", p(&s.cfg), "--out", p(&data),
    ]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"));
    ok(mclnn(&[
        "generate", "--task", "gravity", "--config", p(&s.cfg), "--out", p(&data), "--force",
    ]));
}

#[test]
fn seed_controls_contents() {
    let s = Setup::new();
    let run = |name: &str, seed: &str| {
        let out = s.path(name);
        ok(mclnn(&[
            "generate", "--task", "nonlinear_spring", "--config", p(&s.cfg), "--seed", seed,
            "--out", p(&out),
        ]));
        fs::read(out.join("trajectory_0001.csv")).unwrap()
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn train_writes_checkpoint_and_bounded_history() {
    let s = Setup::new();
    let data = s.generate("data", "linear_spring", "mclnn");
    let run = s.train(&data, "run", "mclnn", "10");
    assert!(run.join("checkpoint.json").exists());
    assert!(run.join("checkpoints/epoch_000004.json").exists());
    let rows = csv_rows(&run.join("loss.csv"));
    assert!(!rows.is_empty() && rows.len() <= 10);
    let header = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(header.starts_with("epoch,train_loss,val_loss\n"));

    // resuming continues the epoch count
    let resumed = s.path("resumed");
    ok(mclnn(&[
        "train", "--data", p(&data), "--config", p(&s.cfg), "--epochs", "2", "--resume",
        p(&run.join("checkpoint.json")), "--out", p(&resumed),
    ]));
    let ck: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(resumed.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck["epoch"], 12);
}

#[test]
fn baseline_refuses_trajectory_data() {
    let s = Setup::new();
    let data = s.generate("data", "linear_spring", "mclnn");
    let out = mclnn(&[
        "train", "--data", p(&data), "--model", "baseline", "--out", p(&s.path("run")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("acceleration"));
}

#[test]
fn task_mismatch_is_a_configuration_error() {
    let s = Setup::new();
    let data = s.generate("data", "linear_spring", "mclnn");
    let out = mclnn(&[
        "train", "--data", p(&data), "--task", "gravity", "--out", p(&s.path("run")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_other_sizes_only_with_the_pairwise_model() {
    let s = Setup::new();
    let traj = s.generate("traj", "linear_spring", "mclnn");
    let samples = s.generate("samples", "linear_spring", "baseline");
    let pair = s.train(&traj, "pair", "mclnn", "3");
    let base = s.train(&samples, "base", "baseline", "3");
    let force = fs::read_to_string(base.join("force.csv")).unwrap();
    assert!(force.starts_with("sample,particle,component,a_true,a_pred\n"));
    assert_eq!(force.lines().count(), 1 + 1000 * 3 * 3);

    let out = s.path("sim6");
    ok(mclnn(&[
        "simulate", "--checkpoint", p(&pair.join("checkpoint.json")), "--n-particles", "6",
        "--records", "10", "--out", p(&out),
    ]));
    assert_eq!(csv_rows(&out.join("report.csv")).len(), 10);
    assert_eq!(csv_rows(&out.join("model_trajectory.csv")).len(), 10 * 6);
    assert!(out.join("summary.json").exists());

    let refused = mclnn(&[
        "simulate", "--checkpoint", p(&base.join("checkpoint.json")), "--n-particles", "6",
        "--out", p(&s.path("sim_base6")),
    ]);
    assert_eq!(code(&refused), 2);
    assert!(stderr(&refused).contains("cannot simulate"));

    let one = s.path("sim1");
    ok(mclnn(&[
        "simulate", "--checkpoint", p(&base.join("checkpoint.json")), "--records", "1",
        "--out", p(&one),
    ]));
    let rows = csv_rows(&one.join("report.csv"));
    assert_eq!(rows.len(), 1);
    let header = fs::read_to_string(one.join("report.csv")).unwrap();
    assert!(header.starts_with("record,L_model,L_true,H_model,H_true,px,py,pz,lx,ly,lz,"));

    let cmp = s.path("cmp");
    ok(mclnn(&[
        "compare", "--mclnn", p(&pair.join("checkpoint.json")), "--baseline",
        p(&base.join("checkpoint.json")), "--records", "5", "--out", p(&cmp),
    ]));
    assert_eq!(csv_rows(&cmp.join("compare.csv")).len(), 10);
    assert_eq!(csv_rows(&cmp.join("report_baseline.csv")).len(), 5);
}

#[test]
fn potential_curve_rows_and_missing_checkpoint() {
    let s = Setup::new();
    let data = s.generate("data", "gravity", "mclnn");
    let run = s.train(&data, "run", "mclnn", "2");
    let out = s.path("pot");
    ok(mclnn(&[
        "potential", "--checkpoint", p(&run.join("checkpoint.json")), "--points", "100",
        "--out", p(&out),
    ]));
    let rows = csv_rows(&out.join("potential.csv"));
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().any(|r| r.ends_with(",true")));
    assert!(rows.iter().any(|r| r.ends_with(",false")));
    let header = fs::read_to_string(out.join("potential.csv")).unwrap();
    assert!(header.starts_with("r,V_learned,V_learned_shifted,V_analytic,in_range\n"));

    let missing = s.path("nope/checkpoint.json");
    let res = mclnn(&["potential", "--checkpoint", p(&missing), "--out", p(&s.path("pot2"))]);
    assert_eq!(code(&res), 4);
    assert!(stderr(&res).contains(p(&missing)));
}

#[test]
fn sweep_rows_and_usage_errors() {
    let s = Setup::new();
    let data = s.generate("data", "linear_spring", "mclnn");
    let run = |name: &str| {
        let out = s.path(name);
        ok(mclnn(&[
            "sweep", "--data", p(&data), "--widths", "2,2;4,4;8,8;16,16", "--epochs", "2",
            "--config", p(&s.cfg), "--out", p(&out),
        ]));
        fs::read_to_string(out.join("sweep.csv")).unwrap()
    };
    let a = run("a");
    assert!(a.starts_with("hidden_layers,train_loss,val_loss\n"));
    assert_eq!(a.lines().count(), 5);
    assert_eq!(a, run("b"));

    let empty = mclnn(&[
        "sweep", "--data", p(&data), "--widths", "", "--out", p(&s.path("c")),
    ]);
    assert_eq!(code(&empty), 2);
}

#[test]
fn config_errors_point_at_the_line() {
    let s = Setup::new();
    let bad = s.path("bad.toml");
    fs::write(&bad, "task = \"gravity\"\ndt = 0.01\nstrid = 10\n").unwrap();
    let out = mclnn(&["generate", "--config", p(&bad), "--out", p(&s.path("x"))]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("line 3") && err.contains("strid"), "{err}");

    let unknown = mclnn(&["generate", "--task", "pendulum", "--out", p(&s.path("y"))]);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn numerical_abort_exits_with_three() {
    let s = Setup::new();
    let data = s.generate("data", "gravity", "mclnn");
    let cfg = s.path("wild.toml");
    fs::write(&cfg, "hidden = [4, 4]\nlearning_rate = 1e200\n").unwrap();
    let out = mclnn(&[
        "train", "--data", p(&data), "--config", p(&cfg), "--epochs", "50", "--out",
        p(&s.path("run")),
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(s.path("run/checkpoint.json").exists());
}
