use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use memsim_cli::report::{Manifest, Table, MANIFEST_NAME};

fn memsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memsim"))
        .args(args)
        .env_remove("MEMSIM_OUT")
        .env_remove("MEMSIM_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_table(dir: &Path, name: &str) -> Table {
    Table::from_csv(name, &fs::read_to_string(dir.join(format!("{name}.csv"))).unwrap()).unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME)).unwrap()).unwrap()
}

/// Tiny IDX pair with `n` 28x28 images whose class is encoded by brightness.
fn write_idx(dir: &Path, prefix: &str, n: usize) {
    let mut images = Vec::new();
    for v in [2051u32, n as u32, 28, 28] {
        images.extend(v.to_be_bytes());
    }
    let mut labels = Vec::new();
    for v in [2049u32, n as u32] {
        labels.extend(v.to_be_bytes());
    }
    for k in 0..n {
        let class = (k % 10) as u8;
        images.extend((0..784).map(|p| if p % 10 == usize::from(class) { 250 } else { 5 }));
        labels.push(class);
    }
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
}

#[test]
fn hysteresis_run_writes_trace_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "experiment = \"hysteresis\"\n[hysteresis]\nf = 3e6\ncycles = 6\n");
    let o = memsim(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_table(&out, "summary");
    assert!(summary.column("lobe_area").unwrap()[0] > 0.0);
    let trace = read_table(&out, "trace");
    assert_eq!(trace.header, ["t", "v_in", "phi", "rho", "i_in", "m_inv"]);
    assert_eq!(trace.rows.len(), 6 * 2000 + 1);
    let names: Vec<String> = manifest(&out).files.into_iter().map(|f| f.name).collect();
    assert_eq!(names, ["summary.csv", "trace.csv"]);
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = \"cost\"\n[plan]\narray_rowz = 64\n");
    let o = memsim(&["--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("plan.array_rowz"));
}

#[test]
fn unreadable_config_exits_2() {
    let o = memsim(&["--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!("experiment = \"train\"\n[train]\ndata_dir = \"{}\"\n", tmp.path().join("none").display()),
    );
    let o = memsim(&["--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingestion"));
}

#[test]
fn vgg8_needs_long_run_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = \"train\"\n[train]\nnetwork = \"vgg8\"\ndataset = \"cifar10\"\n");
    let o = memsim(&["--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--long-run"));
}

#[test]
fn same_seed_gives_identical_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = \"vmm-bench\"\n[vmm]\nrows = 8\ncols = 8\ntrials = 2\nr_line = [0.0, 1.0]\n");
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = memsim(&["--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        manifest(&out)
    };
    let (a, b, c) = (run("a", "4"), run("b", "4"), run("c", "5"));
    assert_eq!(a, b);
    assert_eq!(a.seed, 4);
    assert_ne!(a.files[0].sha256, c.files[0].sha256);
}

#[test]
fn empty_sweep_is_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = \"sweep\"\nformat = [\"csv\", \"text\"]\n[sweep]\nvalues = []\n");
    let o = memsim(&["--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(tmp.path().join("sweep.csv")).unwrap(),
        "sweep_param,lobe_area,pinch_residual,m_inv_amplitude\n"
    );
    assert!(tmp.path().join("sweep.txt").exists());
}

#[test]
fn sweep_rows_keep_config_order_under_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "experiment = \"sweep\"\n[hysteresis]\ncycles = 5\nsteps_per_cycle = 1000\n[sweep]\nvalues = [6e6, 2e6, 4e6]\n",
    );
    let o = memsim(&["--config", &cfg, "--out", tmp.path().to_str().unwrap(), "--threads", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_table(tmp.path(), "sweep").column("sweep_param").unwrap(), [6e6, 2e6, 4e6]);
}

#[test]
fn out_dir_comes_from_env_when_not_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = \"cost\"\n");
    let out = tmp.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_memsim"))
        .args(["--config", &cfg])
        .env("MEMSIM_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("cost.csv").exists());
}

#[test]
fn training_metrics_have_one_row_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("mnist");
    fs::create_dir_all(&data).unwrap();
    write_idx(&data, "train", 60);
    write_idx(&data, "t10k", 20);
    let cfg = write_config(
        tmp.path(),
        &format!(
            "experiment = \"train\"\n[train]\nnetwork = \"mnist-mlp\"\nhidden = 8\nepochs = 3\nbatch_size = 10\ndata_dir = \"{}\"\n",
            data.display()
        ),
    );
    let out = tmp.path().join("out");
    let o = memsim(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = read_table(&out, "metrics");
    assert_eq!(metrics.header.join(","), memsim::training::METRICS_HEADER);
    assert_eq!(metrics.column("epoch").unwrap(), [1.0, 2.0, 3.0]);
    assert!(metrics.column("wall_time").unwrap().iter().all(|&t| t == 0.0));
}
