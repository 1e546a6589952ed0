//! End-to-end checks of the command-line surface: exit codes, file outputs,
//! determinism, and the documented render formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use swetopo_core::field::Field2D;
use swetopo_core::finn::FinnParams;
use swetopo_core::format;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swetopo"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

/// Small-grid overrides shared by the heavier subcommands.
fn desk_args(extra: &[&str]) -> Vec<String> {
    let mut args = vec![
        "--set".to_string(),
        "sim.nx=8".to_string(),
        "--set".to_string(),
        "sim.ny=8".to_string(),
        "--set".to_string(),
        "sim.steps=5".to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn print_config_is_deterministic_and_layered() {
    let a = run(&["--print-config"]);
    assert!(a.status.success());
    let b = run(&["--print-config"]);
    assert_eq!(a.stdout, b.stdout);
    let dump = String::from_utf8_lossy(&a.stdout).to_string();
    assert!(dump.contains("sim.cfl = 0.7"));

    // File layer overridden by a --set layer.
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.conf");
    std::fs::write(&cfg_path, "# comment\nsim.cfl = 0.5\ntrain.epochs = 3\n").unwrap();
    let c = run(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--set",
        "sim.cfl=0.6",
        "--print-config",
    ]);
    assert!(c.status.success());
    let dump = String::from_utf8_lossy(&c.stdout).to_string();
    assert!(dump.contains("sim.cfl = 0.6"));
    assert!(dump.contains("train.epochs = 3"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let out = run(&["--set", "sim.nonsense=3", "--print-config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));
}

#[test]
fn missing_subcommand_is_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generate_zero_count_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "generate",
        "--role",
        "train",
        "--count",
        "0",
        "--seed",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

fn generate(dir: &Path, role: &str, count: usize, seed: u64) -> Output {
    let mut args = desk_args(&[
        "generate",
        "--role",
        role,
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    let out = bin()
        .args(args.drain(..))
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "generate failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn generate_is_byte_deterministic_and_shares_infer_topography() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out = generate(dir_a.path(), "infer", 3, 7);
    assert!(stdout_line(&out).ends_with("manifest.txt"));
    generate(dir_b.path(), "infer", 3, 7);

    for name in ["manifest.txt", "seq_00000.swe", "seq_00001.swe", "seq_00002.swe"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across identical invocations");
    }

    let h0 = format::read_sequence(&dir_a.path().join("seq_00000.swe")).unwrap().h;
    for i in 1..3 {
        let hi = format::read_sequence(&dir_a.path().join(format!("seq_0000{i}.swe")))
            .unwrap()
            .h;
        assert_eq!(h0, hi, "inference sequences must share one topography");
    }
}

#[test]
fn simulate_centered_bump_peaks_at_one_and_conserves_mass() {
    let dir = tempfile::tempdir().unwrap();
    let seq_path = dir.path().join("ring.swe");
    // Center cell of the 8x8 grid over 1e6 m: cell (4,4) center.
    let (x0, y0) = (562500.0, 562500.0);
    let args = desk_args(&[
        "simulate",
        "--h-flat",
        "100",
        "--ic",
        &format!("{x0},{y0}"),
        "--out",
        seq_path.to_str().unwrap(),
    ]);
    let out = bin().args(&args).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let seq = format::read_sequence(&seq_path).unwrap();
    assert_eq!(seq.eta_frames[0].max(), 1.0);
    assert_eq!(seq.eta_frames[0].get(4, 4), 1.0);
    let m0 = seq.eta_frames[0].sum();
    let budget = 1e-9 * seq.eta_frames[0].abs_sum();
    for frame in &seq.eta_frames {
        assert!((frame.sum() - m0).abs() < budget);
    }
}

#[test]
fn simulate_out_of_domain_ic_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let args = desk_args(&[
        "simulate",
        "--h-flat",
        "100",
        "--ic",
        "-5.0,0.0",
        "--out",
        dir.path().join("x.swe").to_str().unwrap(),
    ]);
    let out = bin().args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_infer_eval_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&data, "infer", 3, 9);

    let ckpt = dir.path().join("model.fnn");
    let log1 = dir.path().join("loss1.log");
    let log2 = dir.path().join("loss2.log");
    for log in [&log1, &log2] {
        let args = desk_args(&[
            "--set",
            "train.epochs=3",
            "--set",
            "train.batch_size=2",
            "--set",
            "train.seed=4",
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
        ]);
        let out = bin().args(&args).output().unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let log_a = std::fs::read(&log1).unwrap();
    assert_eq!(log_a, std::fs::read(&log2).unwrap(), "loss logs must match");
    let text = String::from_utf8_lossy(&log_a).to_string();
    assert!(text.starts_with("epoch=0 loss="));

    // Inference with snapshots: 4 iterations every 2 gives 0, 2, 4.
    let h_out = dir.path().join("h.swe");
    let iter_log = dir.path().join("iters.log");
    let args = desk_args(&[
        "--set",
        "infer.iterations=4",
        "--set",
        "infer.batch_size=2",
        "infer",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        h_out.to_str().unwrap(),
        "--log",
        iter_log.to_str().unwrap(),
        "--snapshot-every",
        "2",
    ]);
    let out = bin().args(&args).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let snaps: Vec<_> = std::fs::read_dir(dir.path().join("h.snapshots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(snaps.len(), 3, "snapshots: {snaps:?}");
    let log_text = std::fs::read_to_string(&iter_log).unwrap();
    assert!(log_text.starts_with("iter=1 data="));
    assert!(log_text.contains(" smooth="));
    assert_eq!(log_text.lines().count(), 4);

    // eval with the stored truth vs an explicit H file holding that truth.
    let eval_true = bin()
        .args(desk_args(&[
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ]))
        .output()
        .unwrap();
    assert!(eval_true.status.success());
    let h_true = format::read_sequence(&data.join("seq_00000.swe")).unwrap().h;
    let h_true_path = dir.path().join("h_true.swe");
    format::write_field_only(&h_true_path, &h_true).unwrap();
    let eval_provided = bin()
        .args(desk_args(&[
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--h",
            h_true_path.to_str().unwrap(),
        ]))
        .output()
        .unwrap();
    assert!(eval_provided.status.success());
    assert_eq!(stdout_line(&eval_true), stdout_line(&eval_provided));
    assert!(stdout_line(&eval_true).starts_with("mse="));
}

#[test]
fn missing_checkpoint_is_runtime_error_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&data, "infer", 1, 2);
    let out = bin()
        .args(desk_args(&[
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint",
            "/nonexistent/model.fnn",
        ]))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/model.fnn"));
}

fn write_sample_field(path: &Path) -> Field2D {
    let f = Field2D::from_vec(2, 2, vec![0.0, 1.0, 0.5, 0.25]);
    format::write_field_only(path, &f).unwrap();
    f
}

#[test]
fn render_pgm_matches_hand_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let field_path = dir.path().join("f.swe");
    write_sample_field(&field_path);
    let out_path = dir.path().join("f.pgm");
    let out = run(&[
        "render",
        "--in",
        field_path.to_str().unwrap(),
        "--what",
        "h",
        "--out",
        out_path.to_str().unwrap(),
        "--fmt",
        "pgm",
    ]);
    assert!(out.status.success());
    let pgm = std::fs::read(&out_path).unwrap();
    assert_eq!(&pgm[pgm.len() - 4..], &[0u8, 255, 127, 63]);
    assert!(String::from_utf8_lossy(&pgm).starts_with("P5\n# min=0 max=1\n2 2\n255\n"));
}

#[test]
fn render_csv_reparses_bit_equal_and_negates_depth() {
    let dir = tempfile::tempdir().unwrap();
    let field_path = dir.path().join("f.swe");
    let f = write_sample_field(&field_path);
    let csv_path = dir.path().join("f.csv");
    let out = run(&[
        "render",
        "--in",
        field_path.to_str().unwrap(),
        "--what",
        "h",
        "--out",
        csv_path.to_str().unwrap(),
        "--fmt",
        "csv",
        "--negate-depth",
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut values = Vec::new();
    for line in text.lines() {
        for cell in line.split(',') {
            values.push(cell.parse::<f64>().unwrap());
        }
    }
    for (v, orig) in values.iter().zip(f.values()) {
        assert_eq!(v.to_bits(), (-orig).to_bits());
    }
}

#[test]
fn render_frame_out_of_range_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&data, "train", 1, 3);
    let out = run(&[
        "render",
        "--in",
        data.join("seq_00000.swe").to_str().unwrap(),
        "--frame",
        "999",
        "--out",
        dir.path().join("x.pgm").to_str().unwrap(),
        "--fmt",
        "pgm",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_runs_a_tiny_experiment_and_emits_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let workdir = dir.path().join("work");
    let prefix = dir.path().join("report");
    let mut args: Vec<String> = desk_args(&[]);
    for extra in [
        "train.epochs=2",
        "train.batch_size=2",
        "infer.iterations=3",
        "infer.batch_size=2",
        "report.train_count=2",
        "report.infer_count=2",
        "report.test_count=2",
    ] {
        args.push("--set".into());
        args.push(extra.into());
    }
    args.extend(
        [
            "report",
            "--seeds",
            "5,5",
            "--workdir",
            workdir.to_str().unwrap(),
            "--out-prefix",
            prefix.to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let out = bin().args(&args).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let txt = std::fs::read_to_string(prefix.with_extension("txt")).unwrap();
    assert!(txt.contains("repetitions = 2"));
    let csv = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
    assert!(csv.starts_with("metric,mean,std,unit\n"));
    // Identical seeds: every std column is exactly zero.
    for line in csv.lines().skip(1) {
        let std_field = line.split(',').nth(2).unwrap();
        assert_eq!(std_field, "0", "line {line}");
    }
}

#[test]
fn checkpoints_roundtrip_through_the_binary_format() {
    // The eval path exercises read_checkpoint; this guards write side too.
    let dir = tempfile::tempdir().unwrap();
    let path: PathBuf = dir.path().join("p.fnn");
    let params = FinnParams::init(5, 77);
    format::write_checkpoint(&path, &params, None).unwrap();
    let loaded = format::read_checkpoint(&path).unwrap();
    assert_eq!(loaded.params, params);
}
