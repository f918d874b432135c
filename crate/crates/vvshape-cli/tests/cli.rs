//! End-to-end tests of the installed binary: artifact determinism, config
//! precedence, sweep outputs, the check suite, and its negative control.

use std::path::Path;
use std::process::{Command, Output};

fn vvshape(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vvshape"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// Small but real training setup used by several tests.
const TINY_TRAIN: &[&str] = &[
    "train",
    "--bits-per-symbol",
    "2",
    "--mu",
    "4",
    "--half-window",
    "4",
    "--hidden",
    "4",
    "--batch-len",
    "48",
    "--batches",
    "2",
    "--snr-db",
    "14",
];

#[test]
fn train_writes_byte_identical_artifacts_for_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let mut args = TINY_TRAIN.to_vec();
        args.extend(["--seed", "7", "--out", out]);
        assert_ok(&vvshape(&args, dir.path()));
    }
    for name in [
        "config.toml",
        "constellation.tsv",
        "rxnet.tsv",
        "system.toml",
        "loss.tsv",
        "manifest.txt",
    ] {
        let a = read(&dir.path().join("a").join(name));
        let b = read(&dir.path().join("b").join(name));
        assert_eq!(a, b, "{name} differs between identically seeded runs");
    }
}

#[test]
fn train_zero_batches_emits_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TINY_TRAIN.to_vec();
    let batches = args.iter().position(|a| *a == "--batches").unwrap();
    args[batches + 1] = "0";
    args.extend(["--out", "init"]);
    assert_ok(&vvshape(&args, dir.path()));
    let run = dir.path().join("init");
    assert_eq!(read(&run.join("loss.tsv")), "batch\tloss\n");
    let constellation = read(&run.join("constellation.tsv"));
    assert!(constellation.starts_with("real\timag\tlabel\n"));
    assert_eq!(constellation.lines().count(), 5);
}

#[test]
fn flags_beat_config_file_beats_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[train]\nseed = 3\nsnr_db = 17.5\nbits_per_symbol = 2\nhalf_window = 4\nhidden = [4]\nbatch_len = 48\n",
    )
    .unwrap();

    // Default: no file, no flag.
    assert_ok(&vvshape(
        &["train", "--batches", "0", "--bits-per-symbol", "2", "--half-window", "4",
          "--hidden", "4", "--batch-len", "48", "--out", "d"],
        dir.path(),
    ));
    let echo = read(&dir.path().join("d/config.toml"));
    assert!(echo.contains("seed = 1"), "{echo}");
    assert!(echo.contains("snr_db = 20.0"), "{echo}");

    // File overrides default.
    assert_ok(&vvshape(
        &["train", "--config", "run.toml", "--batches", "0", "--out", "f"],
        dir.path(),
    ));
    let echo = read(&dir.path().join("f/config.toml"));
    assert!(echo.contains("seed = 3"), "{echo}");
    assert!(echo.contains("snr_db = 17.5"), "{echo}");

    // Flag overrides file.
    assert_ok(&vvshape(
        &["train", "--config", "run.toml", "--batches", "0", "--seed", "9", "--out", "g"],
        dir.path(),
    ));
    let echo = read(&dir.path().join("g/config.toml"));
    assert!(echo.contains("seed = 9"), "{echo}");
    assert!(echo.contains("snr_db = 17.5"), "{echo}");
}

#[test]
fn paper_style_flags_parse() {
    let dir = tempfile::tempdir().unwrap();
    let out = vvshape(
        &["train", "--mu", "4", "--partitions", "0", "--snr-db", "20",
          "--linewidth-hz", "100e3", "--bits-per-symbol", "2", "--half-window", "4",
          "--hidden", "4", "--batch-len", "48", "--batches", "0", "--out", "p"],
        dir.path(),
    );
    assert_ok(&out);
    let echo = read(&dir.path().join("p/config.toml"));
    assert!(echo.contains("linewidth_hz = 100000.0"), "{echo}");
}

#[test]
fn train_rejects_an_invalid_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = vvshape(
        &["train", "--bits-per-symbol", "2", "--half-window", "32",
          "--batch-len", "16", "--batches", "0", "--out", "x"],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "{stderr}");
}

#[test]
fn sweep_baseline_writes_results_manifest_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sweep", "--baseline", "qam64-hard2", "--snrs", "19",
        "--linewidths", "0,200000", "--reps", "2", "--symbols", "2048",
        "--baseline-half-window", "16", "--seed", "5", "--out", "s",
    ];
    assert_ok(&vvshape(&args, dir.path()));
    let out_dir = dir.path().join("s");
    let results = read(&out_dir.join("results_qam64_hard2_mu4.dat"));
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines[0], "# system qam64_hard2_mu4");
    assert_eq!(lines[1], "linewidth mean stddev snr");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("0 ") && lines[2].ends_with(" 19.00"));
    let manifest = read(&out_dir.join("manifest.txt"));
    assert!(manifest.contains("kind=sweep"));
    assert!(manifest.contains("sha256.results_qam64_hard2_mu4.dat="));
    assert!(read(&out_dir.join("sweep.toml")).contains("seed = 5"));

    // Same seed on one worker: byte-identical results.
    let mut again = args.to_vec();
    let pos = again.iter().position(|a| *a == "s").unwrap();
    again[pos] = "t";
    again.extend(["--workers", "1"]);
    assert_ok(&vvshape(&again, dir.path()));
    assert_eq!(results, read(&dir.path().join("t/results_qam64_hard2_mu4.dat")));
}

#[test]
fn sweep_needs_a_source_and_checks_artifacts_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = vvshape(&["sweep", "--out", "s"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to sweep"));

    let out = vvshape(
        &["sweep", "--system", "no_such_dir", "--out", "s"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot load system"));
    assert!(!dir.path().join("s").exists(), "failed early, before any output");

    let out = vvshape(
        &["sweep", "--baseline", "qam32-hard2", "--out", "s"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("square"));
}

#[test]
fn sweep_evaluates_a_trained_system_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TINY_TRAIN.to_vec();
    args.extend(["--partitions", "1", "--seed", "2", "--out", "run"]);
    assert_ok(&vvshape(&args, dir.path()));
    assert_ok(&vvshape(
        &["sweep", "--system", "run", "--snrs", "14", "--linewidths", "100000",
          "--reps", "2", "--symbols", "512", "--out", "s"],
        dir.path(),
    ));
    let results = read(&dir.path().join("s/results_shaped_mu4_l1.dat"));
    assert_eq!(results.lines().count(), 3);
}

#[test]
fn export_writes_each_artifact_kind() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TINY_TRAIN.to_vec();
    args.extend(["--partitions", "1", "--out", "run"]);
    assert_ok(&vvshape(&args, dir.path()));
    for (what, file, header) in [
        ("constellation", "c.tsv", "real\timag\tlabel"),
        ("partition", "p.tsv", "real\timag\tpartition"),
        ("demapper", "n.tsv", "rxnet v1"),
    ] {
        assert_ok(&vvshape(
            &["export", "--system", "run", "--what", what, "--out", file],
            dir.path(),
        ));
        let text = read(&dir.path().join(file));
        assert!(text.starts_with(header), "{what}: {text}");
    }

    // A ringless system has no partition to export.
    let mut args = TINY_TRAIN.to_vec();
    args.extend(["--out", "plain"]);
    assert_ok(&vvshape(&args, dir.path()));
    let out = vvshape(
        &["export", "--system", "plain", "--what", "partition", "--out", "q.tsv"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no ring partition"));
}

#[test]
fn check_suite_passes_and_honors_the_filter() {
    let dir = tempfile::tempdir().unwrap();
    let out = vvshape(&["check"], dir.path());
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ok   gradient_angle"), "{stdout}");
    assert!(stdout.contains("0 failed"), "{stdout}");

    let out = vvshape(&["check", "--filter", "unwrap"], dir.path());
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("unwrap_restores_continuity"), "{stdout}");
    assert!(!stdout.contains("gradient_angle"), "{stdout}");

    let out = vvshape(&["check", "--filter", "no_such"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn check_negative_control_fails_and_names_the_gradient_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = vvshape(
        &["check", "--filter", "gradient_angle", "--inject-angle-sign-bug"],
        dir.path(),
    );
    assert!(!out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL gradient_angle"), "{stdout}");
}
