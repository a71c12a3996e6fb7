use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sdslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdslab"))
        .args(args)
        .env_remove("SDSLAB_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small teachers and short runs so the whole command set finishes quickly.
const TINY: &str = "\
[run]
iterations_one = 6
iterations_two = 6
render_res_one = 16
render_res_two = 32
[teacher]
resolution = 16
hidden = 16
epochs = 1
dataset_size = 64
heldout_size = 16
batch_size = 32
[eval]
theory_t_grid = 100, 500, 900
theory_trials = 100
theory_dim = 2
variance_samples = 4
compare_t = 200, 800
compare_shapes = 3
ablation_seeds = 3
";

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn no_arguments_is_a_usage_error() {
    let o = sdslab(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    for args in [&["frobnicate"][..], &["distill", "--bogus"], &["distill", "--seed", "x"]] {
        let o = sdslab(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn help_succeeds() {
    let o = sdslab(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["teacher-train", "distill", "ablate", "theory-check", "variance-check", "teacher-compare", "render"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn missing_config_is_a_runtime_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = sdslab(&["distill", "--config", "missing.cfg", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.cfg"), "{}", stderr(&o));
}

#[test]
fn bad_config_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[run]\nseed = 1\nnot_a_key = 2\n").unwrap();
    let o = sdslab(&["render", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn distill_without_teachers_fails_with_the_checkpoint_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdslab(&["distill", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("coarse.dtck"), "{}", stderr(&o));
}

#[test]
fn theory_check_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    for d in [&d1, &d2] {
        let o = sdslab(&["theory-check", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["theory.csv", "theory_adequate.csv", "config.txt"] {
        let a = std::fs::read(d1.join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(d2.join(file)).unwrap(), "{file}");
    }
    let echo = std::fs::read_to_string(d1.join("config.txt")).unwrap();
    assert!(echo.contains("seed = 7"));
    assert!(echo.contains("[curriculum]"), "defaults are echoed too");
}

#[test]
fn render_uses_the_output_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sdslab"))
        .arg("render")
        .env("SDSLAB_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("field.pgm").exists());
    assert!(dir.path().join("projections.pgm").exists());
    assert!(dir.path().join("config.txt").exists());
}

#[test]
fn full_command_chain_on_tiny_settings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let run = |cmd: &str| {
        let o = sdslab(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    };
    run("teacher-train");
    assert!(out.join("teachers/coarse.dtck").exists());
    assert!(out.join("teachers/fine.dtck").exists());
    run("distill");
    let csv = std::fs::read_to_string(out.join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(out.join("field.pgm").exists() && out.join("metrics.csv").exists());
    run("variance-check");
    assert!(out.join("variance.csv").exists() && out.join("variance_set.pgm").exists());
    run("teacher-compare");
    assert_eq!(std::fs::read_to_string(out.join("teacher_compare.csv")).unwrap().lines().count(), 3);
    run("ablate");
    let grid = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(grid.starts_with("schedule,band_mask,teacher,runs,failures,failure_rate,mean_psnr,psnr_threshold"));
    assert_eq!(grid.lines().count(), 3);
    assert!(out.join("annealed-mask_on-dual/runs.csv").exists());

    let input = out.join("field.pgm");
    let o = sdslab(&["render", "--input", input.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
