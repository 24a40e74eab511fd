use std::path::Path;
use std::process::{Command, Output};

fn vqcnir(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqcnir"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
# tiny end-to-end run
model.base_channels = 4
model.num_scales = 2
model.codebook_size = 16
model.code_dim = 8
train.iterations = 4
train.crop = 16
train.log_interval = 2
data.count = 4
data.val_count = 2
data.size = 32
";

#[test]
fn gradcheck_filter_prints_one_pass_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqcnir(&["gradcheck", "--filter", "deform_conv2d"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with("PASS deform_conv2d"));
}

#[test]
fn full_gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqcnir(&["gradcheck"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn perturbed_backward_fails_and_names_the_op() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqcnir(&["gradcheck", "--inject-fault", "layer_norm"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("FAIL layer_norm")), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("FAIL")).count(), 1);
    assert!(stderr(&o).contains("layer_norm"));
}

#[test]
fn unknown_filter_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqcnir(&["gradcheck", "--filter", "no_such_op"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_of_identical_pairs_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqcnir(&["synth", "--out", "data", "--count", "3", "--size", "16", "--seed", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = "clean_0000.ppm\tclean_0000.ppm\t0\nclean_0001.ppm\tclean_0001.ppm\t0\n";
    std::fs::write(dir.path().join("data/same.txt"), text).unwrap();
    let o = vqcnir(&["eval", "--manifest", "data/same.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("psnr=99.0000 ssim=1.000000"), "{}", stdout(&o));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = vqcnir(&["synth", "--out", out, "--count", "2", "--size", "16", "--seed", "9"], dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["manifest.txt", "clean_0001.ppm", "degraded_0001.ppm"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn missing_files_are_io_errors_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqcnir(&["eval", "--manifest", "absent.txt"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("absent.txt"));
    let o = vqcnir(&["infer", "--ckpt", "absent.ckpt", "--in", "x.ppm", "--out", "y.ppm"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_config_names_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "model.seed = 1\n\ntrain.lr = quick\n").unwrap();
    let o = vqcnir(&["train-vqgan", "--config", "bad.cfg", "--out", "s1.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.cfg:3") && err.contains("train.lr"), "{err}");
}

#[test]
fn unknown_ablation_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), TINY).unwrap();
    let o = vqcnir(&["ablate", "--config", "run.cfg", "--disable", "encoder"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn two_stage_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("run.cfg"), TINY).unwrap();
    let o = vqcnir(&["train-vqgan", "--config", "run.cfg", "--out", "s1.ckpt"], p);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("config train.lr = 0.0001  # default"));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("iter=")).count(), 2);

    let mut runs = Vec::new();
    for out in ["a.ckpt", "b.ckpt"] {
        let o = vqcnir(&["train", "--config", "run.cfg", "--stage1", "s1.ckpt", "--out", out], p);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        runs.push(stdout(&o));
    }
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0].contains("eval n=2"));
    assert_eq!(std::fs::read(p.join("a.ckpt")).unwrap(), std::fs::read(p.join("b.ckpt")).unwrap());
    assert_eq!(std::fs::read(p.join("a.ckpt.log")).unwrap(), std::fs::read(p.join("b.ckpt.log")).unwrap());

    let o = vqcnir(&["synth", "--out", "data", "--count", "1", "--size", "24", "--seed", "1"], p);
    assert_eq!(o.status.code(), Some(0));
    let o = vqcnir(&["infer", "--ckpt", "a.ckpt", "--in", "data/degraded_0000.ppm", "--out", "r.ppm"], p);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(std::fs::read(p.join("r.ppm")).unwrap().starts_with(b"P6\n24 24\n255\n"));

    // A stage-1 checkpoint is not a restoration model.
    let o = vqcnir(&["infer", "--ckpt", "s1.ckpt", "--in", "data/degraded_0000.ppm", "--out", "r.ppm"], p);
    assert_eq!(o.status.code(), Some(3));

    let mut bytes = std::fs::read(p.join("a.ckpt")).unwrap();
    bytes[4] = bytes[4].wrapping_add(1);
    std::fs::write(p.join("future.ckpt"), bytes).unwrap();
    let o = vqcnir(&["eval", "--ckpt", "future.ckpt", "--manifest", "data/manifest.txt"], p);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));

    let o = vqcnir(&["ablate", "--config", "run.cfg", "--disable", "dbca", "--stage1", "s1.ckpt", "--out", "ab.ckpt"], p);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("eval n=2"));
    assert!(p.join("ab.ckpt").exists());
}
