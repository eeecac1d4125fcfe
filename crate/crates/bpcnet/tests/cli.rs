use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bpcnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn mnist(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/mnist")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{"arch":"fig1","image_h":28,"image_w":28,"channels":1,"meta_dim":10,"bottleneck":10,
            "batch_size":32,"epochs":2,"seed":5,"max_samples":64}"#,
    )
    .unwrap();
    path
}

fn train_small(dir: &Path, out: &Path, seed: Option<&str>) -> Output {
    let cfg = small_config(dir);
    let mut args = vec![
        "train".to_string(),
        "--config".into(),
        cfg.to_string_lossy().into(),
        "--images".into(),
        mnist("train-images-idx3-ubyte"),
        "--labels".into(),
        mnist("train-labels-idx1-ubyte"),
        "--out".into(),
        out.to_string_lossy().into(),
    ];
    if let Some(s) = seed {
        args.extend(["--seed".into(), s.into()]);
    }
    bin().args(&args).output().unwrap()
}

fn dir_entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn help_on_every_subcommand_exits_zero() {
    for sub in ["train", "mutate", "eval", "gradcheck", "wilcoxon"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("--"), "{sub} help lists flags");
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_and_missing_out_are_usage_errors() {
    let o = run(&["wilcoxon", "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(&["train", "--config", "x.json", "--images", "a", "--labels", "b"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn wilcoxon_cases() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    fs::write(&a, "2 3 4\n5 6\n").unwrap();
    fs::write(&b, "1 2 3 4 5").unwrap();
    let o = run(&["wilcoxon", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "p_value 0.031250\n");

    fs::write(&b, "1 2 3 4").unwrap();
    assert_eq!(run(&["wilcoxon", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&b, "2 3 4 5 6").unwrap();
    assert_eq!(run(&["wilcoxon", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&b, "1 2 x 4 5").unwrap();
    assert_eq!(run(&["wilcoxon", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_by_default_and_fails_at_machine_precision() {
    let o = run(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert!(lines.len() >= 8);
    let names: std::collections::BTreeSet<&str> = lines.iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names.len(), lines.len());
    assert!(lines.iter().all(|l| l.contains("max_rel_error")));
    assert_eq!(run(&["gradcheck", "--seed", "3", "--tol", "1e-12"]).status.code(), Some(3));
}

#[test]
fn train_mutate_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bpct");
    let o = train_small(dir.path(), &model, None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        let parts: Vec<&str> = l.split(' ').collect();
        assert_eq!(&parts[..3], &["epoch", &(i + 1).to_string(), "loss"]);
        let digits: String = parts[3].chars().filter(char::is_ascii_digit).collect();
        assert_eq!(digits.trim_start_matches('0').len(), 6, "{l}");
    }
    assert!(bpcnet::checkpoint::load_checkpoint(&model).is_ok());

    let again = dir.path().join("m2.bpct");
    let o2 = train_small(dir.path(), &again, None);
    assert_eq!(stdout(&o2), stdout(&o));
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
    let other = train_small(dir.path(), &dir.path().join("m3.bpct"), Some("6"));
    assert_ne!(stdout(&other), stdout(&o));

    let grid = dir.path().join("g.pgm");
    let m = model.to_str().unwrap();
    let o = run(&["mutate", "--model", m, "--images", &mnist("t10k-images-idx3-ubyte"), "--count", "10", "--out", grid.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let img = bpcnet::pnm::read_pnm(&grid).unwrap();
    assert_eq!(img.shape(), &[308, 280, 1]);
    let grid2 = dir.path().join("g2.pgm");
    run(&["mutate", "--model", m, "--images", &mnist("t10k-images-idx3-ubyte"), "--count", "10", "--out", grid2.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(fs::read(&grid).unwrap(), fs::read(&grid2).unwrap());

    let col = dir.path().join("c.pgm");
    let o = run(&["mutate", "--model", m, "--images", &mnist("t10k-images-idx3-ubyte"), "--count", "1", "--out", col.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(bpcnet::pnm::read_pnm(&col).unwrap().shape(), &[308, 28, 1]);

    let single = dir.path().join("one.pgm");
    bpcnet::pnm::write_pgm(&bpcnet::pnm::read_pnm(&col).unwrap().reshape(&[308, 28]).unwrap().slice_rows(0, 28).unwrap(), &single).unwrap();
    let o = run(&["mutate", "--model", m, "--image", single.to_str().unwrap(), "--out", dir.path().join("s.pgm").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(&["eval", "--model", m, "--images", &mnist("t10k-images-idx3-ubyte"), "--labels", &mnist("t10k-labels-idx1-ubyte"), "--max-samples", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let v: f64 = text.strip_prefix("reconstruction_mse ").unwrap().trim().parse().unwrap();
    assert!(v > 0.0 && v < 1.0);
    assert_eq!(text.trim().split('.').nth(1).unwrap().len(), 6);
}

#[test]
fn failures_leave_no_files_behind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let bad = dir.path().join("bad-images");
    fs::write(&bad, b"\0\0\x08\x01\0\0\0\0").unwrap();
    let before = dir_entries(dir.path());
    let out = dir.path().join("out.bpct");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--images", bad.to_str().unwrap(), "--labels", &mnist("train-labels-idx1-ubyte"), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte 0"));
    assert_eq!(dir_entries(dir.path()), before);

    fs::write(&cfg, r#"{"arch":"fig1","image_h":28,"image_w":28,"channels":1,"meta_dim":10,"bottleneck":10,"batch_size":32,"epochs":0}"#).unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--images", &mnist("train-images-idx3-ubyte"), "--labels", &mnist("train-labels-idx1-ubyte"), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(dir_entries(dir.path()), before);

    let grid = dir.path().join("g.pgm");
    let o = run(&["mutate", "--model", bad.to_str().unwrap(), "--images", &mnist("t10k-images-idx3-ubyte"), "--out", grid.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["eval", "--model", bad.to_str().unwrap(), "--images", &mnist("t10k-images-idx3-ubyte"), "--labels", &mnist("t10k-labels-idx1-ubyte")]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(dir_entries(dir.path()), before);
}

#[test]
fn image_dir_training() {
    let dir = tempfile::tempdir().unwrap();
    for (i, v) in [0.1, 0.9, 0.5].iter().enumerate() {
        bpcnet::pnm::write_pgm(&bpcnet_core::Tensor::full(&[6, 6], *v), dir.path().join(format!("{i}.pgm"))).unwrap();
    }
    fs::write(dir.path().join("m.csv"), "filename,class_label\n0.pgm,happy\n1.pgm,sad\n2.pgm,happy\n").unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"arch":"fig1","image_h":4,"image_w":4,"channels":1,"meta_dim":2,"bottleneck":2,"batch_size":2,"epochs":1}"#).unwrap();
    let out = dir.path().join("m.bpct");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--data-dir", dir.path().to_str().unwrap(), "--csv", dir.path().join("m.csv").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.exists());
}
