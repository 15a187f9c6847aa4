use std::path::Path;
use std::process::{Command, Output};

use ssnn_bp::data::{write_idx_images, write_idx_labels, RawImages};

fn ssnnbp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssnnbp"))
        .args(args)
        .env_remove("SSNNBP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Ten classes, each lighting its own band of rows.
fn write_synthetic_mnist(root: &Path, n_train: usize, n_test: usize) {
    let dir = root.join("mnist");
    std::fs::create_dir_all(&dir).unwrap();
    let make = |n: usize| {
        let mut pixels = vec![0u8; n * 784];
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        for (i, &c) in labels.iter().enumerate() {
            let img = &mut pixels[i * 784..(i + 1) * 784];
            for r in (c as usize * 2 + 4)..(c as usize * 2 + 7) {
                for col in 4..24 {
                    img[r * 28 + col] = 255;
                }
            }
        }
        (RawImages { n, rows: 28, cols: 28, pixels }, labels)
    };
    let (tr, trl) = make(n_train);
    let (te, tel) = make(n_test);
    write_idx_images(dir.join("train-images-idx3-ubyte"), &tr).unwrap();
    write_idx_labels(dir.join("train-labels-idx1-ubyte"), &trl).unwrap();
    write_idx_images(dir.join("t10k-images-idx3-ubyte"), &te).unwrap();
    write_idx_labels(dir.join("t10k-labels-idx1-ubyte"), &tel).unwrap();
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).map(str::trim))
        .unwrap_or_else(|| panic!("no '{key}' in output:\n{out}"))
}

#[test]
fn config_dump_expands_preset() {
    let o = ssnnbp(&["config-dump", "--preset", "rpu_ts200", "--seed", "7", "--subset", "100,50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for needle in ["t_s = 200", "eta = 0.01", "tau_x = 20.0", "tau_delta = 2.0", "theta = 5.0", "encoding = 7", "train = 100"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
}

#[test]
fn errors_are_one_line_with_category() {
    let o = ssnnbp(&["config-dump", "--preset", "rpu_ts999"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("error: config: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let o = ssnnbp(&["train"]);
    assert!(stderr(&o).starts_with("error: config: "), "{}", stderr(&o));

    let empty = tempfile::tempdir().unwrap();
    let o = ssnnbp(&["train", "--data-dir", empty.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: missing-data: "), "{}", stderr(&o));

    let o = ssnnbp(&["config-dump", "--subset", "10"]);
    assert!(stderr(&o).starts_with("error: config: "));
}

#[test]
fn train_eval_and_profiles_on_synthetic_data() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_synthetic_mnist(data.path(), 60, 30);
    let d = data.path().to_str().unwrap();
    let o_dir = out.path().to_str().unwrap();
    let common = ["--data-dir", d, "--out-dir", o_dir, "--subset", "40,20", "--seed", "3", "--workers", "2"];

    let mut args = vec!["train", "--epochs", "1"];
    args.extend_from_slice(&common);
    let o = ssnnbp(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let logged: f64 = field(&text, "final_test_accuracy").parse().unwrap();
    let checkpoint = field(&text, "checkpoint").to_string();
    let metrics = std::fs::read_to_string(field(&text, "metrics")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let mut args = vec!["eval", "--epochs", "1", "--checkpoint", &checkpoint];
    args.extend_from_slice(&common);
    let o = ssnnbp(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc: f64 = field(&stdout(&o), "accuracy").split_whitespace().next().unwrap().parse().unwrap();
    assert!((acc - logged).abs() < 1e-9, "{acc} vs {logged}");

    let mut args = vec!["compare-wta-softmax", "--epochs", "1", "--checkpoint", &checkpoint];
    args.extend_from_slice(&common);
    let o = ssnnbp(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(field(&stdout(&o), "profiles")).unwrap();
    assert_eq!(csv.lines().count(), 11);

    // Checkpoint from a different architecture is rejected.
    let cfg_path = out.path().join("small.toml");
    std::fs::write(&cfg_path, "layer_sizes = [784, 32, 10]\n").unwrap();
    let mut args = vec!["eval", "--config", cfg_path.to_str().unwrap(), "--checkpoint", &checkpoint];
    args.extend_from_slice(&common);
    let o = ssnnbp(&args);
    assert!(stderr(&o).starts_with("error: checkpoint: "), "{}", stderr(&o));
}

#[test]
fn zero_epochs_writes_header_only_metrics() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_synthetic_mnist(data.path(), 20, 10);
    let o = ssnnbp(&[
        "train",
        "--epochs",
        "0",
        "--data-dir",
        data.path().to_str().unwrap(),
        "--out-dir",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(field(&stdout(&o), "metrics")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(metrics.starts_with("epoch,train_accuracy,test_accuracy"));
    assert!(Path::new(field(&stdout(&o), "checkpoint")).exists());
}

#[test]
fn gradient_check_is_reproducible() {
    let out = tempfile::tempdir().unwrap();
    let run = || {
        let o = ssnnbp(&["gradient-check", "--trials", "4", "--t-s", "500", "--seed", "11", "--out-dir", out.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o).lines().take(2).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(run(), run());
}
