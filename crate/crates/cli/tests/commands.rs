mod support;

use std::path::Path;

use lba_sodkit::image_io::load_image;
use lba_sodkit::weights::{encode, load_weights, save_weights};
use sodkit_core::network::{Ablation, NetworkConfig};
use sodkit_core::{ParamStore, Tensor};
use support::*;

const NET: [&str; 4] = ["--input-size", "32", "--channel-scale", "0.125"];

fn tiny(seed: u64, ablation: Ablation) -> NetworkConfig {
    NetworkConfig {
        input_size: 32,
        channel_scale: 0.125,
        seed,
        ..NetworkConfig::default()
    }
    .with_ablation(ablation)
}

fn train(out: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["train-toy", "--out", s(out)];
    args.extend(NET);
    args.extend(extra);
    run(&args)
}

fn forward(weights: &Path, input: &Path, output: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["forward", "--weights", s(weights), "--input", s(input), "--output", s(output)];
    args.extend(NET);
    args.extend(extra);
    run(&args)
}

fn photo(path: &Path, w: usize, h: usize) {
    rgb(path, w, h, (0..w * h * 3).map(|i| ((i * 37) % 251) as u8).collect());
}

#[test]
fn steps_zero_writes_the_initialization() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("w.lbaw");
    let o = train(&out, &["--synthetic", "2", "--steps", "0", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let init = tiny(5, Ablation::Full).init_params().unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), encode(&init));
}

#[test]
fn full_has_more_tensors_than_baseline() {
    let d = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for a in ["baseline", "efaba", "gdal", "full"] {
        let out = d.path().join(format!("{a}.lbaw"));
        let o = train(&out, &["--synthetic", "1", "--steps", "0", "--ablation", a]);
        assert_eq!(code(&o), 0);
        counts.push(load_weights(&out).unwrap().len());
    }
    assert!(counts[0] < counts[1] && counts[0] < counts[2], "{counts:?}");
    assert!(counts[1] < counts[3] && counts[2] < counts[3], "{counts:?}");
}

#[test]
fn training_is_deterministic_and_reports_losses() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a.lbaw"), d.path().join("b.lbaw"));
    let args = ["--synthetic", "3", "--steps", "3", "--seed", "2", "--lr", "1e-3"];
    let oa = train(&a, &args);
    let ob = train(&b, &args);
    assert_eq!(code(&oa), 0, "{}", stderr(&oa));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(stdout(&oa), stdout(&ob));
    let text = stdout(&oa);
    let losses: Vec<f64> = text
        .lines()
        .filter_map(|l| l.strip_prefix("step "))
        .map(|l| l.split_whitespace().nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| l.is_finite() && *l > 0.0));
    assert!(text.contains("training mae "));
    assert_ne!(std::fs::read(&a).unwrap(), encode(&tiny(2, Ablation::Full).init_params().unwrap()));
}

#[test]
fn non_finite_loss_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("w.lbaw");
    let o = train(&out, &["--synthetic", "2", "--steps", "5", "--lr", "1e300"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert_error_line(&o, "non_finite_loss");
    assert!(stderr(&o).contains("at step "));
    assert!(!out.exists());
}

#[test]
fn trains_from_a_directory() {
    let d = tempfile::tempdir().unwrap();
    let (images, masks) = (d.path().join("images"), d.path().join("masks"));
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&masks).unwrap();
    photo(&images.join("one.ppm"), 40, 40);
    gray(&masks.join("one.pgm"), 40, 40, rect(40, 40, 5, 5, 20, 30));
    gray(&images.join("two.png"), 32, 32, vec![90; 1024]);
    gray(&masks.join("two.png"), 32, 32, rect(32, 32, 0, 10, 32, 20));
    let out = d.path().join("w.lbaw");
    let o = train(&out, &["--data", s(d.path()), "--steps", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("on 2 images"));

    std::fs::remove_file(masks.join("two.png")).unwrap();
    let o = train(&out, &["--data", s(d.path()), "--steps", "2"]);
    assert_eq!(code(&o), 4);
    assert_error_line(&o, "dataset");
    assert!(stderr(&o).contains("two: no mask file"));

    let o = train(&out, &["--steps", "2"]);
    assert_eq!(code(&o), 64);
    assert_error_line(&o, "usage");
}

#[test]
fn forward_is_deterministic_and_keeps_extent() {
    let d = tempfile::tempdir().unwrap();
    let w = d.path().join("w.lbaw");
    assert_eq!(code(&train(&w, &["--synthetic", "2", "--steps", "2"])), 0);
    let input = d.path().join("in.ppm");
    photo(&input, 40, 24);
    let (a, b) = (d.path().join("a.pgm"), d.path().join("b.pgm"));
    for out in [&a, &b] {
        let o = forward(&w, &input, out, &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let img = load_image(&a).unwrap();
    assert_eq!((img.width, img.height, img.channels), (40, 24, 1));

    let png = d.path().join("c.png");
    assert_eq!(code(&forward(&w, &input, &png, &[])), 0);
    assert_eq!(load_image(&png).unwrap(), img);
}

#[test]
fn zero_weights_give_uniform_128() {
    let d = tempfile::tempdir().unwrap();
    let config = tiny(0, Ablation::Full);
    let mut store = ParamStore::new();
    for spec in config.param_specs().unwrap() {
        store.insert(&spec.name, Tensor::zeros(spec.shape));
    }
    let w = d.path().join("zero.lbaw");
    save_weights(&store, &w).unwrap();
    for (name, wd, ht) in [("same.pgm", 32, 32), ("other.pgm", 45, 17)] {
        let input = d.path().join(format!("in_{name}"));
        gray(&input, wd, ht, (0..wd * ht).map(|i| (i % 256) as u8).collect());
        let out = d.path().join(name);
        let o = forward(&w, &input, &out, &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let img = load_image(&out).unwrap();
        assert!(img.data.iter().all(|&b| b == 128), "{name}");
    }
}

#[test]
fn forward_rejects_incompatible_weights() {
    let d = tempfile::tempdir().unwrap();
    let w = d.path().join("base.lbaw");
    assert_eq!(code(&train(&w, &["--synthetic", "1", "--steps", "0", "--ablation", "baseline"])), 0);
    let input = d.path().join("in.pgm");
    gray(&input, 32, 32, vec![3; 1024]);
    let out = d.path().join("out.pgm");
    let o = forward(&w, &input, &out, &["--ablation", "full"]);
    assert_eq!(code(&o), 1);
    assert_error_line(&o, "weights_mismatch");
    assert!(stderr(&o).contains("missing tensor `efaba."), "{}", stderr(&o));

    let o = run(&[
        "forward", "--weights", s(&w), "--input", s(&input), "--output", s(&out),
        "--input-size", "32", "--channel-scale", "0.25", "--ablation", "baseline",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tensor `encoder.s1.a"), "{}", stderr(&o));
    assert!(!out.exists());

    let mut bytes = std::fs::read(&w).unwrap();
    bytes[0] = b'X';
    std::fs::write(&w, &bytes).unwrap();
    let o = forward(&w, &input, &out, &["--ablation", "baseline"]);
    assert_eq!(code(&o), 4);
    assert_error_line(&o, "weights");
    assert!(stderr(&o).contains("bad magic"));
}

#[test]
fn forward_rejects_bad_inputs() {
    let d = tempfile::tempdir().unwrap();
    let w = d.path().join("w.lbaw");
    assert_eq!(code(&train(&w, &["--synthetic", "1", "--steps", "0"])), 0);
    let input = d.path().join("in.pgm");
    std::fs::write(&input, b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").unwrap();
    let o = forward(&w, &input, &d.path().join("o.pgm"), &[]);
    assert_eq!(code(&o), 4);
    assert_error_line(&o, "image");
    assert!(stderr(&o).contains("unsupported maxval"));

    let o = forward(&w, &input, &d.path().join("o.pgm"), &["--input-size", "48"]);
    assert_eq!(code(&o), 64);
    assert_error_line(&o, "usage");
}

#[test]
fn gradcheck_targets() {
    let o = run(&["gradcheck", "--op", "conv2d"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("conv2d ") && rows[0].ends_with("PASS"), "{text}");

    let o = run(&["gradcheck", "--op", "nosuchop"]);
    assert_eq!(code(&o), 1);
    assert_error_line(&o, "unknown_op");

    let o = run(&["gradcheck", "--op", "relu", "--op", "bmm", "--seeds", "2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 5);
}

#[test]
fn gradcheck_all_passes() {
    let o = run(&["gradcheck", "--all"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + sodkit_core::gradcheck::REGISTERED.len());
    assert!(text.lines().skip(1).all(|l| l.ends_with("PASS")));
    assert!(text.contains("\nnetwork "));
}

#[test]
fn usage_errors_are_one_line() {
    for args in [&[][..], &["nosuch"], &["eval", "--pred", "x"], &["train-toy", "--out", "w", "--synthetic", "1", "--ablation", "half"]] {
        let o = run(args);
        assert_eq!(code(&o), 64, "{args:?}");
        assert_error_line(&o, "usage");
    }
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("train-toy"));
}
