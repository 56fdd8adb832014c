#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use rand::Rng;
use sodkit_core::metrics::{BinaryMask, SaliencyMap};
use support::*;

const KEYS: [&str; 8] = ["mae", "s_alpha", "f_max", "f_mean", "f_adp", "e_max", "e_mean", "e_adp"];

fn masks_dir(dir: &std::path::Path) {
    gray(&dir.join("a.pgm"), 8, 6, rect(8, 6, 2, 1, 6, 4));
    gray(&dir.join("b.png"), 5, 5, rect(5, 5, 0, 0, 2, 5));
    gray(&dir.join("c.pgm"), 7, 9, rect(7, 9, 3, 3, 7, 9));
}

#[test]
fn identical_directories_score_perfectly() {
    let d = tempfile::tempdir().unwrap();
    masks_dir(d.path());
    let out = d.path().join("report.json");
    let curves = d.path().join("curves.csv");
    let o = run(&["eval", "--pred", s(d.path()), "--gt", s(d.path()), "--out", s(&out), "--curves", s(&curves)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&out);
    assert_eq!(v["n_images"], 3);
    assert_eq!(v["mae"].as_f64().unwrap(), 0.0);
    for k in &KEYS[1..] {
        assert!((v[k].as_f64().unwrap() - 1.0).abs() <= 1e-6, "{k} = {}", v[k]);
    }
    assert_eq!(v["metadata"]["alpha"].as_f64(), Some(0.5));
    assert_eq!(v["metadata"]["beta2"].as_f64(), Some(0.3));
    let stems: Vec<&str> = v["per_image"].as_array().unwrap().iter().map(|p| p["stem"].as_str().unwrap()).collect();
    assert_eq!(stems, ["a", "b", "c"]);
    let csv = std::fs::read_to_string(&curves).unwrap();
    assert_eq!(csv.lines().next(), Some("threshold,precision,recall,f,e"));
    assert_eq!(csv.lines().count(), 257);
}

#[test]
fn mismatched_pair_is_listed_and_exits_2() {
    let (p, g) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    masks_dir(p.path());
    masks_dir(g.path());
    gray(&p.path().join("d.pgm"), 4, 4, vec![9; 16]);
    gray(&g.path().join("d.pgm"), 4, 5, vec![0; 20]);
    std::fs::write(p.path().join("e.pgm"), b"P5\n4 4\n255\n\x00").unwrap();
    gray(&g.path().join("e.png"), 4, 4, vec![0; 16]);
    gray(&p.path().join("f.pgm"), 2, 2, vec![0; 4]);
    let out = p.path().join("r.json");
    let o = run(&["eval", "--pred", s(p.path()), "--gt", s(g.path()), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert_error_line(&o, "partial");
    let v = json(&out);
    let errors = v["errors"].as_array().unwrap();
    let stems: Vec<&str> = errors.iter().map(|e| e["stem"].as_str().unwrap()).collect();
    assert_eq!(stems, ["d", "e", "f"]);
    assert!(errors[0]["error"].as_str().unwrap().contains("size mismatch"));
    assert!(errors[1]["error"].as_str().unwrap().contains("truncated payload"));
    assert!(errors[2]["error"].as_str().unwrap().contains("no ground-truth file"));
    assert_eq!(v["n_images"], 3);
    assert_eq!(v["per_image"].as_array().unwrap().len() + errors.len(), 6);
    assert_eq!(v["mae"].as_f64(), Some(0.0));
}

#[test]
fn no_pairs_exits_1() {
    let (p, g) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gray(&p.path().join("x.pgm"), 2, 2, vec![0; 4]);
    gray(&g.path().join("y.pgm"), 2, 2, vec![0; 4]);
    let out = p.path().join("r.json");
    let o = run(&["eval", "--pred", s(p.path()), "--gt", s(g.path()), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert_error_line(&o, "no_pairs");
    assert!(!out.exists());

    // Pairs exist but none can be read.
    std::fs::write(p.path().join("y.pgm"), b"junk").unwrap();
    let o = run(&["eval", "--pred", s(p.path()), "--gt", s(g.path()), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert_error_line(&o, "no_pairs");
}

#[test]
fn missing_directory_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--pred", "/nonexistent", "--gt", s(d.path()), "--out", s(&d.path().join("r.json"))]);
    assert_eq!(code(&o), 4);
    assert_error_line(&o, "io");
}

#[test]
fn fixture_matches_formula_oracles() {
    let (p, g) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut rng = common::rng(700);
    let mut oracles = Vec::new();
    for (i, (w, h)) in [(8, 8), (9, 6), (5, 11)].into_iter().enumerate() {
        let pred: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let mut gt: Vec<u8> = (0..w * h).map(|_| if rng.random_bool(0.4) { 255 } else { 0 }).collect();
        gt[0] = 255;
        gt[w * h - 1] = 0;
        gray(&p.path().join(format!("img{i}.png")), w, h, pred.clone());
        gray(&g.path().join(format!("img{i}.pgm")), w, h, gt.clone());
        let sm = SaliencyMap::from_gray8(h, w, &pred).unwrap();
        let gm = BinaryMask::from_gray8(h, w, &gt).unwrap();
        oracles.push(common::report(&sm, &gm));
    }
    let out = p.path().join("r.json");
    let o = run(&["eval", "--pred", s(p.path()), "--gt", s(g.path()), "--out", s(&out), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&out);

    // Six printed decimals.
    let tol = 5e-7 + 1e-12;
    for (img, o) in v["per_image"].as_array().unwrap().iter().zip(&oracles) {
        for (k, want) in KEYS.iter().zip(o.scores) {
            assert!((img[k].as_f64().unwrap() - want).abs() <= tol, "{k}: {} vs {want}", img[k]);
        }
    }
    let n = oracles.len() as f64;
    let mean = |i: usize| oracles.iter().map(|o| o.scores[i]).sum::<f64>() / n;
    let curve_max = |j: usize| {
        (0..256)
            .map(|t| oracles.iter().map(|o| if j == 2 { o.curve[t].2 } else { o.curve[t].3 }).sum::<f64>() / n)
            .fold(0.0, f64::max)
    };
    let want = [mean(0), mean(1), curve_max(2), mean(3), mean(4), curve_max(3), mean(6), mean(7)];
    for (k, w) in KEYS.iter().zip(want) {
        assert!((v[k].as_f64().unwrap() - w).abs() <= tol, "{k}: {} vs {w}", v[k]);
    }
    assert!((v["f_max_per_image"].as_f64().unwrap() - mean(2)).abs() <= tol);
    assert!((v["e_max_per_image"].as_f64().unwrap() - mean(5)).abs() <= tol);
}

#[test]
fn thread_count_sources() {
    let d = tempfile::tempdir().unwrap();
    masks_dir(d.path());
    let out = d.path().join("r.json");
    let args = ["eval", "--pred", s(d.path()), "--gt", s(d.path()), "--out", s(&out)];
    let o = run_env(&args, &[("LBA_SODKIT_THREADS", "3")]);
    assert_eq!(code(&o), 0);
    let o = run_env(&args, &[("LBA_SODKIT_THREADS", "zero")]);
    assert_eq!(code(&o), 64);
    assert_error_line(&o, "usage");
    let mut with_flag = args.to_vec();
    with_flag.extend(["--jobs", "2"]);
    assert_eq!(code(&run_env(&with_flag, &[("LBA_SODKIT_THREADS", "zero")])), 0);
    *with_flag.last_mut().unwrap() = "0";
    let o = run(&with_flag);
    assert_eq!(code(&o), 64);
    assert_error_line(&o, "usage");
}

#[test]
fn rgb_prediction_is_rejected_per_image() {
    let (p, g) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    masks_dir(g.path());
    masks_dir(p.path());
    std::fs::remove_file(p.path().join("a.pgm")).unwrap();
    rgb(&p.path().join("a.png"), 8, 6, vec![0; 144]);
    let out = p.path().join("r.json");
    let o = run(&["eval", "--pred", s(p.path()), "--gt", s(g.path()), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let v = json(&out);
    assert!(v["errors"][0]["error"].as_str().unwrap().contains("1-channel image required"));
}
