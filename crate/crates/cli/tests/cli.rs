mod common;

use std::fs;

use common::{ok, s, tamperloc, tree};
use tamperloc::dataforge::netpbm::{read_pgm, write_pgm, write_ppm};
use tamperloc::image::{Mask, RgbImage};
use tempfile::tempdir;

#[test]
fn synth_writes_the_requested_corpus() {
    let t = tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["synth", "--out", s(&a), "--n", "5", "--seed", "3"]);
    ok(&["synth", "--out", s(&b), "--n", "5", "--seed", "3"]);
    assert_eq!(fs::read_dir(a.join("images")).unwrap().count(), 5);
    assert_eq!(fs::read_dir(a.join("masks")).unwrap().count(), 5);
    assert_eq!(fs::read_to_string(a.join("manifest.txt")).unwrap().lines().count(), 5);
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn usage_errors_exit_with_1() {
    let t = tempdir().unwrap();
    let out = s(t.path());
    assert_eq!(tamperloc(&["synth", "--out", out, "--n", "0"], None).status.code(), Some(1));
    assert_eq!(tamperloc(&["synth", "--out", out, "--set", "bogus=1"], None).status.code(), Some(1));
    let res = tamperloc(&["synth", "--out", out, "--set", "seed=abc"], None);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(tamperloc(&["frobnicate"], None).status.code(), Some(1));
    let res = tamperloc(&["synth", "--out", out], Some(0));
    assert_eq!(res.status.code(), Some(1));
    assert!(tamperloc(&["--help"], None).status.success());
}

#[test]
fn eval_scores_ground_truth_and_its_inverse() {
    let t = tempdir().unwrap();
    let data = t.path().join("data");
    ok(&["synth", "--out", s(&data), "--n", "4", "--seed", "1"]);

    let perfect = t.path().join("perfect");
    ok(&["eval", "--data", s(&data), "--predictions", s(&data.join("masks")), "--out", s(&perfect)]);
    let csv = fs::read_to_string(perfect.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 1, "{csv}");
    let mean: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert_eq!(mean[0], "mean");
    assert!(mean[1..].iter().all(|v| v.parse::<f64>().unwrap() == 1.0), "{mean:?}");

    let inverted = t.path().join("inverted");
    fs::create_dir(&inverted).unwrap();
    for e in fs::read_dir(data.join("masks")).unwrap() {
        let p = e.unwrap().path();
        let mut g = read_pgm(&p).unwrap();
        for v in &mut g.data {
            *v = 255 - *v;
        }
        write_pgm(&inverted.join(p.file_name().unwrap()), &g).unwrap();
    }
    let scored = t.path().join("scored");
    ok(&["eval", "--data", s(&data), "--predictions", s(&inverted), "--out", s(&scored)]);
    let csv = fs::read_to_string(scored.join("metrics.csv")).unwrap();
    let mean: Vec<f64> = csv.lines().last().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(mean, [0.0, 0.0, 0.0]);
}

#[test]
fn malformed_dataset_names_the_file() {
    let t = tempdir().unwrap();
    let data = t.path().join("data");
    ok(&["synth", "--out", s(&data), "--n", "2"]);
    let bad = data.join("masks/000001.pgm");
    fs::write(&bad, b"P5\n4 4\n255\nshort").unwrap();
    let out = tamperloc(&["eval", "--data", s(&data), "--predictions", s(&data.join("masks")), "--out", s(&t.path().join("o"))], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("000001.pgm"));
}

#[test]
fn train_infer_and_checkpoint_errors() {
    let t = tempdir().unwrap();
    let data = t.path().join("data");
    let run = t.path().join("run");
    ok(&["synth", "--out", s(&data), "--n", "4"]);
    ok(&["train", "--data", s(&data), "--out", s(&run), "--iters", "3", "--set", "warmup_iters=1", "--set", "log_every=1"]);
    let ckpt = run.join("checkpoint.bin");
    let curve = fs::read_to_string(run.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4, "{curve}");

    // A 64x64 and an unpadded odd-sized image.
    let img = t.path().join("in.ppm");
    fs::copy(data.join("images/000000.ppm"), &img).unwrap();
    let odd = t.path().join("odd.ppm");
    write_ppm(&odd, &RgbImage::filled(40, 50, [90, 20, 200])).unwrap();
    let maps = t.path().join("maps");
    ok(&["infer", "--checkpoint", s(&ckpt), "--out", s(&maps), "--pad", s(&img), s(&odd)]);
    let prob = read_pgm(&maps.join("odd.prob.pgm")).unwrap();
    assert_eq!((prob.width, prob.height), (40, 50));
    assert_eq!(read_pgm(&maps.join("in.mask.pgm")).unwrap().width, 64);

    let out = tamperloc(&["infer", "--checkpoint", s(&ckpt), "--out", s(&maps), s(&odd)], None);
    assert_eq!(out.status.code(), Some(1), "unpadded odd size is a usage error");

    let all = t.path().join("all");
    ok(&["infer", "--checkpoint", s(&ckpt), "--out", s(&all), "--threshold", "0", s(&img)]);
    let mask = Mask::from_gray(&read_pgm(&all.join("in.mask.pgm")).unwrap());
    let prob = read_pgm(&all.join("in.prob.pgm")).unwrap();
    // Strict comparison: only pixels quantized to exactly 0 stay off.
    let zeros = prob.data.iter().filter(|&&v| v == 0).count();
    assert!(mask.count() + zeros >= 64 * 64);

    let junk = t.path().join("junk.ppm");
    fs::write(&junk, b"not an image").unwrap();
    let out = tamperloc(&["infer", "--checkpoint", s(&ckpt), "--out", s(&maps), s(&junk)], None);
    assert_eq!(out.status.code(), Some(2));

    let out = tamperloc(
        &["infer", "--checkpoint", s(&ckpt), "--out", s(&maps), "--set", "channels=16", s(&img)],
        None,
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let scored = t.path().join("scored");
    ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&scored)]);
    assert!(scored.join("metrics.txt").is_file());
}

#[test]
fn resolved_config_reproduces_the_run() {
    let t = tempdir().unwrap();
    let data = t.path().join("data");
    ok(&["synth", "--out", s(&data), "--n", "4", "--seed", "9"]);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&[
        "train", "--data", s(&data), "--out", s(&a), "--iters", "4", "--set", "warmup_iters=2",
        "--set", "base_lr=0.003", "--set", "batch_size=2", "--set", "fpn_channels=12",
    ]);
    let resolved = a.join("config.txt");
    ok(&["train", "--data", s(&data), "--out", s(&b), "--config", s(&resolved)]);
    assert_eq!(tree(&a), tree(&b));
}
