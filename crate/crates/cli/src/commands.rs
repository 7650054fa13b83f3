use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use tamperloc::config::{RunConfig, RESOLVED_CONFIG_FILE};
use tamperloc::dataforge::dataset::{load_donors, load_hosts, synthesize_from};
use tamperloc::dataforge::netpbm::{read_pgm, read_ppm, write_pgm};
use tamperloc::dataforge::{augment, procedural_corpus, read_dataset, write_dataset, LabeledImage};
use tamperloc::encoder::INPUT_MULTIPLE;
use tamperloc::image::{image_tensor, probability_image, RgbImage};
use tamperloc::metrics::{binarize, evaluate_image, MetricsReport};
use tamperloc::trainer::train_with_progress;
use tamperloc::{RngStream, TamperNet};

use crate::{resolve_config, CmdResult, EvalArgs, Failure, InferArgs, SynthArgs, TrainArgs};

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

pub(crate) fn synth(a: SynthArgs) -> CmdResult {
    let mut cfg = resolve_config(&a.config, None)?;
    if let Some(n) = a.n {
        cfg.n = n as usize;
    }
    if let Some(size) = a.size {
        cfg.size = size;
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let seed = cfg.train.seed;
    let mut samples = match (&a.donors, &a.hosts) {
        (Some(donors), Some(hosts)) => {
            synthesize_from(&load_hosts(hosts)?, &load_donors(donors)?, cfg.n, seed)?
        }
        _ => procedural_corpus(cfg.n, cfg.size, seed)?,
    };
    if cfg.use_augment {
        samples = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = RngStream::derive_indexed(seed, "synth-augment", i as u64);
                augment(s, &cfg.augment, &mut rng)
            })
            .collect::<tamperloc::Result<_>>()?;
    }
    write_dataset(&a.out, &samples)?;
    cfg.write_resolved(&a.out)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

pub(crate) fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = resolve_config(&a.config, None)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(iters) = a.iters {
        cfg.train.max_iters = iters;
    }
    if let Some(fuse) = &a.ablate_fuse {
        cfg.set("fuse", fuse)?;
    }
    if let Some(loss) = &a.loss {
        cfg.set("loss", loss)?;
    }
    cfg.validate()?;
    let data = read_dataset(&a.data)?;
    let mut net = TamperNet::new(&cfg.net, cfg.train.seed)?;
    cfg.write_resolved(&a.out)?;
    let report = train_with_progress(&mut net, &data, &cfg.training(), Some(&a.out), |p| {
        if let Some(f1) = p.f1 {
            eprintln!("iter {:>6}  lr {:.3e}  loss {:.5}  train f1 {:.4}", p.iter, p.lr, p.loss, f1);
        }
    })?;
    println!(
        "trained {} iterations: loss {:.5} -> {:.5}, train f1 {:.4}",
        cfg.train.max_iters, report.initial_loss, report.final_loss, report.final_f1
    );
    if let Some(v) = report.val_f1 {
        println!("validation f1 {v:.4}");
    }
    Ok(())
}

/// `config.txt` next to a checkpoint, if present.
fn config_beside(checkpoint: &Path) -> Option<PathBuf> {
    let p = checkpoint.parent()?.join(RESOLVED_CONFIG_FILE);
    p.is_file().then_some(p)
}

fn load_net(cfg: &RunConfig, checkpoint: &Path) -> Result<TamperNet, Failure> {
    cfg.net.validate()?;
    let mut net = TamperNet::new(&cfg.net, cfg.train.seed)?;
    net.params_mut().load(checkpoint).map_err(|e| match e {
        tamperloc::Error::Io(io) => runtime(format!("cannot read {}: {io}", checkpoint.display())),
        other => runtime(format!("{}: {other}", checkpoint.display())),
    })?;
    Ok(net)
}

fn check_threshold(t: f64) -> CmdResult {
    if !(0.0..=1.0).contains(&t) {
        return Err(Failure::Usage(format!("threshold {t} outside [0, 1]")));
    }
    Ok(())
}

fn read_prediction(dir: &Path, s: &LabeledImage) -> Result<Vec<f64>, Failure> {
    let prob = dir.join(format!("{}.prob.pgm", s.name));
    let path = if prob.is_file() { prob } else { dir.join(format!("{}.pgm", s.name)) };
    let g = read_pgm(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    if (g.width, g.height) != (s.mask.width, s.mask.height) {
        return Err(runtime(format!(
            "{}: prediction is {}x{} but ground truth is {}x{}",
            path.display(),
            g.width,
            g.height,
            s.mask.width,
            s.mask.height
        )));
    }
    Ok(g.data.iter().map(|&v| f64::from(v) / 255.0).collect())
}

pub(crate) fn eval(a: EvalArgs) -> CmdResult {
    let fallback = a.checkpoint.as_deref().and_then(config_beside);
    let mut cfg = resolve_config(&a.config, fallback)?;
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    check_threshold(cfg.threshold)?;
    let data = read_dataset(&a.data)?;
    let probs: Vec<Vec<f64>> = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let net = load_net(&cfg, ckpt)?;
            data.par_iter()
                .map(|s| Ok(net.localize(&image_tensor(&s.image))?.probs.into_data()))
                .collect::<Result<_, Failure>>()?
        }
        (None, Some(dir)) => data
            .par_iter()
            .map(|s| read_prediction(dir, s))
            .collect::<Result<_, Failure>>()?,
        (None, None) => unreachable!("clap requires one of --checkpoint / --predictions"),
    };
    let images = data
        .par_iter()
        .zip(&probs)
        .map(|(s, p)| evaluate_image(&s.name, p, &s.mask, cfg.threshold))
        .collect::<tamperloc::Result<Vec<_>>>()?;
    let report = MetricsReport::new(images, cfg.threshold)?;
    fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let table = report.to_table();
    fs::write(a.out.join("metrics.csv"), report.to_csv())
        .and_then(|()| fs::write(a.out.join("metrics.txt"), &table))
        .map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    cfg.write_resolved(&a.out)?;
    let excluded = report.auc_excluded();
    if !excluded.is_empty() {
        eprintln!(
            "warning: {} image(s) have single-class ground truth and are excluded from the AUC mean",
            excluded.len()
        );
    }
    print!("{table}");
    Ok(())
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r >= n {
        period - r
    } else {
        r
    }
}

/// Reflect-pads the bottom and right edges up to the next multiple of 32.
fn pad_to_multiple(img: &RgbImage) -> RgbImage {
    let w = img.width.div_ceil(INPUT_MULTIPLE) * INPUT_MULTIPLE;
    let h = img.height.div_ceil(INPUT_MULTIPLE) * INPUT_MULTIPLE;
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.put(x, y, img.get(reflect(x, img.width), reflect(y, img.height)));
        }
    }
    out
}

fn output_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

pub(crate) fn infer(a: InferArgs) -> CmdResult {
    let mut cfg = resolve_config(&a.config, config_beside(&a.checkpoint))?;
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    check_threshold(cfg.threshold)?;
    let net = load_net(&cfg, &a.checkpoint)?;
    let images: Vec<RgbImage> = a
        .images
        .iter()
        .map(|p| read_ppm(p).map_err(|e| runtime(format!("{}: {e}", p.display()))))
        .collect::<Result<_, _>>()?;
    let maps: Vec<Vec<f64>> = images
        .par_iter()
        .zip(&a.images)
        .map(|(img, path)| {
            let input = if a.pad { pad_to_multiple(img) } else { img.clone() };
            let probs = net
                .localize(&image_tensor(&input))
                .map_err(|e| Failure::from(e).with_context(path))?
                .probs;
            let mut out = Vec::with_capacity(img.width * img.height);
            for y in 0..img.height {
                out.extend_from_slice(&probs.data()[y * input.width..y * input.width + img.width]);
            }
            Ok(out)
        })
        .collect::<Result<_, Failure>>()?;
    fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    for ((img, path), probs) in images.iter().zip(&a.images).zip(&maps) {
        let stem = output_stem(path);
        let prob_img = probability_image(probs, img.width, img.height);
        let mask = binarize(probs, img.width, img.height, cfg.threshold)?;
        write_pgm(&a.out.join(format!("{stem}.prob.pgm")), &prob_img)?;
        write_pgm(&a.out.join(format!("{stem}.mask.pgm")), &mask.to_gray())?;
    }
    cfg.write_resolved(&a.out)?;
    println!("wrote maps for {} image(s) to {}", maps.len(), a.out.display());
    Ok(())
}

impl Failure {
    fn with_context(self, path: &Path) -> Self {
        match self {
            Failure::Usage(m) => {
                let hint = if m.contains("multiple of") { " (use --pad)" } else { "" };
                Failure::Usage(format!("{}: {m}{hint}", path.display()))
            }
            Failure::Runtime(m) => Failure::Runtime(format!("{}: {m}", path.display())),
        }
    }
}
