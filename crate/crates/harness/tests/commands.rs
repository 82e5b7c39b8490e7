use std::fs;
use std::path::Path;
use std::process::Command;

use segweight::commands::{
    cmd_eval, cmd_gen, cmd_noise, cmd_sweep, cmd_train, read_metrics, EvalOptions, EvalSet, GenOptions, NoiseOptions,
    SweepOptions,
};
use segweight::config::RunConfig;
use segweight::formats;
use segweight::raster;
use segweight_core::losses::Mask;
use segweight_core::metareweight::Mode;
use segweight_core::ndcore::Tensor;
use segweight_core::noisegen::Importance;
use segweight_core::segnet;
use tempfile::TempDir;

fn small_config(out: &Path) -> RunConfig {
    let mut c = RunConfig { out_dir: out.to_path_buf(), ..RunConfig::default() };
    c.corpus.size = 40;
    c.split.clean = 4;
    c.split.noisy = 24;
    c.split.validation = 4;
    c.split.test = 6;
    c.net.image_side = 16;
    c.net.depth = 1;
    c.net.base_channels = 4;
    c.hyper.iterations = 12;
    c.hyper.finetune_iterations = 4;
    c.hyper.eval_interval = 4;
    c.hyper.batch_clean = 4;
    c.checkpoint_every = 4;
    c
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn raster_round_trips() {
    let tmp = TempDir::new().unwrap();
    let data: Vec<f64> = (0..3 * 5 * 7).map(|i| (i * 7 % 256) as f64 / 255.0).collect();
    let img = Tensor::new(vec![3, 5, 7], data).unwrap();
    let p = tmp.path().join("a.ppm");
    raster::save_image(&p, &img).unwrap();
    assert_eq!(raster::load_image(&p).unwrap(), img);
    let mask = Mask::from_fn(5, 7, |r, c| (r + c) % 3 == 0);
    let q = tmp.path().join("a.pgm");
    raster::save_mask(&q, &mask).unwrap();
    assert_eq!(raster::load_mask(&q).unwrap(), mask);
}

#[test]
fn rgb_file_is_not_a_mask() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("rgb.ppm");
    raster::save_image(&p, &Tensor::zeros(&[3, 4, 4])).unwrap();
    let err = raster::load_mask(&p).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("single-channel"), "{err}");
}

#[test]
fn gen_is_deterministic_and_complete() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert_eq!(cmd_gen(&GenOptions { out: dir.clone(), n: 6, side: 24, seed: 3 }).unwrap(), 6);
    }
    let ids = formats::read_manifest(&a).unwrap();
    assert_eq!(ids.len(), 6);
    for id in &ids {
        for p in [formats::image_path(&a, id), formats::mask_path(&a, id)] {
            let q = b.join(p.strip_prefix(&a).unwrap());
            assert_eq!(read(&p), read(&q));
        }
    }
    assert_eq!(read(&a.join(formats::MANIFEST)), read(&b.join(formats::MANIFEST)));
    assert!(cmd_gen(&GenOptions { out: tmp.path().join("c"), n: 0, side: 24, seed: 0 }).unwrap_err().exit_code() == 1);
}

#[test]
fn noise_outputs() {
    let tmp = TempDir::new().unwrap();
    let corpus = tmp.path().join("corpus");
    cmd_gen(&GenOptions { out: corpus.clone(), n: 8, side: 24, seed: 1 }).unwrap();
    let run = |noise: &str| {
        let out = tmp.path().join(noise);
        let s = cmd_noise(&NoiseOptions { corpus: corpus.clone(), out: out.clone(), noise: noise.into(), importance: Importance::AngleLength })
            .unwrap();
        (out, s)
    };
    let (max_dir, maximal) = run("maximal");
    for id in formats::read_manifest(&corpus).unwrap() {
        assert_eq!(raster::load_mask(&formats::mask_path(&max_dir, &id)).unwrap().count(), 484);
    }
    let (seven_dir, seven) = run("7-vertex");
    for id in formats::read_manifest(&corpus).unwrap() {
        let poly = formats::load_polygon(&seven_dir.join("polygons").join(format!("{id}.txt"))).unwrap();
        assert_eq!(poly.len(), 7);
    }
    let (_, three) = run("3-vertex");
    assert!(seven.mean_dice >= three.mean_dice && three.mean_dice >= maximal.mean_dice);
    let text = fs::read_to_string(seven_dir.join("dice.csv")).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.starts_with("id,dice"));

    fs::remove_file(formats::mask_path(&corpus, &formats::read_manifest(&corpus).unwrap()[0])).unwrap();
    let err = cmd_noise(&NoiseOptions {
        corpus,
        out: tmp.path().join("x"),
        noise: "3-vertex".into(),
        importance: Importance::AngleLength,
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn train_with_zero_iterations_writes_initial_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config(&tmp.path().join("run"));
    cfg.hyper.iterations = 0;
    let r = cmd_train(&cfg, false).unwrap();
    assert_eq!(r.iterations, 0);
    let params = formats::load_params(&cfg.out_dir.join("checkpoints/it000000.ckpt")).unwrap();
    assert_eq!(params, segnet::init_params(&cfg.net).unwrap());
    assert!(read_metrics(&cfg.out_dir.join("metrics.csv")).unwrap().is_empty());
}

#[test]
fn train_is_deterministic_and_resumable() {
    let tmp = TempDir::new().unwrap();
    let full = small_config(&tmp.path().join("full"));
    let again = small_config(&tmp.path().join("again"));
    cmd_train(&full, false).unwrap();
    cmd_train(&again, false).unwrap();
    for f in ["metrics.csv", "weights.csv", "checkpoints/it000012.ckpt"] {
        assert_eq!(read(&full.out_dir.join(f)), read(&again.out_dir.join(f)), "{f}");
    }
    let rows = read_metrics(&full.out_dir.join("metrics.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), [4, 8, 12]);
    assert!(rows.iter().all(|r| r.val_dice.is_some() && r.clean_loss.is_some()));

    // Stop after 8 iterations, then resume to the end.
    let part = small_config(&tmp.path().join("part"));
    let mut short = part.clone();
    short.hyper.iterations = 8;
    cmd_train(&short, false).unwrap();
    let mut cfg_file = fs::read_to_string(part.out_dir.join("config.toml")).unwrap();
    cfg_file = cfg_file.replace("iterations = 8", "iterations = 12");
    fs::write(part.out_dir.join("config.toml"), cfg_file).unwrap();
    cmd_train(&part, true).unwrap();
    for f in ["metrics.csv", "weights.csv", "checkpoints/it000012.ckpt"] {
        assert_eq!(read(&full.out_dir.join(f)), read(&part.out_dir.join(f)), "{f}");
    }

    let mut other = part.clone();
    other.hyper.alpha *= 2.0;
    assert_eq!(cmd_train(&other, true).unwrap_err().exit_code(), 1);
}

#[test]
fn fine_tune_runs_both_phases() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config(&tmp.path().join("ft"));
    cfg.mode = Mode::FineTune;
    let r = cmd_train(&cfg, false).unwrap();
    assert_eq!(r.iterations, 16);
    assert!(r.mislabelled_ratio.is_none());
    assert!(!cfg.out_dir.join("weights.csv").exists());
}

#[test]
fn snapshots_are_valid_weight_maps() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config(&tmp.path().join("snap"));
    cfg.snapshot_every = 6;
    cmd_train(&cfg, false).unwrap();
    let dir = cfg.out_dir.join("snapshots");
    for it in [6, 12] {
        let w = formats::load_weight_map(&dir.join(format!("it{it:06}.ckpt"))).unwrap();
        let t = w.tensor();
        assert_eq!(t.shape(), [cfg.hyper.batch_noisy, 16, 16]);
        assert!(t.data().iter().all(|&v| v >= 0.0));
        let s: f64 = t.data().iter().sum();
        assert!(w.is_zero() || (s - 1.0).abs() < 1e-9);
    }
    let names: Vec<String> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    for suffix in ["_weights.pgm", "_mislabelled.pgm", "_overlay.ppm"] {
        assert_eq!(names.iter().filter(|n| n.ends_with(suffix)).count(), 2 * cfg.hyper.batch_noisy, "{suffix}");
    }
}

/// Independent Dice by counting: foreground only where p > 0.5.
fn oracle_dice(prob: &Tensor, gt: &Mask) -> f64 {
    let hw = gt.height() * gt.width();
    let (mut inter, mut a, mut b) = (0.0, 0.0, 0.0);
    for i in 0..hw {
        let p = prob.data()[hw + i] > 0.5;
        let g = gt.data()[i] == 1;
        inter += (p && g) as u8 as f64;
        a += p as u8 as f64;
        b += g as u8 as f64;
    }
    if a + b == 0.0 {
        1.0
    } else {
        2.0 * inter / (a + b)
    }
}

#[test]
fn eval_matches_oracle_and_edge_cases() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(&tmp.path().join("run"));
    cmd_train(&cfg, false).unwrap();
    let preds = tmp.path().join("preds");
    let s = cmd_eval(&EvalOptions {
        run: cfg.out_dir.clone(),
        checkpoint: None,
        set: EvalSet::Test,
        masks: None,
        save_predictions: Some(preds.clone()),
        out: None,
    })
    .unwrap();
    assert_eq!(s.per_image.len(), 6);

    let prepared = segweight::experiment::prepare(&cfg, &segweight::experiment::corpus_for(&cfg).unwrap()).unwrap();
    let params = formats::load_params(&cfg.out_dir.join("checkpoints/it000012.ckpt")).unwrap();
    for ((id, d), ex) in s.per_image.iter().zip(&prepared.data.test) {
        assert_eq!(id, &ex.id);
        let prob = segnet::forward(&cfg.net, &params, &Tensor::stack(std::slice::from_ref(&ex.image)).unwrap()).unwrap();
        let prob = prob.index_outer(0).unwrap();
        assert_eq!(*d, oracle_dice(&prob, &ex.clean));
    }
    let csv = fs::read_to_string(cfg.out_dir.join("eval_test.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let own = cmd_eval(&EvalOptions {
        run: cfg.out_dir.clone(),
        checkpoint: None,
        set: EvalSet::Test,
        masks: Some(preds),
        save_predictions: None,
        out: Some(tmp.path().join("own.csv")),
    })
    .unwrap();
    assert!(own.per_image.iter().all(|(_, d)| *d == 1.0));

    // Zero parameters give probability 0.5 everywhere, which thresholds to background.
    let zero = tmp.path().join("zero.ckpt");
    formats::save_params(&zero, &segnet::init_params(&cfg.net).unwrap().zeros_like()).unwrap();
    let bg = cmd_eval(&EvalOptions {
        run: cfg.out_dir.clone(),
        checkpoint: Some(zero),
        set: EvalSet::Test,
        masks: None,
        save_predictions: None,
        out: Some(tmp.path().join("bg.csv")),
    })
    .unwrap();
    assert!(bg.per_image.iter().all(|(_, d)| *d == 0.0));
    assert_eq!(bg.mean, 0.0);
}

#[test]
fn sweep_writes_one_row_per_mode() {
    let tmp = TempDir::new().unwrap();
    let base = small_config(&tmp.path().join("unused"));
    let out = tmp.path().join("sweep");
    let (runs, cells) = cmd_sweep(&SweepOptions {
        base,
        ks: vec![4],
        seeds: 1,
        modes: SweepOptions::DEFAULT_MODES.to_vec(),
        noises: vec!["3-vertex".into()],
        workers: 2,
        out: out.clone(),
    })
    .unwrap();
    assert_eq!(runs.len(), 3);
    assert_eq!(cells.len(), 3);
    assert_eq!(fs::read_to_string(out.join("runs.csv")).unwrap().lines().count(), 4);
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap().lines().count(), 4);
}

#[test]
fn binary_exit_codes_and_overrides() {
    let tmp = TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_segweight");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    let corpus = tmp.path().join("c");
    assert_eq!(status(&["gen", "--out", corpus.to_str().unwrap(), "--n", "4"]), Some(0));
    assert_eq!(status(&["gen", "--out", corpus.to_str().unwrap(), "--n", "0"]), Some(1));
    let missing = tmp.path().join("none");
    assert_eq!(
        status(&["noise", "--corpus", missing.to_str().unwrap(), "--out", tmp.path().join("n").to_str().unwrap()]),
        Some(2)
    );

    // A config file supplies values; flags override them.
    let run = tmp.path().join("run");
    let mut cfg = small_config(&run);
    cfg.hyper.iterations = 0;
    let file = tmp.path().join("cfg.toml");
    cfg.save(&file).unwrap();
    let args = ["train", "--config", file.to_str().unwrap(), "--alpha", "0.002", "--seed", "5"];
    assert_eq!(status(&args), Some(0));
    let saved = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(saved.hyper.alpha, 0.002);
    assert_eq!((saved.net.seed, saved.hyper.seed, saved.split.seed), (5, 5, 5));
    assert_eq!(saved.net.image_side, 16);
}
