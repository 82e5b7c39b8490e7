//! Corpus directories, split manifests, normalisation statistics,
//! checkpoints and resumable training state.

use std::fs;
use std::path::{Path, PathBuf};

use segweight_core::dataio::{resize_area, resize_mask, DatasetSplit, NormStats, Sample};
use segweight_core::metareweight::{Hyper, RngState, TrainState, WeightMap};
use segweight_core::ndcore::{checkpoint, OptimState, Params, SgdHyper, Tensor};
use segweight_core::noisegen::Polygon;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, IoContext, Result};
use crate::raster;

pub const MANIFEST: &str = "manifest.txt";

pub fn image_path(corpus: &Path, id: &str) -> PathBuf {
    corpus.join("images").join(format!("{id}.ppm"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("masks").join(format!("{id}.pgm"))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).at(path)
}

/// Sample ids listed in a corpus manifest, one per line; `#` starts a comment.
pub fn read_manifest(corpus: &Path) -> Result<Vec<String>> {
    let path = corpus.join(MANIFEST);
    let text = fs::read_to_string(&path).at(&path)?;
    let ids: Vec<String> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if ids.is_empty() {
        return Err(HarnessError::format(&path, "manifest lists no samples"));
    }
    Ok(ids)
}

pub fn write_manifest(corpus: &Path, header: &str, ids: &[String]) -> Result<()> {
    let path = corpus.join(MANIFEST);
    let mut text = format!("# {header}\n");
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    fs::write(&path, text).at(&path)
}

/// Writes `images/<id>.ppm`, `masks/<id>.pgm` and the manifest.
pub fn write_corpus(dir: &Path, header: &str, samples: &[Sample]) -> Result<()> {
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("masks"))?;
    for s in samples {
        raster::save_image(&image_path(dir, &s.id), &s.image)?;
        raster::save_mask(&mask_path(dir, &s.id), &s.clean_mask)?;
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    write_manifest(dir, header, &ids)
}

/// Loads every manifest sample, area-resizing rasters whose side differs from `side`.
pub fn load_corpus(dir: &Path, side: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for id in read_manifest(dir)? {
        let ipath = image_path(dir, &id);
        let mut image = raster::load_image(&ipath)?;
        let mut mask = raster::load_mask(&mask_path(dir, &id))?;
        let s = image.shape().to_vec();
        if s[1] != mask.height() || s[2] != mask.width() {
            return Err(HarnessError::format(&ipath, "image and mask sizes differ"));
        }
        if s[1] != s[2] {
            return Err(HarnessError::format(&ipath, "images must be square"));
        }
        if s[1] != side {
            image = resize_area(&image, side)?;
            mask = resize_mask(&mask, side)?;
        }
        out.push(Sample::new(id, image, mask.clone(), mask)?);
    }
    Ok(out)
}

/// Plain-text record of which ids went where.
pub fn write_split_manifest(path: &Path, split: &DatasetSplit) -> Result<()> {
    fn ids(set: &[Sample]) -> Vec<&str> {
        set.iter().map(|s| s.id.as_str()).collect()
    }
    let r = &split.record;
    let line = |name: &str, ids: Vec<&str>| format!("{name} {}\n", ids.join(" "));
    let mut text = String::new();
    text.push_str(&format!("policy {}\n", r.policy.name()));
    text.push_str(&format!("noise {}\n", r.noise.label()));
    text.push_str(&format!("importance {:?}\n", r.importance));
    text.push_str(&format!("seed {}\n", r.seed));
    text.push_str(&line("test", ids(&split.test)));
    text.push_str(&line("validation", ids(&split.validation)));
    text.push_str(&line("clean", ids(&split.clean)));
    text.push_str(&line("noisy", ids(&split.noisy)));
    text.push_str(&line("stats_pool", r.stats_pool.iter().map(String::as_str).collect()));
    for (id, w) in &r.warnings {
        text.push_str(&format!("warning {id} {w:?}\n"));
    }
    fs::write(path, text).at(path)
}

/// Six numbers: the three channel means on the first line, the three
/// standard deviations on the second.
pub fn write_norm_stats(path: &Path, stats: &NormStats) -> Result<()> {
    let row = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    fs::write(path, format!("{}\n{}\n", row(&stats.mean), row(&stats.std))).at(path)
}

pub fn read_norm_stats(path: &Path) -> Result<NormStats> {
    let text = fs::read_to_string(path).at(path)?;
    let lines: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::parse).collect::<std::result::Result<Vec<f64>, _>>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::format(path, e.to_string()))?;
    if lines.len() != 2 || lines[0].len() != lines[1].len() || lines[0].is_empty() {
        return Err(HarnessError::format(path, "expected a line of means and a line of standard deviations"));
    }
    let stats = NormStats { mean: lines[0].clone(), std: lines[1].clone() };
    stats.validate()?;
    Ok(stats)
}

pub fn save_params(path: &Path, params: &Params) -> Result<()> {
    fs::write(path, checkpoint::encode(params)).at(path)
}

pub fn load_params(path: &Path) -> Result<Params> {
    let bytes = fs::read(path).at(path)?;
    checkpoint::decode(&bytes).map_err(|e| HarnessError::format(path, e.to_string()))
}

pub fn save_polygon(path: &Path, poly: &Polygon) -> Result<()> {
    fs::write(path, poly.to_text()).at(path)
}

pub fn load_polygon(path: &Path) -> Result<Polygon> {
    let text = fs::read_to_string(path).at(path)?;
    Polygon::from_text(&text).map_err(|e| HarnessError::format(path, e.to_string()))
}

/// Weight map stored as a one-tensor checkpoint named `weights`.
pub fn save_weight_map(path: &Path, weights: &WeightMap) -> Result<()> {
    let mut p = Params::new();
    p.push("weights", weights.tensor().clone())?;
    save_params(path, &p)
}

/// Reloads a weight map, re-checking its invariants.
pub fn load_weight_map(path: &Path) -> Result<WeightMap> {
    let p = load_params(path)?;
    let t: &Tensor = p.get("weights").ok_or_else(|| HarnessError::format(path, "no `weights` tensor"))?;
    Ok(WeightMap::new(t.clone())?)
}

#[derive(Debug, Serialize, Deserialize)]
struct StateFile {
    iteration: usize,
    alpha: f64,
    eta: f64,
    best_val_dice: Option<f64>,
    evals_since_best: usize,
    rng_seed: u64,
    /// Decimal `u128`.
    rng_word_pos: String,
}

/// Writes `state.toml`, `params.ckpt` and `velocity.ckpt` into `dir`.
pub fn save_state(dir: &Path, state: &TrainState) -> Result<()> {
    create_dir(dir)?;
    save_params(&dir.join("params.ckpt"), &state.params)?;
    save_params(&dir.join("velocity.ckpt"), &state.optim.velocity)?;
    let file = StateFile {
        iteration: state.iteration,
        alpha: state.alpha,
        eta: state.eta,
        best_val_dice: state.best_val_dice,
        evals_since_best: state.evals_since_best,
        rng_seed: state.rng.seed,
        rng_word_pos: state.rng.word_pos.to_string(),
    };
    let text = toml::to_string(&file).map_err(|e| HarnessError::contract(e.to_string()))?;
    // Written last so a partially saved state is never picked up.
    let path = dir.join("state.toml");
    fs::write(&path, text).at(&path)
}

/// Restores a state written by [`save_state`]; the metric log starts empty.
pub fn load_state(dir: &Path, hyper: &Hyper) -> Result<TrainState> {
    let path = dir.join("state.toml");
    let text = fs::read_to_string(&path).at(&path)?;
    let file: StateFile = toml::from_str(&text).map_err(|e| HarnessError::format(&path, e.to_string()))?;
    let word_pos = file.rng_word_pos.parse().map_err(|_| HarnessError::format(&path, "bad rng_word_pos"))?;
    let params = load_params(&dir.join("params.ckpt"))?;
    let velocity = load_params(&dir.join("velocity.ckpt"))?;
    params.check_congruent(&velocity, "state")?;
    let sgd = SgdHyper { lr: file.alpha, momentum: hyper.momentum, weight_decay: hyper.weight_decay };
    Ok(TrainState {
        params,
        optim: OptimState { velocity, hyper: sgd },
        iteration: file.iteration,
        alpha: file.alpha,
        eta: file.eta,
        best_val_dice: file.best_val_dice,
        evals_since_best: file.evals_since_best,
        log: Vec::new(),
        rng: RngState { seed: file.rng_seed, word_pos },
    })
}
