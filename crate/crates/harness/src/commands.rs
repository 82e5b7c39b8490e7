//! The five subcommands as library functions.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use segweight_core::dataio::{gen_synthetic, PreparedSplit};
use segweight_core::losses::{dice, threshold};
use segweight_core::metareweight::{mean, train_until, MetricRecord, Mode, Phase, StepEvent, TrainState};
use segweight_core::noisegen::{apply_noise, Importance, NoiseSpec};
use segweight_core::segnet;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, IoContext, Result};
use crate::experiment::{corpus_for, mislabelled_ratio, prepare, run_in_memory, WeightSplit};
use crate::formats::{self, create_dir};
use crate::raster;

fn csv_writer(path: &Path, header: Option<&[&str]>) -> Result<csv::Writer<File>> {
    let file = match header {
        Some(_) => File::create(path),
        None => OpenOptions::new().append(true).open(path),
    }
    .at(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if let Some(h) = header {
        w.write_record(h).map_err(|e| csv_error(path, e))?;
    }
    Ok(w)
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::format(path, format!("{other:?}")),
    }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path, Some(header))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().at(path)
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone)]
pub struct GenOptions {
    pub out: PathBuf,
    pub n: usize,
    pub side: usize,
    pub seed: u64,
}

/// Writes a synthetic corpus; returns the number of samples.
pub fn cmd_gen(o: &GenOptions) -> Result<usize> {
    let samples = gen_synthetic(o.n, o.side, o.seed)?;
    let header = format!("synthetic corpus n={} side={} seed={}", o.n, o.side, o.seed);
    formats::write_corpus(&o.out, &header, &samples)?;
    Ok(samples.len())
}

// ---------------------------------------------------------------- noise

#[derive(Debug, Clone)]
pub struct NoiseOptions {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub noise: String,
    pub importance: Importance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSummary {
    pub samples: usize,
    pub mean_dice: f64,
    pub warnings: usize,
}

#[derive(Serialize)]
struct NoiseRow<'a> {
    id: &'a str,
    dice: f64,
    noisy_pixels: usize,
    clean_pixels: usize,
    warnings: String,
}

/// Writes `masks/<id>.pgm`, `polygons/<id>.txt` (polygon kinds) and `dice.csv`.
pub fn cmd_noise(o: &NoiseOptions) -> Result<NoiseSummary> {
    let ids = formats::read_manifest(&o.corpus)?;
    create_dir(&o.out.join("masks"))?;
    let mut dices = Vec::with_capacity(ids.len());
    let mut rows = Vec::with_capacity(ids.len());
    let mut warnings = 0;
    let mut spec: Option<NoiseSpec> = None;
    let masks: Vec<_> = ids.iter().map(|id| raster::load_mask(&formats::mask_path(&o.corpus, id))).collect::<Result<_>>()?;
    for (id, clean) in ids.iter().zip(&masks) {
        let spec = match spec {
            Some(s) => s,
            None => {
                let s = NoiseSpec::parse(&o.noise, clean.height())
                    .ok_or_else(|| HarnessError::contract(format!("unknown noise kind {:?}", o.noise)))?;
                spec = Some(s);
                s
            }
        };
        let ann = apply_noise(clean, spec, o.importance)?;
        raster::save_mask(&formats::mask_path(&o.out, id), &ann.mask)?;
        if let Some(poly) = &ann.polygon {
            create_dir(&o.out.join("polygons"))?;
            formats::save_polygon(&o.out.join("polygons").join(format!("{id}.txt")), poly)?;
        }
        let d = dice(&ann.mask, clean)?;
        warnings += ann.warnings.len();
        dices.push(d);
        let w: Vec<String> = ann.warnings.iter().map(|w| format!("{w:?}")).collect();
        rows.push((id.clone(), d, ann.mask.count(), clean.count(), w.join("; ")));
    }
    let rows: Vec<NoiseRow<'_>> = rows
        .iter()
        .map(|(id, d, n, c, w)| NoiseRow { id, dice: *d, noisy_pixels: *n, clean_pixels: *c, warnings: w.clone() })
        .collect();
    write_rows(&o.out.join("dice.csv"), &["id", "dice", "noisy_pixels", "clean_pixels", "warnings"], &rows)?;
    Ok(NoiseSummary { samples: ids.len(), mean_dice: mean(&dices), warnings })
}

// ---------------------------------------------------------------- train

pub const METRICS_HEADER: [&str; 6] = ["iteration", "noisy_loss", "clean_loss", "val_dice", "alpha", "eta"];
const TIMING_HEADER: [&str; 2] = ["iteration", "wall_seconds"];
const WEIGHTS_HEADER: [&str; 7] =
    ["iteration", "slot", "id", "mislabelled_pixels", "mislabelled_weight", "correct_pixels", "correct_weight"];

/// One metrics row: losses are means over the iterations since the previous row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub noisy_loss: f64,
    pub clean_loss: Option<f64>,
    pub val_dice: Option<f64>,
    pub alpha: f64,
    pub eta: f64,
}

impl MetricsRow {
    fn from_records(recs: &[MetricRecord]) -> Option<Self> {
        let last = recs.last()?;
        let noisy: Vec<f64> = recs.iter().map(|r| r.noisy_loss).collect();
        let clean: Vec<f64> = recs.iter().filter_map(|r| r.clean_loss).collect();
        Some(MetricsRow {
            iteration: last.iteration,
            noisy_loss: mean(&noisy),
            clean_loss: (!clean.is_empty()).then(|| mean(&clean)),
            val_dice: last.val_dice,
            alpha: last.alpha,
            eta: last.eta,
        })
    }
}

#[derive(Serialize)]
struct WeightRow<'a> {
    iteration: usize,
    slot: usize,
    id: &'a str,
    mislabelled_pixels: usize,
    mislabelled_weight: f64,
    correct_pixels: usize,
    correct_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub final_val_dice: Option<f64>,
    /// Mislabelled-to-correct mean weight ratio over the whole run (learned modes).
    pub mislabelled_ratio: Option<f64>,
}

/// Keeps the header and rows whose first field is an iteration `<= max`.
fn truncate_csv(path: &Path, max: usize) -> Result<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).at(path)?;
    let mut out = String::new();
    let mut last = None;
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0 || line.split(',').next().and_then(|f| f.parse::<usize>().ok()).is_some_and(|it| it <= max);
        if keep {
            out.push_str(line);
            out.push('\n');
            if i > 0 {
                last = Some(line.to_string());
            }
        }
    }
    fs::write(path, out).at(path)?;
    Ok(last)
}

fn learned(mode: Mode) -> bool {
    matches!(mode, Mode::Reweight | Mode::PerImage)
}

struct Snapshotter<'a> {
    dir: PathBuf,
    every: usize,
    data: &'a PreparedSplit,
}

impl Snapshotter<'_> {
    /// Weight map checkpoint plus, per batch image, the weight raster, the
    /// mislabelled mask and an overlay (red = weight, blue = mislabelled).
    fn write(&self, e: &StepEvent<'_>) -> Result<()> {
        let weights = &e.report.weights;
        let base = self.dir.join(format!("it{:06}", e.iteration));
        formats::save_weight_map(&base.with_extension("ckpt"), weights)?;
        let scale = weights.tensor().max_abs();
        for (slot, &idx) in e.noisy_indices.iter().enumerate() {
            let ex = &self.data.noisy[idx];
            let (h, w) = (ex.clean.height(), ex.clean.width());
            let wm = weights.image(slot)?;
            let wrong = ex.target.xor(&ex.clean)?;
            let stem = format!("it{:06}_b{slot}_{}", e.iteration, ex.id);
            raster::save_gray(&self.dir.join(format!("{stem}_weights.pgm")), wm.data(), h, w, scale)?;
            raster::save_mask(&self.dir.join(format!("{stem}_mislabelled.pgm")), &wrong)?;
            let mut rgb = Vec::with_capacity(3 * h * w);
            for (&v, &bad) in wm.data().iter().zip(wrong.data()) {
                let red = if scale > 0.0 { (v / scale * 255.0).round() as u8 } else { 0 };
                rgb.extend([red, 0, bad * 255]);
            }
            raster::save_rgb_bytes(&self.dir.join(format!("{stem}_overlay.ppm")), &rgb, h, w)?;
        }
        Ok(())
    }
}

/// Trains per `cfg`, writing everything under `cfg.out_dir`. With `resume`,
/// continues from the saved state if there is one.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<TrainReport> {
    cfg.validate()?;
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    let cfg_path = dir.join("config.toml");
    let state_dir = dir.join("state");
    let ckpt_dir = dir.join("checkpoints");
    let snap_dir = dir.join("snapshots");
    let (metrics_path, timing_path, weights_path) = (dir.join("metrics.csv"), dir.join("timing.csv"), dir.join("weights.csv"));
    let resuming = resume && state_dir.join("state.toml").exists();
    if resuming {
        let saved = RunConfig::load(&cfg_path)?;
        if saved != *cfg {
            return Err(HarnessError::contract("cannot resume: configuration differs from the saved run"));
        }
    } else {
        for p in [&metrics_path, &timing_path, &weights_path] {
            if p.exists() {
                fs::remove_file(p).at(p)?;
            }
        }
        for d in [&state_dir, &ckpt_dir, &snap_dir] {
            if d.exists() {
                fs::remove_dir_all(d).at(d)?;
            }
        }
    }
    cfg.save(&cfg_path)?;
    let corpus = corpus_for(cfg)?;
    let prepared = prepare(cfg, &corpus)?;
    formats::write_split_manifest(&dir.join("split.txt"), &prepared.split)?;
    formats::write_norm_stats(&dir.join("normstats.txt"), &prepared.data.stats)?;
    create_dir(&ckpt_dir)?;
    let learned = learned(cfg.mode);
    let snapshots = (learned && cfg.snapshot_every > 0).then(|| Snapshotter { dir: snap_dir.clone(), every: cfg.snapshot_every, data: &prepared.data });
    if snapshots.is_some() {
        create_dir(&snap_dir)?;
    }

    let (mut state, clock_offset) = if resuming {
        let st = formats::load_state(&state_dir, &cfg.hyper)?;
        segnet::check_params(&cfg.net, &st.params)?;
        truncate_csv(&metrics_path, st.iteration)?;
        truncate_csv(&weights_path, st.iteration)?;
        let last = truncate_csv(&timing_path, st.iteration)?;
        let offset = last.and_then(|l| l.split(',').nth(1).and_then(|v| v.parse::<f64>().ok())).unwrap_or(0.0);
        (st, offset)
    } else {
        let st = TrainState::new(&cfg.net, &cfg.hyper)?;
        formats::save_params(&ckpt_dir.join(format!("it{:06}.ckpt", 0)), &st.params)?;
        csv_writer(&metrics_path, Some(&METRICS_HEADER))?.flush().at(&metrics_path)?;
        csv_writer(&timing_path, Some(&TIMING_HEADER))?.flush().at(&timing_path)?;
        if learned {
            csv_writer(&weights_path, Some(&WEIGHTS_HEADER))?.flush().at(&weights_path)?;
        }
        (st, 0.0)
    };

    let total = cfg.hyper.total_iterations(cfg.mode);
    let interval = if cfg.hyper.eval_interval > 0 { cfg.hyper.eval_interval } else { total.max(1) };
    let start = Instant::now();
    let mut all_weights: Vec<WeightSplit> = Vec::new();
    let mut last_ckpt = state.iteration;
    while state.iteration < total {
        let next = ((state.iteration / interval + 1) * interval).min(total);
        let mut pending: Vec<WeightSplit> = Vec::new();
        let mut failure: Option<HarnessError> = None;
        let mut observer = |e: &StepEvent<'_>| -> segweight_core::Result<()> {
            if learned && e.phase == Phase::Noisy {
                pending.extend(WeightSplit::from_event(e, &prepared.data.noisy)?);
                if let Some(s) = &snapshots {
                    if e.iteration.is_multiple_of(s.every) {
                        if let Err(err) = s.write(e) {
                            failure = Some(err);
                            return Err(segweight_core::Error::Contract(String::from("snapshot failed")));
                        }
                    }
                }
            }
            Ok(())
        };
        state = match train_until(state, &prepared.data, &cfg.net, &cfg.hyper, cfg.mode, next, &mut observer) {
            Ok(s) => s,
            Err(e) => return Err(failure.take().unwrap_or(HarnessError::Core(e))),
        };
        let recs = std::mem::take(&mut state.log);
        if let Some(row) = MetricsRow::from_records(&recs) {
            let mut w = csv_writer(&metrics_path, None)?;
            w.serialize(&row).map_err(|e| csv_error(&metrics_path, e))?;
            w.flush().at(&metrics_path)?;
        }
        let mut w = csv_writer(&timing_path, None)?;
        w.serialize((state.iteration, clock_offset + start.elapsed().as_secs_f64())).map_err(|e| csv_error(&timing_path, e))?;
        w.flush().at(&timing_path)?;
        if learned && !pending.is_empty() {
            let mut w = csv_writer(&weights_path, None)?;
            for p in &pending {
                let id = &prepared.data.noisy[p.example].id;
                w.serialize(WeightRow {
                    iteration: p.iteration,
                    slot: p.slot,
                    id,
                    mislabelled_pixels: p.mislabelled_pixels,
                    mislabelled_weight: p.mislabelled_weight,
                    correct_pixels: p.correct_pixels,
                    correct_weight: p.correct_weight,
                })
                .map_err(|e| csv_error(&weights_path, e))?;
            }
            w.flush().at(&weights_path)?;
            all_weights.extend(pending);
        }
        let every = cfg.checkpoint_every;
        if state.iteration == total || (every > 0 && state.iteration / every > last_ckpt / every) {
            formats::save_params(&ckpt_dir.join(format!("it{:06}.ckpt", state.iteration)), &state.params)?;
            formats::save_state(&state_dir, &state)?;
            last_ckpt = state.iteration;
        }
    }
    if state.iteration == 0 {
        formats::save_state(&state_dir, &state)?;
    }
    Ok(TrainReport {
        iterations: state.iteration,
        final_val_dice: state.best_val_dice.and(last_val_dice(&metrics_path)?),
        mislabelled_ratio: mislabelled_ratio(&all_weights),
    })
}

fn last_val_dice(metrics: &Path) -> Result<Option<f64>> {
    let mut r = csv::Reader::from_path(metrics).map_err(|e| csv_error(metrics, e))?;
    let mut last = None;
    for row in r.deserialize::<MetricsRow>() {
        if let Some(v) = row.map_err(|e| csv_error(metrics, e))?.val_dice {
            last = Some(v);
        }
    }
    Ok(last)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSet {
    Test,
    Validation,
}

impl EvalSet {
    pub fn name(self) -> &'static str {
        match self {
            EvalSet::Test => "test",
            EvalSet::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub run: PathBuf,
    /// Defaults to the latest checkpoint of the run.
    pub checkpoint: Option<PathBuf>,
    pub set: EvalSet,
    /// Corpus-style directory whose `masks/<id>.pgm` replace the ground truth.
    pub masks: Option<PathBuf>,
    /// Writes thresholded predictions as `masks/<id>.pgm` under this directory.
    pub save_predictions: Option<PathBuf>,
    /// Per-image CSV path; defaults to `<run>/eval_<set>.csv`.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub per_image: Vec<(String, f64)>,
    pub mean: f64,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn latest_checkpoint(run: &Path) -> Result<PathBuf> {
    let dir = run.join("checkpoints");
    let mut best: Option<PathBuf> = None;
    for entry in fs::read_dir(&dir).at(&dir)? {
        let p = entry.at(&dir)?.path();
        if p.extension().is_some_and(|e| e == "ckpt") && best.as_ref().is_none_or(|b| p > *b) {
            best = Some(p);
        }
    }
    best.ok_or_else(|| HarnessError::format(&dir, "no checkpoints"))
}

#[derive(Serialize)]
struct EvalRow<'a> {
    id: &'a str,
    dice: f64,
}

/// Dice of a checkpoint's thresholded predictions on the run's test (or
/// validation) images.
pub fn cmd_eval(o: &EvalOptions) -> Result<EvalSummary> {
    let cfg = RunConfig::load(&o.run.join("config.toml"))?;
    let stats = formats::read_norm_stats(&o.run.join("normstats.txt"))?;
    let corpus = corpus_for(&cfg)?;
    let split = segweight_core::dataio::make_splits(
        &corpus,
        cfg.split.sizes(),
        cfg.noise_spec()?,
        cfg.importance,
        cfg.split.policy,
        cfg.split.seed,
    )?;
    let data = PreparedSplit::with_stats(&split, stats)?;
    let ckpt = match &o.checkpoint {
        Some(p) => p.clone(),
        None => latest_checkpoint(&o.run)?,
    };
    let params = formats::load_params(&ckpt)?;
    segnet::check_params(&cfg.net, &params)?;
    let examples = match o.set {
        EvalSet::Test => &data.test,
        EvalSet::Validation => &data.validation,
    };
    if examples.is_empty() {
        return Err(HarnessError::contract(format!("the run's {} set is empty", o.set.name())));
    }
    if let Some(dir) = &o.save_predictions {
        create_dir(&dir.join("masks"))?;
    }
    let mut per_image = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(16) {
        let images: Vec<_> = chunk.iter().map(|e| e.image.clone()).collect();
        let probs = segnet::forward(&cfg.net, &params, &segweight_core::ndcore::Tensor::stack(&images)?)?;
        for (i, e) in chunk.iter().enumerate() {
            let pred = threshold(&probs.index_outer(i)?)?;
            if let Some(dir) = &o.save_predictions {
                raster::save_mask(&formats::mask_path(dir, &e.id), &pred)?;
            }
            let gt = match &o.masks {
                Some(dir) => raster::load_mask(&formats::mask_path(dir, &e.id))?,
                None => e.clean.clone(),
            };
            per_image.push((e.id.clone(), dice(&pred, &gt)?));
        }
    }
    let values: Vec<f64> = per_image.iter().map(|(_, d)| *d).collect();
    let out = o.out.clone().unwrap_or_else(|| o.run.join(format!("eval_{}.csv", o.set.name())));
    let rows: Vec<EvalRow<'_>> = per_image.iter().map(|(id, d)| EvalRow { id, dice: *d }).collect();
    write_rows(&out, &["id", "dice"], &rows)?;
    let summary = EvalSummary { mean: mean(&values), median: median(&values), per_image };
    let summary_path = out.with_file_name(format!(
        "{}_summary.csv",
        out.file_stem().and_then(|s| s.to_str()).unwrap_or("eval")
    ));
    write_rows(&summary_path, &["images", "mean_dice", "median_dice"], &[(values.len(), summary.mean, summary.median)])?;
    Ok(summary)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub base: RunConfig,
    pub ks: Vec<usize>,
    /// Seeds `0..seeds`.
    pub seeds: u64,
    pub modes: Vec<Mode>,
    pub noises: Vec<String>,
    pub workers: usize,
    pub out: PathBuf,
}

impl SweepOptions {
    pub const DEFAULT_MODES: [Mode; 3] = [Mode::FineTune, Mode::PerImage, Mode::Reweight];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub noise: String,
    pub k: usize,
    pub mode: &'static str,
    pub seed: u64,
    pub test_dice: f64,
    pub final_val_dice: Option<f64>,
    pub mislabelled_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub noise: String,
    pub k: usize,
    pub mode: &'static str,
    pub runs: usize,
    pub mean_test_dice: f64,
    pub sd_test_dice: f64,
}

/// Sample standard deviation (0 for fewer than two values).
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Trains and scores every (noise, K, mode, seed) combination, writing
/// `runs.csv` and `summary.csv` under `out`.
pub fn cmd_sweep(o: &SweepOptions) -> Result<(Vec<SweepRun>, Vec<SweepCell>)> {
    if o.ks.is_empty() || o.modes.is_empty() || o.noises.is_empty() || o.seeds == 0 {
        return Err(HarnessError::contract("sweep needs at least one K, mode, noise kind and seed"));
    }
    let corpus = corpus_for(&o.base)?;
    let mut jobs = Vec::new();
    for noise in &o.noises {
        for &k in &o.ks {
            for &mode in &o.modes {
                for seed in 0..o.seeds {
                    let mut cfg = o.base.clone();
                    cfg.noise = noise.clone();
                    cfg.split.clean = k;
                    cfg.mode = mode;
                    cfg.set_seed(seed);
                    cfg.validate()?;
                    jobs.push(cfg);
                }
            }
        }
    }
    create_dir(&o.out)?;
    let done = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(o.workers.max(1))
        .build()
        .map_err(|e| HarnessError::contract(format!("cannot start workers: {e}")))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        jobs.par_iter()
            .map(|cfg| {
                let prepared = prepare(cfg, &corpus)?;
                let summary = run_in_memory(cfg, &prepared, &mut |_| Ok(()))?;
                let run = SweepRun {
                    noise: cfg.noise.clone(),
                    k: cfg.split.clean,
                    mode: cfg.mode.name(),
                    seed: cfg.hyper.seed,
                    test_dice: summary.mean_test_dice(),
                    final_val_dice: summary.final_val_dice(),
                    mislabelled_ratio: mislabelled_ratio(&summary.weights),
                };
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                eprintln!("[{n}/{}] {} K={} {} seed={} test dice {:.4}", jobs.len(), run.noise, run.k, run.mode, run.seed, run.test_dice);
                Ok(run)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut cells = Vec::new();
    for noise in &o.noises {
        for &k in &o.ks {
            for &mode in &o.modes {
                let vals: Vec<f64> = runs
                    .iter()
                    .filter(|r| &r.noise == noise && r.k == k && r.mode == mode.name())
                    .map(|r| r.test_dice)
                    .collect();
                cells.push(SweepCell {
                    noise: noise.clone(),
                    k,
                    mode: mode.name(),
                    runs: vals.len(),
                    mean_test_dice: mean(&vals),
                    sd_test_dice: sample_sd(&vals),
                });
            }
        }
    }
    write_rows(
        &o.out.join("runs.csv"),
        &["noise", "k", "mode", "seed", "test_dice", "final_val_dice", "mislabelled_ratio"],
        &runs,
    )?;
    write_rows(&o.out.join("summary.csv"), &["noise", "k", "mode", "runs", "mean_test_dice", "sd_test_dice"], &cells)?;
    for noise in &o.noises {
        let ft: Vec<&SweepCell> = cells.iter().filter(|c| &c.noise == noise && c.mode == Mode::FineTune.name()).collect();
        if ft.windows(2).any(|w| w[1].k > w[0].k && w[1].mean_test_dice < w[0].mean_test_dice) {
            eprintln!("note: fine_tune mean Dice is not monotone in K for {noise}");
        }
    }
    Ok((runs, cells))
}
