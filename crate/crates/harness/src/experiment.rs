//! Corpus construction, split preparation and in-memory training runs.

use segweight_core::dataio::{gen_synthetic, make_splits, DatasetSplit, Example, PreparedSplit, Sample};
use segweight_core::metareweight::{self, evaluate, mean, Phase, StepEvent, TrainState};

use crate::config::RunConfig;
use crate::error::Result;
use crate::formats;

/// The samples a run draws from: the corpus directory if configured, else the
/// synthetic generator.
pub fn corpus_for(cfg: &RunConfig) -> Result<Vec<Sample>> {
    match &cfg.corpus.dir {
        Some(dir) => formats::load_corpus(dir, cfg.net.image_side),
        None => Ok(gen_synthetic(cfg.corpus.size, cfg.net.image_side, cfg.corpus.seed)?),
    }
}

pub struct Prepared {
    pub split: DatasetSplit,
    pub data: PreparedSplit,
}

pub fn prepare(cfg: &RunConfig, corpus: &[Sample]) -> Result<Prepared> {
    cfg.validate()?;
    let split = make_splits(corpus, cfg.split.sizes(), cfg.noise_spec()?, cfg.importance, cfg.split.policy, cfg.split.seed)?;
    let data = PreparedSplit::new(&split)?;
    Ok(Prepared { split, data })
}

/// Learned weight landing on mislabelled (noisy XOR clean) versus correctly
/// labelled pixels of one noisy-batch image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSplit {
    pub iteration: usize,
    /// Position in the noisy batch.
    pub slot: usize,
    /// Index into the noisy pool.
    pub example: usize,
    pub mislabelled_pixels: usize,
    pub mislabelled_weight: f64,
    pub correct_pixels: usize,
    pub correct_weight: f64,
}

impl WeightSplit {
    /// One entry per image of the event's noisy batch.
    pub fn from_event(event: &StepEvent<'_>, noisy: &[Example]) -> segweight_core::Result<Vec<WeightSplit>> {
        let mut out = Vec::with_capacity(event.noisy_indices.len());
        for (slot, &idx) in event.noisy_indices.iter().enumerate() {
            let ex = &noisy[idx];
            let wrong = ex.target.xor(&ex.clean)?;
            let w = event.report.weights.image(slot)?;
            let mut s = WeightSplit {
                iteration: event.iteration,
                slot,
                example: idx,
                mislabelled_pixels: 0,
                mislabelled_weight: 0.0,
                correct_pixels: 0,
                correct_weight: 0.0,
            };
            for (&bad, &wv) in wrong.data().iter().zip(w.data()) {
                if bad == 1 {
                    s.mislabelled_pixels += 1;
                    s.mislabelled_weight += wv;
                } else {
                    s.correct_pixels += 1;
                    s.correct_weight += wv;
                }
            }
            out.push(s);
        }
        Ok(out)
    }
}

/// Ratio of mean weight per mislabelled pixel to mean weight per correctly
/// labelled pixel, pooled over `entries`; `None` without both kinds of pixel
/// or without any weight on correct pixels.
pub fn mislabelled_ratio<'a>(entries: impl IntoIterator<Item = &'a WeightSplit>) -> Option<f64> {
    let (mut mw, mut mn, mut cw, mut cn) = (0.0, 0usize, 0.0, 0usize);
    for e in entries {
        mw += e.mislabelled_weight;
        mn += e.mislabelled_pixels;
        cw += e.correct_weight;
        cn += e.correct_pixels;
    }
    if mn == 0 || cn == 0 || cw == 0.0 {
        return None;
    }
    Some((mw / mn as f64) / (cw / cn as f64))
}

pub struct RunSummary {
    pub state: TrainState,
    pub test_dice: Vec<f64>,
    /// Weight splits of every learned-weight iteration (empty otherwise).
    pub weights: Vec<WeightSplit>,
}

impl RunSummary {
    pub fn mean_test_dice(&self) -> f64 {
        mean(&self.test_dice)
    }

    pub fn final_val_dice(&self) -> Option<f64> {
        self.state.log.iter().rev().find_map(|r| r.val_dice)
    }
}

/// Trains from scratch without touching the filesystem, then scores the test set.
/// `extra` sees every iteration after the weight bookkeeping.
pub fn run_in_memory(
    cfg: &RunConfig,
    prepared: &Prepared,
    extra: &mut dyn FnMut(&StepEvent<'_>) -> segweight_core::Result<()>,
) -> Result<RunSummary> {
    let learned = matches!(cfg.mode, metareweight::Mode::Reweight | metareweight::Mode::PerImage);
    let mut weights = Vec::new();
    let noisy = &prepared.data.noisy;
    let mut observer = |e: &StepEvent<'_>| -> segweight_core::Result<()> {
        if learned && e.phase == Phase::Noisy {
            weights.extend(WeightSplit::from_event(e, noisy)?);
        }
        extra(e)
    };
    let state = metareweight::train(&prepared.data, &cfg.net, &cfg.hyper, cfg.mode, &mut observer)?;
    let test_dice = evaluate(&cfg.net, &state.params, &prepared.data.test)?;
    Ok(RunSummary { state, test_dice, weights })
}
