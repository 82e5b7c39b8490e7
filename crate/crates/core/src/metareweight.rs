//! Meta-learned pixel weights.
//!
//! One reweighting iteration:
//!
//! 1. virtual step `θ̂ = θ_t − α ∇θ Σ w⁰_ip ℓ_ip(θ_t)` with `W⁰ = 0`;
//! 2. clean gradient `g_c = ∇θ L^c(θ̂)`;
//! 3. `∂L^c/∂w_ip = −α g_c · ∇θ ℓ_ip(θ_t)`, all pixels at once as the JVP of
//!    the noisy loss map along `−α g_c` (exact because `θ̂` is linear in `W`);
//! 4. `W = g(max(0, −η ∂L^c/∂W))` with `g` scaling the batch total to one;
//! 5. real update of `θ_t` on `Σ w_ip ℓ_ip` with momentum and weight decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_core::SeedableRng;

use crate::dataio::{Example, PreparedSplit};
use crate::error::{Error, Result};
use crate::losses::{self, Mask};
use crate::ndcore::{collect_grads, param_leaves, sgd_step, Graph, OptimState, Params, SgdHyper, Tensor, Var};
use crate::segnet::{self, NetConfig};

/// A model whose loss decomposes into per-pixel terms.
pub trait PixelObjective {
    type Batch: ?Sized;

    /// Records the per-pixel loss map (leading axis = batch) on `g`.
    fn loss_map(&self, g: &mut Graph, params: &[Var], batch: &Self::Batch) -> Result<Var>;

    /// Meta-objective on clean data; the mean of the loss map unless overridden.
    fn clean_loss(&self, g: &mut Graph, params: &[Var], batch: &Self::Batch) -> Result<Var> {
        let m = self.loss_map(g, params, batch)?;
        g.mean(m)
    }
}

/// Images `[B, C, H, W]` with one label mask per image.
#[derive(Debug, Clone)]
pub struct SegBatch {
    pub images: Tensor,
    pub masks: Vec<Mask>,
}

impl SegBatch {
    /// Stacks the selected examples, labelled by their training targets.
    pub fn gather(examples: &[Example], indices: &[usize]) -> Result<SegBatch> {
        let images: Vec<Tensor> = indices.iter().map(|&i| examples[i].image.clone()).collect();
        let masks = indices.iter().map(|&i| examples[i].target.clone()).collect();
        Ok(SegBatch { images: Tensor::stack(&images)?, masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Pixel cross-entropy of the U-Net.
#[derive(Debug, Clone, Copy)]
pub struct SegObjective {
    pub net: NetConfig,
}

impl PixelObjective for SegObjective {
    type Batch = SegBatch;

    fn loss_map(&self, g: &mut Graph, params: &[Var], batch: &SegBatch) -> Result<Var> {
        let x = g.constant(batch.images.clone());
        let probs = segnet::build(g, &self.net, params, x)?;
        let masks: Vec<&Mask> = batch.masks.iter().collect();
        losses::loss_map_node(g, probs, &masks)
    }
}

/// Per-pixel weights for one noisy batch, shaped like its loss map.
///
/// Entries are nonnegative and either all zero or summing to one over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    weights: Tensor,
}

/// Tolerance on the unit batch sum of a [`WeightMap`].
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

impl WeightMap {
    /// Validates the nonnegativity and normalisation invariants.
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.data().iter().any(|&w| w < 0.0) {
            return Err(Error::contract("weight map has a negative entry"));
        }
        let total = weights.sum();
        if total != 0.0 && (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::contract(format!("weight map sums to {total}, expected 0 or 1")));
        }
        Ok(WeightMap { weights })
    }

    /// Uniform weights `1 / n` over every pixel of the batch.
    pub fn uniform(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        WeightMap { weights: Tensor::full(shape, 1.0 / n as f64) }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        WeightMap { weights: Tensor::zeros(shape) }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.weights
    }

    pub fn into_tensor(self) -> Tensor {
        self.weights
    }

    pub fn is_zero(&self) -> bool {
        self.weights.data().iter().all(|&w| w == 0.0)
    }

    /// Weights of image `i` of the batch.
    pub fn image(&self, i: usize) -> Result<Tensor> {
        self.weights.index_outer(i)
    }
}

/// `θ_t − α ∇θ Σ w_ip ℓ_ip(θ_t)`: one plain gradient step without momentum or decay.
pub fn virtual_step<O: PixelObjective>(
    obj: &O,
    params: &Params,
    noisy: &O::Batch,
    w0: &Tensor,
    alpha: f64,
) -> Result<Params> {
    if w0.data().iter().any(|&w| w < 0.0) {
        return Err(Error::contract("virtual step weights must be nonnegative"));
    }
    let mut g = Graph::new();
    let leaves = param_leaves(&mut g, params);
    let map = obj.loss_map(&mut g, &leaves, noisy)?;
    if w0.data().iter().all(|&w| w == 0.0) {
        // The weighted loss is identically zero, so is its gradient.
        g.value(map).check_same_shape(w0, "virtual_step")?;
        return Ok(params.clone());
    }
    let grads = g.backward(map, w0)?;
    let grads = collect_grads(&grads, &leaves, params)?;
    params.axpy(-alpha, &grads)
}

/// Clean meta-loss and its parameter gradient at `params`.
pub fn clean_value_and_grad<O: PixelObjective>(obj: &O, params: &Params, clean: &O::Batch) -> Result<(f64, Params)> {
    let mut g = Graph::new();
    let leaves = param_leaves(&mut g, params);
    let loss = obj.clean_loss(&mut g, &leaves, clean)?;
    let value = g.value(loss).item()?;
    let grads = g.backward_scalar(loss)?;
    Ok((value, collect_grads(&grads, &leaves, params)?))
}

/// Gradient of the clean loss at `θ̂` with respect to every noisy-batch pixel
/// weight, evaluated at `W = 0`. Also returns `L^c(θ̂)`.
///
/// Computed as a single forward-mode sweep of the noisy loss map at `θ_t`
/// along `−α ∇θ L^c(θ̂)`.
pub fn weight_grad<O: PixelObjective>(
    obj: &O,
    params: &Params,
    virtual_params: &Params,
    noisy: &O::Batch,
    clean: &O::Batch,
    alpha: f64,
) -> Result<(Tensor, f64)> {
    params.check_congruent(virtual_params, "weight_grad")?;
    let (clean_loss, g_c) = clean_value_and_grad(obj, virtual_params, clean)?;
    let direction = g_c.scale(-alpha);
    let mut g = Graph::new();
    let leaves = param_leaves(&mut g, params);
    let map = obj.loss_map(&mut g, &leaves, noisy)?;
    let seeds: Vec<(Var, &Tensor)> = leaves.iter().copied().zip(direction.tensors()).collect();
    Ok((g.jvp(map, &seeds)?, clean_loss))
}

/// `g(max(0, u))`: clamps negatives to zero, then scales the batch total to one.
/// An all-nonpositive input yields the all-zero map.
pub fn rectify_normalize(u: &Tensor) -> WeightMap {
    let rect = u.map(|v| if v > 0.0 { v } else { 0.0 });
    let total = rect.sum();
    if total > 0.0 {
        WeightMap { weights: rect.scale(1.0 / total) }
    } else {
        WeightMap { weights: Tensor::zeros(u.shape()) }
    }
}

/// Replaces every pixel of an image by the image total (leading axis = image).
pub fn per_image_totals(u: &Tensor) -> Tensor {
    let b = u.shape()[0];
    let inner = u.len() / b;
    let mut out = Vec::with_capacity(u.len());
    for chunk in u.data().chunks_exact(inner) {
        let s = chunk.iter().fold(0.0, |a, v| a + v);
        out.extend(core::iter::repeat_n(s, inner));
    }
    Tensor::from_raw(u.shape().to_vec(), out)
}

/// How the noisy batch is weighted in the real update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Equal weight on every pixel.
    Uniform,
    /// Learned per-pixel weights.
    Spatial,
    /// Learned weight per image, shared by its pixels.
    PerImage,
}

/// What one [`train_step`] produced besides the new parameters.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub weights: WeightMap,
    /// `∂L^c/∂W` at `W = 0`, present for learned weightings.
    pub weight_grad: Option<Tensor>,
    /// `L^c(θ̂)`, present for learned weightings.
    pub clean_loss: Option<f64>,
    /// `Σ w_ip ℓ_ip(θ_t)` under the weights used for the update.
    pub noisy_loss: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub params: Params,
    pub optim: OptimState,
    pub report: StepReport,
}

/// One training iteration on a noisy batch; `clean` is required for learned weightings.
///
/// The real update uses `optim.hyper` (step size, momentum, decay); `alpha`
/// is the virtual step size and `eta` the weight step size.
#[allow(clippy::too_many_arguments)]
pub fn train_step<O: PixelObjective>(
    obj: &O,
    params: &Params,
    optim: &OptimState,
    noisy: &O::Batch,
    clean: Option<&O::Batch>,
    alpha: f64,
    eta: f64,
    weighting: Weighting,
) -> Result<StepOutput> {
    let mut g = Graph::new();
    let leaves = param_leaves(&mut g, params);
    let map = obj.loss_map(&mut g, &leaves, noisy)?;
    let map_shape = g.value(map).shape().to_vec();

    let (weights, weight_grad, clean_loss) = match weighting {
        Weighting::Uniform => (WeightMap::uniform(&map_shape), None, None),
        Weighting::Spatial | Weighting::PerImage => {
            let clean = clean.ok_or_else(|| Error::contract("learned weighting needs a clean batch"))?;
            let w0 = Tensor::zeros(&map_shape);
            let virtual_params = virtual_step(obj, params, noisy, &w0, alpha)?;
            let (clean_loss, g_c) = clean_value_and_grad(obj, &virtual_params, clean)?;
            let direction = g_c.scale(-alpha);
            let seeds: Vec<(Var, &Tensor)> = leaves.iter().copied().zip(direction.tensors()).collect();
            let dlc_dw = g.jvp(map, &seeds)?;
            let u = dlc_dw.scale(-eta);
            let u = if weighting == Weighting::PerImage { per_image_totals(&u) } else { u };
            (rectify_normalize(&u), Some(dlc_dw), Some(clean_loss))
        }
    };

    let noisy_loss = g.value(map).dot(weights.tensor())?;
    let grads = if weights.is_zero() {
        params.zeros_like()
    } else {
        collect_grads(&g.backward(map, weights.tensor())?, &leaves, params)?
    };
    let (params, optim) = sgd_step(params, &grads, optim)?;
    Ok(StepOutput { params, optim, report: StepReport { weights, weight_grad, clean_loss, noisy_loss } })
}

/// Training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    /// Spatially adaptive meta-reweighting.
    Reweight,
    /// Uniform weighting on the noisy pool only.
    Plain,
    /// Plain training on the noisy pool, then on the clean pool.
    FineTune,
    /// Meta-reweighting with one weight per image.
    PerImage,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Reweight, Mode::Plain, Mode::FineTune, Mode::PerImage];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Reweight => "reweight",
            Mode::Plain => "plain",
            Mode::FineTune => "fine_tune",
            Mode::PerImage => "per_image",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn needs_clean(self) -> bool {
        !matches!(self, Mode::Plain)
    }
}

/// Optimisation hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Hyper {
    /// Model step size (virtual and real steps).
    pub alpha: f64,
    /// Weight step size.
    pub eta: f64,
    pub batch_noisy: usize,
    pub batch_clean: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Iterations on the noisy pool.
    pub iterations: usize,
    /// Extra clean-pool iterations in fine-tune mode.
    pub finetune_iterations: usize,
    /// Validation Dice is measured every this many iterations (0 = never).
    pub eval_interval: usize,
    /// Divide `alpha` and `eta` by 10 after this many evaluations without
    /// improvement; `None` keeps the rates constant.
    pub lr_patience: Option<usize>,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            alpha: 1e-4,
            eta: 1e-4,
            batch_noisy: 2,
            batch_clean: 10,
            momentum: 0.99,
            weight_decay: 5e-5,
            iterations: 3000,
            finetune_iterations: 1000,
            eval_interval: 100,
            lr_patience: None,
            seed: 0,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::contract("alpha and eta must be finite and > 0"));
        }
        if self.batch_noisy == 0 || self.batch_clean == 0 {
            return Err(Error::contract("batch sizes must be >= 1"));
        }
        if !((0.0..1.0).contains(&self.momentum) && self.weight_decay >= 0.0) {
            return Err(Error::contract("momentum must be in [0, 1) and weight decay >= 0"));
        }
        Ok(())
    }

    /// Total iterations the given mode runs for.
    pub fn total_iterations(&self, mode: Mode) -> usize {
        match mode {
            Mode::FineTune => self.iterations + self.finetune_iterations,
            _ => self.iterations,
        }
    }
}

/// Position of the batch sampler's generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngState {
    fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState { seed, word_pos: rng.get_word_pos() }
    }
}

/// Per-iteration log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRecord {
    /// 1-based count of completed iterations.
    pub iteration: usize,
    pub noisy_loss: f64,
    /// Clean meta-loss; `None` for modes without a clean batch.
    pub clean_loss: Option<f64>,
    /// Mean validation Dice, measured on evaluation iterations only.
    pub val_dice: Option<f64>,
    pub alpha: f64,
    pub eta: f64,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Params,
    pub optim: OptimState,
    pub iteration: usize,
    pub alpha: f64,
    pub eta: f64,
    pub best_val_dice: Option<f64>,
    pub evals_since_best: usize,
    pub log: Vec<MetricRecord>,
    pub rng: RngState,
}

impl TrainState {
    pub fn new(net: &NetConfig, hyper: &Hyper) -> Result<Self> {
        let params = segnet::init_params(net)?;
        let sgd = SgdHyper { lr: hyper.alpha, momentum: hyper.momentum, weight_decay: hyper.weight_decay };
        Ok(TrainState {
            optim: OptimState::new(&params, sgd),
            params,
            iteration: 0,
            alpha: hyper.alpha,
            eta: hyper.eta,
            best_val_dice: None,
            evals_since_best: 0,
            log: Vec::new(),
            rng: RngState { seed: hyper.seed, word_pos: 0 },
        })
    }
}

/// Phase of a training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Noisy,
    CleanFineTune,
}

/// Passed to the observer after each iteration.
pub struct StepEvent<'a> {
    /// 1-based index of the iteration that just completed.
    pub iteration: usize,
    pub phase: Phase,
    /// Parameters the iteration started from.
    pub params_before: &'a Params,
    pub noisy_indices: &'a [usize],
    pub clean_indices: &'a [usize],
    pub report: &'a StepReport,
    pub alpha: f64,
    pub eta: f64,
}

fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

/// Mean Dice of thresholded predictions against each example's clean mask.
pub fn evaluate(net: &NetConfig, params: &Params, examples: &[Example]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(16) {
        let images: Vec<Tensor> = chunk.iter().map(|e| e.image.clone()).collect();
        let probs = segnet::forward(net, params, &Tensor::stack(&images)?)?;
        for (i, e) in chunk.iter().enumerate() {
            let pred = losses::threshold(&probs.index_outer(i)?)?;
            out.push(losses::dice(&pred, &e.clean)?);
        }
    }
    Ok(out)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().fold(0.0, |a, v| a + v) / values.len() as f64
}

/// Runs (or resumes) training until the mode's iteration budget is spent.
///
/// `observer` sees every completed iteration; returning an error aborts the run.
pub fn train_from(
    state: TrainState,
    data: &PreparedSplit,
    net: &NetConfig,
    hyper: &Hyper,
    mode: Mode,
    observer: &mut dyn FnMut(&StepEvent<'_>) -> Result<()>,
) -> Result<TrainState> {
    train_until(state, data, net, hyper, mode, usize::MAX, observer)
}

/// Like [`train_from`] but stops once `until` iterations are complete.
/// Splitting a run into several calls yields exactly the same trajectory.
pub fn train_until(
    mut state: TrainState,
    data: &PreparedSplit,
    net: &NetConfig,
    hyper: &Hyper,
    mode: Mode,
    until: usize,
    observer: &mut dyn FnMut(&StepEvent<'_>) -> Result<()>,
) -> Result<TrainState> {
    hyper.validate()?;
    segnet::check_params(net, &state.params)?;
    if data.noisy.is_empty() && hyper.iterations > 0 {
        return Err(Error::contract("noisy pool is empty"));
    }
    if mode.needs_clean() && data.clean.is_empty() {
        return Err(Error::contract(format!("mode {} needs a nonempty clean pool", mode.name())));
    }
    let obj = SegObjective { net: *net };
    let mut rng = state.rng.restore();
    let total = hyper.total_iterations(mode).min(until);
    while state.iteration < total {
        let phase = if state.iteration < hyper.iterations { Phase::Noisy } else { Phase::CleanFineTune };
        let (noisy_idx, clean_idx, out) = match (mode, phase) {
            (Mode::Plain | Mode::FineTune, Phase::Noisy) => {
                let ni = sample_indices(&mut rng, data.noisy.len(), hyper.batch_noisy);
                let batch = SegBatch::gather(&data.noisy, &ni)?;
                let out = train_step(&obj, &state.params, &state.optim, &batch, None, state.alpha, state.eta, Weighting::Uniform)?;
                (ni, vec![], out)
            }
            (_, Phase::CleanFineTune) => {
                let ci = sample_indices(&mut rng, data.clean.len(), hyper.batch_clean);
                let batch = SegBatch::gather(&data.clean, &ci)?;
                let out = train_step(&obj, &state.params, &state.optim, &batch, None, state.alpha, state.eta, Weighting::Uniform)?;
                (vec![], ci, out)
            }
            (Mode::Reweight | Mode::PerImage, Phase::Noisy) => {
                let ni = sample_indices(&mut rng, data.noisy.len(), hyper.batch_noisy);
                let ci = sample_indices(&mut rng, data.clean.len(), hyper.batch_clean);
                let nb = SegBatch::gather(&data.noisy, &ni)?;
                let cb = SegBatch::gather(&data.clean, &ci)?;
                let weighting = if mode == Mode::Reweight { Weighting::Spatial } else { Weighting::PerImage };
                let out = train_step(&obj, &state.params, &state.optim, &nb, Some(&cb), state.alpha, state.eta, weighting)?;
                (ni, ci, out)
            }
        };
        let iteration = state.iteration + 1;
        observer(&StepEvent {
            iteration,
            phase,
            params_before: &state.params,
            noisy_indices: &noisy_idx,
            clean_indices: &clean_idx,
            report: &out.report,
            alpha: state.alpha,
            eta: state.eta,
        })?;
        let record_rates = (state.alpha, state.eta);
        state.params = out.params;
        state.optim = out.optim;
        state.iteration = iteration;
        state.rng = RngState::capture(state.rng.seed, &rng);

        let val_dice = if hyper.eval_interval > 0 && iteration.is_multiple_of(hyper.eval_interval) && !data.validation.is_empty() {
            let d = mean(&evaluate(net, &state.params, &data.validation)?);
            if state.best_val_dice.is_none_or(|b| d > b) {
                state.best_val_dice = Some(d);
                state.evals_since_best = 0;
            } else {
                state.evals_since_best += 1;
                if hyper.lr_patience.is_some_and(|p| state.evals_since_best >= p) {
                    state.alpha /= 10.0;
                    state.eta /= 10.0;
                    state.optim.hyper.lr = state.alpha;
                    state.evals_since_best = 0;
                }
            }
            Some(d)
        } else {
            None
        };
        state.log.push(MetricRecord {
            iteration,
            noisy_loss: out.report.noisy_loss,
            clean_loss: out.report.clean_loss,
            val_dice,
            alpha: record_rates.0,
            eta: record_rates.1,
        });
    }
    Ok(state)
}

/// Fresh run from `net`'s initialisation.
pub fn train(
    data: &PreparedSplit,
    net: &NetConfig,
    hyper: &Hyper,
    mode: Mode,
    observer: &mut dyn FnMut(&StepEvent<'_>) -> Result<()>,
) -> Result<TrainState> {
    train_from(TrainState::new(net, hyper)?, data, net, hyper, mode, observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectify_examples() {
        let w = rectify_normalize(&Tensor::from_vec(vec![-1.0, -2.0, -3.0]).unwrap());
        assert!(w.is_zero());
        let w = rectify_normalize(&Tensor::from_vec(vec![-1.0, 2.0, 3.0]).unwrap());
        let d = w.tensor().data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.4).abs() < 1e-15 && (d[2] - 0.6).abs() < 1e-15);
        let w = rectify_normalize(&Tensor::from_vec(vec![5.0]).unwrap());
        assert_eq!(w.tensor().data(), &[1.0]);
    }

    #[test]
    fn weight_map_invariants() {
        assert!(WeightMap::new(Tensor::from_vec(vec![0.5, 0.5]).unwrap()).is_ok());
        assert!(WeightMap::new(Tensor::from_vec(vec![0.0, 0.0]).unwrap()).is_ok());
        assert!(WeightMap::new(Tensor::from_vec(vec![0.5, 0.4]).unwrap()).is_err());
        assert!(WeightMap::new(Tensor::from_vec(vec![1.5, -0.5]).unwrap()).is_err());
    }

    #[test]
    fn per_image_totals_broadcast() {
        let u = Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        assert_eq!(per_image_totals(&u).data(), &[3.0, 3.0, -0.5, -0.5]);
    }

    #[test]
    fn hyper_validation() {
        assert!(Hyper::default().validate().is_ok());
        assert!(Hyper { alpha: 0.0, ..Hyper::default() }.validate().is_err());
        assert!(Hyper { batch_clean: 0, ..Hyper::default() }.validate().is_err());
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in Mode::ALL {
            assert_eq!(Mode::parse(m.name()), Some(m));
        }
        assert_eq!(Mode::parse("nope"), None);
    }
}
