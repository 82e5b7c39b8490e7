//! Synthetic lesion corpus, channel normalisation, resizing and
//! clean/noisy pool management. File IO lives in the companion crate.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::losses::Mask;
use crate::ndcore::Tensor;
use crate::noisegen::{self, Importance, NoiseSpec, NoiseWarning};

/// Image with its clean and noisy annotations. `image` is `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub clean_mask: Mask,
    pub noisy_mask: Mask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, clean_mask: Mask, noisy_mask: Mask) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3
            || s[1] != clean_mask.height()
            || s[2] != clean_mask.width()
            || !clean_mask.same_size(&noisy_mask)
        {
            return Err(Error::shape("sample", format!("image {s:?} and masks disagree in size")));
        }
        Ok(Sample { id: id.into(), image, clean_mask, noisy_mask })
    }
}

/// Bounds on the lesion area as a fraction of the image.
pub const MIN_AREA_FRACTION: f64 = 0.05;
pub const MAX_AREA_FRACTION: f64 = 0.60;

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Radius of the blob boundary as a function of angle.
struct Blob {
    center: (f64, f64),
    semi_major: f64,
    semi_minor: f64,
    rotation: f64,
    harmonics: [(f64, f64); 3],
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, side: f64) -> Blob {
        let frac = rng.random_range(0.08..0.40);
        let aspect = rng.random_range(0.55..1.0);
        let area = frac * side * side;
        let semi_major = libm::sqrt(area / (PI * aspect));
        let mut harmonics = [(0.0, 0.0); 3];
        for h in &mut harmonics {
            *h = (rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI));
        }
        Blob {
            center: (rng.random_range(0.3..0.7) * side, rng.random_range(0.3..0.7) * side),
            semi_major,
            semi_minor: semi_major * aspect,
            rotation: rng.random_range(0.0..PI),
            harmonics,
        }
    }

    fn radius(&self, angle: f64) -> f64 {
        let t = angle - self.rotation;
        let (a, b) = (self.semi_major, self.semi_minor);
        let (ct, st) = (libm::cos(t), libm::sin(t));
        let ellipse = a * b / libm::sqrt((b * ct) * (b * ct) + (a * st) * (a * st));
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(i, &(amp, phase))| amp * libm::cos((i + 2) as f64 * angle + phase))
            .sum();
        ellipse * (1.0 + wobble)
    }

    /// Signed distance proxy: positive inside, in pixels along the ray from the centre.
    fn depth(&self, row: f64, col: f64) -> f64 {
        let (dy, dx) = (row - self.center.0, col - self.center.1);
        self.radius(libm::atan2(dy, dx)) - libm::hypot(dy, dx)
    }
}

fn quantize(v: f64) -> f64 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

/// One synthetic sample: a textured skin-tone background with a single darker
/// smooth blob. Deterministic in `(seed, index)`.
pub fn gen_sample(side: usize, seed: u64, index: usize) -> Result<Sample> {
    if side < 16 {
        return Err(Error::contract(format!("synthetic side must be >= 16, got {side}")));
    }
    let mut rng = sample_rng(seed, index);
    let s = side as f64;
    let npix = (side * side) as f64;
    let (blob, mask) = loop {
        let blob = Blob::random(&mut rng, s);
        let raw = Mask::from_fn(side, side, |r, c| blob.depth(r as f64 + 0.5, c as f64 + 0.5) > 0.0);
        let Some((mask, _)) = noisegen::largest_component(&raw) else { continue };
        let frac = mask.count() as f64 / npix;
        if (MIN_AREA_FRACTION..=MAX_AREA_FRACTION).contains(&frac) {
            break (blob, mask);
        }
    };

    let skin = [rng.random_range(0.72..0.95), rng.random_range(0.52..0.75), rng.random_range(0.42..0.65)];
    let darken = rng.random_range(0.35..0.7);
    let tint = [1.0, rng.random_range(0.75..0.95), rng.random_range(0.75..0.95)];
    let wave = |rng: &mut ChaCha8Rng, lo: f64, hi: f64, amp: (f64, f64)| {
        let freq = rng.random_range(lo..hi) * 2.0 * PI / s;
        let theta = rng.random_range(0.0..2.0 * PI);
        (freq * libm::cos(theta), freq * libm::sin(theta), rng.random_range(0.0..2.0 * PI), rng.random_range(amp.0..amp.1))
    };
    let texture_waves: Vec<_> = (0..3).map(|_| wave(&mut rng, 0.5, 3.0, (0.01, 0.05))).collect();
    let pigment_waves: Vec<_> = (0..2).map(|_| wave(&mut rng, 1.0, 4.0, (0.1, 0.25))).collect();
    // Small dark spots away from the lesion and thin hair strokes anywhere.
    let spots: Vec<(f64, f64, f64)> = (0..rng.random_range(0..=3))
        .filter_map(|_| {
            let (y, x) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            let radius = rng.random_range(0.8..2.0);
            (blob.depth(y, x) < -radius - 1.0).then_some((y, x, radius))
        })
        .collect();
    let hairs: Vec<(f64, f64, f64)> = (0..rng.random_range(0..=2))
        .map(|_| {
            let angle = rng.random_range(0.0..PI);
            let (y, x) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            (libm::sin(angle), libm::cos(angle), libm::cos(angle) * y - libm::sin(angle) * x)
        })
        .collect();
    let grain = Normal::new(0.0, 0.04).map_err(|_| Error::contract("invalid grain distribution"))?;
    let field = |waves: &[(f64, f64, f64, f64)], y: f64, x: f64| -> f64 {
        waves.iter().map(|&(fy, fx, ph, amp)| amp * libm::sin(fy * y + fx * x + ph)).sum()
    };
    let softness = 0.75;

    let mut data = vec![0.0; 3 * side * side];
    for r in 0..side {
        for c in 0..side {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let inside = mask.get(r, c);
            // Soft edge for appearance; the mask itself stays the exact raster.
            let mut alpha = (0.5 + blob.depth(y, x) / (2.0 * softness)).clamp(0.0, 1.0);
            if inside != (alpha > 0.5) {
                alpha = if inside { 0.5 + 1e-3 } else { 0.5 - 1e-3 };
            }
            let pigment = (0.75 + field(&pigment_waves, y, x)).clamp(0.35, 1.0);
            let spot = spots
                .iter()
                .map(|&(sy, sx, rad)| (1.0 - (libm::hypot(y - sy, x - sx) - rad)).clamp(0.0, 1.0))
                .fold(0.0, f64::max);
            let hair = hairs.iter().map(|&(a, b, d)| (1.0 - libm::fabs(b * y - a * x - d) / 0.7).clamp(0.0, 1.0)).fold(0.0, f64::max);
            let texture = field(&texture_waves, y, x);
            for ch in 0..3 {
                let dark = (1.0 - darken) * tint[ch];
                let mut v = skin[ch] * (1.0 - alpha * pigment * dark) * (1.0 - 0.6 * spot * dark);
                v *= 1.0 - 0.55 * hair;
                let v = v * (1.0 + texture) + grain.sample(&mut rng);
                data[(ch * side + r) * side + c] = quantize(v);
            }
        }
    }
    let image = Tensor::new(vec![3, side, side], data)?;
    Sample::new(format!("s{index:05}"), image, mask.clone(), mask)
}

/// `n` synthetic samples with clean masks only (`noisy_mask` mirrors the clean one).
pub fn gen_synthetic(n: usize, side: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::contract("corpus size must be >= 1"));
    }
    (0..n).map(|i| gen_sample(side, seed, i)).collect()
}

/// Per-channel mean and standard deviation of a training pool.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population statistics over every pixel of every image (each `[C, H, W]`).
    pub fn compute<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Result<NormStats> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut channels = None;
        for img in images {
            let s = img.shape();
            if s.len() != 3 || channels.is_some_and(|c| c != s[0]) {
                return Err(Error::shape("norm_stats", format!("unexpected image shape {s:?}")));
            }
            let c = *channels.get_or_insert(s[0]);
            if sum.is_empty() {
                sum = vec![0.0; c];
                sq = vec![0.0; c];
            }
            let hw = s[1] * s[2];
            for ch in 0..c {
                for &v in &img.data()[ch * hw..(ch + 1) * hw] {
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
            count += hw;
        }
        if count == 0 {
            return Err(Error::contract("cannot compute statistics of an empty pool"));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| libm::sqrt((q / n - m * m).max(0.0))).collect();
        let stats = NormStats { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() || self.mean.is_empty() {
            return Err(Error::contract("mean and std must have one entry per channel"));
        }
        if let Some(ch) = self.std.iter().position(|&s| !(s.is_finite() && s > 1e-12)) {
            return Err(Error::contract(format!("channel {ch} has zero standard deviation")));
        }
        Ok(())
    }

    /// `(x − mean_c) / std_c` for a `[C, H, W]` image.
    pub fn normalize(&self, image: &Tensor) -> Result<Tensor> {
        self.validate()?;
        let s = image.shape();
        if s.len() != 3 || s[0] != self.mean.len() {
            return Err(Error::shape("normalize", format!("image {s:?} vs {} channels", self.mean.len())));
        }
        let hw = s[1] * s[2];
        let data = image
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i / hw;
                (v - self.mean[ch]) / self.std[ch]
            })
            .collect();
        Tensor::new(s.to_vec(), data)
    }
}

/// Area-averaging resample of a `[C, H, W]` image to `[C, side, side]`.
pub fn resize_area(image: &Tensor, side: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || side == 0 {
        return Err(Error::shape("resize_area", format!("image {s:?} to side {side}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let rows = area_weights(h, side);
    let cols = area_weights(w, side);
    let mut out = vec![0.0; c * side * side];
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for (oy, ry) in rows.iter().enumerate() {
            for (ox, rx) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for &(iy, wy) in ry {
                    for &(ix, wx) in rx {
                        acc += wy * wx * plane[iy * w + ix];
                    }
                }
                out[(ch * side + oy) * side + ox] = acc;
            }
        }
    }
    Tensor::new(vec![c, side, side], out)
}

/// For each output cell, the overlapping input cells and their normalised overlap.
fn area_weights(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = libm::floor(lo) as usize;
            let last = (libm::ceil(hi) as usize).min(input);
            (first..last)
                .filter_map(|i| {
                    let overlap = hi.min((i + 1) as f64) - lo.max(i as f64);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-averaged resize of a mask, re-binarised at 0.5.
pub fn resize_mask(mask: &Mask, side: usize) -> Result<Mask> {
    let t = mask.to_tensor().reshape(&[1, mask.height(), mask.width()])?;
    let r = resize_area(&t, side)?;
    Mask::new(side, side, r.data().iter().map(|&v| (v >= 0.5) as u8).collect())
}

/// How the clean pool relates to the noisy pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitPolicy {
    /// Clean and noisy pools hold different images.
    #[default]
    Disjoint,
    /// Clean images also appear in the noisy pool with noisy labels.
    Subset,
}

impl SplitPolicy {
    pub fn name(self) -> &'static str {
        match self {
            SplitPolicy::Disjoint => "disjoint",
            SplitPolicy::Subset => "subset",
        }
    }

    pub fn parse(s: &str) -> Option<SplitPolicy> {
        match s {
            "disjoint" => Some(SplitPolicy::Disjoint),
            "subset" => Some(SplitPolicy::Subset),
            _ => None,
        }
    }
}

/// Pool sizes: `clean` = K, `noisy` = M.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitSizes {
    pub clean: usize,
    pub noisy: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    /// Samples consumed under `policy`.
    pub fn required(&self, policy: SplitPolicy) -> usize {
        match policy {
            SplitPolicy::Disjoint => self.clean + self.noisy + self.validation + self.test,
            SplitPolicy::Subset => self.noisy + self.validation + self.test,
        }
    }
}

/// Provenance of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub policy: SplitPolicy,
    pub sizes: SplitSizes,
    pub noise: NoiseSpec,
    pub importance: Importance,
    pub seed: u64,
    /// Ids whose images define the normalisation statistics.
    pub stats_pool: Vec<String>,
    pub warnings: Vec<(String, NoiseWarning)>,
}

/// Noisy pool D^n, clean pool D^c, validation and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub noisy: Vec<Sample>,
    pub clean: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub record: SplitRecord,
}

/// Shuffles `samples` with `seed` and carves out test, validation, clean and
/// noisy sets in that order. Noisy-pool samples get `noisy_mask` from `noise`.
pub fn make_splits(
    samples: &[Sample],
    sizes: SplitSizes,
    noise: NoiseSpec,
    importance: Importance,
    policy: SplitPolicy,
    seed: u64,
) -> Result<DatasetSplit> {
    noise.validate()?;
    let need = sizes.required(policy);
    if need > samples.len() {
        return Err(Error::contract(format!(
            "split needs {need} samples under {} policy, corpus has {}",
            policy.name(),
            samples.len()
        )));
    }
    if policy == SplitPolicy::Subset && sizes.clean > sizes.noisy {
        return Err(Error::contract("subset policy needs clean size <= noisy size"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut cursor = order.into_iter();
    let mut take = |n: usize| -> Vec<Sample> { cursor.by_ref().take(n).map(|i| samples[i].clone()).collect() };
    let test = take(sizes.test);
    let validation = take(sizes.validation);
    let (clean_src, noisy_src) = match policy {
        SplitPolicy::Disjoint => {
            let clean = take(sizes.clean);
            (clean, take(sizes.noisy))
        }
        SplitPolicy::Subset => {
            let noisy = take(sizes.noisy);
            (noisy[..sizes.clean].to_vec(), noisy)
        }
    };
    let clean: Vec<Sample> = clean_src
        .into_iter()
        .map(|mut s| {
            s.noisy_mask = s.clean_mask.clone();
            s
        })
        .collect();
    let mut warnings = Vec::new();
    let mut noisy = Vec::with_capacity(noisy_src.len());
    for mut s in noisy_src {
        let ann = noisegen::apply_noise(&s.clean_mask, noise, importance)?;
        warnings.extend(ann.warnings.into_iter().map(|w| (s.id.clone(), w)));
        s.noisy_mask = ann.mask;
        noisy.push(s);
    }
    let mut seen = BTreeSet::new();
    let stats_pool = noisy.iter().chain(&clean).filter(|s| seen.insert(s.id.clone())).map(|s| s.id.clone()).collect();
    Ok(DatasetSplit {
        noisy,
        clean,
        validation,
        test,
        record: SplitRecord { policy, sizes, noise, importance, seed, stats_pool, warnings },
    })
}

/// A normalised training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// Normalised `[C, H, W]` image.
    pub image: Tensor,
    /// Label used for training (noisy for the noisy pool, clean elsewhere).
    pub target: Mask,
    pub clean: Mask,
}

/// A split with every image normalised by statistics of its training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub stats: NormStats,
    pub noisy: Vec<Example>,
    pub clean: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl PreparedSplit {
    pub fn new(split: &DatasetSplit) -> Result<Self> {
        let pool: BTreeSet<&str> = split.record.stats_pool.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        let training = split
            .noisy
            .iter()
            .chain(&split.clean)
            .filter(|s| pool.contains(s.id.as_str()) && seen.insert(s.id.as_str()))
            .map(|s| &s.image);
        let stats = NormStats::compute(training)?;
        Self::with_stats(split, stats)
    }

    /// Normalises with externally supplied statistics (e.g. from a saved run).
    pub fn with_stats(split: &DatasetSplit, stats: NormStats) -> Result<Self> {
        let conv = |set: &[Sample], noisy: bool| -> Result<Vec<Example>> {
            set.iter()
                .map(|s| {
                    Ok(Example {
                        id: s.id.clone(),
                        image: stats.normalize(&s.image)?,
                        target: if noisy { s.noisy_mask.clone() } else { s.clean_mask.clone() },
                        clean: s.clean_mask.clone(),
                    })
                })
                .collect()
        };
        Ok(PreparedSplit {
            noisy: conv(&split.noisy, true)?,
            clean: conv(&split.clean, false)?,
            validation: conv(&split.validation, false)?,
            test: conv(&split.test, false)?,
            stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = gen_synthetic(4, 24, 7).unwrap();
        let b = gen_synthetic(4, 24, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_synthetic(4, 24, 8).unwrap());
        assert!(gen_synthetic(0, 24, 0).is_err());
        assert!(gen_synthetic(1, 8, 0).is_err());
    }

    #[test]
    fn constant_pool_has_zero_std() {
        let img = Tensor::full(&[3, 2, 2], 0.5);
        let err = NormStats::compute([&img]).unwrap_err();
        assert!(err.is_contract());
    }

    #[test]
    fn held_out_normalisation_arithmetic() {
        let stats = NormStats { mean: vec![0.5, 0.25, 0.0], std: vec![0.5, 0.25, 2.0] };
        let img = Tensor::new(vec![3, 1, 2], vec![1.0, 0.0, 0.5, 0.25, 4.0, -2.0]).unwrap();
        let out = stats.normalize(&img).unwrap();
        assert_eq!(out.data(), &[1.0, -1.0, 1.0, 0.0, 2.0, -1.0]);
    }

    #[test]
    fn resize_identity_and_halving() {
        let img = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(resize_area(&img, 2).unwrap(), img);
        assert_eq!(resize_area(&img, 1).unwrap().data(), &[0.5]);
        let m = Mask::from_fn(4, 4, |r, _| r < 2);
        assert_eq!(resize_mask(&m, 2).unwrap(), Mask::from_fn(2, 2, |r, _| r == 0));
    }

    #[test]
    fn split_sizes_and_errors() {
        let corpus = gen_synthetic(30, 16, 3).unwrap();
        let sizes = SplitSizes { clean: 0, noisy: 20, validation: 5, test: 5 };
        let s = make_splits(&corpus, sizes, NoiseSpec::AxisAligned4, Importance::AngleLength, SplitPolicy::Disjoint, 1)
            .unwrap();
        assert!(s.clean.is_empty());
        assert_eq!(s.noisy.len(), 20);
        let too_many = SplitSizes { clean: 1, ..sizes };
        assert!(make_splits(&corpus, too_many, NoiseSpec::AxisAligned4, Importance::AngleLength, SplitPolicy::Disjoint, 1)
            .is_err());
    }
}
