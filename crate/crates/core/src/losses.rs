//! Per-pixel cross-entropy, the clean and weighted losses, and Dice.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ndcore::{Graph, Tensor, Var};

/// Binary raster: 1 = lesion, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape("mask", format!("{} values for {height}x{width}", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::contract("mask values must be 0 or 1"));
        }
        Ok(Mask { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask { height, width, data: vec![0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Mask { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_size(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Pixels where the two masks disagree.
    pub fn xor(&self, other: &Mask) -> Result<Mask> {
        if !self.same_size(other) {
            return Err(Error::shape("xor", "mask sizes differ"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a ^ b).collect();
        Ok(Mask { height: self.height, width: self.width, data })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_raw(vec![self.height, self.width], self.data.iter().map(|&v| v as f64).collect())
    }
}

/// Concatenated labels of a batch of equally sized masks.
pub fn batch_labels(masks: &[&Mask]) -> Result<Vec<u8>> {
    let first = masks.first().ok_or_else(|| Error::contract("empty batch"))?;
    let mut out = Vec::with_capacity(masks.len() * first.data.len());
    for m in masks {
        if !m.same_size(first) {
            return Err(Error::shape("batch_labels", "masks in a batch differ in size"));
        }
        out.extend_from_slice(&m.data);
    }
    Ok(out)
}

/// Loss-map node `[B, H, W]` for a batch of probability maps.
pub fn loss_map_node(g: &mut Graph, probs: Var, masks: &[&Mask]) -> Result<Var> {
    let labels = batch_labels(masks)?;
    let s = g.value(probs).shape();
    if s.len() != 4 || s[0] != masks.len() || s[2] != masks[0].height || s[3] != masks[0].width {
        return Err(Error::shape("pixel_ce", format!("probs {s:?} vs {} masks of {}x{}", masks.len(), masks[0].height, masks[0].width)));
    }
    g.pixel_ce(probs, &labels)
}

/// Mean of all pixel losses; images count equally since they share a size.
pub fn clean_loss_node(g: &mut Graph, probs: Var, masks: &[&Mask]) -> Result<Var> {
    let map = loss_map_node(g, probs, masks)?;
    g.mean(map)
}

/// Per-pixel cross-entropy of one `[C, H, W]` probability map against a mask.
pub fn pixel_ce(prob: &Tensor, mask: &Mask) -> Result<Tensor> {
    let s = prob.shape();
    if s.len() != 3 {
        return Err(Error::shape("pixel_ce", format!("prob must be [C, H, W], got {s:?}")));
    }
    let mut g = Graph::new();
    let p = g.constant(prob.reshape(&[1, s[0], s[1], s[2]])?);
    let l = loss_map_node(&mut g, p, &[mask])?;
    g.value(l).reshape(&[s[1], s[2]])
}

/// Mean over images of the per-image mean pixel loss.
pub fn clean_loss(probs: &Tensor, masks: &[&Mask]) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::contract("clean loss of an empty batch"));
    }
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let l = clean_loss_node(&mut g, p, masks)?;
    g.value(l).item()
}

/// `sum_i sum_p w_ip * l_ip` without normalisation.
pub fn weighted_loss(loss_maps: &Tensor, weights: &Tensor) -> Result<f64> {
    loss_maps.check_same_shape(weights, "weighted_loss")?;
    if weights.data().iter().any(|&w| w < 0.0) {
        return Err(Error::contract("weighted loss requires nonnegative weights"));
    }
    loss_maps.dot(weights)
}

/// Foreground where the lesion-class probability exceeds 0.5; class 0 wins ties.
pub fn threshold(prob: &Tensor) -> Result<Mask> {
    let s = prob.shape();
    if s.len() != 3 || s[0] != 2 {
        return Err(Error::shape("threshold", format!("prob must be [2, H, W], got {s:?}")));
    }
    let hw = s[1] * s[2];
    let fg = &prob.data()[hw..];
    Ok(Mask { height: s[1], width: s[2], data: fg.iter().map(|&p| (p > 0.5) as u8).collect() })
}

/// `2|A∩B| / (|A|+|B|)`, with two empty masks scoring 1.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    if !pred.same_size(gt) {
        return Err(Error::shape("dice", "mask sizes differ"));
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &q) in pred.data.iter().zip(&gt.data) {
        inter += (p & q) as usize;
        a += p as usize;
        b += q as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(h: usize, w: usize, fg: &[f64]) -> Tensor {
        let mut d: Vec<f64> = fg.iter().map(|p| 1.0 - p).collect();
        d.extend_from_slice(fg);
        Tensor::new(vec![2, h, w], d).unwrap()
    }

    #[test]
    fn certain_pixel_has_zero_loss() {
        let m = Mask::new(1, 1, vec![1]).unwrap();
        assert_eq!(pixel_ce(&prob(1, 1, &[1.0]), &m).unwrap().data(), &[0.0]);
    }

    #[test]
    fn half_probability_gives_ln2() {
        let m = Mask::new(1, 2, vec![0, 1]).unwrap();
        let l = pixel_ce(&prob(1, 2, &[0.5, 0.5]), &m).unwrap();
        for v in l.data() {
            assert!((v - core::f64::consts::LN_2).abs() < 1e-15);
        }
        let probs = Tensor::stack(&[prob(1, 2, &[0.5, 0.5])]).unwrap();
        assert!((clean_loss(&probs, &[&m]).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn weighted_loss_edge_cases() {
        let l = Tensor::new(vec![1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(weighted_loss(&l, &Tensor::zeros(&[1, 2, 2])).unwrap(), 0.0);
        let one_hot = Tensor::new(vec![1, 2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(weighted_loss(&l, &one_hot).unwrap(), 0.3);
        let neg = Tensor::new(vec![1, 2, 2], vec![0.0, -1.0, 1.0, 0.0]).unwrap();
        assert!(weighted_loss(&l, &neg).unwrap_err().is_contract());
    }

    #[test]
    fn dice_cases() {
        let a = Mask::from_fn(4, 4, |r, c| r < 2 && c < 2);
        let b = Mask::from_fn(4, 4, |r, c| r >= 2 && c >= 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let e = Mask::empty(4, 4);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        let half = Mask::from_fn(4, 4, |r, c| r == 0 && c < 2);
        assert!((dice(&a, &half).unwrap() - 2.0 * 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_tie_goes_to_background() {
        let m = threshold(&prob(1, 3, &[0.5, 0.5000001, 0.2])).unwrap();
        assert_eq!(m.data(), &[0, 1, 0]);
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(Mask::new(1, 2, vec![0, 2]).is_err());
        assert!(Mask::new(2, 2, vec![0, 1]).is_err());
    }
}
