//! Miniature U-Net producing per-pixel two-class probability maps.
//!
//! Layout for `depth = D`, channel width `c_l = base * 2^l`:
//!
//! ```text
//! encoder l = 0..D:      skip_l = relu(conv3x3(x)); x = maxpool2(skip_l)
//! decoder l = D-1..=0:   x = relu(conv3x3(concat(upsample2(x), skip_l)))
//! head:                  softmax(conv1x1(x))
//! ```
//!
//! Parameters are named `enc{l}.weight`, `enc{l}.bias`, then `dec{l}.*`
//! from the deepest level upwards, then `head.*`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ndcore::{param_leaves, Graph, Params, Tensor, Var};

/// Number of output classes (background, lesion).
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetConfig {
    pub input_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub image_side: usize,
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { input_channels: 3, base_channels: 8, depth: 2, image_side: 24, init_sigma: 0.05, seed: 0 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::contract("depth, base_channels and input_channels must be >= 1"));
        }
        if self.depth >= usize::BITS as usize || self.image_side == 0 || !self.image_side.is_multiple_of(1 << self.depth) {
            return Err(Error::contract(format!(
                "image_side {} must be a positive multiple of 2^depth = 2^{}",
                self.image_side, self.depth
            )));
        }
        if !(self.init_sigma.is_finite() && self.init_sigma >= 0.0) {
            return Err(Error::contract("init_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut out = Vec::new();
        let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![cout, cin, k, k]));
            out.push((format!("{name}.bias"), vec![cout]));
        };
        let mut cin = self.input_channels;
        for l in 0..self.depth {
            conv(format!("enc{l}"), cin, self.width(l), 3);
            cin = self.width(l);
        }
        for l in (0..self.depth).rev() {
            conv(format!("dec{l}"), cin + self.width(l), self.width(l), 3);
            cin = self.width(l);
        }
        conv(String::from("head"), cin, CLASSES, 1);
        Ok(out)
    }
}

pub fn count_params(cfg: &NetConfig) -> Result<usize> {
    Ok(cfg.param_shapes()?.iter().map(|(_, s)| s.iter().product::<usize>()).sum())
}

/// Gaussian `N(0, init_sigma^2)` weights drawn in parameter order; zero biases.
pub fn init_params(cfg: &NetConfig) -> Result<Params> {
    let shapes = cfg.param_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).map_err(|_| Error::contract("invalid normal distribution"))?;
    let mut params = Params::new();
    for (name, shape) in shapes {
        let n = shape.iter().product();
        let t = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let data: Vec<f64> = (0..n).map(|_| cfg.init_sigma * normal.sample(&mut rng)).collect();
            Tensor::new(shape, data)?
        };
        params.push(name, t)?;
    }
    Ok(params)
}

/// Checks names and shapes of `params` against `cfg`.
pub fn check_params(cfg: &NetConfig, params: &Params) -> Result<()> {
    let shapes = cfg.param_shapes()?;
    if shapes.len() != params.len() {
        return Err(Error::shape("segnet", format!("expected {} tensors, got {}", shapes.len(), params.len())));
    }
    for ((name, shape), (pn, t)) in shapes.iter().zip(params.iter()) {
        if name != pn || shape.as_slice() != t.shape() {
            return Err(Error::shape("segnet", format!("expected {name} {shape:?}, got {pn} {:?}", t.shape())));
        }
    }
    Ok(())
}

/// Records the network on `g`; `params` are leaves in storage order and
/// `images` is `[B, input_channels, side, side]`. Returns `[B, 2, side, side]`.
pub fn build(g: &mut Graph, cfg: &NetConfig, params: &[Var], images: Var) -> Result<Var> {
    let s = g.value(images).shape();
    if s.len() != 4 || s[1] != cfg.input_channels || s[2] != cfg.image_side || s[3] != cfg.image_side {
        return Err(Error::shape(
            "segnet",
            format!("images {s:?} do not match [B, {}, {side}, {side}]", cfg.input_channels, side = cfg.image_side),
        ));
    }
    let expected = 2 * (2 * cfg.depth + 1);
    if params.len() != expected {
        return Err(Error::shape("segnet", format!("expected {expected} parameter leaves, got {}", params.len())));
    }
    let mut p = params.chunks_exact(2);
    let mut next = || {
        let c = p.next().expect("length checked above");
        (c[0], c[1])
    };
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut x = images;
    for _ in 0..cfg.depth {
        let (w, b) = next();
        let y = g.conv2d(x, w, b)?;
        let y = g.relu(y)?;
        skips.push(y);
        x = g.maxpool2(y)?;
    }
    for skip in skips.into_iter().rev() {
        let (w, b) = next();
        let up = g.upsample2(x)?;
        let cat = g.concat(up, skip, 1)?;
        let y = g.conv2d(cat, w, b)?;
        x = g.relu(y)?;
    }
    let (w, b) = next();
    let logits = g.conv2d(x, w, b)?;
    g.softmax(logits)
}

/// Probability maps `[B, 2, H, W]` for a batch of images `[B, C, H, W]`.
pub fn forward(cfg: &NetConfig, params: &Params, images: &Tensor) -> Result<Tensor> {
    check_params(cfg, params)?;
    let mut g = Graph::new();
    let leaves: Vec<Var> = params.tensors().iter().map(|t| g.constant(t.clone())).collect();
    let x = g.constant(images.clone());
    let out = build(&mut g, cfg, &leaves, x)?;
    Ok(g.value(out).clone())
}

/// Adds `params` as differentiable leaves and records the network.
pub fn build_with_params(g: &mut Graph, cfg: &NetConfig, params: &Params, images: &Tensor) -> Result<(Vec<Var>, Var)> {
    check_params(cfg, params)?;
    let leaves = param_leaves(g, params);
    let x = g.constant(images.clone());
    let out = build(g, cfg, &leaves, x)?;
    Ok((leaves, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_configs() {
        let bad = NetConfig { image_side: 10, ..NetConfig::default() };
        assert!(bad.validate().is_err());
        assert!(NetConfig { depth: 0, ..NetConfig::default() }.validate().is_err());
        assert!(NetConfig { base_channels: 0, ..NetConfig::default() }.validate().is_err());
        assert!(init_params(&bad).is_err());
    }

    #[test]
    fn zero_sigma_gives_zero_weights_and_half_probabilities() {
        let cfg = NetConfig { init_sigma: 0.0, image_side: 8, ..NetConfig::default() };
        let p = init_params(&cfg).unwrap();
        assert!(p.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        let x = Tensor::full(&[1, 3, 8, 8], 0.3);
        let out = forward(&cfg, &p, &x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_shape() {
        let cfg = NetConfig::default();
        let p = init_params(&cfg).unwrap();
        let x = Tensor::full(&[2, 3, 24, 24], 0.1);
        let out = forward(&cfg, &p, &x).unwrap();
        assert_eq!(out.shape(), &[2, 2, 24, 24]);
    }

    #[test]
    fn mismatched_image_is_rejected() {
        let cfg = NetConfig { image_side: 8, ..NetConfig::default() };
        let p = init_params(&cfg).unwrap();
        assert!(forward(&cfg, &p, &Tensor::zeros(&[1, 3, 16, 16])).unwrap_err().is_contract());
        let other = init_params(&NetConfig { base_channels: 4, ..cfg }).unwrap();
        assert!(forward(&cfg, &other, &Tensor::zeros(&[1, 3, 8, 8])).is_err());
    }
}
