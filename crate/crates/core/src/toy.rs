//! Seeded toy ViTs and planted-signal images.
//!
//! Randomness comes from [`XorShift64Star`], defined by its recurrence so
//! generated weights are identical on every platform:
//!
//! ```text
//! state ^= state >> 12; state ^= state << 25; state ^= state >> 27;
//! output = state * 0x2545F4914F6CDD1D        (wrapping)
//! ```
//!
//! The state is seeded with one SplitMix64 step of the user seed, so seed 0
//! is valid. Gaussians use Box-Muller on two 53-bit uniforms.
//!
//! Weight draw order: global tensors in name order (`cls_embed`,
//! `head.weight`, `patch_embed.weight`, `pos_embed`), then block by block,
//! each block in name order (`attn.wk`, `attn.wo`, `attn.wq`, `attn.wv`,
//! `mlp.w_in`, `mlp.w_out`). Biases are zero, norm gains one, norm shifts
//! zero; none of them consume draws.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;
use crate::vit::{BlockWeights, ModelBundle, ViTConfig};

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
    spare: Option<f64>,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Self {
            state: if z == 0 { 0x2545_F491_4F6C_DD1D } else { z },
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `(0, 1]`.
    pub fn next_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_unit();
        let u2 = self.next_unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    pub seed: u64,
    pub config: ViTConfig,
    /// Weights are drawn from `N(0, (weight_scale/√d)²)`.
    pub weight_scale: f32,
}

impl ToySpec {
    pub const DEFAULT_CONFIG: ViTConfig = ViTConfig {
        layers: 6,
        dim: 32,
        heads: 4,
        grid: 4,
        patch_px: 4,
        channels: 1,
        classes: 5,
        mlp_ratio: 2.0,
        ln_eps: 1e-5,
    };
    pub const DEFAULT_WEIGHT_SCALE: f32 = 1.0;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            config: Self::DEFAULT_CONFIG,
            weight_scale: Self::DEFAULT_WEIGHT_SCALE,
        }
    }

    pub fn with_config(seed: u64, config: ViTConfig) -> Self {
        Self {
            seed,
            config,
            weight_scale: Self::DEFAULT_WEIGHT_SCALE,
        }
    }
}

fn draw(rng: &mut XorShift64Star, shape: Vec<usize>, std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| (rng.next_gaussian() * std) as f32).collect();
    Tensor::new(shape, data).expect("positive extents")
}

pub fn gen_model(spec: &ToySpec) -> Result<ModelBundle> {
    let c = spec.config;
    c.validate()?;
    if !(spec.weight_scale.is_finite() && spec.weight_scale > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "weight scale must be positive, got {}",
            spec.weight_scale
        )));
    }
    let (d, m, k) = (c.dim, c.mlp_hidden(), c.classes);
    let std = spec.weight_scale as f64 / (d as f64).sqrt();
    let mut rng = XorShift64Star::new(spec.seed);

    let cls_embed = draw(&mut rng, vec![d], std);
    let head_w = draw(&mut rng, vec![d, k], std);
    let patch_embed_w = draw(&mut rng, vec![c.patch_input_len(), d], std);
    let pos_embed = draw(&mut rng, vec![c.num_tokens(), d], std);

    let zeros = |n: usize| Tensor::zeros(vec![n]);
    let ones = |n: usize| Tensor::filled(vec![n], 1.0);
    let blocks = (0..c.layers)
        .map(|_| {
            let wk = draw(&mut rng, vec![d, d], std);
            let wo = draw(&mut rng, vec![d, d], std);
            let wq = draw(&mut rng, vec![d, d], std);
            let wv = draw(&mut rng, vec![d, d], std);
            let mlp_in_w = draw(&mut rng, vec![d, m], std);
            let mlp_out_w = draw(&mut rng, vec![m, d], std);
            BlockWeights {
                ln1_gamma: ones(d),
                ln1_beta: zeros(d),
                wq,
                bq: zeros(d),
                wk,
                bk: zeros(d),
                wv,
                bv: zeros(d),
                wo,
                bo: zeros(d),
                ln2_gamma: ones(d),
                ln2_beta: zeros(d),
                mlp_in_w,
                mlp_in_b: zeros(m),
                mlp_out_w,
                mlp_out_b: zeros(d),
            }
        })
        .collect();

    let model = ModelBundle {
        config: c,
        patch_embed_w,
        patch_embed_b: zeros(d),
        pos_embed,
        cls_embed,
        blocks,
        ln_f_gamma: ones(d),
        ln_f_beta: zeros(d),
        head_w,
        head_b: zeros(k),
    };
    model.validate()?;
    Ok(model)
}

/// Zeroes every query and key projection, which makes all attention rows
/// uniform over whatever keys they see.
pub fn with_uniform_attention(model: &ModelBundle) -> ModelBundle {
    let mut m = model.clone();
    for b in &mut m.blocks {
        for t in [&mut b.wq, &mut b.bq, &mut b.wk, &mut b.bk] {
            t.data_mut().fill(0.0);
        }
    }
    m
}

/// Zeroes the head weights and sets its bias to `logits`, so the class
/// distribution no longer depends on the input.
pub fn with_constant_head(model: &ModelBundle, logits: &[f32]) -> Result<ModelBundle> {
    let mut m = model.clone();
    if logits.len() != m.config.classes {
        return Err(Error::InvalidArgument(format!(
            "{} logits for {} classes",
            logits.len(),
            m.config.classes
        )));
    }
    m.head_w.data_mut().fill(0.0);
    m.head_b.data_mut().copy_from_slice(logits);
    Ok(m)
}

/// White blank `x0` and a copy `x` whose patch `signal_patch` holds a seeded
/// black/white texture.
pub fn gen_planted_pair(spec: &ToySpec, signal_patch: usize) -> Result<(Image, Image)> {
    let c = spec.config;
    if signal_patch >= c.num_patches() {
        return Err(Error::InvalidArgument(format!(
            "signal patch {signal_patch} outside {} patches",
            c.num_patches()
        )));
    }
    let side = c.image_side();
    let blank = Image::filled(side, side, c.channels, 1.0);
    let mut x = blank.clone();
    let mut rng = XorShift64Star::new(spec.seed ^ 0x0005_EED0_F71A_57ED);
    let (py, px) = (signal_patch / c.grid, signal_patch % c.grid);
    for y in py * c.patch_px..(py + 1) * c.patch_px {
        for xx in px * c.patch_px..(px + 1) * c.patch_px {
            for ch in 0..c.channels {
                let v = if rng.next_u64() >> 63 == 1 { 0.0 } else { 1.0 };
                x.set(xx, y, ch, v);
            }
        }
    }
    x.set(px * c.patch_px, py * c.patch_px, 0, 0.0);
    Ok((x, blank))
}
