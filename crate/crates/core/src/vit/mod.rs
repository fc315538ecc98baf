//! Vision Transformer weights and the deterministic inference engine.
//!
//! Blocks are pre-norm: `x + Attn(LN1(x))`, then `x + MLP(LN2(x))`. The
//! classifier reads the CLS token only: `head(LN_f(cls))`.

pub(crate) mod forward;
mod pinned;

pub use forward::{ActivationCache, TokenBlock};
pub use pinned::{AttentionMask, CacheSel, PinnedOutput, Slot, SlotMode, TokenPinPlan};

use crate::error::{Error, Result};
use crate::io::container::{fnv1a64, NamedTensor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViTConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    /// Patches per side; the model sees `grid²` patch tokens.
    pub grid: usize,
    pub patch_px: usize,
    pub channels: usize,
    pub classes: usize,
    pub mlp_ratio: f32,
    pub ln_eps: f32,
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers < 2 {
            return bad(format!("need at least 2 layers, got {}", self.layers));
        }
        if self.grid < 2 {
            return bad(format!("grid must be at least 2, got {}", self.grid));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.patch_px == 0 || !(self.channels == 1 || self.channels == 3) {
            return bad(format!(
                "patch_px must be positive and channels 1 or 3 (got {} / {})",
                self.patch_px, self.channels
            ));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) || self.mlp_hidden() == 0 {
            return bad(format!(
                "mlp_ratio must be positive, got {}",
                self.mlp_ratio
            ));
        }
        if !(self.ln_eps > 0.0 && self.ln_eps.is_finite()) {
            return bad(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        self.grid * self.grid
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.dim as f32 * self.mlp_ratio).round() as usize
    }

    pub fn image_side(&self) -> usize {
        self.grid * self.patch_px
    }

    pub fn patch_input_len(&self) -> usize {
        self.patch_px * self.patch_px * self.channels
    }

    fn to_meta(self) -> Vec<f32> {
        vec![
            self.layers as f32,
            self.dim as f32,
            self.heads as f32,
            self.grid as f32,
            self.patch_px as f32,
            self.channels as f32,
            self.classes as f32,
            self.mlp_ratio,
            self.ln_eps,
        ]
    }

    fn from_meta(meta: &[f32]) -> Result<Self> {
        if meta.len() != 9 {
            return Err(Error::InvalidConfig(format!(
                "meta.config must hold 9 values, found {}",
                meta.len()
            )));
        }
        let count = |v: f32, what: &str| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!(
                    "{what} must be a count, got {v}"
                )))
            }
        };
        let cfg = ViTConfig {
            layers: count(meta[0], "layers")?,
            dim: count(meta[1], "dim")?,
            heads: count(meta[2], "heads")?,
            grid: count(meta[3], "grid")?,
            patch_px: count(meta[4], "patch_px")?,
            channels: count(meta[5], "channels")?,
            classes: count(meta[6], "classes")?,
            mlp_ratio: meta[7],
            ln_eps: meta[8],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub mlp_in_w: Tensor,
    pub mlp_in_b: Tensor,
    pub mlp_out_w: Tensor,
    pub mlp_out_b: Tensor,
}

impl BlockWeights {
    fn named(&self, l: usize) -> Vec<(String, &Tensor)> {
        let p = |n: &str| format!("blocks.{l}.{n}");
        vec![
            (p("ln1.gamma"), &self.ln1_gamma),
            (p("ln1.beta"), &self.ln1_beta),
            (p("attn.wq"), &self.wq),
            (p("attn.bq"), &self.bq),
            (p("attn.wk"), &self.wk),
            (p("attn.bk"), &self.bk),
            (p("attn.wv"), &self.wv),
            (p("attn.bv"), &self.bv),
            (p("attn.wo"), &self.wo),
            (p("attn.bo"), &self.bo),
            (p("ln2.gamma"), &self.ln2_gamma),
            (p("ln2.beta"), &self.ln2_beta),
            (p("mlp.w_in"), &self.mlp_in_w),
            (p("mlp.b_in"), &self.mlp_in_b),
            (p("mlp.w_out"), &self.mlp_out_w),
            (p("mlp.b_out"), &self.mlp_out_b),
        ]
    }
}

/// The frozen classifier: configuration plus every weight tensor.
///
/// Linear weights are stored `in × out`, so a layer computes `x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ViTConfig,
    pub patch_embed_w: Tensor,
    pub patch_embed_b: Tensor,
    pub pos_embed: Tensor,
    pub cls_embed: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub ln_f_gamma: Tensor,
    pub ln_f_beta: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl ModelBundle {
    /// Tensors in canonical container order, `meta.config` first.
    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        let meta = self.config.to_meta();
        let mut out = vec![NamedTensor::new(
            "meta.config",
            Tensor::new(vec![meta.len()], meta).expect("meta shape"),
        )];
        let mut push = |name: String, t: &Tensor| out.push(NamedTensor::new(name, t.clone()));
        push("cls_embed".into(), &self.cls_embed);
        push("pos_embed".into(), &self.pos_embed);
        push("patch_embed.weight".into(), &self.patch_embed_w);
        push("patch_embed.bias".into(), &self.patch_embed_b);
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, t) in b.named(l) {
                push(name, t);
            }
        }
        push("head.ln.gamma".into(), &self.ln_f_gamma);
        push("head.ln.beta".into(), &self.ln_f_beta);
        push("head.weight".into(), &self.head_w);
        push("head.bias".into(), &self.head_b);
        out
    }

    pub fn from_named_tensors(tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut map: std::collections::HashMap<String, Tensor> =
            tensors.into_iter().map(|nt| (nt.name, nt.tensor)).collect();
        let mut take = |name: &str| {
            map.remove(name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing tensor {name}")))
        };
        let config = ViTConfig::from_meta(take("meta.config")?.data())?;
        let cls_embed = take("cls_embed")?;
        let pos_embed = take("pos_embed")?;
        let patch_embed_w = take("patch_embed.weight")?;
        let patch_embed_b = take("patch_embed.bias")?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut t = |n: &str| take(&format!("blocks.{l}.{n}"));
            blocks.push(BlockWeights {
                ln1_gamma: t("ln1.gamma")?,
                ln1_beta: t("ln1.beta")?,
                wq: t("attn.wq")?,
                bq: t("attn.bq")?,
                wk: t("attn.wk")?,
                bk: t("attn.bk")?,
                wv: t("attn.wv")?,
                bv: t("attn.bv")?,
                wo: t("attn.wo")?,
                bo: t("attn.bo")?,
                ln2_gamma: t("ln2.gamma")?,
                ln2_beta: t("ln2.beta")?,
                mlp_in_w: t("mlp.w_in")?,
                mlp_in_b: t("mlp.b_in")?,
                mlp_out_w: t("mlp.w_out")?,
                mlp_out_b: t("mlp.b_out")?,
            });
        }
        let model = ModelBundle {
            config,
            patch_embed_w,
            patch_embed_b,
            pos_embed,
            cls_embed,
            blocks,
            ln_f_gamma: take("head.ln.gamma")?,
            ln_f_beta: take("head.ln.beta")?,
            head_w: take("head.weight")?,
            head_b: take("head.bias")?,
        };
        if let Some(extra) = map.keys().min() {
            return Err(Error::InvalidConfig(format!("unexpected tensor {extra}")));
        }
        model.validate()?;
        Ok(model)
    }

    /// Checks every tensor shape against the config and that all weights
    /// are finite.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let (d, m, k) = (c.dim, c.mlp_hidden(), c.classes);
        let expect = |name: &str, t: &Tensor, shape: &[usize]| -> Result<()> {
            if t.shape() != shape {
                return Err(Error::InvalidConfig(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} holds non-finite values"
                )));
            }
            Ok(())
        };
        expect("cls_embed", &self.cls_embed, &[d])?;
        expect("pos_embed", &self.pos_embed, &[c.num_tokens(), d])?;
        expect(
            "patch_embed.weight",
            &self.patch_embed_w,
            &[c.patch_input_len(), d],
        )?;
        expect("patch_embed.bias", &self.patch_embed_b, &[d])?;
        if self.blocks.len() != c.layers {
            return Err(Error::InvalidConfig(format!(
                "{} blocks for {} layers",
                self.blocks.len(),
                c.layers
            )));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, t) in b.named(l) {
                let shape: Vec<usize> = if name.ends_with("mlp.w_in") {
                    vec![d, m]
                } else if name.ends_with("mlp.b_in") {
                    vec![m]
                } else if name.ends_with("mlp.w_out") {
                    vec![m, d]
                } else if name.contains(".attn.w") {
                    vec![d, d]
                } else {
                    vec![d]
                };
                expect(&name, t, &shape)?;
            }
        }
        expect("head.ln.gamma", &self.ln_f_gamma, &[d])?;
        expect("head.ln.beta", &self.ln_f_beta, &[d])?;
        expect("head.weight", &self.head_w, &[d, k])?;
        expect("head.bias", &self.head_b, &[k])?;
        Ok(())
    }

    /// FNV-1a over every tensor name, shape, and little-endian payload in
    /// canonical order.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for nt in self.to_named_tensors() {
            bytes.extend_from_slice(nt.name.as_bytes());
            bytes.push(0);
            for &e in nt.tensor.shape() {
                bytes.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in nt.tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }
}
