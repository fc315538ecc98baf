use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{self, dot, softmax_in_place, Tensor};

use super::{BlockWeights, ModelBundle, ViTConfig};

/// Everything recorded by one full forward pass.
///
/// Per block `l` (0-based): the residual stream entering the block and the
/// query/key/value projections of every token. Projections are stored
/// `(N+1) × d`; head `h` owns columns `h·d_h .. (h+1)·d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    pub resid_in: Vec<Tensor>,
    pub queries: Vec<Tensor>,
    pub keys: Vec<Tensor>,
    pub values: Vec<Tensor>,
    /// Residual stream after the last block.
    pub resid_final: Tensor,
    pub logits: Vec<f32>,
    pub probs: Vec<f32>,
}

impl ActivationCache {
    pub fn layers(&self) -> usize {
        self.resid_in.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.resid_in[0].rows()
    }

    /// Softmax attention of `query` over all tokens for one block and head,
    /// recomputed from the cached projections.
    pub fn attention_row(&self, block: usize, head: usize, query: usize, heads: usize) -> Vec<f32> {
        let dh = self.queries[block].cols() / heads;
        let q = head_slice(self.queries[block].row(query), head, dh);
        let keys = &self.keys[block];
        let scale = attention_scale(dh);
        let mut row: Vec<f32> = (0..keys.rows())
            .map(|j| dot(q, head_slice(keys.row(j), head, dh)) * scale)
            .collect();
        softmax_in_place(&mut row);
        row
    }
}

#[inline]
pub(crate) fn head_slice(row: &[f32], head: usize, dh: usize) -> &[f32] {
    &row[head * dh..(head + 1) * dh]
}

#[inline]
pub(crate) fn attention_scale(dh: usize) -> f32 {
    1.0 / (dh as f32).sqrt()
}

/// Multi-head attention for a single query over an ordered key list.
///
/// Scores are `⟨q, k⟩/√d_h`, softmaxed per head, and values are summed in
/// key-list order. Both the full and the pinned forward go through here,
/// which is what makes their outputs bitwise comparable.
pub(crate) fn attend(
    q: &[f32],
    keys: &[&[f32]],
    values: &[&[f32]],
    heads: usize,
    scratch: &mut Vec<f32>,
    out: &mut [f32],
) {
    let dh = q.len() / heads;
    let scale = attention_scale(dh);
    out.fill(0.0);
    for h in 0..heads {
        let qh = head_slice(q, h, dh);
        scratch.clear();
        scratch.extend(keys.iter().map(|k| dot(qh, head_slice(k, h, dh)) * scale));
        softmax_in_place(scratch);
        let oh = &mut out[h * dh..(h + 1) * dh];
        for (p, v) in scratch.iter().zip(values) {
            for (o, x) in oh.iter_mut().zip(head_slice(v, h, dh)) {
                *o += p * x;
            }
        }
    }
}

/// Row-batched view of one transformer block.
pub struct TokenBlock<'a> {
    pub weights: &'a BlockWeights,
    pub config: &'a ViTConfig,
}

impl<'a> TokenBlock<'a> {
    pub fn new(model: &'a ModelBundle, block: usize) -> Self {
        Self {
            weights: &model.blocks[block],
            config: &model.config,
        }
    }

    /// `LN1` followed by the query/key/value projections.
    pub fn project(&self, resid: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let w = self.weights;
        let a = tensor::layernorm(resid, &w.ln1_gamma, &w.ln1_beta, self.config.ln_eps)?;
        Ok((
            tensor::linear(&a, &w.wq, &w.bq)?,
            tensor::linear(&a, &w.wk, &w.bk)?,
            tensor::linear(&a, &w.wv, &w.bv)?,
        ))
    }

    /// Output projection, residual add, then the MLP sub-block.
    pub fn finish(&self, resid: &mut Tensor, attn: &Tensor) -> Result<()> {
        let w = self.weights;
        tensor::add_assign(resid, &tensor::linear(attn, &w.wo, &w.bo)?)?;
        let b = tensor::layernorm(resid, &w.ln2_gamma, &w.ln2_beta, self.config.ln_eps)?;
        let mut hidden = tensor::linear(&b, &w.mlp_in_w, &w.mlp_in_b)?;
        tensor::gelu_in_place(&mut hidden);
        tensor::add_assign(resid, &tensor::linear(&hidden, &w.mlp_out_w, &w.mlp_out_b)?)?;
        Ok(())
    }
}

impl ModelBundle {
    pub fn check_image(&self, image: &Image) -> Result<()> {
        let c = &self.config;
        let side = c.image_side();
        if image.width() != side || image.height() != side || image.channels() != c.channels {
            return Err(Error::ImageMismatch {
                expected: format!("{side}x{side}x{}", c.channels),
                found: image.dims_string(),
            });
        }
        Ok(())
    }

    /// Flattens patch `p` (row-major grid order) as rows, columns, channels.
    pub fn patch_pixels(&self, image: &Image, p: usize) -> Vec<f32> {
        let c = &self.config;
        let (py, px) = (p / c.grid, p % c.grid);
        let mut out = Vec::with_capacity(c.patch_input_len());
        for y in py * c.patch_px..(py + 1) * c.patch_px {
            let start = (y * image.width() + px * c.patch_px) * c.channels;
            out.extend_from_slice(&image.data()[start..start + c.patch_px * c.channels]);
        }
        out
    }

    /// Token embeddings: CLS first, then one row per patch, each with its
    /// positional embedding added.
    pub fn embed(&self, image: &Image) -> Result<Tensor> {
        self.check_image(image)?;
        let n = self.config.num_patches();
        let patches: Vec<Vec<f32>> = (0..n).map(|p| self.patch_pixels(image, p)).collect();
        let projected = tensor::linear(
            &Tensor::from_rows(&patches)?,
            &self.patch_embed_w,
            &self.patch_embed_b,
        )?;
        let d = self.config.dim;
        let mut out = Tensor::zeros(vec![n + 1, d]);
        for (o, (c, p)) in out
            .row_mut(0)
            .iter_mut()
            .zip(self.cls_embed.data().iter().zip(self.pos_embed.row(0)))
        {
            *o = c + p;
        }
        for i in 0..n {
            let pos = self.pos_embed.row(i + 1).to_vec();
            for ((o, e), p) in out.row_mut(i + 1).iter_mut().zip(projected.row(i)).zip(pos) {
                *o = e + p;
            }
        }
        Ok(out)
    }

    /// Final norm and linear head applied to CLS residual rows; returns
    /// logits and softmax probabilities per row.
    pub fn classify(&self, cls_rows: &Tensor) -> Result<(Tensor, Tensor)> {
        let normed = tensor::layernorm(
            cls_rows,
            &self.ln_f_gamma,
            &self.ln_f_beta,
            self.config.ln_eps,
        )?;
        let logits = tensor::linear(&normed, &self.head_w, &self.head_b)?;
        let probs = tensor::softmax_rows(&logits)?;
        Ok((logits, probs))
    }

    pub fn forward_full(&self, image: &Image) -> Result<ActivationCache> {
        let cfg = &self.config;
        let mut resid = self.embed(image)?;
        let t = cfg.num_tokens();
        let mut cache = ActivationCache {
            resid_in: Vec::with_capacity(cfg.layers),
            queries: Vec::with_capacity(cfg.layers),
            keys: Vec::with_capacity(cfg.layers),
            values: Vec::with_capacity(cfg.layers),
            resid_final: Tensor::zeros(vec![1]),
            logits: vec![],
            probs: vec![],
        };
        let mut scratch = Vec::with_capacity(t);
        for l in 0..cfg.layers {
            let block = TokenBlock::new(self, l);
            let (q, k, v) = block.project(&resid)?;
            let key_rows: Vec<&[f32]> = (0..t).map(|j| k.row(j)).collect();
            let value_rows: Vec<&[f32]> = (0..t).map(|j| v.row(j)).collect();
            let mut attn = Tensor::zeros(vec![t, cfg.dim]);
            for i in 0..t {
                attend(
                    q.row(i),
                    &key_rows,
                    &value_rows,
                    cfg.heads,
                    &mut scratch,
                    attn.row_mut(i),
                );
            }
            cache.resid_in.push(resid.clone());
            block.finish(&mut resid, &attn)?;
            cache.queries.push(q);
            cache.keys.push(k);
            cache.values.push(v);
        }
        let (logits, probs) = self.classify(&Tensor::from_rows(&[resid.row(0)])?)?;
        cache.resid_final = resid;
        cache.logits = logits.into_data();
        cache.probs = probs.into_data();
        Ok(cache)
    }

    /// Class distribution `p(·|x)`.
    pub fn predict(&self, image: &Image) -> Result<Vec<f32>> {
        Ok(self.forward_full(image)?.probs)
    }
}
