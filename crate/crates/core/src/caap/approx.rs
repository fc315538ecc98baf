//! Blank-context approximation of the CLS attention step.
//!
//! With unselected tokens pinned to the blank pass, a live query at position
//! `t` sees two kinds of keys: the dynamic ones (the live CLS and the
//! selected tokens) and the blank ones. For the blank ones we reuse the
//! exponents the *blank* query at `t` produced against the blank keys:
//!
//! ```text
//! Z0(Sᶜ)  = Z0_total[t] − Σ_{j∈S} e0[t][j]
//! v̄0(Sᶜ)  = mean of the blank value rows over Sᶜ
//! out     = (Σ_dyn e_j v_j + Z0(Sᶜ)·v̄0(Sᶜ)) / (Σ_dyn e_j + Z0(Sᶜ))
//! ```
//!
//! All exponents share a per-row shift (the maximum blank score of that
//! query), so dynamic and blank terms are on the same scale. Arithmetic is
//! f64; the MLP and projections are the regular f32 kernels. Per patch the
//! cost no longer depends on `N`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::container::fnv1a64;
use crate::tensor::{dot, Tensor};
use crate::vit::forward::{attention_scale, head_slice};
use crate::vit::{ActivationCache, ModelBundle, TokenBlock};

use super::patching::PatchingContext;
use super::{check_class, AttributionMap, LayerRange, SelectionOp};

#[derive(Debug, Clone, PartialEq)]
struct HeadStats {
    /// Per query position.
    shift: Vec<f64>,
    /// `(N+1) × N`: query position by patch.
    exps: Vec<f64>,
    z_total: Vec<f64>,
    /// Sum of the blank patch value rows, `d_h`.
    value_sum: Vec<f64>,
}

/// Precomputed blank-context attention statistics for blocks from the CLS
/// start layer onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct BlankStats {
    model_fingerprint: u64,
    blank_fingerprint: u64,
    /// 0-based index of the first block with statistics.
    first_block: usize,
    patches: usize,
    blocks: Vec<Vec<HeadStats>>,
}

fn cache_fingerprint(cache: &ActivationCache) -> u64 {
    let bytes: Vec<u8> = cache
        .resid_in
        .iter()
        .chain(std::iter::once(&cache.resid_final))
        .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    fnv1a64(&bytes)
}

pub fn precompute_blank_stats(
    model: &ModelBundle,
    blank: &ActivationCache,
    range: LayerRange,
) -> Result<BlankStats> {
    let cfg = &model.config;
    range.validate(cfg.layers)?;
    if blank.layers() != cfg.layers || blank.num_tokens() != cfg.num_tokens() {
        return Err(Error::StatsMismatch(
            "blank cache does not come from this model configuration".into(),
        ));
    }
    let (n, dh) = (cfg.num_patches(), cfg.head_dim());
    let scale = attention_scale(dh);
    let blocks = (range.start..cfg.layers)
        .map(|b| {
            let (q, k, v) = (&blank.queries[b], &blank.keys[b], &blank.values[b]);
            (0..cfg.heads)
                .map(|h| {
                    let mut st = HeadStats {
                        shift: Vec::with_capacity(n + 1),
                        exps: Vec::with_capacity((n + 1) * n),
                        z_total: Vec::with_capacity(n + 1),
                        value_sum: vec![0.0; dh],
                    };
                    for t in 0..=n {
                        let qh = head_slice(q.row(t), h, dh);
                        let scores: Vec<f64> = (1..=n)
                            .map(|j| (dot(qh, head_slice(k.row(j), h, dh)) * scale) as f64)
                            .collect();
                        let shift = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut z = 0.0;
                        for s in scores {
                            let e = (s - shift).exp();
                            z += e;
                            st.exps.push(e);
                        }
                        st.shift.push(shift);
                        st.z_total.push(z);
                    }
                    for j in 1..=n {
                        for (a, &x) in st.value_sum.iter_mut().zip(head_slice(v.row(j), h, dh)) {
                            *a += x as f64;
                        }
                    }
                    st
                })
                .collect()
        })
        .collect();
    Ok(BlankStats {
        model_fingerprint: model.fingerprint(),
        blank_fingerprint: cache_fingerprint(blank),
        first_block: range.start,
        patches: n,
        blocks,
    })
}

impl BlankStats {
    fn head(&self, block: usize, head: usize) -> &HeadStats {
        assert!(
            block >= self.first_block,
            "no statistics before block {}",
            self.first_block
        );
        &self.blocks[block - self.first_block][head]
    }

    /// First 0-based block covered.
    pub fn first_block(&self) -> usize {
        self.first_block
    }

    /// Shifted blank exponents of the query at `position` against every
    /// patch key, for a 0-based `block`.
    pub fn exponents(&self, block: usize, head: usize, position: usize) -> &[f64] {
        let n = self.patches;
        &self.head(block, head).exps[position * n..(position + 1) * n]
    }

    pub fn z0_total(&self, block: usize, head: usize, position: usize) -> f64 {
        self.head(block, head).z_total[position]
    }

    /// Unweighted mean of the blank patch value rows.
    pub fn mean_value(&self, block: usize, head: usize) -> Vec<f64> {
        let st = self.head(block, head);
        st.value_sum
            .iter()
            .map(|s| s / self.patches as f64)
            .collect()
    }

    fn check(&self, model: &ModelBundle, blank: &ActivationCache, range: LayerRange) -> Result<()> {
        if self.model_fingerprint != model.fingerprint() {
            return Err(Error::StatsMismatch(format!(
                "statistics were built for model {:016x}, not {:016x}",
                self.model_fingerprint,
                model.fingerprint()
            )));
        }
        if self.blank_fingerprint != cache_fingerprint(blank) {
            return Err(Error::StatsMismatch(
                "statistics were built from a different blank pass".into(),
            ));
        }
        if range.start < self.first_block {
            return Err(Error::StatsMismatch(format!(
                "statistics start at layer {} but the range starts at {}",
                self.first_block, range.start
            )));
        }
        Ok(())
    }
}

pub(super) fn approx_scores(
    ctx: &PatchingContext<'_>,
    class: usize,
    range: LayerRange,
    selections: &[Vec<usize>],
    stats: &BlankStats,
) -> Result<Vec<f64>> {
    stats.check(ctx.model, &ctx.target, range)?;
    selections
        .par_iter()
        .map(|sel| approx_one(ctx, class, range, sel, stats))
        .collect()
}

fn approx_one(
    ctx: &PatchingContext<'_>,
    class: usize,
    range: LayerRange,
    sel: &[usize],
    stats: &BlankStats,
) -> Result<f64> {
    let model = ctx.model;
    let cfg = &model.config;
    let (n, d, heads, dh) = (cfg.num_patches(), cfg.dim, cfg.heads, cfg.head_dim());
    let scale = attention_scale(dh);
    let blank_count = n - sel.len();

    let mut live: Vec<Vec<f32>> = vec![ctx.target.resid_in[range.start].row(0).to_vec()];
    let mut num = vec![0.0f64; dh];
    let mut rest = vec![0.0f64; dh];
    for b in range.start..cfg.layers {
        if b == range.end {
            live.extend(
                sel.iter()
                    .map(|&p| ctx.source.resid_in[b].row(p + 1).to_vec()),
            );
        }
        let mut batch = Tensor::from_rows(&live)?;
        let block = TokenBlock::new(model, b);
        let (q, k, v) = block.project(&batch)?;
        let mut keys: Vec<&[f32]> = vec![k.row(0)];
        let mut values: Vec<&[f32]> = vec![v.row(0)];
        for (i, &p) in sel.iter().enumerate() {
            if b < range.end {
                keys.push(ctx.source.keys[b].row(p + 1));
                values.push(ctx.source.values[b].row(p + 1));
            } else {
                keys.push(k.row(i + 1));
                values.push(v.row(i + 1));
            }
        }
        let blank_values = &ctx.target.values[b];

        let mut attn = Tensor::zeros(vec![live.len(), d]);
        for r in 0..live.len() {
            let t = if r == 0 { 0 } else { sel[r - 1] + 1 };
            for h in 0..heads {
                let st = stats.head(b, h);
                let shift = st.shift[t];
                let qh = head_slice(q.row(r), h, dh);
                num.fill(0.0);
                let mut den = 0.0f64;
                for (kk, vv) in keys.iter().zip(&values) {
                    let e = ((dot(qh, head_slice(kk, h, dh)) * scale) as f64 - shift).exp();
                    den += e;
                    for (a, &x) in num.iter_mut().zip(head_slice(vv, h, dh)) {
                        *a += e * x as f64;
                    }
                }
                if blank_count > 0 {
                    let exps = &st.exps[t * n..(t + 1) * n];
                    let mut z = st.z_total[t];
                    rest.copy_from_slice(&st.value_sum);
                    for &p in sel {
                        z -= exps[p];
                        for (a, &x) in
                            rest.iter_mut()
                                .zip(head_slice(blank_values.row(p + 1), h, dh))
                        {
                            *a -= x as f64;
                        }
                    }
                    let z = z.max(0.0);
                    let w = z / blank_count as f64;
                    den += z;
                    for (a, r) in num.iter_mut().zip(&rest) {
                        *a += w * r;
                    }
                }
                for (o, a) in attn.row_mut(r)[h * dh..(h + 1) * dh].iter_mut().zip(&num) {
                    *o = (a / den) as f32;
                }
            }
        }
        block.finish(&mut batch, &attn)?;
        for (r, row) in live.iter_mut().enumerate() {
            row.copy_from_slice(batch.row(r));
        }
    }
    let (_, probs) = model.classify(&Tensor::from_rows(&live[..1])?)?;
    Ok(probs.row(0)[class] as f64)
}

/// Approximate map for `x` against `x0`; `stats` must come from the blank
/// pass of `x0` through `model`.
pub fn caap_approx(
    model: &ModelBundle,
    x: &crate::image::Image,
    x0: &crate::image::Image,
    class: usize,
    range: LayerRange,
    select: SelectionOp,
    stats: &BlankStats,
) -> Result<AttributionMap> {
    check_class(model, class)?;
    PatchingContext::new(model, x, x0)?.approx(class, range, select, stats)
}
