//! Layer-wise attention grouping around segmented objects, and the
//! cumulative layer sweep.

use crate::caap::{LayerRange, PatchingContext, SelectionOp};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::SegMask;
use crate::metrics::{default_blur_kernel, deletion_auc, insertion_auc};
use crate::vit::{ActivationCache, ModelBundle};

pub use crate::caap::default_end_layer;

/// Object id per patch (`None` = background), from patch-majority masks.
pub fn object_assignment(
    masks: &[SegMask],
    grid: usize,
    patch_px: usize,
) -> Result<Vec<Option<usize>>> {
    let mut owner = vec![None; grid * grid];
    for (m, mask) in masks.iter().enumerate() {
        let patches = mask.patch_majority(grid, patch_px)?;
        if !patches.iter().any(|&p| p) {
            return Err(Error::InvalidArgument(format!(
                "mask {m} covers no patch by majority"
            )));
        }
        for (p, &fg) in patches.iter().enumerate() {
            if fg {
                if let Some(other) = owner[p] {
                    return Err(Error::InvalidArgument(format!(
                        "masks {other} and {m} overlap at patch {p}"
                    )));
                }
                owner[p] = Some(m);
            }
        }
    }
    Ok(owner)
}

/// Attention mass of one row split by group. `cls + own + other + background
/// = total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowSplit {
    pub cls: f64,
    pub own: f64,
    pub other: f64,
    pub background: f64,
    pub total: f64,
}

/// Splits the attention row of patch `query` (0-based patch index).
pub fn split_row(row: &[f32], owner: &[Option<usize>], query: usize) -> RowSplit {
    let me = owner[query];
    let mut s = RowSplit {
        cls: row[0] as f64,
        own: 0.0,
        other: 0.0,
        background: 0.0,
        total: row.iter().map(|&a| a as f64).sum(),
    };
    for (j, &a) in row[1..].iter().enumerate() {
        let a = a as f64;
        match owner[j] {
            None => s.background += a,
            o if o == me => s.own += a,
            Some(_) => s.other += a,
        }
    }
    s
}

/// Per-layer means over heads and object query patches. Layers are
/// 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGroupStats {
    pub layer: usize,
    pub intra: f64,
    pub inter: Option<f64>,
    pub obj_bg: Option<f64>,
    /// `intra − mean over patches outside the query's own object`.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnGroupStats {
    pub layers: Vec<LayerGroupStats>,
}

impl AttnGroupStats {
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or("na".to_string(), |x| x.to_string());
        let mut out = String::from("layer,intra,inter,obj_bg,gap\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                l.layer,
                l.intra,
                f(l.inter),
                f(l.obj_bg),
                f(l.gap)
            ));
        }
        out
    }
}

pub fn attention_group_stats(
    cache: &ActivationCache,
    model: &ModelBundle,
    masks: &[SegMask],
) -> Result<AttnGroupStats> {
    let cfg = &model.config;
    if masks.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one object mask".into(),
        ));
    }
    if cache.layers() != cfg.layers || cache.num_tokens() != cfg.num_tokens() {
        return Err(Error::InvalidArgument(
            "cache does not come from this model configuration".into(),
        ));
    }
    let owner = object_assignment(masks, cfg.grid, cfg.patch_px)?;
    let n = cfg.num_patches();
    let count = |f: &dyn Fn(Option<usize>) -> bool| (0..n).filter(|&j| f(owner[j])).count();
    let bg_size = count(&|o| o.is_none());

    let layers = (0..cfg.layers)
        .map(|b| {
            let (mut intra, mut inter, mut bg, mut gap) = (0.0, 0.0, 0.0, 0.0);
            let (mut rows, mut inter_rows, mut gap_rows) = (0usize, 0usize, 0usize);
            for h in 0..cfg.heads {
                for i in (0..n).filter(|&i| owner[i].is_some()) {
                    let row = cache.attention_row(b, h, i + 1, cfg.heads);
                    let s = split_row(&row, &owner, i);
                    let own_size = count(&|o| o == owner[i]);
                    let other_size = n - own_size - bg_size;
                    let own_mean = s.own / own_size as f64;
                    intra += own_mean;
                    if other_size > 0 {
                        inter += s.other / other_size as f64;
                        inter_rows += 1;
                    }
                    if bg_size > 0 {
                        bg += s.background / bg_size as f64;
                    }
                    if n > own_size {
                        gap += own_mean - (s.other + s.background) / (n - own_size) as f64;
                        gap_rows += 1;
                    }
                    rows += 1;
                }
            }
            let mean = |sum: f64, k: usize| (k > 0).then(|| sum / k as f64);
            LayerGroupStats {
                layer: b + 1,
                intra: intra / rows as f64,
                inter: mean(inter, inter_rows),
                obj_bg: if bg_size > 0 {
                    Some(bg / rows as f64)
                } else {
                    None
                },
                gap: mean(gap, gap_rows),
            }
        })
        .collect();
    Ok(AttnGroupStats { layers })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub end_layer: usize,
    pub del_auc: f64,
    pub ins_auc: f64,
    pub ins_minus_del: f64,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("l_e,del_auc,ins_auc,ins_minus_del\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.end_layer, r.del_auc, r.ins_auc, r.ins_minus_del
        ));
    }
    out
}

/// Parallel-mode attribution with range `(1, l_e)` for every cutoff, scored
/// by deletion and insertion AUC.
#[allow(clippy::too_many_arguments)]
pub fn layer_sweep(
    model: &ModelBundle,
    x: &Image,
    x0: &Image,
    class: usize,
    select: SelectionOp,
    cutoffs: &[usize],
    reference: f32,
    blur_kernel: Option<usize>,
) -> Result<Vec<SweepRow>> {
    if cutoffs.is_empty() {
        return Err(Error::InvalidArgument(
            "layer sweep needs at least one cutoff".into(),
        ));
    }
    let layers = model.config.layers;
    for &c in cutoffs {
        if c < 1 || c > layers {
            return Err(Error::InvalidConfig(format!(
                "cutoff {c} outside layers 1..={layers}"
            )));
        }
    }
    let kernel = blur_kernel.unwrap_or_else(|| default_blur_kernel(model.config.patch_px));
    let ctx = PatchingContext::new(model, x, x0)?;
    cutoffs
        .iter()
        .map(|&c| {
            let scores = ctx.parallel_scores(class, LayerRange::new(1, c), select)?;
            let (_, del) = deletion_auc(model, x, &scores, class, reference)?;
            let (_, ins) = insertion_auc(model, x, &scores, class, kernel)?;
            Ok(SweepRow {
                end_layer: c,
                del_auc: del,
                ins_auc: ins,
                ins_minus_del: ins - del,
            })
        })
        .collect()
}
