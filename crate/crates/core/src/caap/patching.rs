use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::vit::{
    ActivationCache, AttentionMask, CacheSel, ModelBundle, Slot, SlotMode, TokenPinPlan,
};

use super::approx::{approx_scores, BlankStats};
use super::{check_class, AttributionMap, AttributionMode, LayerRange, SelectionOp};

/// Modes per block for a selected token: pinned to the source pass through
/// layer `l_e`, live afterwards.
fn selected_modes(blocks: usize, end: usize) -> Vec<SlotMode> {
    (0..blocks)
        .map(|b| {
            if b < end {
                SlotMode::Cached
            } else {
                SlotMode::Live
            }
        })
        .collect()
}

/// One-patch plan: a single CLS over all `N + 1` positions, no mask.
pub fn naive_plan(
    blocks: usize,
    grid: usize,
    range: LayerRange,
    selected: &[usize],
) -> TokenPinPlan {
    let n = grid * grid;
    let mut cls = Slot::live_from(0, CacheSel::Target, 0, blocks, range.start);
    cls.readout = true;
    let mut slots = vec![cls];
    let mut is_sel = vec![false; n];
    for &p in selected {
        is_sel[p] = true;
    }
    for (p, &sel) in is_sel.iter().enumerate() {
        if sel {
            slots.push(Slot {
                position: p + 1,
                origin: CacheSel::Source,
                token: p + 1,
                modes: selected_modes(blocks, range.end),
                readout: false,
            });
        } else {
            slots.push(Slot::cached(p + 1, CacheSel::Target, p + 1, blocks));
        }
    }
    TokenPinPlan::unmasked(slots, blocks)
}

/// All patches in one pass: one CLS per entry of `selections` (readouts in
/// that order), each with private copies of its selected tokens for the live
/// layers. Shared cached slots serve every CLS; masks keep the CLS groups
/// from seeing each other.
pub fn parallel_plan(
    blocks: usize,
    grid: usize,
    range: LayerRange,
    selections: &[Vec<usize>],
) -> TokenPinPlan {
    let n = grid * grid;
    let target: Vec<usize> = (0..n).collect();
    let mut slots: Vec<Slot> = (0..n)
        .map(|p| Slot::cached(p + 1, CacheSel::Target, p + 1, blocks))
        .collect();
    // Source slots only exist for pinned layers.
    let mut source = vec![usize::MAX; n];
    for sel in selections {
        for &p in sel {
            if source[p] == usize::MAX {
                source[p] = slots.len();
                let modes = (0..blocks)
                    .map(|b| {
                        if b < range.end {
                            SlotMode::Cached
                        } else {
                            SlotMode::Inactive
                        }
                    })
                    .collect();
                slots.push(Slot {
                    position: p + 1,
                    origin: CacheSel::Source,
                    token: p + 1,
                    modes,
                    readout: false,
                });
            }
        }
    }
    struct Group {
        cls: usize,
        copies: Vec<usize>,
    }
    let mut groups = Vec::with_capacity(selections.len());
    for sel in selections {
        let mut cls = Slot::live_from(0, CacheSel::Target, 0, blocks, range.start);
        cls.readout = true;
        let cls_slot = slots.len();
        slots.push(cls);
        let copies = sel
            .iter()
            .map(|&p| {
                slots.push(Slot::live_from(
                    p + 1,
                    CacheSel::Source,
                    p + 1,
                    blocks,
                    range.end,
                ));
                slots.len() - 1
            })
            .collect();
        groups.push(Group {
            cls: cls_slot,
            copies,
        });
    }

    let size = slots.len();
    let mut pinned = AttentionMask::new(size);
    let mut late = AttentionMask::new(size);
    let mut is_sel = vec![false; n];
    for (sel, g) in selections.iter().zip(&groups) {
        for &p in sel {
            is_sel[p] = true;
        }
        pinned.allow(g.cls, g.cls);
        for p in 0..n {
            pinned.allow(g.cls, if is_sel[p] { source[p] } else { target[p] });
        }
        let members: Vec<usize> = std::iter::once(g.cls)
            .chain(g.copies.iter().copied())
            .collect();
        for &q in &members {
            for &k in &members {
                late.allow(q, k);
            }
            for p in (0..n).filter(|&p| !is_sel[p]) {
                late.allow(q, target[p]);
            }
        }
        for &p in sel {
            is_sel[p] = false;
        }
    }
    let block_mask = (0..blocks)
        .map(|b| Some(if b < range.end { 0 } else { 1 }))
        .collect();
    TokenPinPlan {
        slots,
        masks: vec![pinned, late],
        block_mask,
    }
}

/// The two reference passes every CAAP mode starts from.
pub struct PatchingContext<'m> {
    pub model: &'m ModelBundle,
    pub source: ActivationCache,
    pub target: ActivationCache,
}

impl<'m> PatchingContext<'m> {
    pub fn new(model: &'m ModelBundle, x: &Image, x0: &Image) -> Result<Self> {
        model.check_image(x)?;
        model.check_image(x0)?;
        Ok(Self {
            model,
            source: model.forward_full(x)?,
            target: model.forward_full(x0)?,
        })
    }

    fn prepare(
        &self,
        class: usize,
        range: LayerRange,
        select: SelectionOp,
    ) -> Result<Vec<Vec<usize>>> {
        check_class(self.model, class)?;
        let cfg = &self.model.config;
        range.validate(cfg.layers)?;
        (0..cfg.num_patches())
            .map(|p| select.select(p, cfg.grid))
            .collect()
    }

    fn map(
        &self,
        scores: Vec<f64>,
        class: usize,
        mode: AttributionMode,
        range: LayerRange,
        select: SelectionOp,
    ) -> AttributionMap {
        AttributionMap {
            grid: self.model.config.grid,
            scores,
            class_id: class,
            mode,
            blank: None,
            select,
            range: Some(range),
            model_fingerprint: self.model.fingerprint(),
        }
    }

    /// One pinned forward per patch, evaluated concurrently.
    pub fn naive_scores(
        &self,
        class: usize,
        range: LayerRange,
        select: SelectionOp,
    ) -> Result<Vec<f64>> {
        let selections = self.prepare(class, range, select)?;
        let cfg = &self.model.config;
        selections
            .par_iter()
            .map(|sel| {
                let plan = naive_plan(cfg.layers, cfg.grid, range, sel);
                let out = self
                    .model
                    .forward_pinned(&plan, &self.source, &self.target)?;
                Ok(out.probs.row(0)[class] as f64)
            })
            .collect()
    }

    /// Single pinned forward with one CLS per patch, enumerated in `order`.
    /// Scores come back indexed by patch regardless of `order`.
    pub fn parallel_scores_ordered(
        &self,
        class: usize,
        range: LayerRange,
        select: SelectionOp,
        order: &[usize],
    ) -> Result<Vec<f64>> {
        let selections = self.prepare(class, range, select)?;
        let n = selections.len();
        let mut seen = vec![false; n];
        if order.len() != n
            || order
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidArgument(format!(
                "patch order must be a permutation of 0..{n}"
            )));
        }
        let cfg = &self.model.config;
        let ordered: Vec<Vec<usize>> = order.iter().map(|&p| selections[p].clone()).collect();
        let plan = parallel_plan(cfg.layers, cfg.grid, range, &ordered);
        let out = self
            .model
            .forward_pinned(&plan, &self.source, &self.target)?;
        let mut scores = vec![0.0; n];
        for (r, &p) in order.iter().enumerate() {
            scores[p] = out.probs.row(r)[class] as f64;
        }
        Ok(scores)
    }

    pub fn parallel_scores(
        &self,
        class: usize,
        range: LayerRange,
        select: SelectionOp,
    ) -> Result<Vec<f64>> {
        let order: Vec<usize> = (0..self.model.config.num_patches()).collect();
        self.parallel_scores_ordered(class, range, select, &order)
    }

    pub fn approx_scores(
        &self,
        class: usize,
        range: LayerRange,
        select: SelectionOp,
        stats: &BlankStats,
    ) -> Result<Vec<f64>> {
        let selections = self.prepare(class, range, select)?;
        approx_scores(self, class, range, &selections, stats)
    }

    pub fn naive(
        &self,
        class: usize,
        range: LayerRange,
        select: SelectionOp,
    ) -> Result<AttributionMap> {
        let s = self.naive_scores(class, range, select)?;
        Ok(self.map(s, class, AttributionMode::Naive, range, select))
    }

    pub fn parallel(
        &self,
        class: usize,
        range: LayerRange,
        select: SelectionOp,
    ) -> Result<AttributionMap> {
        let s = self.parallel_scores(class, range, select)?;
        Ok(self.map(s, class, AttributionMode::Parallel, range, select))
    }

    pub fn approx(
        &self,
        class: usize,
        range: LayerRange,
        select: SelectionOp,
        stats: &BlankStats,
    ) -> Result<AttributionMap> {
        let s = self.approx_scores(class, range, select, stats)?;
        Ok(self.map(s, class, AttributionMode::Approx, range, select))
    }
}

pub fn caap_naive(
    model: &ModelBundle,
    x: &Image,
    x0: &Image,
    class: usize,
    range: LayerRange,
    select: SelectionOp,
) -> Result<AttributionMap> {
    PatchingContext::new(model, x, x0)?.naive(class, range, select)
}

pub fn caap_parallel(
    model: &ModelBundle,
    x: &Image,
    x0: &Image,
    class: usize,
    range: LayerRange,
    select: SelectionOp,
) -> Result<AttributionMap> {
    PatchingContext::new(model, x, x0)?.parallel(class, range, select)
}
