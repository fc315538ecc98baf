//! Forward passes over a mix of cached and live tokens.
//!
//! A [`TokenPinPlan`] is a list of slots. Each slot stands for one logical
//! token position and, at every block, is either absent, pinned to the
//! cached activations of one of two reference passes, or live (its residual
//! stream is recomputed). A slot that turns live starts from the residual
//! its origin cache recorded at that block. Live slots never go back to
//! cached.
//!
//! Keys are visited in ascending position order for every query, so a query
//! that sees the same tokens through different slot layouts produces the
//! same bits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::forward::{attend, ActivationCache, TokenBlock};
use super::ModelBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheSel {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotMode {
    Inactive,
    Cached,
    Live,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    /// Logical token index; 0 is CLS, `1 + p` is patch `p`.
    pub position: usize,
    pub origin: CacheSel,
    /// Row of the origin cache this slot reads or is initialized from.
    pub token: usize,
    /// One mode per block.
    pub modes: Vec<SlotMode>,
    /// Whether the final residual of this slot is classified.
    pub readout: bool,
}

impl Slot {
    /// Pinned to `origin` for every block.
    pub fn cached(position: usize, origin: CacheSel, token: usize, blocks: usize) -> Self {
        Slot {
            position,
            origin,
            token,
            modes: vec![SlotMode::Cached; blocks],
            readout: false,
        }
    }

    /// Absent before block `from`, live from there on.
    pub fn live_from(
        position: usize,
        origin: CacheSel,
        token: usize,
        blocks: usize,
        from: usize,
    ) -> Self {
        let modes = (0..blocks)
            .map(|b| {
                if b < from {
                    SlotMode::Inactive
                } else {
                    SlotMode::Live
                }
            })
            .collect();
        Slot {
            position,
            origin,
            token,
            modes,
            readout: false,
        }
    }
}

/// Dense boolean attention mask; row = query slot, column = key slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    size: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            allowed: vec![false; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allow(&mut self, query: usize, key: usize) {
        self.allowed[query * self.size + key] = true;
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.size + key]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenPinPlan {
    pub slots: Vec<Slot>,
    pub masks: Vec<AttentionMask>,
    /// Per block: index into `masks`, or `None` for "every present slot sees
    /// every present slot".
    pub block_mask: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnedOutput {
    /// Slot indices of the readout tokens, in slot order.
    pub readouts: Vec<usize>,
    /// `E × K` logits and probabilities, one row per readout slot.
    pub logits: Tensor,
    pub probs: Tensor,
}

impl TokenPinPlan {
    pub fn unmasked(slots: Vec<Slot>, blocks: usize) -> Self {
        TokenPinPlan {
            slots,
            masks: vec![],
            block_mask: vec![None; blocks],
        }
    }

    fn validate(&self, model: &ModelBundle) -> Result<()> {
        let blocks = model.config.layers;
        let tokens = model.config.num_tokens();
        let bad = |m: String| Err(Error::InvalidPlan(m));
        if self.block_mask.len() != blocks {
            return bad(format!(
                "{} block masks for {blocks} blocks",
                self.block_mask.len()
            ));
        }
        for (b, m) in self.block_mask.iter().enumerate() {
            if let Some(i) = m {
                let Some(mask) = self.masks.get(*i) else {
                    return bad(format!("block {b} refers to missing mask {i}"));
                };
                if mask.size() != self.slots.len() {
                    return bad(format!(
                        "mask {i} is {0}x{0} but the plan has {1} slots",
                        mask.size(),
                        self.slots.len()
                    ));
                }
            }
        }
        if !self.slots.iter().any(|s| s.readout) {
            return bad("plan has no readout slot".into());
        }
        for (i, s) in self.slots.iter().enumerate() {
            if s.modes.len() != blocks {
                return bad(format!(
                    "slot {i} has {} modes for {blocks} blocks",
                    s.modes.len()
                ));
            }
            if s.token >= tokens || s.position >= tokens {
                return bad(format!("slot {i} refers to token {} of {tokens}", s.token));
            }
            if s.modes
                .windows(2)
                .any(|w| w[0] == SlotMode::Live && w[1] != SlotMode::Live)
            {
                return bad(format!("slot {i} stops being live"));
            }
            if s.readout && s.modes[blocks - 1] != SlotMode::Live {
                return bad(format!("readout slot {i} is not live at the last block"));
            }
        }
        Ok(())
    }
}

impl ModelBundle {
    /// Runs `plan` against the two reference caches and classifies every
    /// readout slot.
    pub fn forward_pinned(
        &self,
        plan: &TokenPinPlan,
        source: &ActivationCache,
        target: &ActivationCache,
    ) -> Result<PinnedOutput> {
        plan.validate(self)?;
        let cfg = &self.config;
        for cache in [source, target] {
            if cache.layers() != cfg.layers || cache.num_tokens() != cfg.num_tokens() {
                return Err(Error::InvalidPlan(
                    "cache does not come from this model configuration".into(),
                ));
            }
        }
        let cache_of = |sel: CacheSel| match sel {
            CacheSel::Source => source,
            CacheSel::Target => target,
        };
        let n_slots = plan.slots.len();
        let mut resid: Vec<Option<Vec<f32>>> = vec![None; n_slots];
        let mut scratch = Vec::new();

        for b in 0..cfg.layers {
            let mode = |s: usize| plan.slots[s].modes[b];
            let live: Vec<usize> = (0..n_slots)
                .filter(|&s| mode(s) == SlotMode::Live)
                .collect();
            if live.is_empty() {
                continue;
            }
            for &s in &live {
                if resid[s].is_none() {
                    let slot = &plan.slots[s];
                    resid[s] = Some(cache_of(slot.origin).resid_in[b].row(slot.token).to_vec());
                }
            }
            let rows: Vec<&[f32]> = live.iter().map(|&s| resid[s].as_deref().unwrap()).collect();
            let mut batch = Tensor::from_rows(&rows)?;
            let block = TokenBlock::new(self, b);
            let (q, k, v) = block.project(&batch)?;

            let mut live_row = vec![usize::MAX; n_slots];
            for (r, &s) in live.iter().enumerate() {
                live_row[s] = r;
            }
            let mut present: Vec<usize> = (0..n_slots)
                .filter(|&s| mode(s) != SlotMode::Inactive)
                .collect();
            present.sort_by_key(|&s| (plan.slots[s].position, s));
            let kv = |s: usize| -> (&[f32], &[f32]) {
                let slot = &plan.slots[s];
                if mode(s) == SlotMode::Live {
                    (k.row(live_row[s]), v.row(live_row[s]))
                } else {
                    let c = cache_of(slot.origin);
                    (c.keys[b].row(slot.token), c.values[b].row(slot.token))
                }
            };
            let mask = plan.block_mask[b].map(|i| &plan.masks[i]);

            let mut attn = Tensor::zeros(vec![live.len(), cfg.dim]);
            let mut keys: Vec<&[f32]> = Vec::with_capacity(present.len());
            let mut values: Vec<&[f32]> = Vec::with_capacity(present.len());
            for (r, &qs) in live.iter().enumerate() {
                keys.clear();
                values.clear();
                let mut last_pos = None;
                for &ks in &present {
                    if let Some(m) = mask {
                        if !m.allows(qs, ks) {
                            continue;
                        }
                    }
                    let pos = plan.slots[ks].position;
                    if last_pos == Some(pos) {
                        return Err(Error::InvalidPlan(format!(
                            "slot {qs} sees token position {pos} twice at block {b}"
                        )));
                    }
                    last_pos = Some(pos);
                    let (kk, vv) = kv(ks);
                    keys.push(kk);
                    values.push(vv);
                }
                if let Some(m) = mask {
                    if let Some(ks) =
                        (0..n_slots).find(|&ks| m.allows(qs, ks) && mode(ks) == SlotMode::Inactive)
                    {
                        return Err(Error::InvalidPlan(format!(
                            "slot {qs} attends to absent slot {ks} at block {b}"
                        )));
                    }
                }
                if keys.is_empty() {
                    return Err(Error::InvalidPlan(format!(
                        "slot {qs} attends to nothing at block {b}"
                    )));
                }
                attend(
                    q.row(r),
                    &keys,
                    &values,
                    cfg.heads,
                    &mut scratch,
                    attn.row_mut(r),
                );
            }
            block.finish(&mut batch, &attn)?;
            for (r, &s) in live.iter().enumerate() {
                resid[s] = Some(batch.row(r).to_vec());
            }
        }

        let readouts: Vec<usize> = (0..n_slots).filter(|&s| plan.slots[s].readout).collect();
        let rows: Vec<&[f32]> = readouts
            .iter()
            .map(|&s| resid[s].as_deref().unwrap())
            .collect();
        let (logits, probs) = self.classify(&Tensor::from_rows(&rows)?)?;
        Ok(PinnedOutput {
            readouts,
            logits,
            probs,
        })
    }
}
