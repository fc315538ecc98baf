//! Pixel-space counterparts of the patching modes: paste the selected
//! patches into the blank, or cut them out of the image.

use rayon::prelude::*;

use crate::error::Result;
use crate::image::Image;
use crate::vit::ModelBundle;

use super::{check_class, AttributionMap, AttributionMode, SelectionOp};

fn input_map(
    model: &ModelBundle,
    x: &Image,
    x0: &Image,
    class: usize,
    select: SelectionOp,
    mode: AttributionMode,
) -> Result<AttributionMap> {
    check_class(model, class)?;
    model.check_image(x)?;
    model.check_image(x0)?;
    let cfg = &model.config;
    let full = model.predict(x)?[class] as f64;
    let scores = (0..cfg.num_patches())
        .into_par_iter()
        .map(|p| {
            let sel = select.select(p, cfg.grid)?;
            let (mut img, from) = match mode {
                AttributionMode::InputInsert => (x0.clone(), x),
                _ => (x.clone(), x0),
            };
            for &s in &sel {
                img.copy_patch_from(from, s, cfg.patch_px);
            }
            let prob = model.predict(&img)?[class] as f64;
            Ok(match mode {
                AttributionMode::InputInsert => prob,
                _ => full - prob,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AttributionMap {
        grid: cfg.grid,
        scores,
        class_id: class,
        mode,
        blank: None,
        select,
        range: None,
        model_fingerprint: model.fingerprint(),
    })
}

/// `p(y | x0 with S(p) pasted from x)`.
pub fn input_insertion_attr(
    model: &ModelBundle,
    x: &Image,
    x0: &Image,
    class: usize,
    select: SelectionOp,
) -> Result<AttributionMap> {
    input_map(model, x, x0, class, select, AttributionMode::InputInsert)
}

/// `p(y | x) − p(y | x with S(p) replaced by x0)`.
pub fn input_deletion_attr(
    model: &ModelBundle,
    x: &Image,
    x0: &Image,
    class: usize,
    select: SelectionOp,
) -> Result<AttributionMap> {
    input_map(model, x, x0, class, select, AttributionMode::InputDelete)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{gen_model, gen_planted_pair, ToySpec};

    #[test]
    fn identity_and_full_copy() {
        let spec = ToySpec::new(7);
        let model = gen_model(&spec).unwrap();
        let (x, x0) = gen_planted_pair(&spec, 6).unwrap();
        let p0 = model.predict(&x0).unwrap()[2] as f64;
        let px = model.predict(&x).unwrap()[2] as f64;
        let same = input_insertion_attr(&model, &x0, &x0, 2, SelectionOp::NoPad).unwrap();
        assert!(same.scores.iter().all(|&s| s == p0));
        let del = input_deletion_attr(&model, &x0, &x0, 2, SelectionOp::NoPad).unwrap();
        assert!(del.scores.iter().all(|&s| s == 0.0));
        let all = SelectionOp::Box { radius: 3 };
        let full = input_insertion_attr(&model, &x, &x0, 2, all).unwrap();
        assert!(full.scores.iter().all(|&s| s == px));
    }

    #[test]
    fn dead_patch_scores_zero() {
        let spec = ToySpec::new(7);
        let mut model = gen_model(&spec).unwrap();
        model.patch_embed_w.data_mut().fill(0.0);
        let (x, x0) = gen_planted_pair(&spec, 6).unwrap();
        let del = input_deletion_attr(&model, &x, &x0, 0, SelectionOp::NoPad).unwrap();
        assert!(del.scores.iter().all(|&s| s == 0.0));
    }
}
