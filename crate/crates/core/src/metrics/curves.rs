use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::vit::ModelBundle;

use super::rank_patches;

/// Class score after each perturbation step; `fractions[t] = t / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationCurve {
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
}

impl PerturbationCurve {
    /// Trapezoid rule over the fraction axis.
    pub fn auc(&self) -> f64 {
        self.fractions
            .windows(2)
            .zip(self.scores.windows(2))
            .map(|(f, s)| (f[1] - f[0]) * (s[0] + s[1]) / 2.0)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,score\n");
        for (f, s) in self.fractions.iter().zip(&self.scores) {
            out.push_str(&format!("{f},{s}\n"));
        }
        out
    }
}

fn check(model: &ModelBundle, x: &Image, scores: &[f64], class: usize) -> Result<()> {
    model.check_image(x)?;
    let n = model.config.num_patches();
    if scores.len() != n {
        return Err(Error::ShapeMismatch {
            op: "perturbation curve",
            left: vec![n],
            right: vec![scores.len()],
        });
    }
    if class >= model.config.classes {
        return Err(Error::InvalidArgument(format!(
            "class {class} outside {} classes",
            model.config.classes
        )));
    }
    Ok(())
}

enum Fill<'a> {
    From(&'a Image),
    Constant(f32),
}

/// Starts from `start` and, step by step in rank order, overwrites patches
/// according to `fill`.
fn run_curve(
    model: &ModelBundle,
    start: Image,
    fill: Fill<'_>,
    scores: &[f64],
    class: usize,
) -> Result<PerturbationCurve> {
    let order = rank_patches(scores);
    let n = order.len();
    let ppx = model.config.patch_px;
    let mut images = Vec::with_capacity(n + 1);
    let mut img = start;
    images.push(img.clone());
    for &p in &order {
        match fill {
            Fill::From(src) => img.copy_patch_from(src, p, ppx),
            Fill::Constant(v) => img.fill_patch(p, ppx, v),
        }
        images.push(img.clone());
    }
    let scores = images
        .par_iter()
        .map(|im| Ok(model.predict(im)?[class] as f64))
        .collect::<Result<Vec<f64>>>()?;
    Ok(PerturbationCurve {
        fractions: (0..=n).map(|t| t as f64 / n as f64).collect(),
        scores,
    })
}

/// Top-ranked patches set to `reference`, one per step.
pub fn deletion_curve(
    model: &ModelBundle,
    x: &Image,
    scores: &[f64],
    class: usize,
    reference: f32,
) -> Result<PerturbationCurve> {
    check(model, x, scores, class)?;
    run_curve(model, x.clone(), Fill::Constant(reference), scores, class)
}

/// Starts from `x` box-blurred twice with width `blur_kernel` and restores
/// the top-ranked patches, one per step.
pub fn insertion_curve(
    model: &ModelBundle,
    x: &Image,
    scores: &[f64],
    class: usize,
    blur_kernel: usize,
) -> Result<PerturbationCurve> {
    check(model, x, scores, class)?;
    let blurred = x.box_blur(blur_kernel, 2)?;
    run_curve(model, blurred, Fill::From(x), scores, class)
}

pub fn deletion_auc(
    model: &ModelBundle,
    x: &Image,
    scores: &[f64],
    class: usize,
    reference: f32,
) -> Result<(PerturbationCurve, f64)> {
    let c = deletion_curve(model, x, scores, class, reference)?;
    let auc = c.auc();
    Ok((c, auc))
}

pub fn insertion_auc(
    model: &ModelBundle,
    x: &Image,
    scores: &[f64],
    class: usize,
    blur_kernel: usize,
) -> Result<(PerturbationCurve, f64)> {
    let c = insertion_curve(model, x, scores, class, blur_kernel)?;
    let auc = c.auc();
    Ok((c, auc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{gen_model, gen_planted_pair, with_constant_head, ToySpec};

    fn setup() -> (ModelBundle, Image, Vec<f64>) {
        let spec = ToySpec::new(7);
        let model = gen_model(&spec).unwrap();
        let (x, _) = gen_planted_pair(&spec, 6).unwrap();
        let scores = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        (model, x, scores)
    }

    #[test]
    fn deletion_endpoints() {
        let (model, x, scores) = setup();
        let c = deletion_curve(&model, &x, &scores, 1, 0.5).unwrap();
        assert_eq!(c.scores.len(), 17);
        assert_eq!(c.scores[0], model.predict(&x).unwrap()[1] as f64);
        let gray = Image::filled(16, 16, 1, 0.5);
        assert_eq!(c.scores[16], model.predict(&gray).unwrap()[1] as f64);
        assert_eq!((c.fractions[0], c.fractions[16]), (0.0, 1.0));
    }

    #[test]
    fn insertion_endpoints_and_identity_blur() {
        let (model, x, scores) = setup();
        let px = model.predict(&x).unwrap()[1] as f64;
        let c = insertion_curve(&model, &x, &scores, 1, 9).unwrap();
        assert_eq!(c.scores[16], px);
        let flat = insertion_curve(&model, &x, &scores, 1, 1).unwrap();
        assert!(flat.scores.iter().all(|&s| s == px));
        assert!((flat.auc() - px).abs() <= 1e-12);
        assert!(insertion_curve(&model, &x, &scores, 1, 4).is_err());
    }

    #[test]
    fn constant_model_auc_is_the_constant() {
        let (model, x, scores) = setup();
        let flat = with_constant_head(&model, &[0.3, -1.0, 2.0, 0.0, 0.5]).unwrap();
        let c = flat.predict(&x).unwrap()[2] as f64;
        let (_, del) = deletion_auc(&flat, &x, &scores, 2, 0.5).unwrap();
        let (_, ins) = insertion_auc(&flat, &x, &scores, 2, 9).unwrap();
        assert!((del - c).abs() <= 1e-9 && (ins - c).abs() <= 1e-9);
    }

    #[test]
    fn csv_layout() {
        let c = PerturbationCurve {
            fractions: vec![0.0, 0.5, 1.0],
            scores: vec![1.0, 0.5, 0.25],
        };
        assert_eq!(c.to_csv(), "fraction,score\n0,1\n0.5,0.5\n1,0.25\n");
        assert_eq!(c.auc(), 0.5 * 0.75 + 0.5 * 0.375);
    }
}
