//! Synthetic image classes for fast end-to-end tests: one random template per
//! class plus small per-sample noise, linearly separable at small scale.

use rand_distr::{Distribution, Normal};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{domain, stream};

const TEMPLATE_SPREAD: f64 = 0.35;
const SAMPLE_NOISE: f64 = 0.08;

pub fn synth_blobs(
    num_classes: usize,
    samples_per_class: usize,
    side: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if side < 8 {
        return Err(Error::InvalidArgument(format!(
            "synthetic images need side >= 8 (got {}) so a trigger fits",
            side
        )));
    }
    if num_classes == 0 || num_classes > 256 || samples_per_class == 0 {
        return Err(Error::InvalidArgument(
            "need 1..=256 classes and at least one sample per class".into(),
        ));
    }
    let pixels = side * side;
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");

    let mut templates = Vec::with_capacity(num_classes);
    for k in 0..num_classes {
        let mut rng = stream(seed, domain::DATASET, k as u64, 0);
        let tpl: Vec<f64> = (0..pixels)
            .map(|_| (0.5 + TEMPLATE_SPREAD * normal.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        templates.push(tpl);
    }

    let n = num_classes * samples_per_class;
    let mut images = vec![0.0f32; n * pixels];
    let mut labels = vec![0u8; n];
    for k in 0..num_classes {
        let mut rng = stream(seed, domain::DATASET, k as u64, 1);
        for s in 0..samples_per_class {
            // class-interleaved order so any prefix is class-balanced
            let at = s * num_classes + k;
            labels[at] = k as u8;
            let img = &mut images[at * pixels..(at + 1) * pixels];
            for (p, v) in img.iter_mut().enumerate() {
                *v = (templates[k][p] + SAMPLE_NOISE * normal.sample(&mut rng)).clamp(0.0, 1.0)
                    as f32;
            }
        }
    }
    Ok(LabeledDataset {
        images,
        channels: 1,
        height: side,
        width: side,
        labels,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_per_class() {
        let ds = synth_blobs(10, 100, 28, 9).unwrap();
        assert_eq!(ds.len(), 1000);
        for k in 0..10u8 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == k).count(), 100);
        }
        ds.validate().unwrap();
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let a = synth_blobs(4, 20, 16, 3).unwrap();
        let b = synth_blobs(4, 20, 16, 3).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn different_seeds_differ() {
        let a = synth_blobs(4, 20, 16, 3).unwrap();
        let b = synth_blobs(4, 20, 16, 4).unwrap();
        assert_ne!(a.images, b.images);
    }

    #[test]
    fn side_too_small_rejected() {
        assert!(synth_blobs(4, 20, 7, 3).is_err());
    }
}
