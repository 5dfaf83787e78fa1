use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledSample;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Isotropic Gaussian mixture with `per_class` samples per class, emitted
/// class by class.
pub fn gen_gaussian_mixture(
    per_class: usize,
    class_means: &[Vec<f64>],
    stddev: f64,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if !(stddev > 0.0 && stddev.is_finite()) {
        return Err(Error::param(
            "stddev",
            alloc::format!("{stddev} must be positive"),
        ));
    }
    let dim = class_means.first().map_or(0, Vec::len);
    if let Some(bad) = class_means.iter().find(|m| m.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let noise =
        Normal::new(0.0, stddev).map_err(|e| Error::param("stddev", alloc::format!("{e}")))?;
    let mut rng = rng::stream(seed, Purpose::Synthetic, 0, 0);
    let mut out = Vec::with_capacity(per_class * class_means.len());
    for (label, mean) in class_means.iter().enumerate() {
        for _ in 0..per_class {
            let features = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
            out.push(LabeledSample { features, label });
        }
    }
    Ok(out)
}

/// `classes` mean vectors drawn uniformly from the unit cube.
pub fn random_class_means(classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, Purpose::Synthetic, 1, 0);
    (0..classes)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn two_means() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0], vec![10.0, 10.0]]
    }

    #[test]
    fn class_means_converge() {
        let ds = gen_gaussian_mixture(100, &two_means(), 0.5, 3).unwrap();
        assert_eq!(ds.len(), 200);
        for (label, mean) in two_means().iter().enumerate() {
            let members: Vec<_> = ds.iter().filter(|s| s.label == label).collect();
            assert_eq!(members.len(), 100);
            for d in 0..2 {
                let avg = members.iter().map(|s| s.features[d]).sum::<f64>() / 100.0;
                assert!((avg - mean[d]).abs() < 0.2, "class {label} dim {d}: {avg}");
            }
        }
    }

    #[test]
    fn tiny_spread_sits_on_means() {
        let ds = gen_gaussian_mixture(50, &two_means(), 1e-9, 1).unwrap();
        for s in &ds {
            let m = &two_means()[s.label];
            assert!(s.features.iter().zip(m).all(|(x, y)| (x - y).abs() < 1e-7));
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = gen_gaussian_mixture(20, &two_means(), 0.7, 11).unwrap();
        let b = gen_gaussian_mixture(20, &two_means(), 0.7, 11).unwrap();
        let bits = |d: &[LabeledSample]| -> Vec<u64> {
            d.iter()
                .flat_map(|s| s.features.iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(
            bits(&a),
            bits(&gen_gaussian_mixture(20, &two_means(), 0.7, 12).unwrap())
        );
    }

    #[test]
    fn non_positive_spread_is_rejected() {
        assert!(gen_gaussian_mixture(5, &two_means(), 0.0, 0).is_err());
        assert!(gen_gaussian_mixture(5, &two_means(), -1.0, 0).is_err());
    }

    #[test]
    fn random_means_are_seeded_and_in_the_cube() {
        let a = random_class_means(5, 3, 1);
        assert_eq!(a, random_class_means(5, 3, 1));
        assert_ne!(a, random_class_means(5, 3, 2));
        assert!(a.iter().flatten().all(|v| (0.0..1.0).contains(v)));
        assert_eq!((a.len(), a[0].len()), (5, 3));
    }
}
