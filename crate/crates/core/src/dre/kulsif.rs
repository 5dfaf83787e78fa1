//! Kernel unconstrained least-squares importance fitting.
//!
//! Estimates the density ratio `p_private(x) / p_aux(x)` as
//!
//! ```text
//! w(x) = Σ_j α_j k(x, aux_j) + 1/(λn) Σ_i k(x, priv_i)
//! ```
//!
//! with a Gaussian kernel `k(x, y) = exp(-‖x - y‖² / 2σ²)` and `α` solving
//! `(K11/m + λI) α = -K12ᵀ 1_n / (λ n m)`, where `K11` is the `m×m` kernel
//! matrix over auxiliary samples and `K12` the `n×m` private-vs-auxiliary one.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::linalg::{cholesky_solve, distance, median, squared_distance, Matrix};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KulsifModel {
    private: Matrix,
    aux: Matrix,
    alpha: Vec<f64>,
    lambda: f64,
    sigma: f64,
}

#[inline]
fn gaussian(sq_dist: f64, inv_two_sigma_sq: f64) -> f64 {
    libm::exp(-sq_dist * inv_two_sigma_sq)
}

/// Fits the estimator. Fails if the regularized kernel system is not
/// numerically positive definite.
pub fn kulsif_learn<R: AsRef<[f64]>, S: AsRef<[f64]>>(
    private: &[R],
    aux: &[S],
    sigma: f64,
    lambda: f64,
) -> Result<KulsifModel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(
            "sigma",
            alloc::format!("{sigma} must be positive"),
        ));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(
            "lambda",
            alloc::format!("{lambda} must be positive"),
        ));
    }
    if private.is_empty() {
        return Err(Error::Empty("private samples"));
    }
    if aux.is_empty() {
        return Err(Error::Empty("auxiliary samples"));
    }
    let private = Matrix::from_rows(private)?;
    let aux = Matrix::from_rows(aux)?;
    if private.cols() != aux.cols() {
        return Err(Error::DimensionMismatch {
            expected: private.cols(),
            got: aux.cols(),
        });
    }
    let (n, m) = (private.rows(), aux.rows());
    let g = 1.0 / (2.0 * sigma * sigma);

    let mut system = Matrix::zeros(m, m);
    for i in 0..m {
        system.set(i, i, 1.0 / m as f64 + lambda);
        for j in 0..i {
            let v = gaussian(squared_distance(aux.row(i), aux.row(j)), g) / m as f64;
            system.set(i, j, v);
            system.set(j, i, v);
        }
    }
    // K12ᵀ 1_n, accumulated one private row at a time
    let mut rhs = alloc::vec![0.0; m];
    for p in private.iter_rows() {
        for (r, a) in rhs.iter_mut().zip(aux.iter_rows()) {
            *r += gaussian(squared_distance(p, a), g);
        }
    }
    let scale = -1.0 / (lambda * n as f64 * m as f64);
    rhs.iter_mut().for_each(|r| *r *= scale);

    let alpha = cholesky_solve(system, &rhs)?;
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::Solver("non-finite coefficients".into()));
    }
    Ok(KulsifModel {
        private,
        aux,
        alpha,
        lambda,
        sigma,
    })
}

impl KulsifModel {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.aux.cols()
    }

    pub fn num_private(&self) -> usize {
        self.private.rows()
    }

    pub fn num_aux(&self) -> usize {
        self.aux.rows()
    }

    /// Estimated density ratio at `x`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let g = 1.0 / (2.0 * self.sigma * self.sigma);
        let aux_term: f64 = self
            .aux
            .iter_rows()
            .zip(&self.alpha)
            .map(|(a, w)| w * gaussian(squared_distance(x, a), g))
            .sum();
        let private_term: f64 = self
            .private
            .iter_rows()
            .map(|p| gaussian(squared_distance(x, p), g))
            .sum();
        Ok(aux_term + private_term / (self.lambda * self.num_private() as f64))
    }
}

/// Draws `m` points uniformly from the per-dimension bounding box of
/// `private`, widened on each side by `margin` times the box extent.
pub fn generate_auxiliary<R: AsRef<[f64]>>(
    private: &[R],
    m: usize,
    margin: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let first = private
        .first()
        .ok_or(Error::Empty("private samples"))?
        .as_ref();
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for p in private {
        for ((l, h), v) in lo.iter_mut().zip(hi.iter_mut()).zip(p.as_ref()) {
            *l = l.min(*v);
            *h = h.max(*v);
        }
    }
    for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
        let pad = margin * (*h - *l);
        *l -= pad;
        *h += pad;
    }
    let mut rng = rng::stream(seed, Purpose::Auxiliary, 0, 0);
    Ok((0..m)
        .map(|_| {
            lo.iter()
                .zip(&hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect()
        })
        .collect())
}

/// Median pairwise distance over at most `max_points` points chosen at
/// random. Falls back to `1.0` when every sampled pair coincides.
pub fn median_heuristic_sigma<R: AsRef<[f64]>>(points: &[R], max_points: usize, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, Purpose::Auxiliary, 0, 1);
    let chosen: Vec<usize> = if points.len() > max_points {
        index::sample(&mut rng, points.len(), max_points).into_vec()
    } else {
        (0..points.len()).collect()
    };
    let mut dists = Vec::with_capacity(chosen.len() * chosen.len().saturating_sub(1) / 2);
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a + 1..] {
            dists.push(distance(points[i].as_ref(), points[j].as_ref()));
        }
    }
    match median(&mut dists) {
        Some(s) if s > 0.0 => s,
        _ => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_mixture;
    use alloc::vec;
    use proptest::prelude::*;

    fn gaussian_points(n: usize, mean: [f64; 2], seed: u64) -> Vec<Vec<f64>> {
        gen_gaussian_mixture(n, &[mean.to_vec()], 1.0, seed)
            .unwrap()
            .into_iter()
            .map(|s| s.features)
            .collect()
    }

    #[test]
    fn one_by_one_system_matches_hand_solution() {
        // K11 = K12 = [1], so (1 + λ) α = -1/λ and w(x0) = α + 1/λ = 1/(1 + λ)
        for lambda in [0.1, 0.5, 2.0] {
            let m = kulsif_learn(&[[0.3, 0.7]], &[[0.3, 0.7]], 1.0, lambda).unwrap();
            let want = -1.0 / (lambda * (1.0 + lambda));
            assert!((m.alpha()[0] - want).abs() < 1e-12);
            let w = m.score(&[0.3, 0.7]).unwrap();
            assert!((w - 1.0 / (1.0 + lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn matched_distributions_give_ratio_near_one() {
        for seed in 0..3 {
            let private = gaussian_points(500, [0.0, 0.0], seed);
            let aux = gaussian_points(500, [0.0, 0.0], seed + 100);
            let held_out = gaussian_points(500, [0.0, 0.0], seed + 200);
            let sigma = median_heuristic_sigma(&private, 500, seed);
            let m = kulsif_learn(&private, &aux, sigma, 0.1).unwrap();
            let mean = held_out.iter().map(|x| m.score(x).unwrap()).sum::<f64>() / 500.0;
            assert!(
                (0.5..=2.0).contains(&mean),
                "seed {seed}: mean ratio {mean}"
            );
        }
    }

    #[test]
    fn far_points_decay_to_zero() {
        let private = gaussian_points(50, [0.0, 0.0], 1);
        let aux = generate_auxiliary(&private, 50, 0.1, 1).unwrap();
        let m = kulsif_learn(&private, &aux, 0.5, 0.1).unwrap();
        assert!(m.score(&[1e3, 1e3]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dense_cluster_outscores_outside_point() {
        // a tight private cluster at the origin plus one stray point that
        // stretches the auxiliary box out to (8, 8)
        let mut private = gaussian_points(200, [0.0, 0.0], 4)
            .into_iter()
            .map(|p| p.iter().map(|v| v * 0.3).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        private.push(vec![8.0, 8.0]);
        let aux = generate_auxiliary(&private, 200, 0.1, 4).unwrap();
        let sigma = median_heuristic_sigma(&private, 500, 4);
        let m = kulsif_learn(&private, &aux, sigma, 0.1).unwrap();
        let inside = m.score(&[0.0, 0.0]).unwrap();
        let outside = m.score(&[5.0, 0.0]).unwrap();
        assert!(inside > outside, "{inside} <= {outside}");
        assert_eq!(m.score(&[0.0, 0.0]).unwrap(), inside);
    }

    #[test]
    fn auxiliary_box_has_margin() {
        let private = [[0.0, 10.0], [1.0, 20.0]];
        let aux = generate_auxiliary(&private, 400, 0.1, 0).unwrap();
        for a in &aux {
            assert!((-0.1..=1.1).contains(&a[0]));
            assert!((9.0..=21.0).contains(&a[1]));
        }
        assert!(aux.iter().any(|a| a[0] < 0.0) && aux.iter().any(|a| a[0] > 1.0));
    }

    #[test]
    fn median_heuristic_on_known_points() {
        // pairwise distances of the collinear points 0, 1, 3: {1, 2, 3}
        assert_eq!(median_heuristic_sigma(&[[0.0], [1.0], [3.0]], 500, 0), 2.0);
        assert_eq!(median_heuristic_sigma(&[[2.0], [2.0]], 500, 0), 1.0);
    }

    #[test]
    fn parameter_and_shape_errors() {
        let p = [[0.0, 0.0]];
        assert!(kulsif_learn(&p, &p, 0.0, 0.1).is_err());
        assert!(kulsif_learn(&p, &p, 1.0, 0.0).is_err());
        assert!(kulsif_learn(&p, &[[0.0]], 1.0, 0.1).is_err());
        let m = kulsif_learn(&p, &p, 1.0, 0.1).unwrap();
        assert!(matches!(
            m.score(&[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn alpha_finite_for_reasonable_lambda(seed in any::<u64>(), lambda in 1e-3f64..10.0) {
            let private = gaussian_points(30, [0.0, 0.0], seed);
            let aux = generate_auxiliary(&private, 30, 0.1, seed).unwrap();
            let sigma = median_heuristic_sigma(&private, 500, seed);
            let m = kulsif_learn(&private, &aux, sigma, lambda).unwrap();
            prop_assert!(m.alpha().iter().all(|a| a.is_finite()));
        }
    }
}
