//! Lloyd's k-means with k-means++ seeding.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::{distance, squared_distance, Matrix};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Fitted centroids of a client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    centroids: Matrix,
    inertia: f64,
    iterations_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub clusters: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(clusters: usize, seed: u64) -> Self {
        KMeansParams {
            clusters,
            max_iters: 100,
            tol: 1e-6,
            seed,
        }
    }
}

impl CentroidModel {
    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Sum of squared distances from the training points to their nearest
    /// centroid.
    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn iterations_used(&self) -> usize {
        self.iterations_used
    }

    /// Euclidean distance from `x` to its nearest centroid.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(libm::sqrt(nearest(&self.centroids, x).1))
    }

    /// Assigns `x` to its nearest centroid (lowest index on ties).
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.score(x)?;
        Ok(nearest(&self.centroids, x).0)
    }
}

fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter_rows().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_points<R: AsRef<[f64]>>(points: &[R], clusters: usize) -> Result<usize> {
    if clusters == 0 {
        return Err(Error::param("clusters", "must be at least 1"));
    }
    if points.len() < clusters {
        return Err(Error::Infeasible(format!(
            "{} points cannot form {clusters} clusters",
            points.len()
        )));
    }
    let dim = points[0].as_ref().len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("points", "non-finite coordinate"));
        }
    }
    Ok(dim)
}

fn plus_plus_init<R: AsRef<[f64]>>(points: &[R], clusters: usize, rng: &mut impl Rng) -> Matrix {
    let dim = points[0].as_ref().len();
    let mut centroids = Matrix::zeros(clusters, dim);
    let first = rng.random_range(0..points.len());
    centroids.row_mut(0).copy_from_slice(points[first].as_ref());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_ref(), centroids.row(0)))
        .collect();
    for k in 1..clusters {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = d2.iter().rposition(|&v| v > 0.0).unwrap_or(0);
            for (i, &v) in d2.iter().enumerate() {
                acc += v;
                if acc > target && v > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // every point already sits on a centroid
            rng.random_range(0..points.len())
        };
        centroids.row_mut(k).copy_from_slice(points[pick].as_ref());
        for (p, best) in points.iter().zip(d2.iter_mut()) {
            let d = squared_distance(p.as_ref(), centroids.row(k));
            if d < *best {
                *best = d;
            }
        }
    }
    centroids
}

/// Fits `params.clusters` centroids; see [`kmeans_fit_traced`].
pub fn kmeans_fit<R: AsRef<[f64]>>(points: &[R], params: &KMeansParams) -> Result<CentroidModel> {
    kmeans_fit_traced(points, params).map(|(m, _)| m)
}

/// Fits centroids and also returns the inertia measured at every assignment
/// step. The trace is non-increasing.
///
/// Iteration stops once no centroid moves by `tol` or more, or after
/// `max_iters` update steps. A cluster that loses all its points is moved to
/// the point farthest from its assigned centroid.
pub fn kmeans_fit_traced<R: AsRef<[f64]>>(
    points: &[R],
    params: &KMeansParams,
) -> Result<(CentroidModel, Vec<f64>)> {
    if !(params.tol >= 0.0) {
        return Err(Error::param("tol", "must be non-negative"));
    }
    let dim = check_points(points, params.clusters)?;
    let k = params.clusters;
    let mut rng = rng::stream(params.seed, Purpose::KMeans, 0, 0);
    let mut centroids = plus_plus_init(points, k, &mut rng);

    let mut labels = alloc::vec![0usize; points.len()];
    let mut dists = alloc::vec![0.0f64; points.len()];
    let mut trace = Vec::new();
    let mut iterations_used = 0;

    loop {
        let mut inertia = 0.0;
        for ((p, label), dist) in points.iter().zip(labels.iter_mut()).zip(dists.iter_mut()) {
            let (i, d) = nearest(&centroids, p.as_ref());
            *label = i;
            *dist = d;
            inertia += d;
        }
        trace.push(inertia);
        if iterations_used == params.max_iters {
            break;
        }

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = alloc::vec![0usize; k];
        for (p, &label) in points.iter().zip(&labels) {
            counts[label] += 1;
            for (s, v) in sums.row_mut(label).iter_mut().zip(p.as_ref()) {
                *s += v;
            }
        }
        let mut moved = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                let far = dists
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                let target = points[far].as_ref();
                moved = moved.max(distance(centroids.row(j), target));
                centroids.row_mut(j).copy_from_slice(target);
                // the donor point now sits on this centroid
                dists[far] = 0.0;
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            let mut shift = 0.0;
            for (c, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                let next = s * inv;
                shift += (next - *c) * (next - *c);
                *c = next;
            }
            moved = moved.max(libm::sqrt(shift));
        }
        iterations_used += 1;
        if moved < params.tol {
            // re-measure against the final centroids
            let inertia = points
                .iter()
                .map(|p| nearest(&centroids, p.as_ref()).1)
                .sum();
            trace.push(inertia);
            break;
        }
    }

    let inertia = *trace.last().unwrap_or(&0.0);
    Ok((
        CentroidModel {
            centroids,
            inertia,
            iterations_used,
        },
        trace,
    ))
}
