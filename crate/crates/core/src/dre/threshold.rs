use crate::{Error, Result};

/// Which side of the threshold counts as in-distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Distances: small is ID.
    BelowIsId,
    /// Density ratios: large is ID.
    AboveIsId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdThreshold {
    pub value: f64,
    pub direction: Direction,
    /// Quantile the value was calibrated at, if any.
    pub calibration_quantile: Option<f64>,
}

impl IdThreshold {
    pub fn raw(value: f64, direction: Direction) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::param("threshold", "must be finite"));
        }
        Ok(IdThreshold {
            value,
            direction,
            calibration_quantile: None,
        })
    }

    /// Same direction and provenance, value multiplied by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        IdThreshold {
            value: self.value * factor,
            ..self
        }
    }
}

/// Nearest-rank quantile: the smallest sample with at least `q·n` samples at
/// or below it.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let exact = q * n as f64;
    let rounded = libm::round(exact);
    let rank = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        libm::ceil(exact)
    };
    let rank = (rank as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Calibrates a threshold from scores of the client's own private points.
///
/// Distances use the `q`-quantile; ratios use the `(1 - q)`-quantile, so in
/// both cases roughly a fraction `q` of private points is ID.
pub fn calibrate_threshold(scores: &[f64], q: f64, direction: Direction) -> Result<IdThreshold> {
    if scores.is_empty() {
        return Err(Error::Empty("calibration scores"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::param(
            "quantile",
            alloc::format!("{q} not in (0, 1)"),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::param("scores", "non-finite calibration score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let level = match direction {
        Direction::BelowIsId => q,
        Direction::AboveIsId => 1.0 - q,
    };
    Ok(IdThreshold {
        value: nearest_rank(&sorted, level),
        direction,
        calibration_quantile: Some(q),
    })
}

/// Ties count as ID.
pub fn is_id(score: f64, threshold: &IdThreshold) -> bool {
    match threshold.direction {
        Direction::BelowIsId => score <= threshold.value,
        Direction::AboveIsId => score >= threshold.value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_mixture;
    use crate::dre::{kmeans_fit, KMeansParams};
    use alloc::vec::Vec;

    #[test]
    fn nearest_rank_on_one_to_hundred() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = calibrate_threshold(&scores, 0.95, Direction::BelowIsId).unwrap();
        assert_eq!(t.value, 95.0);
        let t = calibrate_threshold(&scores, 0.95, Direction::AboveIsId).unwrap();
        assert_eq!(t.value, 5.0);
        assert_eq!(nearest_rank(&scores, 0.951), 96.0);
    }

    #[test]
    fn constant_scores() {
        let t = calibrate_threshold(&[2.5; 17], 0.3, Direction::BelowIsId).unwrap();
        assert_eq!(t.value, 2.5);
        assert_eq!(t.calibration_quantile, Some(0.3));
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(
            calibrate_threshold(&[], 0.5, Direction::BelowIsId),
            Err(Error::Empty(_))
        ));
        assert!(calibrate_threshold(&[1.0], 1.0, Direction::BelowIsId).is_err());
        assert!(calibrate_threshold(&[1.0], 0.0, Direction::BelowIsId).is_err());
    }

    #[test]
    fn tie_is_inclusive() {
        let t = IdThreshold::raw(3.0, Direction::BelowIsId).unwrap();
        assert!(is_id(0.0, &t));
        assert!(is_id(3.0, &t));
        assert!(!is_id(3.0 + 1e-12, &t));
        let r = IdThreshold::raw(0.5, Direction::AboveIsId).unwrap();
        assert!(is_id(0.5, &r));
        assert!(!is_id(0.5 - 1e-12, &r));
    }

    #[test]
    fn calibrated_quantile_holds_on_fresh_points() {
        let means = [alloc::vec![0.0, 0.0], alloc::vec![10.0, 10.0]];
        let train = gen_gaussian_mixture(500, &means, 0.5, 1).unwrap();
        let fresh = gen_gaussian_mixture(5000, &means, 0.5, 2).unwrap();
        let pts: Vec<_> = train.iter().map(|s| s.features.as_slice()).collect();
        let model = kmeans_fit(&pts, &KMeansParams::new(2, 0)).unwrap();
        let scores: Vec<f64> = pts.iter().map(|p| model.score(p).unwrap()).collect();
        let t = calibrate_threshold(&scores, 0.99, Direction::BelowIsId).unwrap();
        let kept = fresh
            .iter()
            .filter(|s| is_id(model.score(&s.features).unwrap(), &t))
            .count();
        // binomial(10000, 0.99) sd is ~0.1pp; the bound allows for calibration noise
        assert!(kept as f64 / fresh.len() as f64 >= 0.985, "{kept}");
    }
}
