use serde::{Deserialize, Serialize};

use super::ModelError;

/// Per-feature min-max scaling to [0, 1] over the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        if rows.len() < 2 {
            return Err(ModelError::EmptyTrainingSet { rows: rows.len() });
        }
        let dim = rows[0].len();
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(ModelError::DimensionMismatch { expected: dim, got: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ModelError::NonFiniteFeature { row: r, column: j });
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        for (j, (lo, hi)) in min.iter().zip(&max).enumerate() {
            if lo == hi {
                log::warn!("feature {j} is constant ({lo}) over the training set; it scales to 0");
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn constant_features(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.min[j] == self.max[j]).collect()
    }

    /// Values outside the training range are not clipped.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    /// Scaled vector plus whether any coordinate left [0, 1].
    pub fn transform_flagged(&self, x: &[f64]) -> (Vec<f64>, bool) {
        let scaled = self.transform(x);
        let extrapolated = scaled.iter().any(|v| !(0.0..=1.0).contains(v));
        (scaled, extrapolated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn linear_map_endpoints() {
        let s = MinMaxScaler::fit(&col(&[2.0, 4.0, 6.0])).unwrap();
        let out: Vec<f64> = [2.0, 4.0, 6.0].iter().map(|&x| s.transform(&[x])[0]).collect();
        assert_eq!(out, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let s = MinMaxScaler::fit(&col(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(s.transform(&[5.0]), vec![0.0]);
        assert_eq!(s.constant_features(), vec![0]);
    }

    #[test]
    fn extrapolation_is_flagged_not_clipped() {
        let s = MinMaxScaler::fit(&col(&[2.0, 6.0])).unwrap();
        assert_eq!(s.transform_flagged(&[8.0]), (vec![1.5], true));
        assert_eq!(s.transform_flagged(&[3.0]), (vec![0.25], false));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(MinMaxScaler::fit(&col(&[1.0])), Err(ModelError::EmptyTrainingSet { .. })));
        assert!(matches!(
            MinMaxScaler::fit(&col(&[1.0, f64::NAN])),
            Err(ModelError::NonFiniteFeature { row: 1, column: 0 })
        ));
    }
}
