//! Per-column standardization with population statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

use super::matrix::Matrix;

/// Columns with a standard deviation at or below this are treated as
/// constant: they are shifted to zero mean but not divided.
const STD_GUARD: f64 = 1e-12;

/// Column means and population standard deviations learned from a fit set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler<F> {
    pub means: Vec<F>,
    pub stds: Vec<F>,
}

impl<F: Real> StandardScaler<F> {
    /// Learns per-column statistics. Needs at least 2 rows.
    pub fn fit(x: &Matrix<F>) -> Result<StandardScaler<F>> {
        if x.n_rows() < 2 {
            return Err(Error::InsufficientData {
                need: 2,
                got: x.n_rows(),
            });
        }
        let n = F::from_usize_real(x.n_rows());
        let cols = x.n_cols();
        let mut means = vec![F::zero(); cols];
        for row in x.iter_rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += *v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut vars = vec![F::zero(); cols];
        for row in x.iter_rows() {
            for ((va, v), m) in vars.iter_mut().zip(row).zip(&means) {
                let d = *v - *m;
                *va += d * d;
            }
        }
        let stds = vars.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(StandardScaler { means, stds })
    }

    /// The divisor actually applied to a column: 1 for constant columns.
    fn divisor(&self, j: usize) -> F {
        if self.stds[j] <= F::from_f64_real(STD_GUARD) {
            F::one()
        } else {
            self.stds[j]
        }
    }

    pub fn transform_row(&self, row: &[F]) -> Vec<F> {
        row.iter()
            .enumerate()
            .map(|(j, v)| (*v - self.means[j]) / self.divisor(j))
            .collect()
    }

    /// Maps a standardized row back to original units.
    pub fn inverse_row(&self, row: &[F]) -> Vec<F> {
        row.iter()
            .enumerate()
            .map(|(j, v)| *v * self.divisor(j) + self.means[j])
            .collect()
    }

    pub fn transform(&self, x: &Matrix<F>) -> Result<Matrix<F>> {
        if x.n_cols() != self.means.len() {
            return Err(Error::LengthMismatch {
                left: self.means.len(),
                right: x.n_cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.n_rows() {
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.means[j]) / self.divisor(j);
            }
        }
        Ok(out)
    }

    pub fn fit_transform(x: &Matrix<F>) -> Result<(Matrix<F>, StandardScaler<F>)> {
        let scaler = StandardScaler::fit(x)?;
        let z = scaler.transform(x)?;
        Ok((z, scaler))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_the_hand_computed_column() {
        let x = Matrix::from_vec(3, 1, vec![1.0f64, 2.0, 3.0]).unwrap();
        let (z, scaler) = StandardScaler::fit_transform(&x).unwrap();
        // Population std of (1,2,3) is sqrt(2/3).
        assert!((scaler.stds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((z.get(0, 0) - -1.2247).abs() < 1e-4);
        assert!(z.get(1, 0).abs() < 1e-4);
        assert!((z.get(2, 0) - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn constant_columns_shift_to_zero_without_dividing() {
        let x = Matrix::from_vec(3, 2, vec![7.0f64, 1.0, 7.0, 2.0, 7.0, 3.0]).unwrap();
        let (z, scaler) = StandardScaler::fit_transform(&x).unwrap();
        for i in 0..3 {
            assert_eq!(z.get(i, 0), 0.0);
        }
        assert!((z.get(2, 1) - 1.2247).abs() < 1e-4);
        let back = scaler.inverse_row(z.row(0));
        assert_eq!(back[0], 7.0);
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..400 * 3).map(|_| rng.random_range(-50.0..90.0)).collect();
        let x = Matrix::from_vec(400, 3, data).unwrap();
        let (z, scaler) = StandardScaler::fit_transform(&x).unwrap();
        for j in 0..3 {
            let mean: f64 = (0..400).map(|i| z.get(i, j)).sum::<f64>() / 400.0;
            let var: f64 = (0..400).map(|i| (z.get(i, j) - mean).powi(2)).sum::<f64>() / 400.0;
            assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "column {j} std {}", var.sqrt());
        }
        // Reapplying the learned stats reproduces the fit-set transform.
        assert_eq!(scaler.transform(&x).unwrap(), z);
        // Inverse round-trips.
        for i in 0..400 {
            for (orig, back) in x.row(i).iter().zip(scaler.inverse_row(z.row(i))) {
                assert!((orig - back).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let x = Matrix::from_vec(1, 2, vec![1.0f64, 2.0]).unwrap();
        assert!(matches!(
            StandardScaler::fit(&x),
            Err(Error::InsufficientData { need: 2, got: 1 })
        ));
    }

    #[test]
    fn works_at_single_precision() {
        let x = Matrix::from_vec(3, 1, vec![1.0f32, 2.0, 3.0]).unwrap();
        let (z, _) = StandardScaler::fit_transform(&x).unwrap();
        assert!((z.get(0, 0) - -1.2247).abs() < 1e-4);
    }
}
