use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

/// Ridge added to the covariance diagonal.
pub const PRIOR_RIDGE: f64 = 1e-6;

/// Multivariate normal over latents.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPrior {
    pub mean: DVector<f64>,
    /// Sample covariance plus the ridge.
    pub cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov`.
    pub chol: DMatrix<f64>,
}

impl LatentPrior {
    /// Sample mean and unbiased covariance of at least two vectors.
    pub fn fit(latents: &[Vec<f64>]) -> Result<Self> {
        let n = latents.len();
        if n < 2 {
            return Err(Error::Data(format!("a latent prior needs at least 2 latents, got {n}")));
        }
        let d = latents[0].len();
        if d == 0 || latents.iter().any(|z| z.len() != d) {
            return Err(shape_err!("latents must share a positive dimension"));
        }
        let mut mean = DVector::zeros(d);
        for z in latents {
            mean += DVector::from_column_slice(z);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for z in latents {
            let c = DVector::from_column_slice(z) - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        for i in 0..d {
            cov[(i, i)] += PRIOR_RIDGE;
        }
        Self::from_moments(mean, cov)
    }

    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(shape_err!("covariance is {}×{}, mean has {}", cov.nrows(), cov.ncols(), mean.len()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("latent covariance is not positive definite".into()))?
            .l();
        Ok(LatentPrior { mean, cov, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `μ + L·n` with `n` standard normal.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let n = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| StandardNormal.sample(rng)));
        (&self.mean + &self.chol * n).iter().copied().collect()
    }
}
