//! Multivariate normal fitting and scoring, evaluated in log space.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-9;
const MAX_EPS: f64 = 1e-3;

/// How a block of feature vectors is reduced to one score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Arithmetic mean of the densities.
    #[default]
    Scores,
    /// Density of the mean feature vector.
    Features,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvnModel {
    k: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    sigma_inv: Vec<f64>,
    chol: Vec<f64>,
    log_norm_const: f64,
    eps: f64,
}

/// Lower-triangular factor of a symmetric matrix, or `None` if it is not
/// numerically positive definite.
fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i * k + p] * l[j * k + p]).sum();
            if i == j {
                let d = a[i * k + i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i * k + i] = d.sqrt();
            } else {
                l[i * k + j] = (a[i * k + j] - s) / l[j * k + j];
            }
        }
    }
    Some(l)
}

/// Solves `L y = b` in place.
fn forward(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let s: f64 = (0..i).map(|p| l[i * k + p] * b[p]).sum();
        b[i] = (b[i] - s) / l[i * k + i];
    }
}

/// Solves `L^T x = y` in place.
fn backward(l: &[f64], k: usize, b: &mut [f64]) {
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|p| l[p * k + i] * b[p]).sum();
        b[i] = (b[i] - s) / l[i * k + i];
    }
}

impl MvnModel {
    /// Builds a model from explicit parameters. `sigma` is row-major `k x k`.
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        Self::with_eps(mu, sigma, 0.0)
    }

    /// Rebuilds a fitted model from stored parameters, keeping the recorded
    /// regularization.
    pub fn from_parts(mu: Vec<f64>, sigma: Vec<f64>, eps: f64) -> Result<Self> {
        Self::with_eps(mu, sigma, eps)
    }

    fn with_eps(mu: Vec<f64>, sigma: Vec<f64>, eps: f64) -> Result<Self> {
        let k = mu.len();
        if k == 0 || sigma.len() != k * k {
            return Err(Error::invalid(format!(
                "mean of length {k} needs a {k}x{k} covariance, got {} entries",
                sigma.len()
            )));
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite model parameter"));
        }
        for i in 0..k {
            for j in 0..i {
                if sigma[i * k + j] != sigma[j * k + i] {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
            }
        }
        let chol = cholesky(&sigma, k).ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
        let log_det: f64 = 2.0 * (0..k).map(|i| chol[i * k + i].ln()).sum::<f64>();
        let log_norm_const = -0.5 * (k as f64 * (2.0 * PI).ln() + log_det);
        let mut sigma_inv = vec![0.0; k * k];
        for c in 0..k {
            let mut col = vec![0.0; k];
            col[c] = 1.0;
            forward(&chol, k, &mut col);
            backward(&chol, k, &mut col);
            for r in 0..k {
                sigma_inv[r * k + c] = col[r];
            }
        }
        Ok(Self {
            k,
            mu,
            sigma,
            sigma_inv,
            chol,
            log_norm_const,
            eps,
        })
    }

    /// Fits mean and unbiased covariance, adding `eps * (trace / k) * I`. If the
    /// result is still not positive definite, `eps` is raised tenfold until it is.
    pub fn fit<R: AsRef<[f64]>>(samples: &[R], eps: f64) -> Result<Self> {
        let n = samples.len();
        let k = samples.first().map_or(0, |r| r.as_ref().len());
        if k == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: n });
        }
        if n <= k {
            return Err(Error::InsufficientSamples { needed: k, got: n });
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!("regularization eps {eps} must be >= 0")));
        }
        let mut mu = vec![0.0; k];
        for (i, r) in samples.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != k {
                return Err(Error::invalid(format!(
                    "row {i} has dimension {}, expected {k}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {i} contains a non-finite value")));
            }
            for (m, v) in mu.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mu {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; k * k];
        for r in samples {
            let r = r.as_ref();
            for i in 0..k {
                let di = r[i] - mu[i];
                for j in 0..=i {
                    cov[i * k + j] += di * (r[j] - mu[j]);
                }
            }
        }
        for i in 0..k {
            for j in 0..=i {
                let v = cov[i * k + j] / (n - 1) as f64;
                cov[i * k + j] = v;
                cov[j * k + i] = v;
            }
        }
        let trace: f64 = (0..k).map(|i| cov[i * k + i]).sum();
        let scale = if trace > 0.0 { trace / k as f64 } else { 1.0 };
        let mut e = eps;
        loop {
            let mut s = cov.clone();
            for i in 0..k {
                s[i * k + i] += e * scale;
            }
            if cholesky(&s, k).is_some() {
                return Self::with_eps(mu, s, e);
            }
            e = if e == 0.0 { DEFAULT_EPS } else { e * 10.0 };
            if e > MAX_EPS {
                return Err(Error::invalid("covariance stays singular after regularization"));
            }
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Row-major covariance.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &[f64] {
        &self.sigma_inv
    }

    pub fn log_norm_const(&self) -> f64 {
        self.log_norm_const
    }

    /// Regularization actually applied during fitting.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.k {
            return Err(Error::invalid(format!(
                "vector of length {} scored against a {}-dimensional model",
                x.len(),
                self.k
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(())
    }

    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let mut d: Vec<f64> = x.iter().zip(&self.mu).map(|(a, b)| a - b).collect();
        forward(&self.chol, self.k, &mut d);
        Ok(d.iter().map(|v| v * v).sum())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_norm_const - 0.5 * self.mahalanobis_sq(x)?)
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.log_density(x).map(f64::exp)
    }

    pub fn max_density(&self) -> f64 {
        self.log_norm_const.exp()
    }

    /// Log of the block score under the chosen averaging.
    pub fn avg_log_score<R: AsRef<[f64]>>(&self, xs: &[R], averaging: Averaging) -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::invalid("cannot average an empty block"));
        }
        match averaging {
            Averaging::Scores => {
                let logs = xs
                    .iter()
                    .map(|x| self.log_density(x.as_ref()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(log_mean_exp(&logs))
            }
            Averaging::Features => {
                let mut mean = vec![0.0; self.k];
                for x in xs {
                    self.check(x.as_ref())?;
                    for (m, v) in mean.iter_mut().zip(x.as_ref()) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= xs.len() as f64;
                }
                self.log_density(&mean)
            }
        }
    }

    /// Arithmetic mean of the densities of `xs`.
    pub fn avg_score<R: AsRef<[f64]>>(&self, xs: &[R]) -> Result<f64> {
        self.avg_log_score(xs, Averaging::Scores).map(f64::exp)
    }
}

/// `ln(mean(exp(v)))` without overflow or underflow of the intermediate terms.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() || m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return m;
    }
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    m + s.ln() - (v.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity(k: usize) -> Vec<f64> {
        let mut s = vec![0.0; k * k];
        for i in 0..k {
            s[i * k + i] = 1.0;
        }
        s
    }

    #[test]
    fn unit_cube_corners() {
        let pts = [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let m = MvnModel::fit(&pts, DEFAULT_EPS).unwrap();
        assert_eq!(m.mu(), &[0.5, 0.5]);
        assert_relative_eq!(m.sigma()[0], 1.0 / 3.0, max_relative = 1e-8);
        assert_relative_eq!(m.sigma()[3], 1.0 / 3.0, max_relative = 1e-8);
        assert_eq!(m.sigma()[1], 0.0);
    }

    #[test]
    fn constant_samples_hit_the_floor() {
        let pts = vec![[2.0, -1.0, 3.0]; 10];
        let m = MvnModel::fit(&pts, DEFAULT_EPS).unwrap();
        assert_eq!(m.mu(), &[2.0, -1.0, 3.0]);
        assert_eq!(m.sigma()[0], DEFAULT_EPS);
        assert_eq!(m.sigma()[1], 0.0);
    }

    #[test]
    fn too_few_samples() {
        let pts = vec![[1.0, 2.0]; 2];
        assert!(matches!(
            MvnModel::fit(&pts, DEFAULT_EPS),
            Err(Error::InsufficientSamples { .. })
        ));
        let bad = [[1.0, f64::NAN], [0.0, 0.0], [1.0, 1.0]];
        assert!(matches!(
            MvnModel::fit(&bad, DEFAULT_EPS),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn standard_normal_values() {
        let m = MvnModel::new(vec![0.0], vec![1.0]).unwrap();
        assert_relative_eq!(
            m.density(&[0.0]).unwrap(),
            0.398_942_280_401_432_7,
            max_relative = 1e-15
        );
        let m6 = MvnModel::new(vec![0.0; 6], identity(6)).unwrap();
        assert_relative_eq!(m6.max_density(), (2.0 * PI).powi(-3), max_relative = 1e-12);
        assert_eq!(m6.log_density(&[0.0; 6]).unwrap(), m6.log_norm_const());
    }

    #[test]
    fn dimension_mismatch() {
        let m = MvnModel::new(vec![0.0; 2], identity(2)).unwrap();
        assert!(m.density(&[0.0]).is_err());
        assert!(MvnModel::new(vec![0.0; 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn score_averaging() {
        let m = MvnModel::new(vec![0.0, 0.0], identity(2)).unwrap();
        let xs = [[1.0, 0.0], [-1.0, 0.5]];
        let mean = (m.density(&xs[0]).unwrap() + m.density(&xs[1]).unwrap()) / 2.0;
        assert_relative_eq!(m.avg_score(&xs).unwrap(), mean, max_relative = 1e-14);
        assert_relative_eq!(
            m.avg_score(&xs[..1]).unwrap(),
            m.density(&xs[0]).unwrap(),
            max_relative = 1e-15
        );
        let f = m.avg_log_score(&xs, Averaging::Features).unwrap();
        assert_relative_eq!(f, m.log_density(&[0.0, 0.25]).unwrap(), max_relative = 1e-15);
        let empty: [[f64; 2]; 0] = [];
        assert!(m.avg_score(&empty).is_err());
    }

    #[test]
    fn log_mean_exp_handles_extremes() {
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_relative_eq!(log_mean_exp(&[-1000.0, -1000.0]), -1000.0);
        assert_relative_eq!(log_mean_exp(&[0.0, 2f64.ln()]), 1.5f64.ln(), max_relative = 1e-15);
    }
}
