//! PCA by power iteration with deflation, for the k-Same-PCA baseline.

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::synthesis::ImageTensor;

const MAX_SWEEPS: usize = 100_000;
/// Residual `|Mv - lambda v|` accepted, relative to `trace(M)`.
const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `r` orthonormal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each direction (`n - 1` denominator).
    pub explained_variance: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Removes the components of `v` along each (unit) vector in `basis`.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

/// Top-`r` eigenpairs of a symmetric `m x m` matrix (row-major).
fn top_eigenpairs(matrix: &[f64], m: usize, r: usize, seed: u64) -> Result<Vec<(f64, Vec<f64>)>> {
    let trace: f64 = (0..m).map(|i| matrix[i * m + i]).sum();
    let tol = RESIDUAL_TOL * trace.abs().max(f64::MIN_POSITIVE);
    let root = Rng::new(seed);
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut pairs = Vec::with_capacity(r);
    let matvec = |v: &[f64]| -> Vec<f64> { matrix.chunks_exact(m).map(|row| dot(row, v)).collect() };

    for comp in 0..r {
        let mut rng = root.split(comp as u64);
        let mut v: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
        orthogonalize(&mut v, &found);
        normalize(&mut v);
        let mut converged = None;
        for _ in 0..MAX_SWEEPS {
            let mut y = matvec(&v);
            orthogonalize(&mut y, &found);
            let lambda = dot(&v, &y);
            let residual = y
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - lambda * b).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= tol {
                converged = Some(lambda);
                break;
            }
            if normalize(&mut y) == 0.0 {
                converged = Some(0.0);
                break;
            }
            v = y;
        }
        let lambda = converged.ok_or(Error::Convergence {
            component: comp,
            sweeps: MAX_SWEEPS,
        })?;
        found.push(v.clone());
        pairs.push((lambda, v));
    }
    Ok(pairs)
}

/// Fits `r` principal directions to the rows of `samples` (all equal length).
/// Works in the smaller of the sample-Gram and covariance spaces.
pub fn fit_pca(samples: &[&[f64]], r: usize, seed: u64) -> Result<PcaModel> {
    let n = samples.len();
    let dim = samples.first().map(|s| s.len()).unwrap_or(0);
    if n < 2 || dim == 0 {
        return Err(Error::arg(format!("PCA needs at least 2 non-empty samples, got {n}")));
    }
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::arg("PCA samples differ in length"));
    }
    if r == 0 || r > (n - 1).min(dim) {
        return Err(Error::arg(format!(
            "PCA rank r = {r} out of range 1..={}",
            (n - 1).min(dim)
        )));
    }
    let mut mean = vec![0.0; dim];
    for s in samples {
        mean.iter_mut().zip(s.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let mut components: Vec<Vec<f64>>;
    let eigenvalues: Vec<f64>;
    if n <= dim {
        // Gram space: X X^T, directions are X^T u / |X^T u|.
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g = dot(&centered[i], &centered[j]);
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let pairs = top_eigenpairs(&gram, n, r, seed)?;
        components = Vec::with_capacity(r);
        let mut values = Vec::with_capacity(r);
        for (comp, (lambda, u)) in pairs.into_iter().enumerate() {
            let mut v = vec![0.0; dim];
            for (row, &ui) in centered.iter().zip(&u) {
                v.iter_mut().zip(row).for_each(|(acc, x)| *acc += ui * x);
            }
            if normalize(&mut v) == 0.0 {
                return Err(Error::Numeric(format!(
                    "data rank is below r = {r} (component {comp} has zero variance)"
                )));
            }
            components.push(v);
            values.push(lambda);
        }
        eigenvalues = values;
    } else {
        let mut cov = vec![0.0; dim * dim];
        for row in &centered {
            for a in 0..dim {
                for b in a..dim {
                    cov[a * dim + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                cov[a * dim + b] = cov[b * dim + a];
            }
        }
        let pairs = top_eigenpairs(&cov, dim, r, seed)?;
        eigenvalues = pairs.iter().map(|p| p.0).collect();
        components = pairs.into_iter().map(|p| p.1).collect();
    }
    // re-orthonormalize; residual tolerance leaves O(tol) overlaps in Gram space
    for i in 0..components.len() {
        let (done, rest) = components.split_at_mut(i);
        orthogonalize(&mut rest[0], done);
        normalize(&mut rest[0]);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: eigenvalues.iter().map(|l| l / (n - 1) as f64).collect(),
    })
}

pub fn fit_pca_images(images: &[ImageTensor], r: usize, seed: u64) -> Result<PcaModel> {
    let rows: Vec<&[f64]> = images.iter().map(|i| i.data()).collect();
    fit_pca(&rows, r, seed)
}

impl PcaModel {
    pub fn rank(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::arg(format!(
                "PCA expects {} values, got {}",
                self.mean.len(),
                x.len()
            )));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.iter().map(|c| dot(c, &centered)).collect())
    }

    pub fn reconstruct(&self, coefs: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, comp) in coefs.iter().zip(&self.components) {
            out.iter_mut().zip(comp).for_each(|(o, v)| *o += c * v);
        }
        out
    }

    /// Projects every member, averages the coefficients, reconstructs.
    pub fn average(&self, members: &[&[f64]]) -> Result<Vec<f64>> {
        if members.is_empty() {
            return Err(Error::arg("PCA average of an empty cluster"));
        }
        let mut acc = vec![0.0; self.rank()];
        for m in members {
            acc.iter_mut().zip(self.project(m)?).for_each(|(a, c)| *a += c);
        }
        acc.iter_mut().for_each(|a| *a /= members.len() as f64);
        Ok(self.reconstruct(&acc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| (0..d).map(|_| rng.standard_normal()).collect()).collect()
    }

    #[test]
    fn rank_one_line() {
        let dir = [0.6, 0.0, -0.8];
        let rows: Vec<Vec<f64>> = [-2.0, -0.5, 0.3, 1.1, 4.0]
            .iter()
            .map(|t| vec![1.0 + t * dir[0], 2.0 + t * dir[1], -1.0 + t * dir[2]])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let model = fit_pca(&refs, 1, 1).unwrap();
        let cos = dot(&model.components[0], &dir).abs();
        assert!(cos >= 1.0 - 1e-6, "cos {cos}");
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        for (n, d) in [(6, 20), (12, 5)] {
            let rows = random_rows(2, n, d);
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let r = (n - 1).min(d);
            let model = fit_pca(&refs, r, 3).unwrap();
            for row in &rows {
                let back = model.reconstruct(&model.project(row).unwrap());
                for (a, b) in back.iter().zip(row) {
                    assert!((a - b).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn directions_are_orthonormal() {
        let rows = random_rows(4, 10, 30);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let model = fit_pca(&refs, 9, 5).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&model.components[i], &model.components[j]) - expected).abs() <= 1e-8);
            }
        }
        assert!(model.explained_variance.windows(2).all(|w| w[0] >= w[1] - 1e-9));
    }

    #[test]
    fn rank_out_of_range() {
        let rows = random_rows(6, 4, 3);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert!(fit_pca(&refs, 0, 1).is_err());
        assert!(fit_pca(&refs, 4, 1).is_err());
        assert!(fit_pca(&refs, 3, 1).is_ok());
    }

    #[test]
    fn deterministic_for_seed() {
        let rows = random_rows(7, 8, 12);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert_eq!(fit_pca(&refs, 3, 9).unwrap(), fit_pca(&refs, 3, 9).unwrap());
    }
}
