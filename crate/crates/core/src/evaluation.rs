//! Fidelity and privacy harnesses.
//!
//! Fréchet distance between Gaussian fits of feature embeddings, and top-k
//! membership inference where an attacker ranks a candidate pool against each
//! released average.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{DiffOp, Rng};
use crate::objective::ContentEncoder;
use crate::pipeline::{LabeledDataset, Release};
use crate::style::FeatureExtractor;
use crate::synthesis::ImageTensor;

/// Added to covariance diagonals when a fit has no more samples than dimensions.
pub const RIDGE: f64 = 1e-6;
/// Most negative eigenvalue tolerated in a covariance before it is rejected.
pub const EIGEN_FLOOR: f64 = -1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} has non-finite entries")))
    }
}

impl GaussianFit {
    /// Symmetrizes `cov` and rejects it if an eigenvalue is below
    /// [`EIGEN_FLOOR`].
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let e = mean.len();
        if e == 0 || cov.len() != e * e {
            return Err(Error::arg(format!(
                "Gaussian fit needs a non-empty mean and an e x e covariance (e = {e}, got {} entries)",
                cov.len()
            )));
        }
        let cov = symmetrize(&DMatrix::from_row_slice(e, e, &cov));
        check_finite(&cov, "covariance")?;
        let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min < EIGEN_FLOOR {
            return Err(Error::arg(format!("covariance is not positive semidefinite (eigenvalue {min:e})")));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
        })
    }

    /// Sample mean and unbiased covariance of `samples`, plus [`RIDGE`] on
    /// the diagonal when `n <= e`.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        let e = samples.first().map(|s| s.len()).unwrap_or(0);
        if n < 2 || e == 0 || samples.iter().any(|s| s.len() != e) {
            return Err(Error::arg(format!("need at least 2 equal-length samples to fit, got {n}")));
        }
        let x = DMatrix::from_fn(n, e, |i, j| samples[i][j]);
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, e, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        if n <= e {
            for i in 0..e {
                cov[(i, i)] += RIDGE;
            }
        }
        Self::new(mean.as_slice().to_vec(), cov.as_slice().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Row-major covariance.
    pub fn covariance(&self) -> Vec<f64> {
        self.cov.transpose().as_slice().to_vec()
    }
}

/// Square root of a symmetric PSD matrix; negative eigenvalues clamp to 0.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(m, "matrix")?;
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::arg(format!("fits differ in dimension: {} vs {}", a.dim(), b.dim())));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let ra = psd_sqrt(&a.cov)?;
    let inner = symmetrize(&(&ra * &b.cov * &ra));
    let cross = psd_sqrt(&inner)?.trace();
    let d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::Numeric("Fréchet distance is not finite".into()));
    }
    Ok(d)
}

/// Global-average-pooled extractor features, one `c`-vector per image.
pub fn pooled_features(extractor: &FeatureExtractor, images: &[ImageTensor], exec: Execution) -> Result<Vec<Vec<f64>>> {
    exec.try_map(images, |img| {
        let fmap = extractor.extract(img)?;
        let c = fmap.channels();
        let mut pooled = vec![0.0; c];
        for px in fmap.tensor().data().chunks_exact(c) {
            pooled.iter_mut().zip(px).for_each(|(a, v)| *a += v);
        }
        let count = (fmap.side() * fmap.side()) as f64;
        pooled.iter_mut().for_each(|a| *a /= count);
        Ok(pooled)
    })
}

/// Fréchet distance between the pooled-feature fits of two image sets.
pub fn image_frechet(
    extractor: &FeatureExtractor,
    real: &[ImageTensor],
    synthetic: &[ImageTensor],
    exec: Execution,
) -> Result<f64> {
    let a = GaussianFit::fit(&pooled_features(extractor, real, exec)?)?;
    let b = GaussianFit::fit(&pooled_features(extractor, synthetic, exec)?)?;
    frechet_distance(&a, &b)
}

/// A pool record. `cluster` is ground truth and is never shown to a scorer.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: u64,
    pub image: ImageTensor,
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct MiaInstance {
    pub k: usize,
    /// Released averages keyed by cluster id.
    pub averages: Vec<(usize, ImageTensor)>,
    pub pool: Vec<Candidate>,
}

impl MiaInstance {
    pub fn validate(&self) -> Result<()> {
        if self.averages.is_empty() || self.k == 0 {
            return Err(Error::arg("membership inference needs at least one cluster and k >= 1"));
        }
        let mut counts: HashMap<usize, usize> = self.averages.iter().map(|(c, _)| (*c, 0)).collect();
        if counts.len() != self.averages.len() {
            return Err(Error::arg("duplicate cluster id among averages"));
        }
        let mut ids = std::collections::HashSet::new();
        for cand in &self.pool {
            if !ids.insert(cand.id) {
                return Err(Error::arg(format!("duplicate candidate id {}", cand.id)));
            }
            if let Some(c) = cand.cluster {
                *counts
                    .get_mut(&c)
                    .ok_or_else(|| Error::arg(format!("candidate {} names unknown cluster {c}", cand.id)))? += 1;
            }
        }
        if let Some((c, n)) = counts.iter().find(|(_, &n)| n != self.k) {
            return Err(Error::arg(format!("cluster {c} has {n} members in the pool, expected {}", self.k)));
        }
        if self.pool.iter().all(|c| c.cluster.is_some()) {
            return Err(Error::arg("pool has no non-members"));
        }
        Ok(())
    }
}

/// Attacker score for "candidate is a member of the cluster behind `average`".
pub trait Scorer: Sync {
    fn score(&self, cluster: usize, average: &ImageTensor, id: u64, candidate: &ImageTensor) -> Result<f64>;
}

/// Cosine similarity between content-encoder embeddings.
#[derive(Debug, Clone)]
pub struct CosineScorer {
    encoder: ContentEncoder,
}

impl CosineScorer {
    pub fn new(encoder: ContentEncoder) -> Self {
        Self { encoder }
    }
}

impl Scorer for CosineScorer {
    fn score(&self, _cluster: usize, average: &ImageTensor, _id: u64, candidate: &ImageTensor) -> Result<f64> {
        if average.tensor().dims() != candidate.tensor().dims() {
            return Err(Error::arg("average and candidate differ in shape"));
        }
        let a = self.encoder.forward(average.tensor())?;
        let b = self.encoder.forward(candidate.tensor())?;
        let denom = a.norm() * b.norm();
        Ok(if denom > 0.0 { a.dot(&b) / denom } else { 0.0 })
    }
}

/// Pool ids by descending score, lowest id first on ties.
pub fn rank_candidates(cluster: usize, average: &ImageTensor, pool: &[Candidate], scorer: &dyn Scorer) -> Result<Vec<u64>> {
    if pool.is_empty() {
        return Err(Error::arg("candidate pool is empty"));
    }
    let mut scored = pool
        .iter()
        .map(|c| {
            if c.image.tensor().dims() != average.tensor().dims() {
                return Err(Error::arg(format!("candidate {} differs in shape from the average", c.id)));
            }
            let s = scorer.score(cluster, average, c.id, &c.image)?;
            if s.is_nan() {
                return Err(Error::non_finite("membership scoring", format!("candidate {}", c.id)));
            }
            Ok((s, c.id))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// Mean over clusters of the fraction of the top `k` ranked candidates that
/// are true members of that cluster.
pub fn mia_topk_accuracy(instance: &MiaInstance, scorer: &dyn Scorer, exec: Execution) -> Result<f64> {
    instance.validate()?;
    let truth: HashMap<u64, Option<usize>> = instance.pool.iter().map(|c| (c.id, c.cluster)).collect();
    let k = instance.k;
    let per_cluster = exec.try_map(&instance.averages, |(cluster, avg)| {
        let ranking = rank_candidates(*cluster, avg, &instance.pool, scorer)?;
        let hits = ranking
            .iter()
            .take(k)
            .filter(|id| truth[id] == Some(*cluster))
            .count();
        Ok(hits as f64 / k as f64)
    })?;
    Ok(per_cluster.iter().sum::<f64>() / per_cluster.len() as f64)
}

/// Stream used to shuffle records into members and non-members.
pub const SPLIT_STREAM: u64 = 77;

/// Seeded even split of `dataset` into a member half (released) and a
/// non-member half (held out).
pub fn split_members(dataset: &LabeledDataset, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if dataset.len() < 2 {
        return Err(Error::arg("need at least two records to split"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    Rng::new(seed).split(SPLIT_STREAM).shuffle(&mut order);
    let (a, b) = order.split_at(dataset.len() / 2);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        LabeledDataset::new(
            dataset.profile.clone(),
            dataset.max_label,
            idx.iter().map(|&i| dataset.records[i].clone()).collect(),
        )
    };
    Ok((pick(a)?, pick(b)?))
}

/// Instance whose pool is every member and non-member record, with each
/// member tagged by the cluster it was released in.
pub fn mia_instance(members: &LabeledDataset, release: &Release, non_members: &LabeledDataset) -> MiaInstance {
    let mut cluster_of = vec![None; members.len()];
    for (c, idx) in release.partition.clusters.iter().enumerate() {
        for &i in idx {
            cluster_of[i] = Some(c);
        }
    }
    let pool = members
        .records
        .iter()
        .zip(cluster_of)
        .map(|(r, cluster)| Candidate {
            id: r.id,
            image: r.image.clone(),
            cluster,
        })
        .chain(non_members.records.iter().map(|r| Candidate {
            id: r.id,
            image: r.image.clone(),
            cluster: None,
        }))
        .collect();
    MiaInstance {
        k: release.manifest.k,
        averages: release.images.iter().cloned().enumerate().collect(),
        pool,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frechet: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mia_topk: Option<f64>,
    pub k: usize,
    pub method: Method,
    pub n_clusters: usize,
    pub seeds: ReportSeeds,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSeeds {
    /// Seed of the models and the release.
    pub run: u64,
    /// Seed of the member / non-member split, when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<u64>,
}
