//! Latent codes in the generator's extended space: an `L x d` matrix per record.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{codec, seeded_normal, Dtype, Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(Tensor);

impl LatentCode {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.dims().len() != 2 {
            return Err(Error::arg(format!(
                "latent code must be L x d, got dims {:?}",
                tensor.dims()
            )));
        }
        Ok(Self(tensor))
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::new(vec![rows, cols], data)?)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Tensor::zeros(&[rows, cols]))
    }

    pub fn random(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        Self(seeded_normal(rng, &[rows, cols], 0.0, 1.0).expect("unit normal"))
    }

    pub fn rows(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn cols(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn negate(&self) -> Self {
        Self(self.0.scale(-1.0).expect("finite"))
    }
}

fn check_shapes(a: &LatentCode, b: &LatentCode) -> Result<()> {
    if a.tensor().dims() != b.tensor().dims() {
        return Err(Error::arg(format!(
            "latent shape mismatch {:?} vs {:?}",
            a.tensor().dims(),
            b.tensor().dims()
        )));
    }
    Ok(())
}

/// Elementwise mean of the codes, the Euclidean centroid of a cluster.
pub fn centroid(codes: &[LatentCode]) -> Result<LatentCode> {
    let first = codes
        .first()
        .ok_or_else(|| Error::arg("centroid of an empty list"))?;
    let mut acc = vec![0.0; first.data().len()];
    for code in codes {
        check_shapes(first, code)?;
        for (a, v) in acc.iter_mut().zip(code.data()) {
            *a += v;
        }
    }
    let k = codes.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    LatentCode::from_vec(first.rows(), first.cols(), acc)
}

pub fn latent_distance(a: &LatentCode, b: &LatentCode) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `count` noisy views of `code`, each with i.i.d. `N(0, scale^2)` noise.
pub fn augment(code: &LatentCode, scale: f64, count: usize, rng: &mut Rng) -> Result<Vec<LatentCode>> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::arg(format!("augmentation scale must be >= 0, got {scale}")));
    }
    if count == 0 {
        return Err(Error::arg("augmentation count must be >= 1"));
    }
    (0..count)
        .map(|_| {
            let noise = seeded_normal(rng, code.tensor().dims(), 0.0, scale)?;
            LatentCode::new(code.tensor().axpy(1.0, &noise)?)
        })
        .collect()
}

/// Sidecar metadata written next to each latent `.kstn` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSidecar {
    #[serde(rename = "L")]
    pub rows: usize,
    pub d: usize,
    pub source_id: u64,
}

/// Writes `<stem>.kstn` and `<stem>.json` into `dir`.
pub fn save_latent(dir: &Path, stem: &str, code: &LatentCode, source_id: u64) -> Result<()> {
    codec::save_tensor(dir.join(format!("{stem}.kstn")), code.tensor(), Dtype::F64)?;
    let sidecar = LatentSidecar {
        rows: code.rows(),
        d: code.cols(),
        source_id,
    };
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string(&sidecar).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_latent(dir: &Path, stem: &str) -> Result<(LatentCode, LatentSidecar)> {
    let code = LatentCode::new(codec::load_tensor(dir.join(format!("{stem}.kstn")))?)?;
    let path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: LatentSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if sidecar.rows != code.rows() || sidecar.d != code.cols() {
        return Err(Error::Corruption(format!(
            "sidecar says {}x{}, tensor is {}x{}",
            sidecar.rows,
            sidecar.d,
            code.rows(),
            code.cols()
        )));
    }
    Ok((code, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise_mean(codes: &[LatentCode]) -> Vec<f64> {
        // pairwise (tree) summation, independent of the sequential loop above
        fn tree(vals: &[f64]) -> f64 {
            match vals.len() {
                0 => 0.0,
                1 => vals[0],
                n => tree(&vals[..n / 2]) + tree(&vals[n / 2..]),
            }
        }
        let len = codes[0].data().len();
        (0..len)
            .map(|i| {
                let col: Vec<f64> = codes.iter().map(|c| c.data()[i]).collect();
                tree(&col) / codes.len() as f64
            })
            .collect()
    }

    #[test]
    fn centroid_of_identical_codes() {
        let w = LatentCode::random(1, 8, &mut Rng::new(1));
        let c = centroid(&[w.clone(), w.clone(), w.clone()]).unwrap();
        for (a, b) in c.data().iter().zip(w.data()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn centroid_of_opposites_is_zero() {
        let w = LatentCode::random(2, 4, &mut Rng::new(2));
        let c = centroid(&[w.clone(), w.negate()]).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centroid_matches_pairwise_oracle() {
        let mut rng = Rng::new(3);
        let codes: Vec<_> = (0..3).map(|_| LatentCode::random(1, 32, &mut rng)).collect();
        let c = centroid(&codes).unwrap();
        for (a, b) in c.data().iter().zip(pairwise_mean(&codes)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn centroid_errors() {
        assert!(centroid(&[]).is_err());
        let a = LatentCode::zeros(1, 2);
        let b = LatentCode::zeros(1, 3);
        assert!(centroid(&[a, b]).is_err());
    }

    #[test]
    fn distance_examples() {
        let w = LatentCode::random(1, 5, &mut Rng::new(4));
        assert_eq!(latent_distance(&w, &w).unwrap(), 0.0);
        let a = LatentCode::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let b = LatentCode::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        assert!((latent_distance(&a, &b).unwrap() - 5.0).abs() < 1e-15);
        assert!(latent_distance(&a, &LatentCode::zeros(2, 1)).is_err());
    }

    #[test]
    fn distance_matches_brute_force() {
        let mut rng = Rng::new(5);
        let a = LatentCode::random(1, 32, &mut rng);
        let b = LatentCode::random(1, 32, &mut rng);
        let mut ss = 0.0;
        for i in 0..32 {
            let d = a.data()[i] - b.data()[i];
            ss += d * d;
        }
        assert!((latent_distance(&a, &b).unwrap() - ss.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn zero_scale_augment_replicates() {
        let w = LatentCode::random(1, 32, &mut Rng::new(6));
        let views = augment(&w, 0.0, 5, &mut Rng::new(7)).unwrap();
        assert_eq!(views.len(), 5);
        assert!(views.iter().all(|v| v == &w));
        assert!(augment(&w, -0.1, 5, &mut Rng::new(7)).is_err());
        assert!(augment(&w, 0.1, 0, &mut Rng::new(7)).is_err());
    }

    #[test]
    fn augment_offset_magnitude_monte_carlo() {
        // E|noise| ~ scale * sqrt(L*d) for large L*d; the exact chi mean
        // for n = 32 is scale * sqrt(2) * Gamma(16.5) / Gamma(16) ~ 0.99223 * scale * sqrt(32).
        let w = LatentCode::random(1, 32, &mut Rng::new(8));
        let views = augment(&w, 0.1, 2000, &mut Rng::new(7)).unwrap();
        let mean_offset: f64 = views
            .iter()
            .map(|v| latent_distance(v, &w).unwrap())
            .sum::<f64>()
            / views.len() as f64;
        let expected = 0.1 * (32f64).sqrt();
        assert!((mean_offset - expected).abs() / expected < 0.02, "{mean_offset} vs {expected}");
    }

    #[test]
    fn latent_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = LatentCode::random(1, 32, &mut Rng::new(9));
        save_latent(dir.path(), "r0", &w, 17).unwrap();
        let (back, meta) = load_latent(dir.path(), "r0").unwrap();
        assert_eq!(back, w);
        assert_eq!(meta, LatentSidecar { rows: 1, d: 32, source_id: 17 });
        let json = fs::read_to_string(dir.path().join("r0.json")).unwrap();
        assert_eq!(json, r#"{"L":1,"d":32,"source_id":17}"#);
    }
}
