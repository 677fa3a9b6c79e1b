use crate::error::{Error, Result};
use crate::latent::{centroid, LatentCode};
use crate::objective::{adam_step, AdamState, ClusterObjective, Evaluation, LossConfig, Models};
use crate::synthesis::ImageTensor;

#[derive(Debug, Clone)]
pub struct Averaging {
    /// Starting point, the centroid of the member codes.
    pub initial: LatentCode,
    /// Code after the configured number of Adam iterations.
    pub code: LatentCode,
    /// Total loss at every iterate `w(0) .. w(T)`; length `T + 1`.
    pub trace: Vec<f64>,
    /// Loss terms and correspondences at the returned code.
    pub last: Evaluation,
}

/// Starts at the centroid of `codes` and runs `config.iterations` Adam steps
/// on the blended loss against the cluster's original `images`.
pub fn optimize_average(
    models: &Models,
    codes: &[LatentCode],
    images: &[ImageTensor],
    config: &LossConfig,
) -> Result<Averaging> {
    if codes.is_empty() || codes.len() != images.len() {
        return Err(Error::arg(format!(
            "cluster needs matching, non-empty codes and images ({} vs {})",
            codes.len(),
            images.len()
        )));
    }
    let w0 = centroid(codes)?;
    let objective = ClusterObjective::new(models, images, &w0, config)?;

    let mut w = w0.clone();
    let mut state = AdamState::new(w.data().len());
    let mut trace = Vec::with_capacity(config.iterations + 1);
    for _ in 0..config.iterations {
        let (eval, grad) = objective.gradient(&w).map_err(|e| Error::Divergence {
            trace: trace.clone(),
            hint: e.to_string(),
        })?;
        trace.push(eval.total);
        let (next_state, update) = adam_step(&state, &grad, &config.adam)?;
        state = next_state;
        w = match w.tensor().axpy(1.0, &update).and_then(LatentCode::new) {
            Ok(next) => next,
            Err(e) => {
                return Err(Error::Divergence {
                    trace,
                    hint: e.to_string(),
                })
            }
        };
    }
    let last = objective.evaluate(&w).map_err(|e| Error::Divergence {
        trace: trace.clone(),
        hint: e.to_string(),
    })?;
    trace.push(last.total);
    Ok(Averaging {
        initial: w0,
        code: w,
        trace,
        last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::AlignmentMode;
    use crate::numerics::Rng;
    use crate::synthesis::Profile;

    fn cluster(models: &Models, seed: u64, k: usize) -> (Vec<LatentCode>, Vec<ImageTensor>) {
        let mut rng = Rng::new(seed);
        let codes: Vec<_> = (0..k).map(|_| LatentCode::random(1, 32, &mut rng)).collect();
        let images = codes.iter().map(|c| models.generator.generate(c).unwrap()).collect();
        (codes, images)
    }

    #[test]
    fn zero_iterations_return_centroid() {
        let models = Models::toy(1, Profile::Toy16);
        let (codes, images) = cluster(&models, 2, 3);
        let cfg = LossConfig {
            iterations: 0,
            ..Default::default()
        };
        let avg = optimize_average(&models, &codes, &images, &cfg).unwrap();
        assert_eq!(avg.code, centroid(&codes).unwrap());
        assert_eq!(avg.trace.len(), 1);
    }

    #[test]
    fn single_member_at_optimum_stays_put() {
        let models = Models::toy(3, Profile::Toy16);
        let (codes, images) = cluster(&models, 4, 1);
        let cfg = LossConfig {
            lambda: 0.0,
            alignment: AlignmentMode::None,
            iterations: 10,
            ..Default::default()
        };
        let avg = optimize_average(&models, &codes, &images, &cfg).unwrap();
        assert!(avg.trace[0].abs() <= 1e-9);
        let drift = crate::latent::latent_distance(&avg.code, &avg.initial).unwrap();
        assert!(drift <= 1e-6, "drift {drift}");
    }

    #[test]
    fn loss_decreases_on_a_toy_cluster() {
        let models = Models::toy(5, Profile::Toy16);
        let (codes, images) = cluster(&models, 6, 5);
        let cfg = LossConfig::default();
        let avg = optimize_average(&models, &codes, &images, &cfg).unwrap();
        assert_eq!(avg.trace.len(), 51);
        assert!(avg.trace[50] < avg.trace[0], "{:?}", avg.trace);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let models = Models::toy(7, Profile::Toy16);
        let (codes, images) = cluster(&models, 8, 2);
        assert!(optimize_average(&models, &codes, &images[..1], &LossConfig::default()).is_err());
        assert!(optimize_average(&models, &[], &[], &LossConfig::default()).is_err());
    }
}
