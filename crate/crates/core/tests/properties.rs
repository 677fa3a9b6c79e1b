use ksalsa::alignment::{correspondence, AlignmentMode, Correspondence};
use ksalsa::clustering::{same_size_clustering_with, LeftoverPolicy};
use ksalsa::evaluation::{frechet_distance, GaussianFit};
use ksalsa::exec::Execution;
use ksalsa::latent::{centroid, latent_distance, LatentCode};
use ksalsa::numerics::{Rng, Tensor};
use ksalsa::style::StyleSet;
use proptest::prelude::*;

const ROWS: usize = 2;
const COLS: usize = 3;

fn code() -> impl Strategy<Value = LatentCode> {
    prop::collection::vec(-3.0f64..3.0, ROWS * COLS).prop_map(|d| LatentCode::from_vec(ROWS, COLS, d).unwrap())
}

fn codes(min: usize, max: usize) -> impl Strategy<Value = Vec<LatentCode>> {
    prop::collection::vec(code(), min..=max)
}

fn samples(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), n)
}

proptest! {
    #[test]
    fn centroid_ignores_member_order(cs in codes(1, 8), seed in any::<u64>()) {
        let mut shuffled = cs.clone();
        Rng::new(seed).shuffle(&mut shuffled);
        let a = centroid(&cs).unwrap();
        let b = centroid(&shuffled).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn latent_distance_is_a_metric(a in code(), b in code(), c in code()) {
        let ab = latent_distance(&a, &b).unwrap();
        let bc = latent_distance(&b, &c).unwrap();
        let ac = latent_distance(&a, &c).unwrap();
        prop_assert_eq!(latent_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, latent_distance(&b, &a).unwrap());
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn clustering_partitions_every_index(cs in codes(1, 24), k in 1usize..6) {
        prop_assume!(cs.len() >= k);
        let n = cs.len();
        let part = same_size_clustering_with(&cs, k, LeftoverPolicy::Truncate, Execution::Sequential).unwrap();
        part.validate(n).unwrap();
        prop_assert_eq!(part.clusters.len(), n / k);
        prop_assert_eq!(part.dropped.len(), n % k);
        let parallel = same_size_clustering_with(&cs, k, LeftoverPolicy::Truncate, Execution::Parallel).unwrap();
        prop_assert_eq!(parallel, part);
    }

    #[test]
    fn leftover_error_iff_remainder(cs in codes(1, 24), k in 1usize..6) {
        prop_assume!(cs.len() >= k);
        let result = same_size_clustering_with(&cs, k, LeftoverPolicy::Error, Execution::Sequential);
        prop_assert_eq!(result.is_err(), cs.len() % k != 0);
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_self(a in samples(12, 3), b in samples(12, 3)) {
        let fa = GaussianFit::fit(&a).unwrap();
        let fb = GaussianFit::fit(&b).unwrap();
        let ab = frechet_distance(&fa, &fb).unwrap();
        let ba = frechet_distance(&fb, &fa).unwrap();
        prop_assert!(ab >= -1e-9);
        prop_assert!((ab - ba).abs() <= 1e-7 * (1.0 + ab.abs()));
        prop_assert!(frechet_distance(&fa, &fa).unwrap().abs() <= 1e-7);
    }

    #[test]
    fn correspondence_indexes_target_patches(
        src in prop::collection::vec(-1.0f64..1.0, 9 * 4),
        dst in prop::collection::vec(-1.0f64..1.0, 9 * 4),
    ) {
        let s = StyleSet::from_tensor(Tensor::new(vec![9, 2, 2], src).unwrap()).unwrap();
        let t = StyleSet::from_tensor(Tensor::new(vec![9, 2, 2], dst).unwrap()).unwrap();
        let corr = correspondence(&s, &t, AlignmentMode::CosineArgmax).unwrap();
        prop_assert_eq!(corr.indices().len(), 9);
        prop_assert!(corr.indices().iter().all(|&j| j < 9));
        prop_assert_eq!(correspondence(&s, &t, AlignmentMode::None).unwrap(), Correspondence::identity(9));
        // a positive rescaling of the target keeps every cosine
        let scaled = correspondence(&s, &t.scaled(3.5).unwrap(), AlignmentMode::CosineArgmax).unwrap();
        prop_assert_eq!(scaled, corr);
    }
}
