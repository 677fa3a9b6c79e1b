//! Greedy same-size clustering over latent codes.
//!
//! Each round picks the remaining point with the largest mean distance to the
//! other remaining points, then adds its `k - 1` nearest remaining neighbours.
//! Both choices break ties toward the lowest original index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::latent::{latent_distance, LatentCode};

/// What to do with the `n mod k` points that cannot fill a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LeftoverPolicy {
    #[default]
    Error,
    Truncate,
}

impl FromStr for LeftoverPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(LeftoverPolicy::Error),
            "truncate" => Ok(LeftoverPolicy::Truncate),
            other => Err(Error::arg(format!(
                "unknown leftover policy {other:?} (expected error or truncate)"
            ))),
        }
    }
}

impl fmt::Display for LeftoverPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LeftoverPolicy::Error => "error",
            LeftoverPolicy::Truncate => "truncate",
        })
    }
}

/// Clusters of exactly `k` indices, seed first, then neighbours by distance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub k: usize,
    pub clusters: Vec<Vec<usize>>,
    pub dropped: Vec<usize>,
}

impl ClusterPartition {
    /// Checks sizes, disjointness and coverage of `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (c, members) in self.clusters.iter().enumerate() {
            if members.len() != self.k {
                return Err(Error::arg(format!(
                    "cluster {c} has {} members, expected {}",
                    members.len(),
                    self.k
                )));
            }
        }
        for &i in self.clusters.iter().flatten().chain(&self.dropped) {
            if i >= n || seen[i] {
                return Err(Error::arg(format!("index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::arg(format!("index {missing} is not assigned")));
        }
        Ok(())
    }
}

/// Full symmetric distance matrix, row-major `n x n`.
pub fn distance_matrix(codes: &[LatentCode], exec: Execution) -> Result<Vec<f64>> {
    let n = codes.len();
    let rows = exec.try_map_range(n, |i| {
        codes
            .iter()
            .map(|c| latent_distance(&codes[i], c))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn same_size_clustering(codes: &[LatentCode], k: usize, policy: LeftoverPolicy) -> Result<ClusterPartition> {
    same_size_clustering_with(codes, k, policy, Execution::default())
}

pub fn same_size_clustering_with(
    codes: &[LatentCode],
    k: usize,
    policy: LeftoverPolicy,
    exec: Execution,
) -> Result<ClusterPartition> {
    let n = codes.len();
    if k == 0 {
        return Err(Error::arg("k must be >= 1"));
    }
    if n < k {
        return Err(Error::arg(format!("need at least k = {k} codes, got {n}")));
    }
    let remainder = n % k;
    if remainder != 0 && policy == LeftoverPolicy::Error {
        return Err(Error::Leftover { n, k, remainder });
    }
    let dist = distance_matrix(codes, exec)?;
    let d = |i: usize, j: usize| dist[i * n + j];

    let mut remaining: Vec<usize> = (0..n).collect();
    let mut clusters = Vec::with_capacity(n / k);
    while remaining.len() >= k {
        // Mean over the other remaining points. The common divisor does not
        // change the argmax, so compare plain sums.
        let sums: Vec<f64> = remaining
            .iter()
            .map(|&i| remaining.iter().map(|&j| d(i, j)).sum())
            .collect();
        let mut best = 0;
        for (pos, &s) in sums.iter().enumerate().skip(1) {
            if s > sums[best] {
                best = pos;
            }
        }
        let seed = remaining[best];
        let mut others: Vec<usize> = remaining.iter().copied().filter(|&i| i != seed).collect();
        others.sort_by(|&a, &b| d(seed, a).total_cmp(&d(seed, b)).then(a.cmp(&b)));
        let mut members = Vec::with_capacity(k);
        members.push(seed);
        members.extend_from_slice(&others[..k - 1]);

        remaining.retain(|i| !members.contains(i));
        clusters.push(members);
    }
    Ok(ClusterPartition {
        k,
        clusters,
        dropped: remaining,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn points(coords: &[(f64, f64)]) -> Vec<LatentCode> {
        coords
            .iter()
            .map(|&(x, y)| LatentCode::from_vec(1, 2, vec![x, y]).unwrap())
            .collect()
    }

    #[test]
    fn n_equals_k_is_one_cluster() {
        let codes = points(&[(0.0, 0.0), (1.0, 0.0), (5.0, 5.0)]);
        let p = same_size_clustering(&codes, 3, LeftoverPolicy::Error).unwrap();
        assert_eq!(p.clusters.len(), 1);
        let mut c = p.clusters[0].clone();
        c.sort();
        assert_eq!(c, vec![0, 1, 2]);
    }

    #[test]
    fn k_one_gives_singletons_in_outlier_order() {
        let codes = points(&[(0.0, 0.0), (1.0, 0.0), (10.0, 0.0)]);
        let p = same_size_clustering(&codes, 1, LeftoverPolicy::Error).unwrap();
        // 2 is farthest from the rest; then {0,1} tie at distance 1 -> lowest index
        assert_eq!(p.clusters, vec![vec![2], vec![0], vec![1]]);
    }

    #[test]
    fn two_separated_triples() {
        let codes = points(&[(0.0, 0.0), (10.0, 10.0), (0.5, 0.2), (10.3, 9.8), (0.1, 0.6), (9.7, 10.4)]);
        let p = same_size_clustering(&codes, 3, LeftoverPolicy::Error).unwrap();
        let mut sets: Vec<Vec<usize>> = p
            .clusters
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort();
                c
            })
            .collect();
        sets.sort();
        assert_eq!(sets, vec![vec![0, 2, 4], vec![1, 3, 5]]);
    }

    #[test]
    fn leftover_policies() {
        let mut rng = Rng::new(1);
        let codes: Vec<_> = (0..20).map(|_| LatentCode::random(1, 4, &mut rng)).collect();
        match same_size_clustering(&codes, 7, LeftoverPolicy::Error) {
            Err(Error::Leftover { remainder, .. }) => assert_eq!(remainder, 6),
            other => panic!("unexpected {other:?}"),
        }
        let p = same_size_clustering(&codes, 7, LeftoverPolicy::Truncate).unwrap();
        assert_eq!(p.clusters.len(), 2);
        assert_eq!(p.dropped.len(), 6);
        p.validate(20).unwrap();
    }

    #[test]
    fn too_few_codes() {
        let codes = points(&[(0.0, 0.0)]);
        assert!(same_size_clustering(&codes, 2, LeftoverPolicy::Truncate).is_err());
        assert!(same_size_clustering(&codes, 0, LeftoverPolicy::Truncate).is_err());
    }

    #[test]
    fn validate_catches_bad_partitions() {
        let p = ClusterPartition {
            k: 2,
            clusters: vec![vec![0, 1], vec![1, 2]],
            dropped: vec![],
        };
        assert!(p.validate(3).is_err());
    }
}
