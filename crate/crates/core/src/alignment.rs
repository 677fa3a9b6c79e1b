//! Patch correspondence between a source style set and a target style set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::style::StyleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AlignmentMode {
    /// Each source patch matches the target patch of highest cosine similarity.
    #[default]
    #[serde(rename = "cosine-argmax")]
    CosineArgmax,
    /// Patch `j` is compared with patch `j`.
    #[serde(rename = "none")]
    None,
}

impl FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine-argmax" => Ok(AlignmentMode::CosineArgmax),
            "none" => Ok(AlignmentMode::None),
            other => Err(Error::arg(format!(
                "unknown alignment mode {other:?} (expected cosine-argmax or none)"
            ))),
        }
    }
}

impl fmt::Display for AlignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignmentMode::CosineArgmax => "cosine-argmax",
            AlignmentMode::None => "none",
        })
    }
}

/// Target patch index for every source patch. Many-to-one is allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Correspondence(pub Vec<usize>);

impl Correspondence {
    pub fn identity(p: usize) -> Self {
        Self((0..p).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

fn check_layout(a: &StyleSet, b: &StyleSet) -> Result<()> {
    if !a.same_layout(b) {
        return Err(Error::arg(format!(
            "style sets differ in layout: {:?} vs {:?}",
            a.tensor().dims(),
            b.tensor().dims()
        )));
    }
    Ok(())
}

/// Rows of unit-normalized Gram vectors; zero rows stay zero.
fn unit_rows(s: &StyleSet) -> Vec<f64> {
    let mut out = s.tensor().data().to_vec();
    let cc = s.channels() * s.channels();
    for row in out.chunks_exact_mut(cc) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// `p x p` matrix of cosine similarities between `vec(a_j)` and `vec(b_j')`,
/// computed as a product of row-normalized matrices.
pub fn cosine_matrix(a: &StyleSet, b: &StyleSet) -> Result<Tensor> {
    check_layout(a, b)?;
    let p = a.patches();
    let cc = a.channels() * a.channels();
    let ua = unit_rows(a);
    let ub = unit_rows(b);
    let mut out = vec![0.0; p * p];
    for (j, ra) in ua.chunks_exact(cc).enumerate() {
        for (jp, rb) in ub.chunks_exact(cc).enumerate() {
            out[j * p + jp] = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![p, p], out)
}

/// Index of the row maximum, lowest index on ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn correspondence(source: &StyleSet, target: &StyleSet, mode: AlignmentMode) -> Result<Correspondence> {
    check_layout(source, target)?;
    let p = source.patches();
    match mode {
        AlignmentMode::None => Ok(Correspondence::identity(p)),
        AlignmentMode::CosineArgmax => {
            let cos = cosine_matrix(source, target)?;
            Ok(Correspondence(cos.data().chunks_exact(p).map(argmax).collect()))
        }
    }
}

/// Smallest gap between the best and runner-up cosine over all source patches.
/// A tiny margin means the argmax may flip under small perturbations.
pub fn alignment_margin(source: &StyleSet, target: &StyleSet) -> Result<f64> {
    let cos = cosine_matrix(source, target)?;
    let p = source.patches();
    if p < 2 {
        return Ok(f64::INFINITY);
    }
    Ok(cos
        .data()
        .chunks_exact(p)
        .map(|row| {
            let best = argmax(row);
            let second = row
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != best)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            row[best] - second
        })
        .fold(f64::INFINITY, f64::min))
}
