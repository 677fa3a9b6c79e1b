use crate::error::{Error, Result};

/// Majority grade with ties going to the higher grade, plus the full
/// histogram over `0..=max_label`.
pub fn aggregate_labels(labels: &[u8], max_label: u8) -> Result<(u8, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::arg("cannot aggregate an empty label list"));
    }
    let mut histogram = vec![0usize; max_label as usize + 1];
    for &l in labels {
        if l > max_label {
            return Err(Error::arg(format!("label {l} exceeds max {max_label}")));
        }
        histogram[l as usize] += 1;
    }
    let mut grade = 0;
    for (g, &count) in histogram.iter().enumerate() {
        if count >= histogram[grade] {
            grade = g;
        }
    }
    Ok((grade as u8, histogram))
}
