use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{codec, Dtype};
use crate::synthesis::ImageTensor;

pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub image: ImageTensor,
    /// Severity grade in `0..=max_label`.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub profile: String,
    pub max_label: u8,
    pub records: Vec<Record>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordEntry {
    id: u64,
    label: u8,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetIndex {
    profile: String,
    max_label: u8,
    records: Vec<RecordEntry>,
}

impl LabeledDataset {
    pub fn new(profile: impl Into<String>, max_label: u8, records: Vec<Record>) -> Result<Self> {
        let ds = Self {
            profile: profile.into(),
            max_label,
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .records
            .first()
            .ok_or_else(|| Error::arg("dataset has no records"))?;
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id) {
                return Err(Error::arg(format!("duplicate record id {}", r.id)));
            }
            if r.image.tensor().dims() != first.image.tensor().dims() {
                return Err(Error::arg(format!("record {} has a different image shape", r.id)));
            }
            if r.label > self.max_label {
                return Err(Error::arg(format!(
                    "record {} has label {} above max {}",
                    r.id, r.label, self.max_label
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn images(&self) -> Vec<ImageTensor> {
        self.records.iter().map(|r| r.image.clone()).collect()
    }

    /// Writes `dataset.json` plus one KSTN image per record into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let file = format!("record_{:06}.kstn", r.id);
            codec::save_tensor(dir.join(&file), r.image.tensor(), Dtype::F64)?;
            entries.push(RecordEntry {
                id: r.id,
                label: r.label,
                file,
            });
        }
        let index = DatasetIndex {
            profile: self.profile.clone(),
            max_label: self.max_label,
            records: entries,
        };
        let path = dir.join(DATASET_FILE);
        let text = serde_json::to_string_pretty(&index).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: DatasetIndex = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let records = index
            .records
            .into_iter()
            .map(|e| {
                Ok(Record {
                    id: e.id,
                    label: e.label,
                    image: ImageTensor::new(codec::load_tensor(dir.join(&e.file))?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(index.profile, index.max_label, records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn img(v: f64) -> ImageTensor {
        ImageTensor::new(Tensor::filled(&[3, 4, 4], v)).unwrap()
    }

    #[test]
    fn validation() {
        let ok = LabeledDataset::new(
            "toy-16",
            4,
            vec![
                Record { id: 0, image: img(0.0), label: 1 },
                Record { id: 1, image: img(0.5), label: 4 },
            ],
        );
        assert!(ok.is_ok());
        let dup = LabeledDataset::new(
            "toy-16",
            4,
            vec![
                Record { id: 0, image: img(0.0), label: 1 },
                Record { id: 0, image: img(0.5), label: 2 },
            ],
        );
        assert!(dup.is_err());
        let high = LabeledDataset::new("toy-16", 2, vec![Record { id: 0, image: img(0.0), label: 3 }]);
        assert!(high.is_err());
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = LabeledDataset::new(
            "toy-16",
            4,
            vec![
                Record { id: 3, image: img(0.25), label: 0 },
                Record { id: 9, image: img(-0.5), label: 2 },
            ],
        )
        .unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(LabeledDataset::load(dir.path()).unwrap(), ds);
    }
}
