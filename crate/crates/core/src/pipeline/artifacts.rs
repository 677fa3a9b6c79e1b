//! On-disk records of a release directory.
//!
//! Public files sit at the top level. Everything that links a synthetic image
//! back to individual records (inverted codes, cluster membership) lives under
//! `private/`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{ClusterPartition, LeftoverPolicy};
use crate::config::Method;
use crate::error::{Error, Result};
use crate::latent::LatentCode;
use crate::numerics::{codec, Dtype};
use crate::pipeline::dataset::LabeledDataset;
use crate::synthesis::{InversionOptions, Profile};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const PRIVATE_DIR: &str = "private";
pub const PARTITION_FILE: &str = "partition.json";
pub const INVERSION_FILE: &str = "inversion.json";
pub const CODES_DIR: &str = "codes";

pub fn cluster_image_file(cluster: usize) -> String {
    format!("cluster_{cluster:04}.kstn")
}

pub fn augmented_image_file(cluster: usize, view: usize) -> String {
    format!("cluster_{cluster:04}_aug_{view:02}.kstn")
}

pub fn cluster_code_file(cluster: usize) -> String {
    format!("cluster_{cluster:04}.code.kstn")
}

pub fn styles_file(cluster: usize) -> String {
    format!("styles_{cluster:04}.kstn")
}

pub fn alignment_file(cluster: usize) -> String {
    format!("alignment_{cluster:04}.json")
}

pub fn record_code_stem(id: u64) -> String {
    format!("latent_{id:06}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Pretty JSON with a trailing newline, written via a temporary file so a
/// crash never leaves a truncated document behind.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn private_dir(out: &Path) -> PathBuf {
    out.join(PRIVATE_DIR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleaseEntry {
    pub cluster: usize,
    /// Path of the synthetic image, relative to the release directory.
    pub image: String,
    pub label: u8,
    /// Member count per grade `0..=max_label`.
    pub histogram: Vec<usize>,
    pub member_count: usize,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub augmented: Vec<String>,
}

/// Public description of a release. Cluster membership is deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleaseManifest {
    pub config_hash: String,
    pub k: usize,
    pub method: Method,
    pub profile: Profile,
    pub n_records: usize,
    pub entries: Vec<ReleaseEntry>,
    /// Records left out by the `truncate` leftover policy.
    pub dropped_ids: Vec<u64>,
}

impl ReleaseManifest {
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != (self.n_records - self.dropped_ids.len()) / self.k.max(1) {
            return Err(Error::State(format!(
                "manifest has {} entries for {} records at k = {}",
                self.entries.len(),
                self.n_records,
                self.k
            )));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.cluster != i || e.member_count != self.k || e.histogram.iter().sum::<usize>() != self.k {
                return Err(Error::State(format!("manifest entry {i} is inconsistent")));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST_FILE))
    }
}

/// Cluster membership by record id, seed first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionFile {
    pub config_hash: String,
    pub k: usize,
    pub policy: LeftoverPolicy,
    pub clusters: Vec<Vec<u64>>,
    pub dropped: Vec<u64>,
}

impl PartitionFile {
    pub fn from_partition(config_hash: &str, policy: LeftoverPolicy, ds: &LabeledDataset, p: &ClusterPartition) -> Self {
        let ids = |idx: &[usize]| idx.iter().map(|&i| ds.records[i].id).collect::<Vec<_>>();
        Self {
            config_hash: config_hash.to_string(),
            k: p.k,
            policy,
            clusters: p.clusters.iter().map(|c| ids(c)).collect(),
            dropped: ids(&p.dropped),
        }
    }

    /// Maps ids back to dataset indices and checks the result is a partition.
    pub fn to_partition(&self, ds: &LabeledDataset) -> Result<ClusterPartition> {
        let index: HashMap<u64, usize> = ds.records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let lookup = |ids: &[u64]| {
            ids.iter()
                .map(|id| {
                    index
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::State(format!("partition names unknown record {id}")))
                })
                .collect::<Result<Vec<_>>>()
        };
        let p = ClusterPartition {
            k: self.k,
            clusters: self.clusters.iter().map(|c| lookup(c)).collect::<Result<_>>()?,
            dropped: lookup(&self.dropped)?,
        };
        p.validate(ds.len()).map_err(|e| Error::State(format!("stored partition does not fit the dataset: {e}")))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertedRecord {
    pub id: u64,
    pub mse: f64,
    pub iterations: usize,
}

/// Index of `private/codes/`. The settings that determine the codes are kept
/// so a later stage can tell whether they are reusable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionIndex {
    pub config_hash: String,
    pub profile: Profile,
    pub seed: u64,
    pub inversion: InversionOptions,
    pub records: Vec<InvertedRecord>,
}

/// One finished cluster. Appended as a JSON line as soon as the cluster's
/// files are on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub config_hash: String,
    pub cluster: usize,
    /// SHA-256 over the member ids, so a changed partition invalidates it.
    pub members_digest: String,
    pub image_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

pub fn members_digest(ids: &[u64]) -> String {
    let joined = ids.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(",");
    sha256_hex(joined.as_bytes())
}

/// Journal entries for `config_hash` whose files still match their digests.
/// Unreadable lines (e.g. a torn final write) are skipped.
pub fn read_journal(out: &Path, config_hash: &str) -> Result<HashMap<usize, JournalEntry>> {
    let path = out.join(JOURNAL_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let mut done = HashMap::new();
    for line in text.lines() {
        let Ok(entry) = serde_json::from_str::<JournalEntry>(line) else {
            continue;
        };
        if entry.config_hash != config_hash {
            continue;
        }
        let image_ok = file_sha256(&out.join(cluster_image_file(entry.cluster))).ok() == Some(entry.image_sha256.clone());
        let code_ok = match &entry.code_sha256 {
            Some(h) => file_sha256(&private_dir(out).join(cluster_code_file(entry.cluster))).ok() == Some(h.clone()),
            None => true,
        };
        if image_ok && code_ok {
            done.insert(entry.cluster, entry);
        }
    }
    Ok(done)
}

pub fn append_journal(file: &mut fs::File, entry: &JournalEntry) -> Result<()> {
    let mut line = serde_json::to_string(entry).map_err(|e| Error::json(JOURNAL_FILE, e))?;
    line.push('\n');
    file.write_all(line.as_bytes())
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(JOURNAL_FILE, e))
}

pub fn save_code(path: &Path, code: &LatentCode) -> Result<String> {
    codec::save_tensor(path, code.tensor(), Dtype::F64)?;
    file_sha256(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_validation() {
        let entry = |c| ReleaseEntry {
            cluster: c,
            image: cluster_image_file(c),
            label: 1,
            histogram: vec![0, 2, 0, 0, 0],
            member_count: 2,
            method: Method::Pixel,
            augmented: vec![],
        };
        let mut m = ReleaseManifest {
            config_hash: "x".into(),
            k: 2,
            method: Method::Pixel,
            profile: Profile::Toy16,
            n_records: 5,
            entries: vec![entry(0), entry(1)],
            dropped_ids: vec![4],
        };
        m.validate().unwrap();
        m.entries[1].member_count = 3;
        assert!(m.validate().is_err());
    }

    #[test]
    fn journal_skips_torn_and_foreign_lines() {
        let dir = tempfile::tempdir().unwrap();
        let image = dir.path().join(cluster_image_file(0));
        fs::write(&image, b"abc").unwrap();
        let good = JournalEntry {
            config_hash: "h".into(),
            cluster: 0,
            members_digest: members_digest(&[1, 2]),
            image_sha256: sha256_hex(b"abc"),
            code_sha256: None,
            trace: vec![],
        };
        let foreign = JournalEntry {
            config_hash: "other".into(),
            ..good.clone()
        };
        let stale = JournalEntry {
            cluster: 1,
            ..good.clone()
        };
        let mut f = fs::File::create(dir.path().join(JOURNAL_FILE)).unwrap();
        for e in [&good, &foreign, &stale] {
            append_journal(&mut f, e).unwrap();
        }
        f.write_all(b"{\"config_hash\":\"h\",\"clu").unwrap();
        let done = read_journal(dir.path(), "h").unwrap();
        assert_eq!(done.len(), 1);
        assert_eq!(done[&0], good);
    }
}
