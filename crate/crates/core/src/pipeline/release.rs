use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;

use crate::alignment::{AlignmentMode, Correspondence};
use crate::clustering::{same_size_clustering_with, ClusterPartition};
use crate::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::latent::{augment, centroid, load_latent, save_latent, LatentCode};
use crate::numerics::{codec, Dtype, Rng};
use crate::objective::{optimize_average, ClusterObjective, Evaluation, Models};
use crate::pipeline::artifacts::*;
use crate::pipeline::dataset::LabeledDataset;
use crate::pipeline::labels::aggregate_labels;
use crate::pipeline::pca::{fit_pca_images, PcaModel};
use crate::synthesis::{invert, Generator, ImageTensor, Inversion};

/// Stream offset for augmentation noise; cluster `c` draws from
/// `Rng::new(seed).split(AUGMENT_STREAM + c)`.
pub const AUGMENT_STREAM: u64 = 1000;
/// PCA rank used when the config leaves it open, capped by `n - 1`.
pub const DEFAULT_PCA_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Default)]
pub struct ReleaseOptions {
    pub exec: Execution,
    /// Release directory. `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Write per-cluster loss traces to `traces.jsonl`.
    pub trace: bool,
    /// Write the final target Gram stacks as `styles_XXXX.kstn`.
    pub dump_styles: bool,
    /// Write the final correspondences as `alignment_XXXX.json`.
    pub dump_alignment: bool,
}

/// In-memory result of a release. `partition` indexes `dataset.records`.
#[derive(Debug, Clone)]
pub struct Release {
    pub manifest: ReleaseManifest,
    pub partition: ClusterPartition,
    pub images: Vec<ImageTensor>,
    /// Latent code behind each image, for latent methods.
    pub codes: Vec<Option<LatentCode>>,
    /// Loss trace per cluster; empty for baselines and resumed clusters
    /// whose journal carried none.
    pub traces: Vec<Vec<f64>>,
    /// Clusters taken from the journal instead of recomputed.
    pub resumed: usize,
}

/// Checks that the dataset images have the generator's output shape.
pub fn check_dataset(models: &Models, dataset: &LabeledDataset) -> Result<()> {
    dataset.validate()?;
    let expected = models.generator.shape().image_dims();
    let got = dataset.records[0].image.tensor().dims();
    if got != expected {
        return Err(Error::arg(format!(
            "dataset images are {got:?} but the generator produces {expected:?}"
        )));
    }
    Ok(())
}

/// Inverts every record, in parallel per image.
pub fn invert_dataset(models: &Models, dataset: &LabeledDataset, cfg: &RunConfig, exec: Execution) -> Result<Vec<Inversion>> {
    check_dataset(models, dataset)?;
    let gen = models.generator.as_ref();
    exec.try_map(&dataset.records, |r| invert(gen, &r.image, &cfg.inversion))
}

pub fn save_inversions(out: &Path, cfg: &RunConfig, dataset: &LabeledDataset, inversions: &[Inversion]) -> Result<()> {
    let codes_dir = private_dir(out).join(CODES_DIR);
    fs::create_dir_all(&codes_dir).map_err(|e| Error::io(&codes_dir, e))?;
    let mut records = Vec::with_capacity(inversions.len());
    for (r, inv) in dataset.records.iter().zip(inversions) {
        save_latent(&codes_dir, &record_code_stem(r.id), &inv.code, r.id)?;
        records.push(InvertedRecord {
            id: r.id,
            mse: inv.mse,
            iterations: inv.iterations,
        });
    }
    let index = InversionIndex {
        config_hash: cfg.hash(),
        profile: cfg.profile,
        seed: cfg.seed,
        inversion: cfg.inversion,
        records,
    };
    write_json(&private_dir(out).join(INVERSION_FILE), &index)
}

/// Stored codes, if present and produced under the same generator and
/// inversion settings for exactly these records.
pub fn load_inversions(out: &Path, cfg: &RunConfig, dataset: &LabeledDataset) -> Result<Option<Vec<LatentCode>>> {
    let path = private_dir(out).join(INVERSION_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let index: InversionIndex = read_json(&path)?;
    let same_records = index.records.len() == dataset.len()
        && index.records.iter().zip(&dataset.records).all(|(a, b)| a.id == b.id);
    if index.profile != cfg.profile || index.seed != cfg.seed || index.inversion != cfg.inversion || !same_records {
        return Ok(None);
    }
    let codes_dir = private_dir(out).join(CODES_DIR);
    let codes = index
        .records
        .iter()
        .map(|r| load_latent(&codes_dir, &record_code_stem(r.id)).map(|(code, _)| code))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(codes))
}

pub fn cluster_codes(codes: &[LatentCode], cfg: &RunConfig, exec: Execution) -> Result<ClusterPartition> {
    same_size_clustering_with(codes, cfg.k, cfg.policy, exec)
}

pub fn save_partition(out: &Path, cfg: &RunConfig, dataset: &LabeledDataset, partition: &ClusterPartition) -> Result<()> {
    let dir = private_dir(out);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(
        &dir.join(PARTITION_FILE),
        &PartitionFile::from_partition(&cfg.hash(), cfg.policy, dataset, partition),
    )
}

/// Stored partition, if present and made with the same `k` and policy.
pub fn load_partition(out: &Path, cfg: &RunConfig, dataset: &LabeledDataset) -> Result<Option<ClusterPartition>> {
    let path = private_dir(out).join(PARTITION_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let file: PartitionFile = read_json(&path)?;
    if file.k != cfg.k || file.policy != cfg.policy {
        return Ok(None);
    }
    file.to_partition(dataset).map(Some)
}

/// One image per cluster by a baseline rule.
///
/// `pixel` averages pixels, `pca` averages PCA coefficients and reconstructs,
/// `centroid` decodes the latent centroid.
pub fn baseline_average(
    images: &[ImageTensor],
    codes: &[LatentCode],
    method: Method,
    generator: &dyn Generator,
    pca: Option<&PcaModel>,
) -> Result<ImageTensor> {
    match method {
        Method::Pixel => ImageTensor::mean(images),
        Method::Centroid => generator.generate(&centroid(codes)?),
        Method::Pca => {
            let model = pca.ok_or_else(|| Error::State("pca averaging needs a fitted PCA model".into()))?;
            let first = images.first().ok_or_else(|| Error::arg("empty cluster"))?;
            let rows: Vec<&[f64]> = images.iter().map(|i| i.data()).collect();
            ImageTensor::new(first.tensor().with_data(model.average(&rows)?)?)
        }
        Method::Ksalsa => Err(Error::arg("ksalsa is not a baseline; use optimize_average")),
    }
}

pub fn pca_rank(cfg: &RunConfig, n: usize) -> usize {
    cfg.pca_components
        .unwrap_or(DEFAULT_PCA_COMPONENTS.min(n.saturating_sub(1)))
}

struct ClusterOutcome {
    image: ImageTensor,
    code: Option<LatentCode>,
    trace: Vec<f64>,
    evaluation: Option<Evaluation>,
    resumed: bool,
}

#[derive(Serialize)]
struct AlignmentDump<'a> {
    config_hash: &'a str,
    cluster: usize,
    mode: AlignmentMode,
    correspondences: &'a [Correspondence],
}

#[derive(Serialize)]
struct TraceLine<'a> {
    config_hash: &'a str,
    cluster: usize,
    trace: &'a [f64],
}

struct Context<'a> {
    models: &'a Models,
    dataset: &'a LabeledDataset,
    codes: &'a [LatentCode],
    cfg: &'a RunConfig,
    hash: String,
    pca: Option<PcaModel>,
    out: Option<&'a Path>,
    journal: Option<Mutex<fs::File>>,
    done: std::collections::HashMap<usize, JournalEntry>,
}

impl Context<'_> {
    fn members(&self, idx: &[usize]) -> (Vec<u64>, Vec<ImageTensor>, Vec<LatentCode>) {
        (
            idx.iter().map(|&i| self.dataset.records[i].id).collect(),
            idx.iter().map(|&i| self.dataset.records[i].image.clone()).collect(),
            idx.iter().map(|&i| self.codes[i].clone()).collect(),
        )
    }

    fn resume(&self, cluster: usize, digest: &str) -> Result<Option<ClusterOutcome>> {
        let (Some(out), Some(entry)) = (self.out, self.done.get(&cluster)) else {
            return Ok(None);
        };
        if entry.members_digest != digest || entry.code_sha256.is_some() != self.cfg.method.is_latent() {
            return Ok(None);
        }
        let image = ImageTensor::new(codec::load_tensor(out.join(cluster_image_file(cluster)))?)?;
        let code = match entry.code_sha256 {
            Some(_) => Some(LatentCode::new(codec::load_tensor(
                private_dir(out).join(cluster_code_file(cluster)),
            )?)?),
            None => None,
        };
        Ok(Some(ClusterOutcome {
            image,
            code,
            trace: entry.trace.clone(),
            evaluation: None,
            resumed: true,
        }))
    }

    fn compute(&self, images: &[ImageTensor], codes: &[LatentCode]) -> Result<ClusterOutcome> {
        let gen = self.models.generator.as_ref();
        let (image, code, trace, evaluation) = match self.cfg.method {
            Method::Ksalsa => {
                let avg = optimize_average(self.models, codes, images, &self.cfg.loss_config())?;
                (gen.generate(&avg.code)?, Some(avg.code), avg.trace, Some(avg.last))
            }
            Method::Centroid => {
                let w = centroid(codes)?;
                (gen.generate(&w)?, Some(w), Vec::new(), None)
            }
            m => (baseline_average(images, codes, m, gen, self.pca.as_ref())?, None, Vec::new(), None),
        };
        Ok(ClusterOutcome {
            image,
            code,
            trace,
            evaluation,
            resumed: false,
        })
    }

    fn persist(&self, cluster: usize, digest: String, outcome: &ClusterOutcome) -> Result<()> {
        let Some(out) = self.out else {
            return Ok(());
        };
        let image_path = out.join(cluster_image_file(cluster));
        codec::save_tensor(&image_path, outcome.image.tensor(), Dtype::F64)?;
        let code_sha256 = match &outcome.code {
            Some(code) => Some(save_code(&private_dir(out).join(cluster_code_file(cluster)), code)?),
            None => None,
        };
        let entry = JournalEntry {
            config_hash: self.hash.clone(),
            cluster,
            members_digest: digest,
            image_sha256: file_sha256(&image_path)?,
            code_sha256,
            trace: outcome.trace.clone(),
        };
        if let Some(journal) = &self.journal {
            let mut file = journal.lock().map_err(|_| Error::State("journal lock poisoned".into()))?;
            append_journal(&mut file, &entry)?;
        }
        Ok(())
    }

    fn run_cluster(&self, cluster: usize, idx: &[usize]) -> Result<ClusterOutcome> {
        let (ids, images, codes) = self.members(idx);
        let digest = members_digest(&ids);
        if let Some(outcome) = self.resume(cluster, &digest)? {
            return Ok(outcome);
        }
        let outcome = self.compute(&images, &codes)?;
        self.persist(cluster, digest, &outcome)?;
        Ok(outcome)
    }

    /// Final-iterate evaluation for dumps, recomputed for resumed clusters.
    fn evaluation_for(&self, idx: &[usize], outcome: &ClusterOutcome) -> Result<Option<Evaluation>> {
        if let Some(e) = &outcome.evaluation {
            return Ok(Some(e.clone()));
        }
        let (Method::Ksalsa, Some(code)) = (self.cfg.method, &outcome.code) else {
            return Ok(None);
        };
        let (_, images, codes) = self.members(idx);
        let objective = ClusterObjective::new(self.models, &images, &centroid(&codes)?, &self.cfg.loss_config())?;
        objective.evaluate(code).map(Some)
    }
}

/// Averages every cluster of `partition` with `cfg.method`, then aggregates
/// labels, draws augmented views and writes the release.
///
/// Clusters run as independent tasks. With an output directory each finished
/// cluster is journaled, and a rerun with the same config hash reuses it.
pub fn average_clusters(
    models: &Models,
    dataset: &LabeledDataset,
    codes: &[LatentCode],
    partition: &ClusterPartition,
    cfg: &RunConfig,
    options: &ReleaseOptions,
) -> Result<Release> {
    cfg.validate()?;
    check_dataset(models, dataset)?;
    if codes.len() != dataset.len() {
        return Err(Error::arg(format!("{} codes for {} records", codes.len(), dataset.len())));
    }
    partition.validate(dataset.len())?;
    if partition.k != cfg.k {
        return Err(Error::arg(format!("partition has k = {}, config has k = {}", partition.k, cfg.k)));
    }
    let hash = cfg.hash();
    let pca = match cfg.method {
        Method::Pca => Some(fit_pca_images(&dataset.images(), pca_rank(cfg, dataset.len()), cfg.seed)?),
        _ => None,
    };

    let out = options.out_dir.as_deref();
    let (journal, done) = match out {
        Some(out) => {
            fs::create_dir_all(private_dir(out)).map_err(|e| Error::io(out, e))?;
            fs::write(out.join(CONFIG_FILE), format!("{}\n", cfg.canonical_json()))
                .map_err(|e| Error::io(out.join(CONFIG_FILE), e))?;
            let done = read_journal(out, &hash)?;
            let path = out.join(JOURNAL_FILE);
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            (Some(Mutex::new(file)), done)
        }
        None => (None, Default::default()),
    };
    let ctx = Context {
        models,
        dataset,
        codes,
        cfg,
        hash,
        pca,
        out,
        journal,
        done,
    };

    let outcomes = options
        .exec
        .try_map_range(partition.clusters.len(), |c| ctx.run_cluster(c, &partition.clusters[c]))?;

    let gen = models.generator.as_ref();
    let mut entries = Vec::with_capacity(outcomes.len());
    for (c, (idx, outcome)) in partition.clusters.iter().zip(&outcomes).enumerate() {
        let labels: Vec<u8> = idx.iter().map(|&i| dataset.records[i].label).collect();
        let (label, histogram) = aggregate_labels(&labels, dataset.max_label)?;
        let mut augmented = Vec::new();
        if let (Some(aug), Some(code)) = (&cfg.augmentation, &outcome.code) {
            let mut rng = Rng::new(cfg.seed).split(AUGMENT_STREAM + c as u64);
            for (view, w) in augment(code, aug.scale, aug.count, &mut rng)?.iter().enumerate() {
                let file = augmented_image_file(c, view);
                if let Some(out) = out {
                    codec::save_tensor(out.join(&file), gen.generate(w)?.tensor(), Dtype::F64)?;
                }
                augmented.push(file);
            }
        }
        if let Some(out) = out {
            if options.dump_styles || options.dump_alignment {
                if let Some(eval) = ctx.evaluation_for(idx, outcome)? {
                    if options.dump_styles {
                        codec::save_tensor(out.join(styles_file(c)), eval.target.tensor(), Dtype::F64)?;
                    }
                    if options.dump_alignment {
                        let dump = AlignmentDump {
                            config_hash: &ctx.hash,
                            cluster: c,
                            mode: cfg.alignment,
                            correspondences: &eval.correspondences,
                        };
                        write_json(&out.join(alignment_file(c)), &dump)?;
                    }
                }
            }
        }
        entries.push(ReleaseEntry {
            cluster: c,
            image: cluster_image_file(c),
            label,
            histogram,
            member_count: idx.len(),
            method: cfg.method,
            augmented,
        });
    }

    let manifest = ReleaseManifest {
        config_hash: ctx.hash.clone(),
        k: cfg.k,
        method: cfg.method,
        profile: cfg.profile,
        n_records: dataset.len(),
        entries,
        dropped_ids: partition.dropped.iter().map(|&i| dataset.records[i].id).collect(),
    };
    manifest.validate()?;
    if let Some(out) = out {
        if options.trace {
            let mut text = String::new();
            for (c, o) in outcomes.iter().enumerate() {
                let line = TraceLine {
                    config_hash: &ctx.hash,
                    cluster: c,
                    trace: &o.trace,
                };
                text.push_str(&serde_json::to_string(&line).map_err(|e| Error::json(TRACES_FILE, e))?);
                text.push('\n');
            }
            fs::write(out.join(TRACES_FILE), text).map_err(|e| Error::io(out.join(TRACES_FILE), e))?;
        }
        save_partition(out, cfg, dataset, partition)?;
        manifest.save(out)?;
    }
    let resumed = outcomes.iter().filter(|o| o.resumed).count();
    let (images, codes, traces) = outcomes.into_iter().fold(
        (Vec::new(), Vec::new(), Vec::new()),
        |(mut i, mut c, mut t), o| {
            i.push(o.image);
            c.push(o.code);
            t.push(o.trace);
            (i, c, t)
        },
    );
    Ok(Release {
        manifest,
        partition: partition.clone(),
        images,
        codes,
        traces,
        resumed,
    })
}

/// Inverted codes, reused from `out` when they match, else computed (and
/// stored when `out` is set).
pub fn obtain_codes(
    models: &Models,
    dataset: &LabeledDataset,
    cfg: &RunConfig,
    exec: Execution,
    out: Option<&Path>,
) -> Result<Vec<LatentCode>> {
    if let Some(out) = out {
        if let Some(codes) = load_inversions(out, cfg, dataset)? {
            return Ok(codes);
        }
    }
    let inversions = invert_dataset(models, dataset, cfg, exec)?;
    if let Some(out) = out {
        save_inversions(out, cfg, dataset, &inversions)?;
    }
    Ok(inversions.into_iter().map(|i| i.code).collect())
}

/// Invert, cluster and average: the full release with the toy models
/// derived from `cfg.seed` and `cfg.profile`.
pub fn run_release(dataset: &LabeledDataset, cfg: &RunConfig, options: &ReleaseOptions) -> Result<Release> {
    let models = Models::toy(cfg.seed, cfg.profile);
    run_release_with(&models, dataset, cfg, options)
}

pub fn run_release_with(
    models: &Models,
    dataset: &LabeledDataset,
    cfg: &RunConfig,
    options: &ReleaseOptions,
) -> Result<Release> {
    cfg.validate()?;
    let out = options.out_dir.as_deref();
    let codes = obtain_codes(models, dataset, cfg, options.exec, out)?;
    let partition = match out.map(|o| load_partition(o, cfg, dataset)).transpose()?.flatten() {
        Some(p) => p,
        None => cluster_codes(&codes, cfg, options.exec)?,
    };
    average_clusters(models, dataset, &codes, &partition, cfg, options)
}

/// [`run_release`] with the k-SALSA averager regardless of `cfg.method`.
pub fn run_ksalsa(dataset: &LabeledDataset, cfg: &RunConfig, options: &ReleaseOptions) -> Result<Release> {
    let cfg = RunConfig {
        method: Method::Ksalsa,
        ..cfg.clone()
    };
    run_release(dataset, &cfg, options)
}
