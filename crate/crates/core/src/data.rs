//! Dataset loading and non-IID partitioning.
//!
//! Covertype is read from the UCI `covtype.data` layout: comma-separated
//! integer-coded rows, 54 feature columns followed by the cover-type class.
//! Class 2 maps to +1, every other class to −1. Features are z-scored per
//! column with the population standard deviation.
//!
//! MNIST is read from big-endian IDX files. Only digits 0-8 are kept.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::LabeledBatch;
use crate::rng::seeded;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Digits kept from MNIST: 0 through 8.
pub const MNIST_CLASSES: usize = 9;

/// Cover type mapped to the positive label.
pub const COVTYPE_POSITIVE_CLASS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// Labels in {−1, +1}.
    Binary,
    /// Labels in 0..classes.
    Class { classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<f64>,
    pub label_kind: LabelKind,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            label_kind: self.label_kind,
        }
    }

    /// First `rows` rows.
    pub fn head(&self, rows: usize) -> Dataset {
        let idx: Vec<usize> = (0..rows.min(self.len())).collect();
        self.select(&idx)
    }

    /// Splits off the last `fraction` of rows as a held-out set.
    pub fn split_tail(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::usage("test fraction must lie in [0, 1)"));
        }
        let n_test = (self.len() as f64 * fraction).round() as usize;
        let cut = self.len() - n_test;
        let train: Vec<usize> = (0..cut).collect();
        let test: Vec<usize> = (cut..self.len()).collect();
        Ok((self.select(&train), self.select(&test)))
    }

    pub fn to_batch(&self) -> Result<LabeledBatch> {
        LabeledBatch::new(self.features.clone(), self.labels.clone())
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<f64> {
        let mut c = self.labels.clone();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

/// Reads and standardizes a Covertype file.
pub fn load_covtype(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_covtype(&text, path)
}

/// Parses Covertype text. A single non-numeric first line is taken as a
/// header and skipped.
pub fn parse_covtype(text: &str, path: &Path) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut classes: Vec<u32> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if lineno == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    detail: format!("non-numeric field ({e})"),
                })
            }
        };
        let w = *width.get_or_insert(values.len());
        if values.len() != w || w < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail: format!("expected {w} fields, found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail: "nonfinite value".into(),
            });
        }
        let class = values[w - 1];
        if class.fract() != 0.0 || class < 0.0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail: format!("class {class} is not a nonnegative integer"),
            });
        }
        classes.push(class as u32);
        rows.push(values[..w - 1].to_vec());
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "no data rows".into(),
        });
    }
    let mut features = Matrix::from_rows(&rows)?;
    standardize_columns(&mut features);
    let labels = classes
        .iter()
        .map(|&c| {
            if c == COVTYPE_POSITIVE_CLASS {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Ok(Dataset {
        features,
        labels,
        label_kind: LabelKind::Binary,
    })
}

/// In-place z-scoring with the population standard deviation. Constant
/// columns become all zeros.
pub fn standardize_columns(m: &mut Matrix) {
    let means = m.column_means();
    let sds: Vec<f64> = m.column_variances().iter().map(|v| v.sqrt()).collect();
    let cols = m.cols();
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        for j in 0..cols {
            row[j] = if sds[j] > 1e-12 * means[j].abs().max(1.0) {
                (row[j] - means[j]) / sds[j]
            } else {
                0.0
            };
        }
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX image file into (count, pixels per image, bytes).
pub fn parse_idx_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    let fmt_err = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let magic = read_u32_be(bytes, 0).ok_or_else(|| fmt_err("truncated header".into()))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(fmt_err(format!(
            "image magic is {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let (n, r, c) = match (
        read_u32_be(bytes, 4),
        read_u32_be(bytes, 8),
        read_u32_be(bytes, 12),
    ) {
        (Some(n), Some(r), Some(c)) => (n as usize, r as usize, c as usize),
        _ => return Err(fmt_err("truncated header".into())),
    };
    let body = &bytes[16..];
    if body.len() != n * r * c {
        return Err(fmt_err(format!(
            "expected {} pixel bytes, found {}",
            n * r * c,
            body.len()
        )));
    }
    Ok((n, r * c, body))
}

/// Parses an IDX label file.
pub fn parse_idx_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    let fmt_err = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let magic = read_u32_be(bytes, 0).ok_or_else(|| fmt_err("truncated header".into()))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(fmt_err(format!(
            "label magic is {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(bytes, 4).ok_or_else(|| fmt_err("truncated header".into()))? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(fmt_err(format!(
            "expected {n} labels, found {}",
            body.len()
        )));
    }
    Ok(body)
}

/// Loads an MNIST image/label pair, scales pixels to [0, 1] and keeps only
/// digits 0-8.
pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ibytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lbytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (n, pixels, body) = parse_idx_images(&ibytes, ip)?;
    let labels = parse_idx_labels(&lbytes, lp)?;
    if labels.len() != n {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            detail: format!("{} labels for {n} images", labels.len()),
        });
    }
    let mut data = Vec::new();
    let mut kept = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        if (y as usize) < MNIST_CLASSES {
            data.extend(
                body[i * pixels..(i + 1) * pixels]
                    .iter()
                    .map(|&p| p as f64 / 255.0),
            );
            kept.push(y as f64);
        }
    }
    if kept.is_empty() {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            detail: "no digits 0-8 present".into(),
        });
    }
    Ok(Dataset {
        features: Matrix::from_vec(kept.len(), pixels, data)?,
        labels: kept,
        label_kind: LabelKind::Class {
            classes: MNIST_CLASSES,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMode {
    /// Each client draws `majority_fraction` of its shard from one class
    /// (rotating across clients) and the rest evenly from the others.
    RatioSkew { majority_fraction: f64 },
    /// Sorted classes are cut into contiguous groups of `classes_per_client`,
    /// assigned to clients cyclically.
    ClassesPerClient { classes_per_client: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub clients: usize,
    pub mode: PartitionMode,
    pub per_client_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    /// Row indices into the source dataset, ascending.
    pub indices: Vec<usize>,
    pub batch: LabeledBatch,
}

/// Splits `total` across `weights` by largest remainder; ties go to the
/// lower index.
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn class_name(label: f64, kind: LabelKind) -> String {
    match kind {
        LabelKind::Binary if label > 0.0 => "+1".into(),
        LabelKind::Binary => "-1".into(),
        LabelKind::Class { .. } => format!("{}", label as i64),
    }
}

/// Per-client class quotas for a plan over the sorted class list.
fn class_quotas(plan: &PartitionPlan, n_classes: usize, client: usize) -> Result<Vec<usize>> {
    let size = plan.per_client_size;
    match plan.mode {
        PartitionMode::RatioSkew { majority_fraction } => {
            if !(majority_fraction > 0.5 && majority_fraction <= 1.0) {
                return Err(Error::usage("majority fraction must lie in (0.5, 1]"));
            }
            if n_classes < 2 {
                return Err(Error::usage("label skew needs at least two classes"));
            }
            let major = client % n_classes;
            let minor_share = (1.0 - majority_fraction) / (n_classes - 1) as f64;
            let weights: Vec<f64> = (0..n_classes)
                .map(|c| {
                    if c == major {
                        majority_fraction
                    } else {
                        minor_share
                    }
                })
                .collect();
            Ok(largest_remainder(size, &weights))
        }
        PartitionMode::ClassesPerClient {
            classes_per_client: m,
        } => {
            if m == 0 || m > n_classes {
                return Err(Error::usage(format!(
                    "classes per client must lie in 1..={n_classes}"
                )));
            }
            let groups = n_classes.div_ceil(m);
            let g = client % groups;
            let members: Vec<usize> = (g * m..((g + 1) * m).min(n_classes)).collect();
            let split = largest_remainder(size, &vec![1.0; members.len()]);
            let mut quotas = vec![0; n_classes];
            for (c, q) in members.iter().zip(split) {
                quotas[*c] = q;
            }
            Ok(quotas)
        }
    }
}

/// Draws K disjoint shards according to `plan`. Per-class pools are
/// shuffled once with the plan seed and consumed client by client.
pub fn partition(dataset: &Dataset, plan: &PartitionPlan) -> Result<Vec<Shard>> {
    if plan.clients == 0 || plan.per_client_size == 0 {
        return Err(Error::usage(
            "partition needs at least one client and one example each",
        ));
    }
    let classes = dataset.classes();
    let mut rng = seeded(plan.seed);
    let mut pools: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| {
            (0..dataset.len())
                .filter(|&i| dataset.labels[i] == *c)
                .collect()
        })
        .collect();
    for pool in pools.iter_mut() {
        pool.shuffle(&mut rng);
    }
    let mut cursors = vec![0usize; classes.len()];
    let mut shards = Vec::with_capacity(plan.clients);
    for k in 0..plan.clients {
        let quotas = class_quotas(plan, classes.len(), k)?;
        let mut indices = Vec::with_capacity(plan.per_client_size);
        for (c, q) in quotas.iter().enumerate() {
            let available = pools[c].len() - cursors[c];
            if *q > available {
                return Err(Error::InsufficientClass {
                    class: class_name(classes[c], dataset.label_kind),
                    needed: *q,
                    available,
                });
            }
            indices.extend_from_slice(&pools[c][cursors[c]..cursors[c] + q]);
            cursors[c] += q;
        }
        indices.sort_unstable();
        let batch = dataset.select(&indices).to_batch()?;
        shards.push(Shard { indices, batch });
    }
    Ok(shards)
}
