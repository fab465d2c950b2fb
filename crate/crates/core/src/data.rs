//! Datasets, long-tailed subsampling, balanced holdout, synthetic benchmarks.
//!
//! Class index order defines head → tail: class 0 is the head. Long-tailed
//! retention follows the geometric profile `r_y = base · (1/IF)^(y/(K-1))`,
//! rounded to nearest with a floor of one example per class.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::standard_normal;
use crate::seeding;
use crate::tensor::Tensor;

/// Feature matrix plus integer labels and derived per-class counts.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    class_counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument {
                arg: "num_classes",
                reason: alloc::string::String::from("must be positive"),
            });
        }
        if features.shape().is_empty() || features.shape()[0] != labels.len() {
            return Err(Error::LengthMismatch {
                op: "LabeledDataset::new",
                left: features.outer_len(),
                right: labels.len(),
            });
        }
        let mut class_counts = vec![0usize; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes,
                });
            }
            class_counts[y] += 1;
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Shape of one example (feature shape without the leading N axis).
    pub fn example_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn is_balanced(&self) -> bool {
        self.class_counts.windows(2).all(|w| w[0] == w[1])
    }

    /// Materialize the examples at `indices` as an owned batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Batch { features, labels })
    }

    /// New dataset containing only the examples at `indices` (in that order).
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let b = self.batch(indices)?;
        LabeledDataset::new(b.features, b.labels, self.num_classes)
    }

    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut per_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            per_class[y].push(i);
        }
        per_class
    }
}

/// A mini-batch: owned feature rows plus their labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-class retained counts for a target imbalance factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceProfile {
    pub num_classes: usize,
    pub base_count: usize,
    pub imbalance_factor: f64,
    pub retained: Vec<usize>,
}

impl ImbalanceProfile {
    /// Geometric retention: `r_y = round(base · (1/IF)^(y/(K-1)))`, floor 1.
    pub fn geometric(num_classes: usize, base_count: usize, imbalance_factor: f64) -> Result<Self> {
        if imbalance_factor < 1.0 || !imbalance_factor.is_finite() {
            return Err(Error::InvalidArgument {
                arg: "imbalance_factor",
                reason: format!("must be a finite value >= 1, got {imbalance_factor}"),
            });
        }
        if num_classes == 0 || base_count == 0 {
            return Err(Error::InvalidArgument {
                arg: "num_classes/base_count",
                reason: format!("must be positive, got {num_classes}/{base_count}"),
            });
        }
        let retained = (0..num_classes)
            .map(|y| {
                let exponent = if num_classes == 1 {
                    0.0
                } else {
                    y as f64 / (num_classes - 1) as f64
                };
                let keep = base_count as f64 * libm::pow(1.0 / imbalance_factor, exponent);
                (libm::round(keep) as usize).max(1)
            })
            .collect();
        Ok(Self {
            num_classes,
            base_count,
            imbalance_factor,
            retained,
        })
    }

    pub fn total(&self) -> usize {
        self.retained.iter().sum()
    }
}

/// Subsample a balanced dataset down to the geometric long-tail profile.
///
/// Kept examples are chosen uniformly at random per class; `IF = 1` returns
/// the dataset unchanged.
pub fn make_long_tailed(
    ds: &LabeledDataset,
    imbalance_factor: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if imbalance_factor == 1.0 {
        return Ok(ds.clone());
    }
    if !ds.is_balanced() {
        return Err(Error::InvalidArgument {
            arg: "dataset",
            reason: format!(
                "long-tail subsampling expects balanced input, got {:?}",
                ds.class_counts()
            ),
        });
    }
    let base = ds.class_counts().first().copied().unwrap_or(0);
    let profile = ImbalanceProfile::geometric(ds.num_classes(), base, imbalance_factor)?;
    let mut rng = seeding::substream(seed, "long-tail");
    let mut keep = Vec::with_capacity(profile.total());
    for (y, mut class_indices) in ds.indices_by_class().into_iter().enumerate() {
        class_indices.shuffle(&mut rng);
        keep.extend_from_slice(&class_indices[..profile.retained[y]]);
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

/// Split off a balanced development set of `per_class` examples per class.
///
/// Returns `(T, D)` with `T ∪ D = ds` and `T ∩ D = ∅`.
pub fn holdout_dev(
    ds: &LabeledDataset,
    per_class: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if per_class == 0 {
        return Err(Error::InvalidArgument {
            arg: "per_class",
            reason: alloc::string::String::from(
                "development set needs at least one example per class",
            ),
        });
    }
    for (y, &count) in ds.class_counts().iter().enumerate() {
        if count <= per_class {
            return Err(Error::InvalidArgument {
                arg: "per_class",
                reason: format!("class {y} has {count} examples, cannot hold out {per_class}"),
            });
        }
    }
    let mut rng = seeding::substream(seed, "dev-holdout");
    let mut dev = Vec::new();
    let mut train = Vec::new();
    for mut class_indices in ds.indices_by_class() {
        class_indices.shuffle(&mut rng);
        dev.extend_from_slice(&class_indices[..per_class]);
        train.extend_from_slice(&class_indices[per_class..]);
    }
    dev.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&dev)?))
}

/// Imbalance factor: largest class count over smallest.
pub fn compute_imbalance_factor(ds: &LabeledDataset) -> Result<f64> {
    let max = ds.class_counts().iter().max().copied().unwrap_or(0);
    let min = ds.class_counts().iter().min().copied().unwrap_or(0);
    if min == 0 {
        return Err(Error::Empty {
            what: "class (imbalance factor of empty class)",
        });
    }
    Ok(max as f64 / min as f64)
}

/// Synthetic Gaussian mixture whose class means are a deterministic function
/// of the seed, placed so pairwise distances concentrate near
/// `class_separation`; samples are unit-variance around the means.
#[derive(Debug, Clone)]
pub struct SynthGaussian {
    pub num_classes: usize,
    pub dims: usize,
    pub class_separation: f64,
    pub seed: u64,
}

impl SynthGaussian {
    pub fn new(num_classes: usize, dims: usize, class_separation: f64, seed: u64) -> Result<Self> {
        if num_classes < 2 || dims < 2 {
            return Err(Error::InvalidArgument {
                arg: "num_classes/dims",
                reason: format!("need K >= 2 and dims >= 2, got {num_classes}/{dims}"),
            });
        }
        if !(class_separation > 0.0) || !class_separation.is_finite() {
            return Err(Error::InvalidArgument {
                arg: "class_separation",
                reason: format!("must be finite and positive, got {class_separation}"),
            });
        }
        Ok(Self {
            num_classes,
            dims,
            class_separation,
            seed,
        })
    }

    /// K×dims class means, row-major. Independent N(0, σ²) coordinates with
    /// σ = sep / √(2·dims) give expected pairwise distance² = sep².
    pub fn class_means(&self) -> Vec<f64> {
        let mut rng = seeding::substream(self.seed, "synth-means");
        let sigma = self.class_separation / libm::sqrt(2.0 * self.dims as f64);
        (0..self.num_classes * self.dims)
            .map(|_| sigma * standard_normal(&mut rng))
            .collect()
    }

    /// Draw `counts[y]` unit-variance samples around each class mean. The
    /// stream label keeps draws for different roles (train/test) disjoint.
    pub fn sample(&self, counts: &[usize], stream: &str) -> Result<LabeledDataset> {
        if counts.len() != self.num_classes {
            return Err(Error::LengthMismatch {
                op: "SynthGaussian::sample",
                left: counts.len(),
                right: self.num_classes,
            });
        }
        let means = self.class_means();
        let mut label = alloc::string::String::from("synth-samples-");
        label.push_str(stream);
        let mut rng = seeding::substream(self.seed, &label);
        let total: usize = counts.iter().sum();
        let mut data = Vec::with_capacity(total * self.dims);
        let mut labels = Vec::with_capacity(total);
        for (y, &count) in counts.iter().enumerate() {
            let mean = &means[y * self.dims..(y + 1) * self.dims];
            for _ in 0..count {
                for &m in mean {
                    data.push(m + standard_normal(&mut rng));
                }
                labels.push(y);
            }
        }
        let features = Tensor::from_vec(vec![total, self.dims], data)?;
        LabeledDataset::new(features, labels, self.num_classes)
    }

    /// Long-tailed training pool following the geometric profile.
    pub fn long_tailed(&self, base_count: usize, imbalance_factor: f64) -> Result<LabeledDataset> {
        let profile = ImbalanceProfile::geometric(self.num_classes, base_count, imbalance_factor)?;
        self.sample(&profile.retained, "train")
    }

    /// Balanced draw (e.g. a test split) that never overlaps the train pool.
    pub fn balanced(&self, per_class: usize, stream: &str) -> Result<LabeledDataset> {
        self.sample(&vec![per_class; self.num_classes], stream)
    }
}

/// One-call construction of the long-tailed synthetic training pool.
pub fn synth_gaussian_longtail(
    num_classes: usize,
    dims: usize,
    imbalance_factor: f64,
    base_count: usize,
    class_separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    SynthGaussian::new(num_classes, dims, class_separation, seed)?
        .long_tailed(base_count, imbalance_factor)
}
