//! Datasets: CSV ingestion, synthetic Gaussian clusters with class bias,
//! normalization, feature noise and stratified splits.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, standard_normals};

/// Negative-to-positive ratio of the breast histopathology patch corpus
/// (198,738 / 78,786).
pub const HISTOPATHOLOGY_BIAS_RATIO: f64 = 2.52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// One tag per row. Freshly built datasets tag everything as train.
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let splits = vec![Split::Train; labels.len()];
        let ds = Self {
            features,
            labels,
            num_classes,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() || self.splits.len() != self.labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows, {} labels, {} split tags",
                self.features.len(),
                self.labels.len(),
                self.splits.len()
            )));
        }
        if let Some(first) = self.features.first() {
            if let Some(i) = self.features.iter().position(|r| r.len() != first.len()) {
                return Err(Error::invalid(format!("row {i} has {} features, expected {}", self.features[i].len(), first.len())));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Schema(format!("label {bad} out of range for {} classes", self.num_classes)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Owned copy of the rows tagged `split`.
    pub fn subset(&self, split: Split) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.indices(split)
            .into_iter()
            .map(|i| (self.features[i].clone(), self.labels[i]))
            .unzip()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Per-column `(x - min) / (max - min)`; constant columns map to 0.
pub fn minmax_normalize(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = features.first() else {
        return Vec::new();
    };
    let cols = first.len();
    let mut lo = vec![f64::INFINITY; cols];
    let mut hi = vec![f64::NEG_INFINITY; cols];
    for row in features {
        for (j, &v) in row.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    features
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let range = hi[j] - lo[j];
                    if range > 0.0 {
                        (v - lo[j]) / range
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// `(255 - p) / 255` for 8-bit pixel intensities.
pub fn complement_normalize(pixels: &[i32]) -> Result<Vec<f64>> {
    pixels
        .iter()
        .map(|&p| {
            if (0..=255).contains(&p) {
                Ok(f64::from(255 - p) / 255.0)
            } else {
                Err(Error::invalid(format!("pixel value {p} outside [0, 255]")))
            }
        })
        .collect()
}

/// Inverse of [`complement_normalize`], rounding to the nearest intensity.
pub fn complement_denormalize(values: &[f64]) -> Vec<i32> {
    values.iter().map(|v| 255 - (v * 255.0).round() as i32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Adds `N(mean, sigma^2)` to every feature in every split. Each split
/// draws from its own stream, so the noise field of one split does not
/// depend on the size of another. Values are not clipped afterwards.
pub fn add_noise(ds: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma {} must be >= 0", spec.sigma)));
    }
    let mut out = ds.clone();
    if spec.sigma == 0.0 && spec.mean == 0.0 {
        return Ok(out);
    }
    for split in Split::ALL {
        let mut rng = seeded(derive_seed(spec.seed, split.index()));
        for i in ds.indices(split) {
            let row = &mut out.features[i];
            let z = standard_normals(&mut rng, row.len());
            for (v, e) in row.iter_mut().zip(z) {
                *v += spec.mean + spec.sigma * e;
            }
        }
    }
    Ok(out)
}

/// Recipe for Gaussian clusters, one center per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub total: usize,
    pub centers: Vec<Vec<f64>>,
    pub spread: f64,
    /// Size of class 0 relative to each other class.
    pub bias_ratio: f64,
    pub seed: u64,
}

/// Class sizes summing to `total` with class 0 weighted `bias_ratio` and
/// the rest weighted 1 (largest-remainder rounding).
pub fn biased_class_counts(total: usize, classes: usize, bias_ratio: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..classes).map(|c| if c == 0 { bias_ratio } else { 1.0 }).collect();
    largest_remainder(total, &weights)
}

fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let assigned: usize = counts.iter().sum();
    for &k in order.iter().take(total - assigned) {
        counts[k] += 1;
    }
    counts
}

pub fn synth_clusters(spec: &SynthSpec) -> Result<Dataset> {
    if !(spec.bias_ratio > 0.0 && spec.bias_ratio.is_finite()) {
        return Err(Error::invalid(format!("bias ratio {} must be positive", spec.bias_ratio)));
    }
    if spec.centers.len() < 2 {
        return Err(Error::invalid("need at least two cluster centers"));
    }
    let dim = spec.centers[0].len();
    if dim == 0 || spec.centers.iter().any(|c| c.len() != dim) {
        return Err(Error::invalid("cluster centers must share a positive dimension"));
    }
    if !(spec.spread >= 0.0) {
        return Err(Error::invalid("spread must be >= 0"));
    }
    for (a, ca) in spec.centers.iter().enumerate() {
        for cb in &spec.centers[a + 1..] {
            if ca == cb {
                log::warn!("two cluster centers coincide at {ca:?}; classes are not separable");
            }
        }
    }
    let counts = biased_class_counts(spec.total, spec.centers.len(), spec.bias_ratio);
    let mut rng = seeded(spec.seed);
    let mut features = Vec::with_capacity(spec.total);
    let mut labels = Vec::with_capacity(spec.total);
    for (class, (&n, center)) in counts.iter().zip(&spec.centers).enumerate() {
        for _ in 0..n {
            let z = standard_normals(&mut rng, dim);
            features.push(center.iter().zip(z).map(|(c, e)| c + spec.spread * e).collect());
            labels.push(class);
        }
    }
    Dataset::new(features, labels, spec.centers.len())
}

/// `[train, validation, test]` fractions for holding out `test` first and
/// then `validation` of the remainder.
pub fn holdout_fractions(test: f64, validation: f64) -> [f64; 3] {
    let rest = 1.0 - test;
    [rest * (1.0 - validation), rest * validation, test]
}

/// Stratified, seeded partition into train/validation/test. Global split
/// sizes follow largest-remainder rounding of `len * fraction`; every class
/// lands within one item of its own share in every split.
pub fn split(ds: &Dataset, fractions: &[f64], seed: u64) -> Result<Dataset> {
    if fractions.len() != 3 || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid(format!("expected three fractions in [0, 1], got {fractions:?}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {sum}, not 1")));
    }
    let targets = largest_remainder(ds.len(), fractions);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }

    // floor allocation per class, then hand out leftovers where both the
    // class remainder and the global deficit favour them
    let mut alloc: Vec<[usize; 3]> = Vec::with_capacity(ds.num_classes);
    let mut deficit = targets.clone();
    for members in &by_class {
        let n = members.len() as f64;
        let a = [0, 1, 2].map(|s| (n * fractions[s]).floor() as usize);
        for s in 0..3 {
            deficit[s] -= a[s];
        }
        alloc.push(a);
    }
    for (c, members) in by_class.iter().enumerate() {
        let n = members.len() as f64;
        let mut left = members.len() - alloc[c].iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = n * fractions[a] - (n * fractions[a]).floor();
            let rb = n * fractions[b] - (n * fractions[b]).floor();
            rb.total_cmp(&ra)
        });
        for &s in order.iter() {
            if left == 0 {
                break;
            }
            if deficit[s] > 0 && (alloc[c][s] as f64) < n * fractions[s] {
                alloc[c][s] += 1;
                deficit[s] -= 1;
                left -= 1;
            }
        }
        // global targets exhausted: fall back to the class remainder order
        for &s in order.iter() {
            if left == 0 {
                break;
            }
            if (alloc[c][s] as f64) < n * fractions[s] {
                alloc[c][s] += 1;
                deficit[s] = deficit[s].saturating_sub(1);
                left -= 1;
            }
        }
    }

    let mut rng = seeded(seed);
    let mut out = ds.clone();
    for (c, members) in by_class.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let mut it = shuffled.into_iter();
        for (s, split) in Split::ALL.into_iter().enumerate() {
            for i in it.by_ref().take(alloc[c][s]) {
                out.splits[i] = split;
            }
        }
    }
    Ok(out)
}

/// Expected CSV layout. When `num_classes` is `None` it is inferred from the
/// largest label.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CsvSchema {
    pub num_classes: Option<usize>,
}

/// Reads a CSV with header `f0,...,fk,label`, preserving row order.
pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyDataset(format!("{} has no header", path.display())));
    }
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| Error::Schema(format!("{} has no `label` column", path.display())))?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&j| j != label_col).collect();
    for (k, &j) in feature_cols.iter().enumerate() {
        if headers[j].trim() != format!("f{k}") {
            return Err(Error::Schema(format!(
                "feature column {k} is named {:?}, expected \"f{k}\"",
                &headers[j]
            )));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut row = Vec::with_capacity(feature_cols.len());
        for &j in &feature_cols {
            let cell = record[j].trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("column {:?}: {cell:?} is not a number", &headers[j])))?;
            row.push(v);
        }
        let cell = record[label_col].trim();
        let y: usize = cell
            .parse()
            .map_err(|_| Error::Schema(format!("line {line}: label {cell:?} is not a class index")))?;
        features.push(row);
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no rows", path.display())));
    }
    let inferred = labels.iter().max().map_or(0, |m| m + 1);
    let num_classes = match schema.num_classes {
        Some(k) if inferred > k => {
            return Err(Error::Schema(format!("label {} out of range for {k} classes", inferred - 1)));
        }
        Some(k) => k,
        None => inferred,
    };
    Dataset::new(features, labels, num_classes)
}

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut text = (0..ds.num_features()).map(|j| format!("f{j},")).collect::<String>();
    text.push_str("label\n");
    for (row, y) in ds.features.iter().zip(&ds.labels) {
        for v in row {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{y}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Provenance record written next to generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub noise: Option<NoiseSpec>,
    pub bias_ratio: Option<f64>,
    pub split_fractions: [f64; 3],
    pub class_counts: Vec<usize>,
}
