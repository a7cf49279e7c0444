//! Datasets, synthetic generators, CSV ingestion, and IID partitioning into
//! equal disjoint shards.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_len, invalid, Error, Result};
use crate::model::{Batch, Matrix};
use crate::seed;

/// Labelled samples with `class_count` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        ensure_len("dataset labels", features.rows(), labels.len())?;
        if labels.is_empty() {
            return Err(invalid("dataset must contain at least one sample"));
        }
        if class_count == 0 {
            return Err(invalid("class_count must be >= 1"));
        }
        if let Some(i) = labels.iter().position(|&y| y >= class_count) {
            return Err(invalid(format!(
                "label {} at sample {i} is outside [0, {class_count})",
                labels[i]
            )));
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch::new(&self.features, &self.labels).expect("validated at construction")
    }

    /// Samples at `indices`, in that order. Panics on out-of-range indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.features.gather(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
        )
    }

    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("nothing to concatenate"))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            ensure_len("concatenated feature columns", first.dims(), p.dims())?;
            if p.class_count != first.class_count {
                return Err(invalid("concatenated datasets disagree on class count"));
            }
            data.extend_from_slice(p.features.as_slice());
            labels.extend_from_slice(&p.labels);
        }
        Dataset::new(
            Matrix::new(labels.len(), first.dims(), data)?,
            labels,
            first.class_count,
        )
    }

    pub fn class_frequencies(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.len() as f64)
            .collect()
    }
}

/// One participant's private slice of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub participant_id: usize,
    pub data: Dataset,
    /// Row indices into the dataset the shard was cut from.
    pub source_indices: Vec<usize>,
}

impl Shard {
    /// The whole dataset as a single shard, for centralized training.
    pub fn whole(participant_id: usize, data: Dataset) -> Self {
        let source_indices = (0..data.len()).collect();
        Self {
            participant_id,
            data,
            source_indices,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `classes` isotropic unit-variance Gaussians. With `classes <= dims` the
/// means sit on scaled basis vectors so every pair is exactly `separation`
/// apart; otherwise means are random directions at the same radius. Labels
/// cycle `0, 1, …, classes-1` so class counts differ by at most one.
pub fn gen_gaussian_blobs(
    seed: u64,
    n: usize,
    dims: usize,
    classes: usize,
    separation: f64,
) -> Result<Dataset> {
    if classes < 2 || n < classes {
        return Err(invalid(format!(
            "need n >= classes >= 2, got n = {n}, classes = {classes}"
        )));
    }
    if dims == 0 {
        return Err(invalid("dims must be >= 1"));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(invalid(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mut rng = seed::rng(seed);
    let radius = separation / 2f64.sqrt();
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            if classes <= dims {
                let mut m = vec![0.0; dims];
                m[c] = radius;
                m
            } else {
                let dir: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                dir.into_iter().map(|v| v * radius / norm).collect()
            }
        })
        .collect();

    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for m in &means[c] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(m + z);
        }
        labels.push(c);
    }
    Dataset::new(Matrix::new(n, dims, data)?, labels, classes)
}

/// Radius of the ring drawn around each XOR corner.
pub const XOR_RING_RADIUS: f64 = 0.6;

/// Two-class, 2-D task that no linear model can fit. Samples cycle through
/// the four XOR corners `(±1, ±1)`; every other pass places the sample on a
/// circle of radius [`XOR_RING_RADIUS`] around its corner instead of on the
/// corner itself, and flips its label. Gaussian jitter of scale `noise` is
/// added to both coordinates.
///
/// With `n = 4` and `noise = 0` this is exactly the four canonical XOR points.
pub fn gen_xor_rings(seed: u64, n: usize, noise: f64) -> Result<Dataset> {
    if n < 4 {
        return Err(invalid(format!("xor-rings needs n >= 4, got {n}")));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(invalid(format!("noise must be >= 0, got {noise}")));
    }
    const CORNERS: [(f64, f64, usize); 4] = [
        (-1.0, -1.0, 0),
        (-1.0, 1.0, 1),
        (1.0, -1.0, 1),
        (1.0, 1.0, 0),
    ];
    let mut rng = seed::rng(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (cx, cy, corner_label) = CORNERS[i % 4];
        let on_ring = (i / 4) % 2 == 1;
        let (mut x, mut y) = (cx, cy);
        if on_ring {
            let theta = rng.random_range(0.0..2.0 * PI);
            x += XOR_RING_RADIUS * theta.cos();
            y += XOR_RING_RADIUS * theta.sin();
        }
        if noise > 0.0 {
            x += noise * rng.sample::<f64, _>(StandardNormal);
            y += noise * rng.sample::<f64, _>(StandardNormal);
        }
        data.push(x);
        data.push(y);
        labels.push(corner_label ^ usize::from(on_ring));
    }
    Dataset::new(Matrix::new(n, 2, data)?, labels, 2)
}

/// Uniform random permutation cut into `k` contiguous chunks whose sizes
/// differ by at most one (the first `n mod k` shards get the extra sample).
pub fn partition_iid(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Shard>> {
    if k == 0 {
        return Err(invalid("participant count must be >= 1"));
    }
    let n = data.len();
    if k > n {
        return Err(invalid(format!(
            "cannot split {n} samples across {k} participants"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));

    let base = n / k;
    let extra = n % k;
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for participant_id in 0..k {
        let size = base + usize::from(participant_id < extra);
        let indices = order[start..start + size].to_vec();
        start += size;
        shards.push(Shard {
            participant_id,
            data: data.subset(&indices)?,
            source_indices: indices,
        });
    }
    Ok(shards)
}

/// Random hold-out split. Returns `(train, test)` with
/// `round(n * test_fraction)` test samples, at least one on each side.
pub fn train_test_split(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = data.len();
    if n < 2 {
        return Err(invalid("need at least 2 samples to split"));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let (test, train) = order.split_at(n_test);
    Ok((data.subset(train)?, data.subset(test)?))
}

/// Column layout of a CSV dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    /// Feature column indices; `None` means every column except the label.
    pub feature_columns: Option<Vec<usize>>,
    /// Label column index; `None` means the last column.
    pub label_column: Option<usize>,
    pub class_count: usize,
    pub has_header: bool,
}

impl CsvSchema {
    pub fn new(class_count: usize) -> Self {
        Self {
            feature_columns: None,
            label_column: None,
            class_count,
            has_header: false,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let load_err = |line: u64, message: String| Error::Load {
        path: shown.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(0, e.to_string()))?;

    let mut width = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dims = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            load_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(load_err(
                    line,
                    format!("expected {w} fields, found {}", record.len()),
                ));
            }
            Some(_) => {}
        }
        let label_col = schema
            .label_column
            .unwrap_or(record.len().saturating_sub(1));
        let feature_cols: Vec<usize> = match &schema.feature_columns {
            Some(cols) => cols.clone(),
            None => (0..record.len()).filter(|&c| c != label_col).collect(),
        };
        dims = feature_cols.len();
        for c in feature_cols {
            let field = record
                .get(c)
                .ok_or_else(|| load_err(line, format!("missing feature column {c}")))?;
            let v: f64 = field.parse().map_err(|_| {
                load_err(
                    line,
                    format!("cannot parse feature {field:?} in column {c}"),
                )
            })?;
            if !v.is_finite() {
                return Err(load_err(line, format!("non-finite feature in column {c}")));
            }
            data.push(v);
        }
        let field = record
            .get(label_col)
            .ok_or_else(|| load_err(line, format!("missing label column {label_col}")))?;
        let y: usize = field
            .parse()
            .map_err(|_| load_err(line, format!("cannot parse label {field:?}")))?;
        if y >= schema.class_count {
            return Err(load_err(
                line,
                format!("label {y} outside [0, {})", schema.class_count),
            ));
        }
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(load_err(0, "no samples".into()));
    }
    Dataset::new(
        Matrix::new(labels.len(), dims, data)?,
        labels,
        schema.class_count,
    )
}

/// Writes features followed by the label in the last column. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, header: bool) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    if header {
        let mut names: Vec<String> = (0..data.dims()).map(|i| format!("x{i}")).collect();
        names.push("label".into());
        writer.write_record(&names).map_err(csv_io)?;
    }
    for (row, y) in data.features().row_iter().zip(data.labels()) {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        fields.push(y.to_string());
        writer.write_record(&fields).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_disjointness() {
        let data = gen_gaussian_blobs(1, 50, 2, 2, 3.0).unwrap();
        let (train, test) = train_test_split(&data, 0.2, 4).unwrap();
        assert_eq!((train.len(), test.len()), (40, 10));
        let whole = Dataset::concat(&[train, test]).unwrap();
        let key = |d: &Dataset| {
            let mut rows: Vec<Vec<u64>> = d
                .features()
                .row_iter()
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            rows
        };
        assert_eq!(key(&whole), key(&data));
        assert!(train_test_split(&data, 1.0, 0).is_err());
        assert_eq!(train_test_split(&data, 0.001, 0).unwrap().1.len(), 1);
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = gen_gaussian_blobs(7, 50, 3, 4, 2.0).unwrap();
        let b = gen_gaussian_blobs(7, 50, 3, 4, 2.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_gaussian_blobs(8, 50, 3, 4, 2.0).unwrap());
    }

    #[test]
    fn blobs_balanced() {
        let d = gen_gaussian_blobs(1, 10, 2, 2, 1.0).unwrap();
        assert_eq!(d.labels().iter().filter(|&&y| y == 0).count(), 5);
        assert_eq!(d.labels().iter().filter(|&&y| y == 1).count(), 5);
    }

    #[test]
    fn blobs_more_classes_than_dims() {
        let d = gen_gaussian_blobs(1, 30, 2, 5, 3.0).unwrap();
        assert_eq!(d.dims(), 2);
        assert_eq!(d.class_count(), 5);
    }

    #[test]
    fn blob_arguments_validated() {
        assert!(gen_gaussian_blobs(0, 10, 2, 1, 1.0).is_err());
        assert!(gen_gaussian_blobs(0, 2, 2, 3, 1.0).is_err());
        assert!(gen_gaussian_blobs(0, 10, 0, 2, 1.0).is_err());
        assert!(gen_gaussian_blobs(0, 10, 2, 2, 0.0).is_err());
    }

    #[test]
    fn xor_four_points() {
        let d = gen_xor_rings(3, 4, 0.0).unwrap();
        let expected = [
            (-1.0, -1.0, 0),
            (-1.0, 1.0, 1),
            (1.0, -1.0, 1),
            (1.0, 1.0, 0),
        ];
        for (i, (x, y, label)) in expected.into_iter().enumerate() {
            assert_eq!(d.features().row(i), &[x, y]);
            assert_eq!(d.labels()[i], label);
        }
    }

    #[test]
    fn xor_rings_deterministic_and_balanced() {
        let a = gen_xor_rings(9, 800, 0.1).unwrap();
        assert_eq!(a, gen_xor_rings(9, 800, 0.1).unwrap());
        assert_eq!(a.class_frequencies(), vec![0.5, 0.5]);
        assert!(gen_xor_rings(9, 3, 0.0).is_err());
        assert!(gen_xor_rings(9, 8, -0.1).is_err());
    }

    #[test]
    fn partition_sizes() {
        let d = gen_gaussian_blobs(0, 10, 2, 2, 1.0).unwrap();
        let shards = partition_iid(&d, 5, 1).unwrap();
        assert!(shards.iter().all(|s| s.len() == 2));

        let d = gen_gaussian_blobs(0, 100, 2, 2, 1.0).unwrap();
        let sizes: Vec<usize> = partition_iid(&d, 7, 1)
            .unwrap()
            .iter()
            .map(Shard::len)
            .collect();
        assert_eq!(sizes, vec![15, 15, 14, 14, 14, 14, 14]);
    }

    #[test]
    fn partition_single_shard_is_permutation() {
        let d = gen_gaussian_blobs(0, 20, 2, 2, 1.0).unwrap();
        let shards = partition_iid(&d, 1, 4).unwrap();
        let mut idx = shards[0].source_indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
        for (pos, &src) in shards[0].source_indices.iter().enumerate() {
            assert_eq!(shards[0].data.features().row(pos), d.features().row(src));
        }
    }

    #[test]
    fn partition_errors() {
        let d = gen_gaussian_blobs(0, 4, 2, 2, 1.0).unwrap();
        assert!(partition_iid(&d, 5, 0).is_err());
        assert!(partition_iid(&d, 0, 0).is_err());
    }

    #[test]
    fn csv_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "0.5,1.5,1\n-2,3e-1,0\n").unwrap();
        let d = load_csv(&path, &CsvSchema::new(2)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.features().row(1), &[-2.0, 0.3]);
        assert_eq!(d.labels(), &[1, 0]);
    }

    #[test]
    fn csv_label_out_of_range_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "a,b,label\n0.5,1.5,1\n0.1,0.2,2\n").unwrap();
        let schema = CsvSchema {
            has_header: true,
            ..CsvSchema::new(2)
        };
        match load_csv(&path, &schema) {
            Err(Error::Load { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "0.5,1.5,1\n0.1,0\n").unwrap();
        assert!(matches!(
            load_csv(&path, &CsvSchema::new(2)),
            Err(Error::Load { line: 2, .. })
        ));
        std::fs::write(&path, "0.5,abc,1\n").unwrap();
        assert!(matches!(
            load_csv(&path, &CsvSchema::new(2)),
            Err(Error::Load { line: 1, .. })
        ));
    }

    #[test]
    fn csv_explicit_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "2,0.5,9,1.5\n0,0.25,9,2.5\n").unwrap();
        let schema = CsvSchema {
            feature_columns: Some(vec![1, 3]),
            label_column: Some(0),
            ..CsvSchema::new(3)
        };
        let d = load_csv(&path, &schema).unwrap();
        assert_eq!(d.features().row(0), &[0.5, 1.5]);
        assert_eq!(d.labels(), &[2, 0]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_gaussian_blobs(5, 40, 3, 4, 2.5).unwrap();
        for header in [false, true] {
            let path = dir.path().join(format!("rt{header}.csv"));
            write_csv(&path, &d, header).unwrap();
            let schema = CsvSchema {
                has_header: header,
                ..CsvSchema::new(4)
            };
            assert_eq!(load_csv(&path, &schema).unwrap(), d);
        }
    }
}
