//! Dataset file formats: csv (label first), CIFAR-style binary records, and
//! IDX image/label pairs. Export mirrors ingest byte for byte.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use longtail_core::data::LabeledDataset;
use longtail_core::tensor::Tensor;

/// Bytes per CIFAR record: one label byte plus 32·32·3 pixels.
const CIFAR_PIXELS: usize = 3072;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    CifarBinary,
    Idx,
}

impl DataFormat {
    pub fn parse(name: &str) -> Result<Self, FormatError> {
        match name {
            "csv" => Ok(DataFormat::Csv),
            "cifar_binary" | "cifar" => Ok(DataFormat::CifarBinary),
            "idx" | "idx_images" => Ok(DataFormat::Idx),
            other => Err(FormatError::new(format!("unknown data format '{other}'"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            DataFormat::Csv => "csv",
            DataFormat::CifarBinary => "bin",
            DataFormat::Idx => "idx3-ubyte",
        }
    }

    /// File name for a named split; idx splits carry the `images` marker so
    /// the labels path derives from it.
    pub fn split_filename(self, split: &str) -> String {
        match self {
            DataFormat::Csv => format!("{split}.csv"),
            DataFormat::CifarBinary => format!("{split}.bin"),
            DataFormat::Idx => format!("{split}-images-idx3-ubyte"),
        }
    }
}

#[derive(Debug)]
pub struct FormatError {
    message: String,
}

impl FormatError {
    fn new(message: String) -> Self {
        Self { message }
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for FormatError {}

impl From<std::io::Error> for FormatError {
    fn from(e: std::io::Error) -> Self {
        FormatError::new(format!("io error: {e}"))
    }
}

impl From<longtail_core::Error> for FormatError {
    fn from(e: longtail_core::Error) -> Self {
        FormatError::new(e.to_string())
    }
}

impl From<csv::Error> for FormatError {
    fn from(e: csv::Error) -> Self {
        FormatError::new(format!("csv: {e}"))
    }
}

/// Load a dataset. For [`DataFormat::Idx`] the labels file is `path` with
/// `images` replaced by `labels` unless `labels_path` is given.
pub fn ingest(
    path: &Path,
    format: DataFormat,
    labels_path: Option<&Path>,
) -> Result<LabeledDataset, FormatError> {
    match format {
        DataFormat::Csv => ingest_csv(path),
        DataFormat::CifarBinary => ingest_cifar(path),
        DataFormat::Idx => {
            let labels = match labels_path {
                Some(p) => p.to_path_buf(),
                None => derive_idx_labels_path(path)?,
            };
            ingest_idx(path, &labels)
        }
    }
}

/// Write a dataset in the given format. For IDX this produces two files:
/// `path` (images) and the derived or default labels path.
pub fn export(
    ds: &LabeledDataset,
    path: &Path,
    format: DataFormat,
    labels_path: Option<&Path>,
) -> Result<(), FormatError> {
    match format {
        DataFormat::Csv => export_csv(ds, path),
        DataFormat::CifarBinary => export_cifar(ds, path),
        DataFormat::Idx => {
            let labels = match labels_path {
                Some(p) => p.to_path_buf(),
                None => derive_idx_labels_path(path)?,
            };
            export_idx(ds, path, &labels)
        }
    }
}

fn derive_idx_labels_path(images: &Path) -> Result<std::path::PathBuf, FormatError> {
    let name = images
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| FormatError::new(format!("bad idx path {}", images.display())))?;
    if !name.contains("images") {
        return Err(FormatError::new(format!(
            "cannot derive labels path from '{name}' (no 'images' in the name); pass it explicitly"
        )));
    }
    Ok(images.with_file_name(name.replace("images", "labels").replace("idx3", "idx1")))
}

// ── csv: one row per example, label first ───────────────────────────

fn ingest_csv(path: &Path) -> Result<LabeledDataset, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| FormatError::new(format!("{}: {e}", path.display())))?;

    let mut labels: Vec<usize> = Vec::new();
    let mut features: Vec<f64> = Vec::new();
    let mut dims: Option<usize> = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| FormatError::new(format!("{}: {e}", path.display())))?;
        let line = row + 1;
        if record.len() < 2 {
            return Err(FormatError::new(format!(
                "{} line {line}: need a label plus at least one feature, got {} fields",
                path.display(),
                record.len()
            )));
        }
        let d = record.len() - 1;
        match dims {
            None => dims = Some(d),
            Some(expect) if expect != d => {
                return Err(FormatError::new(format!(
                    "{} line {line}: {d} features but earlier rows had {expect}",
                    path.display()
                )));
            }
            _ => {}
        }
        let label: usize = record[0].trim().parse().map_err(|_| {
            FormatError::new(format!(
                "{} line {line}: bad label '{}'",
                path.display(),
                &record[0]
            ))
        })?;
        labels.push(label);
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                FormatError::new(format!(
                    "{} line {line} column {}: bad number '{field}'",
                    path.display(),
                    col + 2
                ))
            })?;
            features.push(v);
        }
    }
    let dims = dims.ok_or_else(|| FormatError::new(format!("{}: empty csv", path.display())))?;
    let n = labels.len();
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let tensor = Tensor::from_vec(vec![n, dims], features)?;
    Ok(LabeledDataset::new(tensor, labels, num_classes)?)
}

fn export_csv(ds: &LabeledDataset, path: &Path) -> Result<(), FormatError> {
    let dims: usize = ds.example_shape().iter().product();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for (i, &label) in ds.labels().iter().enumerate() {
        let mut row: Vec<String> = Vec::with_capacity(dims + 1);
        row.push(label.to_string());
        for v in &ds.features().data()[i * dims..(i + 1) * dims] {
            // RFC-compliant f64 text round-trip.
            row.push(format!("{v:?}"));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ── cifar binary: [label u8][3072 pixel u8] per record ──────────────

fn ingest_cifar(path: &Path) -> Result<LabeledDataset, FormatError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| FormatError::new(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let record = 1 + CIFAR_PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(FormatError::new(format!(
            "{}: {} bytes is not a whole number of {record}-byte records (offset {})",
            path.display(),
            bytes.len(),
            bytes.len() - bytes.len() % record
        )));
    }
    let n = bytes.len() / record;
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * CIFAR_PIXELS);
    for chunk in bytes.chunks_exact(record) {
        labels.push(chunk[0] as usize);
        features.extend(chunk[1..].iter().map(|&b| b as f64 / 255.0));
    }
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let tensor = Tensor::from_vec(vec![n, CIFAR_PIXELS], features)?;
    Ok(LabeledDataset::new(tensor, labels, num_classes)?)
}

fn export_cifar(ds: &LabeledDataset, path: &Path) -> Result<(), FormatError> {
    let dims: usize = ds.example_shape().iter().product();
    if dims != CIFAR_PIXELS {
        return Err(FormatError::new(format!(
            "cifar_binary wants {CIFAR_PIXELS} features per example, got {dims}"
        )));
    }
    let mut out = Vec::with_capacity(ds.len() * (1 + CIFAR_PIXELS));
    for (i, &label) in ds.labels().iter().enumerate() {
        if label > u8::MAX as usize {
            return Err(FormatError::new(format!(
                "label {label} does not fit in one byte"
            )));
        }
        out.push(label as u8);
        for v in &ds.features().data()[i * dims..(i + 1) * dims] {
            out.push((v * 255.0).round() as u8);
        }
    }
    write_file(path, &out)
}

// ── idx: big-endian magic + dims header, u8 payload ─────────────────

fn ingest_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, FormatError> {
    let images = read_idx(images_path, 0x0803, 3)?;
    let labels = read_idx(labels_path, 0x0801, 1)?;
    let (n, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(FormatError::new(format!(
            "{} has {n} images but {} has {} labels",
            images_path.display(),
            labels_path.display(),
            labels.dims[0]
        )));
    }
    let features: Vec<f64> = images.payload.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels.payload.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let tensor = Tensor::from_vec(vec![n, rows * cols], features)?;
    Ok(LabeledDataset::new(tensor, labels, num_classes)?)
}

struct IdxFile {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn read_idx(path: &Path, magic: u32, ndims: usize) -> Result<IdxFile, FormatError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| FormatError::new(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(FormatError::new(format!(
            "{}: truncated header at byte {}",
            path.display(),
            bytes.len()
        )));
    }
    let got = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if got != magic {
        return Err(FormatError::new(format!(
            "{}: magic 0x{got:08x} at offset 0, expected 0x{magic:08x}",
            path.display()
        )));
    }
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let off = 4 + 4 * i;
        dims.push(
            u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
                as usize,
        );
    }
    let expected: usize = dims.iter().product();
    let payload = bytes[header..].to_vec();
    if payload.len() != expected {
        return Err(FormatError::new(format!(
            "{}: payload is {} bytes at offset {header}, dims {dims:?} want {expected}",
            path.display(),
            payload.len()
        )));
    }
    Ok(IdxFile { dims, payload })
}

fn export_idx(
    ds: &LabeledDataset,
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), FormatError> {
    let dims: usize = ds.example_shape().iter().product();
    // Flat features export as n×dims×1 "rows" so ingest round-trips.
    let (rows, cols) = (dims, 1usize);
    let n = ds.len();

    let mut images = Vec::with_capacity(16 + n * dims);
    images.extend_from_slice(&0x0803u32.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for v in ds.features().data() {
        images.push((v * 255.0).round() as u8);
    }
    write_file(images_path, &images)?;

    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&0x0801u32.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in ds.labels() {
        if l > u8::MAX as usize {
            return Err(FormatError::new(format!(
                "label {l} does not fit in one byte"
            )));
        }
        labels.push(l as u8);
    }
    write_file(labels_path, &labels)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let mut f =
        fs::File::create(path).map_err(|e| FormatError::new(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use longtail_core::data::SynthGaussian;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("data.csv");
        let ds = SynthGaussian::new(3, 4, 5.0, 1)
            .unwrap()
            .balanced(5, "t")
            .unwrap();
        export(&ds, &path, DataFormat::Csv, None).unwrap();
        let back = ingest(&path, DataFormat::Csv, None).unwrap();
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.features().data(), ds.features().data());
        assert_eq!(back.num_classes(), 3);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tmpdir();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "0,1.0,2.0\n1,oops,3.0\n").unwrap();
        let err = ingest(&path, DataFormat::Csv, None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        let err = ingest(&empty, DataFormat::Csv, None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("empty"), "{err}");
    }

    #[test]
    fn cifar_binary_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("batch.bin");
        let mut bytes = Vec::new();
        for label in [3u8, 0, 7] {
            bytes.push(label);
            bytes.extend((0..CIFAR_PIXELS).map(|i| ((i * 7 + label as usize) % 256) as u8));
        }
        std::fs::write(&path, &bytes).unwrap();
        let ds = ingest(&path, DataFormat::CifarBinary, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.example_shape(), &[CIFAR_PIXELS]);
        assert!(ds
            .features()
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));

        let out = dir.path().join("export.bin");
        export(&ds, &out, DataFormat::CifarBinary, None).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), bytes, "byte-exact round trip");
    }

    #[test]
    fn cifar_rejects_partial_records() {
        let dir = tmpdir();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, vec![0u8; 3000]).unwrap();
        let err = ingest(&path, DataFormat::CifarBinary, None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("3000 bytes"), "{err}");
    }

    #[test]
    fn idx_round_trip_and_derived_labels_path() {
        let dir = tmpdir();
        let images = dir.path().join("train-images-idx3-ubyte");
        let labels = dir.path().join("train-labels-idx1-ubyte");

        let mut img = Vec::new();
        img.extend_from_slice(&0x0803u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend((0..12).map(|i| (i * 20) as u8));
        std::fs::write(&images, &img).unwrap();

        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0801u32.to_be_bytes());
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&[1u8, 0]);
        std::fs::write(&labels, &lab).unwrap();

        let ds = ingest(&images, DataFormat::Idx, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.example_shape(), &[6]);

        let out_img = dir.path().join("out-images-idx3-ubyte");
        export(&ds, &out_img, DataFormat::Idx, None).unwrap();
        let back = ingest(&out_img, DataFormat::Idx, None).unwrap();
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.features().data(), ds.features().data());
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let dir = tmpdir();
        let path = dir.path().join("x-images");
        std::fs::write(&path, [0u8, 0, 8, 9, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        let err = ingest(&path, DataFormat::Idx, Some(&path))
            .unwrap_err()
            .to_string();
        assert!(err.contains("magic") && err.contains("offset 0"), "{err}");
    }
}
