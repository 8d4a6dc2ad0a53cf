use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{arg_err, Error, Result};
use crate::numerics::{Mat, Rng};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled samples stored row-wise, one feature vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: Mat,
    labels: Vec<usize>,
    num_classes: usize,
    data_range: (f64, f64),
}

impl Dataset {
    /// Validates lengths, label range and feature range.
    pub fn new(
        name: impl Into<String>,
        features: Mat,
        labels: Vec<usize>,
        num_classes: usize,
        data_range: (f64, f64),
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return arg_err(format!("{} feature rows but {} labels", features.rows(), labels.len()));
        }
        if num_classes < 2 {
            return arg_err(format!("need at least 2 classes, got {num_classes}"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return arg_err(format!("label {bad} out of range for {num_classes} classes"));
        }
        let (lo, hi) = data_range;
        if !(lo < hi) {
            return arg_err(format!("invalid data range {data_range:?}"));
        }
        if let Some(i) = features.as_slice().iter().position(|v| !(lo..=hi).contains(v)) {
            return arg_err(format!(
                "feature {} of sample {} lies outside [{lo}, {hi}]",
                i % features.cols(),
                i / features.cols()
            ));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            num_classes,
            data_range,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data_range(&self) -> (f64, f64) {
        self.data_range
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return arg_err(format!("sample index {bad} out of range for {} samples", self.len()));
        }
        let d = self.input_dim();
        let mut features = Mat::zeros(indices.len(), d);
        for (r, &i) in indices.iter().enumerate() {
            features.row_mut(r).copy_from_slice(self.features.row(i));
        }
        Ok(Self {
            name: self.name.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            data_range: self.data_range,
        })
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return arg_err(format!("requested {n} samples from a dataset of {}", self.len()));
        }
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    /// Per-sample feature vectors as owned rows.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.features.row(i).to_vec()).collect()
    }
}

/// Reads a file, transparently gunzipping it when it starts with the gzip
/// magic bytes.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                offset: 0,
                message: format!("{}: bad gzip stream: {e}", path.display()),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: format!("truncated header while reading {what}"),
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad {what} magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

/// Parses IDX image bytes into `(count, rows·cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    check_magic(bytes, IMAGES_MAGIC, "image file")?;
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::Format {
            offset: 8,
            message: format!("image shape {rows}x{cols} is empty"),
        });
    }
    let expected = 16 + count * dim;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated pixel data: expected {expected} bytes, found {}", bytes.len()),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            offset: expected as u64,
            message: format!("{} trailing bytes after pixel data", bytes.len() - expected),
        });
    }
    Ok((count, dim, &bytes[16..]))
}

/// Parses IDX label bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, LABELS_MAGIC, "label file")?;
    let count = be_u32(bytes, 4, "label count")? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated label data: expected {expected} bytes, found {}", bytes.len()),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            offset: expected as u64,
            message: format!("{} trailing bytes after label data", bytes.len() - expected),
        });
    }
    Ok(&bytes[8..])
}

/// Loads an MNIST-style IDX pair (optionally gzipped) and scales pixels by
/// 1/255 into [0, 1]. Labels must be below 10.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let img_bytes = read_maybe_gz(images.as_ref())?;
    let lbl_bytes = read_maybe_gz(labels.as_ref())?;
    let (count, dim, pixels) = parse_idx_images(&img_bytes)?;
    let lbls = parse_idx_labels(&lbl_bytes)?;
    if lbls.len() != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("{count} images but {} labels", lbls.len()),
        });
    }
    if let Some(i) = lbls.iter().position(|&y| y >= 10) {
        return Err(Error::Format {
            offset: 8 + i as u64,
            message: format!("label {} is not a digit", lbls[i]),
        });
    }
    if count == 0 {
        return Err(Error::Format {
            offset: 4,
            message: "file contains no samples".into(),
        });
    }
    let features: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let name = images
        .as_ref()
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(
        name,
        Mat::new(count, dim, features)?,
        lbls.iter().map(|&y| usize::from(y)).collect(),
        10,
        (0.0, 1.0),
    )
}

/// Writes a dataset as an uncompressed IDX pair. Features are mapped from
/// the data range onto bytes with rounding, so datasets whose values are
/// multiples of 1/255 over [0, 1] round-trip exactly. Images are written as
/// a single row of `d` pixels.
pub fn write_idx(data: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    if data.num_classes() > 256 {
        return arg_err("IDX labels are single bytes");
    }
    let (lo, hi) = data.data_range();
    let n = data.len();
    let d = data.input_dim();
    let mut img = Vec::with_capacity(16 + n * d);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&1u32.to_be_bytes());
    img.extend_from_slice(&(d as u32).to_be_bytes());
    img.extend(
        data.features()
            .as_slice()
            .iter()
            .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8),
    );
    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    lbl.extend(data.labels().iter().map(|&y| y as u8));
    fs::write(images, img)?;
    fs::write(labels, lbl)?;
    Ok(())
}

/// Deterministic class centers used by [`synth_blobs`], uniform in
/// [0.2, 0.8]^d.
pub fn blob_centers(seed: u64, d: usize, num_classes: usize) -> Vec<Vec<f64>> {
    let mut rng = Rng::seeded(seed);
    (0..num_classes)
        .map(|_| (0..d).map(|_| rng.uniform_in(0.2, 0.8)).collect())
        .collect()
}

/// `n` samples from `num_classes` isotropic Gaussian blobs with standard
/// deviation `spread`, clipped to [0, 1]. Sample `i` has label `i mod C`.
pub fn synth_blobs(seed: u64, n: usize, d: usize, num_classes: usize, spread: f64) -> Result<Dataset> {
    if num_classes < 2 {
        return arg_err(format!("need at least 2 classes, got {num_classes}"));
    }
    if d == 0 || !(spread >= 0.0 && spread.is_finite()) {
        return arg_err(format!("invalid blob parameters d={d}, spread={spread}"));
    }
    let centers = blob_centers(seed, d, num_classes);
    let mut rng = Rng::seeded(seed.wrapping_add(1));
    let mut features = Mat::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % num_classes;
        for (f, c) in features.row_mut(i).iter_mut().zip(&centers[y]) {
            *f = (c + spread * rng.normal()).clamp(0.0, 1.0);
        }
        labels.push(y);
    }
    Dataset::new(format!("blobs-{seed}"), features, labels, num_classes, (0.0, 1.0))
}

/// Draws a target class per label, uniform over the classes other than the
/// true one.
pub fn sample_targets(labels: &[usize], num_classes: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return arg_err("targeted attacks need at least 2 classes");
    }
    labels
        .iter()
        .map(|&y| {
            if y >= num_classes {
                return arg_err(format!("label {y} out of range for {num_classes} classes"));
            }
            let t = rng.below(num_classes - 1);
            Ok(if t >= y { t + 1 } else { t })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_image_bytes(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn handcrafted_image_loads_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        fs::write(&img, idx_image_bytes(1, 2, 2, &[0, 51, 255, 102])).unwrap();
        fs::write(&lbl, idx_label_bytes(&[7])).unwrap();
        let data = load_mnist_idx(&img, &lbl).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data.input_dim(), 4);
        assert_eq!(data.features().row(0), &[0.0, 0.2, 1.0, 0.4]);
        assert_eq!(data.labels(), &[7]);
    }

    #[test]
    fn gzip_files_are_accepted() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.gz");
        let lbl = dir.path().join("lbl");
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&idx_image_bytes(2, 1, 1, &[0, 255])).unwrap();
        fs::write(&img, enc.finish().unwrap()).unwrap();
        fs::write(&lbl, idx_label_bytes(&[1, 2])).unwrap();
        let data = load_mnist_idx(&img, &lbl).unwrap();
        assert_eq!(data.features().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn format_errors_name_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        fs::write(&lbl, idx_label_bytes(&[1, 2])).unwrap();

        fs::write(&img, idx_image_bytes(1, 1, 2, &[0, 1])).unwrap();
        let err = load_mnist_idx(&img, &lbl).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }), "{err}");

        fs::write(&img, idx_image_bytes(2, 1, 2, &[0, 1, 2])).unwrap();
        let err = load_mnist_idx(&img, &lbl).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 19, .. }), "{err}");

        let mut bad = idx_image_bytes(2, 1, 1, &[0, 1]);
        bad[3] = 0x01;
        fs::write(&img, bad).unwrap();
        let err = load_mnist_idx(&img, &lbl).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");

        fs::write(&img, &IMAGES_MAGIC.to_be_bytes()[..3]).unwrap();
        assert!(matches!(
            load_mnist_idx(&img, &lbl),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn idx_round_trip_is_exact() {
        let raw = synth_blobs(3, 40, 9, 4, 0.2).unwrap();
        let quantized: Vec<f64> = raw
            .features()
            .as_slice()
            .iter()
            .map(|v| (v * 255.0).round() / 255.0)
            .collect();
        let data = Dataset::new(
            "q",
            Mat::new(40, 9, quantized).unwrap(),
            raw.labels().to_vec(),
            10,
            (0.0, 1.0),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&data, &img, &lbl).unwrap();
        let back = load_mnist_idx(&img, &lbl).unwrap();
        assert_eq!(back.features(), data.features());
        assert_eq!(back.labels(), data.labels());
    }

    #[test]
    fn blobs_are_deterministic_and_centered() {
        let a = synth_blobs(11, 3000, 5, 3, 0.05).unwrap();
        assert_eq!(a, synth_blobs(11, 3000, 5, 3, 0.05).unwrap());
        let centers = blob_centers(11, 5, 3);
        let tol = 3.0 * 0.05 / (1000f64).sqrt();
        for (c, center) in centers.iter().enumerate() {
            let rows: Vec<&[f64]> = (0..a.len())
                .filter(|&i| a.labels()[i] == c)
                .map(|i| a.features().row(i))
                .collect();
            for j in 0..5 {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
                assert!((mean - center[j]).abs() <= tol, "class {c} dim {j}");
            }
        }
        assert!(synth_blobs(1, 10, 2, 1, 0.1).is_err());
    }

    #[test]
    fn targets_avoid_the_true_class() {
        let mut rng = Rng::seeded(5);
        let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let t = sample_targets(&labels, 2, &mut rng).unwrap();
        assert!(t.iter().zip(&labels).all(|(t, y)| *t == 1 - y));

        let labels = vec![3usize; 100_000];
        let t = sample_targets(&labels, 10, &mut rng).unwrap();
        let mut counts = [0f64; 10];
        t.iter().for_each(|&c| counts[c] += 1.0);
        assert_eq!(counts[3], 0.0);
        let expected = 100_000.0 / 9.0;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != 3)
            .map(|(_, &o)| (o - expected).powi(2) / expected)
            .sum();
        // 99th percentile of chi-squared with 8 degrees of freedom
        assert!(chi2 < 20.09, "chi2 = {chi2}");
    }

    #[test]
    fn subsets_and_validation() {
        let a = synth_blobs(1, 10, 3, 2, 0.1).unwrap();
        let s = a.subset(&[4, 1]).unwrap();
        assert_eq!(s.features().row(0), a.features().row(4));
        assert_eq!(s.labels(), &[a.labels()[4], a.labels()[1]]);
        assert!(a.subset(&[10]).is_err());
        assert!(a.subset(&[]).unwrap().is_empty());
        assert!(Dataset::new("x", Mat::new(1, 1, vec![2.0]).unwrap(), vec![0], 2, (0.0, 1.0)).is_err());
        assert!(Dataset::new("x", Mat::new(1, 1, vec![0.5]).unwrap(), vec![2], 2, (0.0, 1.0)).is_err());
    }
}
