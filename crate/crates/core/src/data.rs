//! Datasets: IDX loading, synthetic Gaussian classes, splits and normalization.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Image layout `(channels, height, width)`.
pub type ImageShape = (usize, usize, usize);

/// Images stored flat, one `channels·H·W` block per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub shape: ImageShape,
    pub class_count: usize,
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: ImageShape,
        class_count: usize,
        images: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let stride = shape.0 * shape.1 * shape.2;
        if stride == 0 || images.len() != stride * labels.len() {
            return Err(Error::CountMismatch {
                images: images.len().checked_div(stride).unwrap_or(0),
                labels: labels.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::shape(
                "Dataset::new",
                format!("label {y} outside {class_count} classes"),
            ));
        }
        Ok(Self {
            name: name.into(),
            shape,
            class_count,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let n = self.image_len();
        let mut images = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Self {
            name: self.name.clone(),
            shape: self.shape,
            class_count: self.class_count,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn need(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<()> {
    need(path, bytes, 4)?;
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Reads an IDX image/label pair. Pixels are mapped to `[0, 1]` by `/255`;
/// the class count is one more than the largest label (at least 2).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_bytes(ip)?;
    let lab = read_bytes(lp)?;

    check_magic(ip, &img, IMAGES_MAGIC)?;
    need(ip, &img, 16)?;
    let n = be_u32(&img, 4) as usize;
    let (h, w) = (be_u32(&img, 8) as usize, be_u32(&img, 12) as usize);
    need(ip, &img, 16 + n * h * w)?;

    check_magic(lp, &lab, LABELS_MAGIC)?;
    need(lp, &lab, 8)?;
    let m = be_u32(&lab, 4) as usize;
    need(lp, &lab, 8 + m)?;

    if n != m {
        return Err(Error::CountMismatch {
            images: n,
            labels: m,
        });
    }
    let images = img[16..16 + n * h * w].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab[8..8 + m].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(2, |&y| (y + 1).max(2));
    let name = ip
        .file_name()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, (1, h, w), class_count, images, labels)
}

/// Writes a single-channel dataset as an IDX pair; pixels are quantized to
/// `round(255·x)`.
pub fn write_idx(
    ds: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if ds.shape.0 != 1 {
        return Err(Error::shape("write_idx", "IDX images hold one channel"));
    }
    if ds.class_count > 256 {
        return Err(Error::shape("write_idx", "labels must fit in a byte"));
    }
    let n = ds.len() as u32;
    let mut img = Vec::with_capacity(16 + ds.images.len());
    for v in [IMAGES_MAGIC, n, ds.shape.1 as u32, ds.shape.2 as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(ds.images.iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(ds.labels.iter().map(|&y| y as u8));

    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}

/// Unit vectors pointing at the vertices of a regular simplex centred on the
/// origin, embedded in the first `classes` coordinates of `R^dim`.
fn simplex_means(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let k = classes as f64;
    let norm = ((k - 1.0) / k).sqrt();
    (0..classes)
        .map(|c| {
            let mut v = vec![0.0; dim];
            for (j, x) in v.iter_mut().take(classes).enumerate() {
                *x = (f64::from(u8::from(j == c)) - 1.0 / k) / norm;
            }
            v
        })
        .collect()
}

/// `per_class` samples per class; class means sit on a unit simplex scaled by
/// `separation`, plus unit-variance Gaussian noise. Sample order is shuffled.
pub fn synth_gaussians(
    classes: usize,
    per_class: usize,
    shape: ImageShape,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    let dim = shape.0 * shape.1 * shape.2;
    if classes < 2 {
        return Err(Error::Config("synthetic data needs at least 2 classes".into()));
    }
    if dim < classes {
        return Err(Error::Config(format!(
            "image of {dim} values cannot hold a {classes}-class simplex"
        )));
    }
    let means = simplex_means(classes, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    labels.shuffle(&mut rng);
    let mut images = Vec::with_capacity(labels.len() * dim);
    for &y in &labels {
        for m in &means[y] {
            let z: f64 = StandardNormal.sample(&mut rng);
            images.push(separation * m + z);
        }
    }
    Dataset::new(format!("gaussians-{classes}"), shape, classes, images, labels)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            val_fraction: 0.05,
            seed: 0,
        }
    }
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded shuffle, then the first `round(N·f)` samples become validation.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(ds.len(), spec)?;
    Ok((ds.select(&train), ds.select(&val)))
}

/// Index form of [`split`]: `(train, val)`.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.val_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config(format!("val_fraction {f} outside (0, 1)")));
    }
    let want = n as f64 * f;
    let n_val = want.round() as usize;
    if want < 1.0 || n_val >= n {
        return Err(Error::TooSmall(format!(
            "{n} samples at val_fraction {f} leave an empty part"
        )));
    }
    let idx = shuffled_indices(n, spec.seed);
    Ok((idx[n_val..].to_vec(), idx[..n_val].to_vec()))
}

/// Seed-selected disjoint subsets of the requested sizes.
pub fn disjoint_subsets(ds: &Dataset, sizes: &[usize], seed: u64) -> Result<Vec<Dataset>> {
    let total: usize = sizes.iter().sum();
    if total > ds.len() {
        return Err(Error::TooSmall(format!(
            "requested {total} samples from a set of {}",
            ds.len()
        )));
    }
    let idx = shuffled_indices(ds.len(), seed);
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let part = ds.select(&idx[start..start + s]);
            start += s;
            part
        })
        .collect())
}

/// Per-channel `(x − mean) / std`.
pub fn normalize(ds: &Dataset, mean: &[f64], std: &[f64]) -> Result<Dataset> {
    affine_per_channel(ds, mean, std, |x, m, s| (x - m) / s)
}

pub fn denormalize(ds: &Dataset, mean: &[f64], std: &[f64]) -> Result<Dataset> {
    affine_per_channel(ds, mean, std, |x, m, s| x * s + m)
}

fn affine_per_channel(
    ds: &Dataset,
    mean: &[f64],
    std: &[f64],
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<Dataset> {
    let c = ds.shape.0;
    if mean.len() != c || std.len() != c {
        return Err(Error::shape(
            "normalize",
            format!("{c} channels, {} means, {} stds", mean.len(), std.len()),
        ));
    }
    if let Some(&s) = std.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::ZeroStd(s));
    }
    let plane = ds.shape.1 * ds.shape.2;
    let mut out = ds.clone();
    for (k, x) in out.images.iter_mut().enumerate() {
        let ch = (k / plane) % c;
        *x = f(*x, mean[ch], std[ch]);
    }
    Ok(out)
}

/// Per-channel mean and (population) standard deviation.
pub fn channel_stats(ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let c = ds.shape.0;
    let plane = ds.shape.1 * ds.shape.2;
    let mut sum = vec![0.0; c];
    let mut sq = vec![0.0; c];
    for (k, &x) in ds.images.iter().enumerate() {
        let ch = (k / plane) % c;
        sum[ch] += x;
        sq[ch] += x * x;
    }
    let per = (ds.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / per).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / per - m * m).max(0.0).sqrt())
        .collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_bytes() -> (Vec<u8>, Vec<u8>) {
        // two 2×3 images, labels 7 and 2
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        img.extend([0, 51, 102, 153, 204, 255, 255, 0, 1, 2, 3, 4]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 2];
        (img, lab)
    }

    fn write_fixture(dir: &Path, img: &[u8], lab: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img");
        let lp = dir.join("lab");
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn byte_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture_bytes();
        let (ip, lp) = write_fixture(dir.path(), &img, &lab);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.shape, (1, 2, 3));
        assert_eq!(ds.labels, vec![7, 2]);
        assert_eq!(ds.class_count, 8);
        assert_eq!(ds.image(0), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(ds.image(1)[0], 1.0);
        assert_eq!(ds.image(1)[5], 4.0 / 255.0);

        let (ip2, lp2) = (dir.path().join("img2"), dir.path().join("lab2"));
        write_idx(&ds, &ip2, &lp2).unwrap();
        assert_eq!(fs::read(&ip2).unwrap(), img);
        assert_eq!(fs::read(&lp2).unwrap(), lab);
    }

    #[test]
    fn wrong_label_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (img, mut lab) = fixture_bytes();
        lab[3] = 3;
        let (ip, lp) = write_fixture(dir.path(), &img, &lab);
        match load_idx(&ip, &lp) {
            Err(Error::BadMagic { expected, found, .. }) => {
                assert_eq!((expected, found), (LABELS_MAGIC, 0x803));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture_bytes();
        let (ip, lp) = write_fixture(dir.path(), &img[..20], &lab);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::TruncatedFile { expected: 28, found: 20, .. })));
        let mut short = lab.clone();
        short[7] = 1;
        short.pop();
        let (ip, lp) = write_fixture(dir.path(), &img, &short);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::CountMismatch { images: 2, labels: 1 })));
        assert!(matches!(load_idx(dir.path().join("nope"), &lp), Err(Error::Io { .. })));
    }

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let a = synth_gaussians(4, 25, (1, 3, 3), 2.0, 9).unwrap();
        let b = synth_gaussians(4, 25, (1, 3, 3), 2.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_histogram(), vec![25; 4]);
        assert_ne!(a, synth_gaussians(4, 25, (1, 3, 3), 2.0, 10).unwrap());
    }

    #[test]
    fn simplex_means_are_unit_and_equidistant() {
        let m = simplex_means(3, 5);
        for v in &m {
            let n: f64 = v.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        assert!((d(&m[0], &m[1]) - d(&m[1], &m[2])).abs() < 1e-12);
        let centroid: f64 = (0..5).map(|j| m.iter().map(|v| v[j]).sum::<f64>()).map(f64::abs).sum();
        assert!(centroid < 1e-12);
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = synth_gaussians(2, 50, (1, 2, 2), 1.0, 0).unwrap();
        let (train, val) = split_indices(100, SplitSpec::default()).unwrap();
        assert_eq!((train.len(), val.len()), (95, 5));
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (t2, v2) = split_indices(100, SplitSpec::default()).unwrap();
        assert_eq!((train.clone(), val.clone()), (t2, v2));
        let (t3, _) = split_indices(100, SplitSpec { seed: 1, ..SplitSpec::default() }).unwrap();
        assert_ne!(train, t3);
        let (a, b) = split(&ds, SplitSpec::default()).unwrap();
        assert_eq!(a.len() + b.len(), 100);
        assert!(matches!(split_indices(10, SplitSpec::default()), Err(Error::TooSmall(_))));
    }

    #[test]
    fn disjoint_subsets_partition() {
        let ds = synth_gaussians(2, 10, (1, 2, 2), 1.0, 0).unwrap();
        let parts = disjoint_subsets(&ds, &[12, 5], 3).unwrap();
        assert_eq!((parts[0].len(), parts[1].len()), (12, 5));
        assert!(disjoint_subsets(&ds, &[15, 6], 3).is_err());
    }

    #[test]
    fn normalization() {
        let ds = synth_gaussians(2, 5, (1, 2, 2), 1.0, 0).unwrap();
        assert_eq!(normalize(&ds, &[0.0], &[1.0]).unwrap(), ds);
        let flat = Dataset::new("c", (1, 2, 2), 2, vec![0.3; 8], vec![0, 1]).unwrap();
        assert!(normalize(&flat, &[0.3], &[0.7]).unwrap().images.iter().all(|&x| x == 0.0));
        let (m, s) = channel_stats(&ds);
        let back = denormalize(&normalize(&ds, &m, &s).unwrap(), &m, &s).unwrap();
        for (a, b) in back.images.iter().zip(&ds.images) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(normalize(&ds, &[0.0], &[0.0]), Err(Error::ZeroStd(_))));
    }
}
