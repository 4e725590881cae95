//! Labeled image datasets: in-memory form, a small binary file format, and
//! deterministic synthetic generators.
//!
//! File layout (little-endian):
//!   magic "D2E1" | u32 n | u32 C | u32 H | u32 W | u32 classes |
//!   n*C*H*W intensity bytes (value/255) | n label bytes
//!
//! Generated pixels are quantized to the 1/255 grid, so generate -> write ->
//! read round-trips bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{D2eError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"D2E1";

#[derive(Debug, Clone)]
pub struct Dataset {
    /// One [C×H×W] tensor per sample, intensities in [0,1].
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// (channels, height, width) of the samples.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = &self.images[0].shape;
        (s[0], s[1], s[2])
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(D2eError::EmptyDataset);
        }
        if self.images.len() != self.labels.len() {
            return Err(D2eError::DatasetFormat(format!(
                "{} images vs {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        let shape = self.images[0].shape.clone();
        if shape.len() != 3 {
            return Err(D2eError::DatasetFormat(format!("samples must be [C,H,W], got {:?}", shape)));
        }
        for img in &self.images {
            if img.shape != shape {
                return Err(D2eError::DatasetFormat(format!(
                    "mixed sample shapes {:?} vs {:?}",
                    img.shape, shape
                )));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(D2eError::DatasetFormat(format!(
                "label {} out of range for {} classes",
                bad, self.classes
            )));
        }
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let (c, h, w) = self.dims();
        if self.classes > 256 {
            return Err(D2eError::DatasetFormat("file format caps classes at 256".into()));
        }
        let mut buf = Vec::with_capacity(24 + self.len() * (c * h * w + 1));
        buf.extend_from_slice(MAGIC);
        for v in [self.len(), c, h, w, self.classes] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for img in &self.images {
            for &px in &img.data {
                buf.push((px.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        for &label in &self.labels {
            buf.push(label as u8);
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Dataset> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 24 || &bytes[0..4] != MAGIC {
            return Err(D2eError::DatasetFormat(format!(
                "{}: missing D2E1 header",
                path.display()
            )));
        }
        let mut fields = [0usize; 5];
        for (i, f) in fields.iter_mut().enumerate() {
            let off = 4 + i * 4;
            *f = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        }
        let [n, c, h, w, classes] = fields;
        let expected = 24 + n * c * h * w + n;
        if bytes.len() != expected {
            return Err(D2eError::DatasetFormat(format!(
                "{}: {} bytes, expected {} for n={} {}x{}x{}",
                path.display(),
                bytes.len(),
                expected,
                n,
                c,
                h,
                w
            )));
        }
        let per = c * h * w;
        let mut images = Vec::with_capacity(n);
        for i in 0..n {
            let start = 24 + i * per;
            let data: Vec<f64> = bytes[start..start + per]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect();
            images.push(Tensor::new(vec![c, h, w], data)?);
        }
        let labels: Vec<usize> = bytes[24 + n * per..].iter().map(|&b| b as usize).collect();
        let ds = Dataset { images, labels, classes };
        ds.validate()?;
        Ok(ds)
    }
}

/// Snaps to the 8-bit intensity grid after clamping to [0,1].
fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Deterministic synthetic datasets. Labels cycle through the classes, so
/// counts differ by at most one. Kinds:
///   two-blobs     2 classes, one Gaussian bump per quadrant
///   bars          4 classes, oriented bright bars
///   checker       2 classes, checkerboard phase
///   binary-noise  2 classes, i.i.d. {0,1} pixels, lit-fraction by class
pub fn gen_synthetic(kind: &str, n: usize, seed: u64) -> Result<Dataset> {
    let classes = match kind {
        "two-blobs" | "checker" | "binary-noise" => 2,
        "bars" => 4,
        other => {
            return Err(D2eError::config(
                "dataset.kind",
                format!(
                    "unknown kind `{}` (known: two-blobs, bars, checker, binary-noise)",
                    other
                ),
            ))
        }
    };
    if n < classes {
        return Err(D2eError::Contract(format!(
            "need at least {} samples for {} balanced classes, got {}",
            classes, classes, n
        )));
    }
    let (h, w) = (16usize, 16usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    for i in 0..n {
        let label = i % classes;
        let mut img = vec![0.0f64; h * w];
        match kind {
            "two-blobs" => {
                let (cy, cx) = if label == 0 { (5.0, 5.0) } else { (10.0, 10.0) };
                let cy = cy + rng.gen_range(-1.5..1.5);
                let cx = cx + rng.gen_range(-1.5..1.5);
                let sigma2 = 2.0f64 * 2.2 * 2.2;
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        img[y * w + x] = 0.9 * (-d2 / sigma2).exp();
                    }
                }
                for px in img.iter_mut() {
                    *px = quantize(*px + 0.05 * noise.sample(&mut rng));
                }
            }
            "bars" => {
                let offset = rng.gen_range(3..(h as i64 - 4));
                let diag_offset = rng.gen_range(-4i64..5);
                for y in 0..h {
                    for x in 0..w {
                        let on = match label {
                            0 => (y as i64 - offset).abs() <= 0,
                            1 => (x as i64 - offset).abs() <= 0,
                            2 => (y as i64 - x as i64 - diag_offset).abs() <= 1,
                            _ => (y as i64 + x as i64 - (h as i64 - 1) - diag_offset).abs() <= 1,
                        };
                        img[y * w + x] = if on { 0.95 } else { 0.05 };
                    }
                }
                for px in img.iter_mut() {
                    *px = quantize(*px + 0.08 * noise.sample(&mut rng));
                }
            }
            "checker" => {
                let cell = 4;
                for y in 0..h {
                    for x in 0..w {
                        let parity = (y / cell + x / cell + label) % 2;
                        img[y * w + x] = if parity == 0 { 0.8 } else { 0.2 };
                    }
                }
                for px in img.iter_mut() {
                    *px = quantize(*px + 0.05 * noise.sample(&mut rng));
                }
            }
            "binary-noise" => {
                // Strictly {0,1} pixels: under first-spike coding each lit
                // pixel fires exactly once, which keeps layer-drive ratios
                // exact. Class 1 images are denser than class 0.
                let p = if label == 0 { 0.35 } else { 0.65 };
                for px in img.iter_mut() {
                    *px = if rng.gen::<f64>() < p { 1.0 } else { 0.0 };
                }
            }
            _ => unreachable!(),
        }
        images.push(Tensor::new(vec![1, h, w], img)?);
        labels.push(label);
    }
    Ok(Dataset { images, labels, classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_labels() {
        let ds = gen_synthetic("two-blobs", 200, 1).unwrap();
        let zeros = ds.labels.iter().filter(|&&l| l == 0).count();
        assert_eq!(zeros, 100);

        let bars = gen_synthetic("bars", 202, 1).unwrap();
        let mut counts = [0usize; 4];
        for &l in &bars.labels {
            counts[l] += 1;
        }
        assert_eq!(counts, [51, 51, 50, 50]);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = gen_synthetic("bars", 32, 9).unwrap();
        let b = gen_synthetic("bars", 32, 9).unwrap();
        let c = gen_synthetic("bars", 32, 10).unwrap();
        for (ia, ib) in a.images.iter().zip(b.images.iter()) {
            assert_eq!(ia.data, ib.data);
        }
        assert!(a.images.iter().zip(c.images.iter()).any(|(ia, ic)| ia.data != ic.data));
    }

    #[test]
    fn rejects_unknown_kind_and_tiny_n() {
        assert!(gen_synthetic("spirals", 10, 0).is_err());
        assert!(gen_synthetic("bars", 3, 0).is_err());
    }

    #[test]
    fn binary_noise_is_strictly_binary_and_class_skewed() {
        let ds = gen_synthetic("binary-noise", 40, 3).unwrap();
        for img in &ds.images {
            assert!(img.data.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        let mean_of = |label: usize| {
            let (mut sum, mut n) = (0.0, 0);
            for (img, &l) in ds.images.iter().zip(&ds.labels) {
                if l == label {
                    sum += img.mean();
                    n += 1;
                }
            }
            sum / n as f64
        };
        assert!(mean_of(1) > mean_of(0) + 0.15);
    }

    #[test]
    fn pixels_are_quantized_in_unit_range() {
        let ds = gen_synthetic("checker", 16, 4).unwrap();
        for img in &ds.images {
            for &px in &img.data {
                assert!((0.0..=1.0).contains(&px));
                let grid = px * 255.0;
                assert!((grid - grid.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.d2e");
        let ds = gen_synthetic("bars", 24, 7).unwrap();
        ds.write_file(&path).unwrap();

        let expected_len = 24 + 24 * 256 + 24;
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expected_len);

        let back = Dataset::read_file(&path).unwrap();
        assert_eq!(back.classes, ds.classes);
        assert_eq!(back.labels, ds.labels);
        for (a, b) in ds.images.iter().zip(back.images.iter()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn read_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();

        let bad_magic = dir.path().join("magic.d2e");
        std::fs::write(&bad_magic, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(Dataset::read_file(&bad_magic).is_err());

        let ds = gen_synthetic("checker", 8, 2).unwrap();
        let truncated = dir.path().join("short.d2e");
        ds.write_file(&truncated).unwrap();
        let bytes = std::fs::read(&truncated).unwrap();
        std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Dataset::read_file(&truncated).is_err());
    }

    #[test]
    fn validate_rejects_bad_labels() {
        let ds = Dataset {
            images: vec![Tensor::zeros(&[1, 2, 2])],
            labels: vec![5],
            classes: 2,
        };
        assert!(ds.validate().is_err());
    }
}
