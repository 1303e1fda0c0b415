//! Images, datasets, ingestion and preprocessing.

mod ppm;
mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, RngState};
use crate::tensor::Tensor;

pub use ppm::{decode_ppm, encode_ppm};
pub use synth::{synth_signs, TEMPLATE_NAMES};

/// RGB image with channel values in [0, 1], row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width * 3 {
            return Err(Error::Shape {
                expected: vec![height, width, 3],
                actual: vec![pixels.len()],
            });
        }
        if let Some(&bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::OutOfRange {
                value: bad,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }
}

/// Labelled images plus the class-name catalog indexed by label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<(Image, usize)>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(examples: Vec<(Image, usize)>, class_names: Vec<String>) -> Result<Self> {
        if let Some((_, label)) = examples.iter().find(|(_, l)| *l >= class_names.len()) {
            return Err(Error::Label {
                label: *label,
                num_classes: class_names.len(),
            });
        }
        if let Some((first, _)) = examples.first() {
            let dims = (first.height, first.width);
            if examples.iter().any(|(img, _)| (img.height, img.width) != dims) {
                return Err(Error::Data("images in a dataset must share one size".into()));
            }
        }
        Ok(Self {
            examples,
            class_names,
        })
    }

    pub fn examples(&self) -> &[(Image, usize)] {
        &self.examples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Image side length, if the dataset is non-empty and square.
    pub fn side(&self) -> Option<usize> {
        self.examples
            .first()
            .map(|(img, _)| (img.height, img.width))
            .filter(|(h, w)| h == w)
            .map(|(h, _)| h)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for (_, l) in &self.examples {
            counts[*l] += 1;
        }
        counts
    }
}

/// Maps pixels to `(p - 0.5) / 0.5`, returning a planar `[3, H, W]` tensor.
pub fn normalize(img: &Image) -> Tensor {
    let (h, w) = (img.height, img.width);
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in img.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = (px[c] - 0.5) / 0.5;
        }
    }
    Tensor::new(&[3, h, w], data).expect("shape matches")
}

/// Inverse of [`normalize`]. Values must lie in [-1, 1].
pub fn denormalize(t: &Tensor) -> Result<Image> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape(&[3, 0, 0], shape));
    }
    if let Some(&bad) = t.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange {
            value: bad,
            lo: -1.0,
            hi: 1.0,
        });
    }
    let (h, w) = (shape[1], shape[2]);
    let mut pixels = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            pixels[i * 3 + c] = (t.data()[c * h * w + i] * 0.5 + 0.5).clamp(0.0, 1.0);
        }
    }
    Image::new(h, w, pixels)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    if (out_h, out_w) == (img.height, img.width) {
        return img.clone();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(out_h, img.height);
    let xs = axis(out_w, img.width);
    let mut pixels = Vec::with_capacity(out_h * out_w * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
                let bottom = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
                pixels.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(out_h, out_w, pixels).expect("resize stays in range")
}

/// Decodes one image file: PPM natively, PNG/JPEG/BMP through `image`.
pub fn read_image(path: &Path) -> Result<Image> {
    let ingest = |message: String| Error::Ingestion {
        path: path.to_path_buf(),
        message,
    };
    let bytes = fs::read(path).map_err(|e| ingest(e.to_string()))?;
    if bytes.starts_with(b"P6") {
        return decode_ppm(&bytes).map_err(|e| ingest(e.to_string()));
    }
    let rgb = image::load_from_memory(&bytes)
        .map_err(|e| ingest(e.to_string()))?
        .to_rgb8();
    let pixels = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(rgb.height() as usize, rgb.width() as usize, pixels).map_err(|e| ingest(e.to_string()))
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<(Vec<u8>, PathBuf)>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name_bytes = name.as_encoded_bytes().to_vec();
        if name_bytes.first() == Some(&b'.') {
            continue;
        }
        let path = entry.path();
        if path.is_dir() == want_dirs {
            out.push((name_bytes, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Loads `<root>/<class_name>/<image files>`.
///
/// Class ids follow the byte order of the directory names; within a class,
/// files are taken in byte order of their names. Every image is resized to
/// `target_side x target_side`.
pub fn load_directory(root: impl AsRef<Path>, target_side: usize) -> Result<Dataset> {
    let root = root.as_ref();
    if target_side == 0 {
        return Err(Error::Config("target side must be positive".into()));
    }
    let classes = sorted_entries(root, true)?;
    if classes.is_empty() {
        return Err(Error::Data(format!("{} has no class directories", root.display())));
    }
    let mut class_names = Vec::new();
    let mut examples = Vec::new();
    for (label, (name, dir)) in classes.iter().enumerate() {
        class_names.push(String::from_utf8_lossy(name).into_owned());
        let files = sorted_entries(dir, false)?;
        if files.is_empty() {
            log::warn!("class directory {} is empty", dir.display());
        }
        for (_, file) in files {
            let img = read_image(&file)?;
            examples.push((resize_bilinear(&img, target_side, target_side), label));
        }
    }
    Dataset::new(examples, class_names)
}

/// Per-class train/test split. Each class with `n >= 2` examples sends
/// `round(n * test_fraction)` of them (at least 1, at most `n - 1`) to the
/// test set, chosen by a seeded shuffle. Both halves keep dataset order.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, l)) in ds.examples.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    let mut in_test = vec![false; ds.len()];
    for (class, mut idx) in by_class {
        let n = idx.len();
        if n == 1 {
            log::warn!(
                "class {:?} has a single example; keeping it in the training set",
                ds.class_names[class]
            );
            continue;
        }
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        RngState::new(derive_seed(seed, &[class as u64])).shuffle(&mut idx);
        for &i in &idx[..n_test] {
            in_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ex, t) in ds.examples.iter().zip(in_test) {
        if t {
            test.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    Ok((
        Dataset::new(train, ds.class_names.clone())?,
        Dataset::new(test, ds.class_names.clone())?,
    ))
}

#[cfg(test)]
mod tests;
