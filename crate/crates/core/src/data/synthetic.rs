//! Seeded synthetic chest-film stand-ins: smooth backgrounds, with a bright
//! disk on positives.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cohort::{split_sizes, Cohort, CohortRecord, Split, SplitUnit};
use super::manifest::{write_manifest, Label, Manifest, ManifestRecord, Projection, View};
use super::{io_err, DataError, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const COHORT_FILE: &str = "cohort.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub side: usize,
    /// Image counts for train, validation and test.
    pub counts: [usize; 3],
    pub positive_fraction: f64,
    /// Inclusive blob radius range in pixels.
    pub radius: [f64; 2],
    /// Blob brightness above the background mean, in `[0,1]` intensity units.
    pub contrast: [f64; 2],
    pub noise_std: f64,
    pub pathology: String,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            side: 32,
            counts: [800, 200, 250],
            positive_fraction: 0.112,
            radius: [2.5, 4.0],
            contrast: [0.15, 0.3],
            noise_std: 0.05,
            pathology: "Lung Lesion".into(),
            seed: 0,
        }
    }
}

/// Smooth background level range; the brightest blob stays below 1.
const BASE_LEVEL: [f64; 2] = [0.25, 0.4];
const RIPPLE_AMPLITUDE: f64 = 0.08;
const RIPPLES: usize = 3;

impl SyntheticSpec {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn positives(&self) -> usize {
        (self.positive_fraction * self.total() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.side < 8 {
            return bad("side must be at least 8");
        }
        if self.counts.contains(&0) {
            return bad("every split needs at least one image");
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad("positive fraction must lie in (0,1)");
        }
        let [rmin, rmax] = self.radius;
        if !(rmin >= 2.0 && rmin <= rmax && 2.0 * rmax < self.side as f64) {
            return bad("radius range must satisfy 2 <= min <= max < side/2");
        }
        let [cmin, cmax] = self.contrast;
        if !(cmin > 0.0 && cmin <= cmax && cmax <= 0.5) {
            return bad("contrast range must satisfy 0 < min <= max <= 0.5");
        }
        if !(self.noise_std >= 0.0 && self.noise_std <= 0.2) {
            return bad("noise std must lie in [0, 0.2]");
        }
        if self.pathology.trim().is_empty() || self.pathology.contains([',', '"', '\n']) {
            return bad("pathology must be a plain non-empty column name");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticImage {
    pub path: PathBuf,
    pub split: Split,
    /// Mean of the noise-free background.
    pub background_mean: f64,
    pub blob: Option<Blob>,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    pub cohort_path: PathBuf,
    pub cohort: Cohort,
    pub images: Vec<SyntheticImage>,
}

/// Writes images, a manifest and a pre-split cohort under `out_dir`.
///
/// Positives are spread over the splits in proportion to split size and
/// shuffled within each split.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<SyntheticDataset> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let root = out_dir.canonicalize().map_err(io_err(out_dir))?;

    let total = spec.total() as f64;
    let ratios = spec.counts.map(|c| c as f64 / total);
    let pos_per_split = split_sizes(spec.positives(), ratios);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut plan = Vec::with_capacity(spec.total());
    for ((split, count), n_pos) in Split::ALL.into_iter().zip(spec.counts).zip(pos_per_split) {
        let mut labels: Vec<bool> = (0..count).map(|i| i < n_pos.min(count)).collect();
        labels.shuffle(&mut rng);
        plan.extend(labels.into_iter().map(|l| (split, l)));
    }

    let mut manifest = Manifest { pathologies: vec![spec.pathology.clone()], records: Vec::new() };
    let mut cohort =
        Cohort { pathology: spec.pathology.clone(), seed: spec.seed, unit: SplitUnit::PerImage, records: Vec::new() };
    let mut images = Vec::with_capacity(plan.len());
    for (i, &(split, positive)) in plan.iter().enumerate() {
        let patient = format!("patient{:05}", i + 1);
        let rel = format!("{}/{}/study1/view1_frontal.png", split.as_str(), patient);
        let path = root.join(&rel);
        let dir = path.parent().expect("image path has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let mut img_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        img_rng.set_stream(i as u64 + 1);
        let (pixels, background_mean, blob) = render(spec, positive, &mut img_rng);
        GrayImage::from_raw(spec.side as u32, spec.side as u32, pixels)
            .expect("buffer matches side²")
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(source) => DataError::Io { path: path.display().to_string(), source },
                other => DataError::Image { path: path.display().to_string(), detail: other.to_string() },
            })?;

        manifest.records.push(ManifestRecord {
            path: rel,
            sex: if i % 2 == 0 { "Female".into() } else { "Male".into() },
            age: (40 + i % 50).to_string(),
            view: View::Frontal,
            projection: if i % 3 == 0 { Projection::Ap } else { Projection::Pa },
            patient_id: Some(patient),
            labels: vec![if positive { Label::Positive } else { Label::Negative }],
        });
        cohort.records.push(CohortRecord { path: path.display().to_string(), positive, split });
        images.push(SyntheticImage { path, split, background_mean, blob });
    }

    let manifest_path = root.join(MANIFEST_FILE);
    let file = fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    write_manifest(&manifest, std::io::BufWriter::new(file))?;
    let cohort_path = root.join(COHORT_FILE);
    let file = fs::File::create(&cohort_path).map_err(io_err(&cohort_path))?;
    cohort.write_csv(std::io::BufWriter::new(file))?;

    Ok(SyntheticDataset { root, manifest_path, cohort_path, cohort, images })
}

/// 8-bit pixels, noise-free background mean, and the blob drawn (if any).
fn render(spec: &SyntheticSpec, positive: bool, rng: &mut ChaCha8Rng) -> (Vec<u8>, f64, Option<Blob>) {
    let s = spec.side;
    let base = rng.random_range(BASE_LEVEL[0]..=BASE_LEVEL[1]);
    let ripples: Vec<(f64, f64, f64, f64)> = (0..RIPPLES)
        .map(|_| {
            let (fx, fy) = loop {
                let f = (rng.random_range(0..3u32) as f64, rng.random_range(0..3u32) as f64);
                if f != (0.0, 0.0) {
                    break f;
                }
            };
            let amp = rng.random_range(0.0..RIPPLE_AMPLITUDE / RIPPLES as f64);
            (fx, fy, amp, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let background: Vec<f64> = (0..s * s)
        .map(|p| {
            let (x, y) = ((p % s) as f64, (p / s) as f64);
            base + ripples
                .iter()
                .map(|&(fx, fy, a, ph)| a * (2.0 * PI * (fx * x + fy * y) / s as f64 + ph).cos())
                .sum::<f64>()
        })
        .collect();
    let mean = background.iter().sum::<f64>() / background.len() as f64;

    let blob = positive.then(|| {
        let radius = rng.random_range(spec.radius[0]..=spec.radius[1]);
        let hi = s as f64 - 1.0 - radius;
        Blob {
            radius,
            cx: rng.random_range(radius..=hi),
            cy: rng.random_range(radius..=hi),
            contrast: rng.random_range(spec.contrast[0]..=spec.contrast[1]),
        }
    });
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise std");
    let pixels = background
        .iter()
        .enumerate()
        .map(|(p, &bg)| {
            let (x, y) = ((p % s) as f64, (p / s) as f64);
            let mut v = bg + noise.sample(rng);
            if let Some(b) = blob {
                if (x - b.cx).powi(2) + (y - b.cy).powi(2) <= b.radius * b.radius {
                    v = v.max(mean) + b.contrast;
                }
            }
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    (pixels, mean, blob)
}
