//! Synthetic 2D "nested tumour" datasets on the five-class label space.
//!
//! Each sample holds concentric, randomly perturbed ellipses: edema (2)
//! encloses non-enhancing core (3), which encloses necrotic core (1), which
//! encloses enhancing tumour (4). Every layer is intersected with its parent,
//! so enhancing is inside the core region {1, 3, 4} and the core inside the
//! whole tumour {1, 2, 3, 4}. Intensities are class-conditional Gaussians per
//! modality.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded per sample with
//! `splitmix64(seed + index)`, so datasets are identical across platforms
//! and independent of the thread count.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::io;
use crate::segmentation::{CrispSegmentation, Dims};

pub const NUM_LABELS: usize = 5;
pub const MAX_MODALITIES: usize = 4;

/// Mean intensity per label (rows) and modality (columns).
pub const CLASS_MEANS: [[f64; MAX_MODALITIES]; NUM_LABELS] = [
    [0.0, 0.0, 0.0, 0.0],
    [0.6, 0.3, 0.9, 0.2],
    [1.0, 0.2, 0.8, 0.4],
    [0.8, 0.5, 0.7, 0.3],
    [0.7, 1.0, 0.6, 0.5],
];

/// Largest relative radial perturbation of an ellipse boundary.
const BOUNDARY_AMPLITUDE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Side length of the square images.
    pub size: usize,
    /// Target area fractions of labels 1 to 4; background takes the rest.
    pub fractions: [f64; 4],
    /// Standard deviation of the intensity noise.
    pub noise: f64,
    pub modalities: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            fractions: [0.02, 0.10, 0.03, 0.01],
            noise: 0.25,
            modalities: 2,
            samples: 100,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::invalid_arg("size", format!("{} is below the minimum of 16", self.size)));
        }
        if self.modalities == 0 || self.modalities > MAX_MODALITIES {
            return Err(Error::invalid_arg("modalities", format!("must be 1..={MAX_MODALITIES}")));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid_arg("noise", "must be finite and nonnegative"));
        }
        if self.fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::invalid_arg("fractions", "must be finite and nonnegative"));
        }
        let total: f64 = self.fractions.iter().sum();
        if total >= 1.0 {
            return Err(Error::invalid_arg("fractions", format!("sum {total} must be below 1")));
        }
        let pixels = (self.size * self.size) as f64;
        for (k, f) in self.fractions.iter().enumerate() {
            if *f > 0.0 && f * pixels < 1.0 {
                return Err(Error::invalid_arg(
                    "fractions",
                    format!("label {} covers less than one pixel at size {}", k + 1, self.size),
                ));
            }
        }
        // The whole tumour must fit at its most elongated and perturbed.
        let r = bounding_radius(total * pixels);
        if 2.0 * (r + 1.0) > self.size as f64 {
            return Err(Error::invalid_arg(
                "fractions",
                format!("a tumour covering {total} of the image cannot fit and nest at size {}", self.size),
            ));
        }
        Ok(())
    }

    /// Areas in pixels of the nested layers, outermost first, with their
    /// labels.
    fn layers(&self) -> [(u8, f64); 4] {
        let [f1, f2, f3, f4] = self.fractions;
        let px = (self.size * self.size) as f64;
        [
            (2, (f1 + f2 + f3 + f4) * px),
            (3, (f1 + f3 + f4) * px),
            (1, (f1 + f4) * px),
            (4, f4 * px),
        ]
    }
}

const MAX_ASPECT: f64 = 1.3;

fn bounding_radius(area: f64) -> f64 {
    (area / PI * MAX_ASPECT).sqrt() * (1.0 + BOUNDARY_AMPLITUDE)
}

/// A multi-channel 2D image, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::mismatch("image", channels * height * width, data.len()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub labels: CrispSegmentation,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed.wrapping_add(stream.wrapping_mul(0x2545_F491_4F6C_DD1D))))
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    freq: f64,
    phase: f64,
    amp: f64,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, area: f64, cx: f64, cy: f64) -> Self {
        let aspect: f64 = rng.gen_range(1.0 / MAX_ASPECT..MAX_ASPECT);
        let r = (area / PI).sqrt();
        let theta: f64 = rng.gen_range(0.0..PI);
        Self {
            cx,
            cy,
            a: r * aspect.sqrt(),
            b: r / aspect.sqrt(),
            cos: theta.cos(),
            sin: theta.sin(),
            freq: rng.gen_range(2..=4) as f64,
            phase: rng.gen_range(0.0..2.0 * PI),
            amp: rng.gen_range(0.0..BOUNDARY_AMPLITUDE),
        }
    }

    fn min_radius(&self) -> f64 {
        self.a.min(self.b) * (1.0 - self.amp)
    }

    fn max_radius(&self) -> f64 {
        self.a.max(self.b) * (1.0 + self.amp)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let rho = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        let phi = v.atan2(u);
        rho <= 1.0 + self.amp * (self.freq * phi + self.phase).sin()
    }
}

/// Generates one sample; `index` selects the per-sample random stream.
pub fn generate_sample(config: &SynthConfig, index: usize) -> Result<Sample> {
    config.validate()?;
    let mut rng = derived_rng(config.seed, index as u64);
    let size = config.size;
    let layers = config.layers();

    let mut blobs: Vec<(u8, Blob)> = Vec::with_capacity(4);
    let outer_r = bounding_radius(layers[0].1);
    let lo = outer_r + 1.0;
    let hi = size as f64 - 1.0 - outer_r;
    let (cx, cy) = if hi > lo {
        (rng.gen_range(lo..hi), rng.gen_range(lo..hi))
    } else {
        (size as f64 / 2.0, size as f64 / 2.0)
    };
    let mut centre = (cx, cy);
    for (label, area) in layers {
        let mut blob = Blob::random(&mut rng, area, centre.0, centre.1);
        if let Some((_, parent)) = blobs.last() {
            let slack = (parent.min_radius() - blob.max_radius()).max(0.0) * 0.5;
            let t: f64 = rng.gen_range(0.0..2.0 * PI);
            let d: f64 = rng.gen_range(0.0..=1.0) * slack;
            blob.cx = parent.cx + d * t.cos();
            blob.cy = parent.cy + d * t.sin();
        }
        centre = (blob.cx, blob.cy);
        blobs.push((label, blob));
    }

    let mut labels = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut label = 0u8;
            for (l, blob) in &blobs {
                if blob.contains(px, py) {
                    label = *l;
                } else {
                    break;
                }
            }
            labels[y * size + x] = label;
        }
    }

    let n = size * size;
    let mut data = vec![0f32; config.modalities * n];
    for m in 0..config.modalities {
        for (i, &l) in labels.iter().enumerate() {
            let noise: f64 = if config.noise > 0.0 {
                config.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng)
            } else {
                0.0
            };
            data[m * n + i] = (CLASS_MEANS[l as usize][m] + noise) as f32;
        }
    }

    Ok(Sample {
        image: Image::new(config.modalities, size, size, data)?,
        labels: CrispSegmentation::new(Dims::d2(size, size), NUM_LABELS, labels)?,
    })
}

pub fn generate(config: &SynthConfig) -> Result<Vec<Sample>> {
    generate_with(config, Execution::default())
}

pub fn generate_with(config: &SynthConfig, exec: Execution) -> Result<Vec<Sample>> {
    config.validate()?;
    exec::map_indexed(config.samples, exec, |i| generate_sample(config, i))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub samples: usize,
    pub files: Vec<String>,
    pub config: Option<SynthConfig>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sample_file_name(index: usize) -> String {
    format!("sample_{index:05}.bin")
}

/// Writes `sample_%05d.bin` files and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, samples: &[Sample], config: Option<&SynthConfig>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = sample_file_name(i);
        io::write_sample(&dir.join(&name), s)?;
        files.push(name);
    }
    let manifest = Manifest {
        format_version: io::FORMAT_VERSION,
        samples: samples.len(),
        files,
        config: config.cloned(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.files.len() != m.samples {
        return Err(Error::Format(format!(
            "manifest lists {} files for {} samples",
            m.files.len(),
            m.samples
        )));
    }
    Ok(m)
}

pub fn dataset_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_manifest(dir)?.files.iter().map(|f| dir.join(f)).collect())
}

pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    dataset_paths(dir)?.iter().map(|p| io::read_sample(p)).collect()
}
