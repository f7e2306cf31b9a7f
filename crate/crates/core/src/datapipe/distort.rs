//! Controlled synthetic distortions with graded intensity.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::image::Image;
use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistortionKind {
    GaussianBlur,
    AdditiveNoise,
    Blockiness,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 3] = [Self::GaussianBlur, Self::AdditiveNoise, Self::Blockiness];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianBlur => "gaussian_blur",
            Self::AdditiveNoise => "additive_noise",
            Self::Blockiness => "blockiness",
        }
    }

    /// Magnitude at `level` of an `levels`-step table: blur σ, noise σ, or
    /// block side in pixels. Level 0 is the pristine value.
    pub fn default_magnitude(self, level: usize) -> f64 {
        let l = level as f64;
        match self {
            Self::GaussianBlur => 0.6 * l,
            Self::AdditiveNoise => 0.04 * l,
            Self::Blockiness => {
                if level == 0 {
                    1.0
                } else {
                    2.0 * l
                }
            }
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian_blur" | "blur" => Ok(Self::GaussianBlur),
            "additive_noise" | "noise" => Ok(Self::AdditiveNoise),
            "blockiness" | "block" => Ok(Self::Blockiness),
            other => Err(format!(
                "unknown distortion `{other}` (expected gaussian_blur, additive_noise or blockiness)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: usize,
    /// Magnitude per level, strictly increasing, level 0 pristine.
    pub magnitudes: Vec<f64>,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: usize, magnitudes: Vec<f64>) -> Result<Self, DataError> {
        if level >= magnitudes.len() {
            return Err(DataError::BadDistortion(format!(
                "level {level} outside table of {} levels",
                magnitudes.len()
            )));
        }
        if magnitudes.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(DataError::BadDistortion("magnitudes must increase strictly with level".into()));
        }
        Ok(Self { kind, level, magnitudes })
    }

    pub fn with_default_table(kind: DistortionKind, level: usize, levels: usize) -> Result<Self, DataError> {
        Self::new(kind, level, (0..levels).map(|l| kind.default_magnitude(l)).collect())
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitudes[self.level]
    }
}

pub fn apply_distortion(img: &Image, spec: &DistortionSpec, rng: &mut impl Rng) -> Image {
    if spec.level == 0 {
        return img.clone();
    }
    let m = spec.magnitude();
    match spec.kind {
        DistortionKind::GaussianBlur => gaussian_blur(img, m),
        DistortionKind::AdditiveNoise => additive_noise(img, m, rng),
        DistortionKind::Blockiness => block_mean(img, m.round().max(1.0) as usize),
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / total) as f32).collect()
}

/// Separable gaussian blur, edge pixels replicated.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = (img.height() as isize, img.width() as isize);
    let horiz = Image::from_fn(img.height(), img.width(), |c, y, x| {
        k.iter()
            .enumerate()
            .map(|(i, &kv)| kv * img.get(c, y, (x as isize + i as isize - r).clamp(0, w - 1) as usize))
            .sum()
    });
    Image::from_fn(img.height(), img.width(), |c, y, x| {
        k.iter()
            .enumerate()
            .map(|(i, &kv)| kv * horiz.get(c, (y as isize + i as isize - r).clamp(0, h - 1) as usize, x))
            .sum()
    })
}

/// Zero-mean gaussian noise, result clamped to `[0, 1]`.
pub fn additive_noise(img: &Image, sigma: f64, rng: &mut impl Rng) -> Image {
    let normal = Normal::new(0.0f64, sigma).expect("finite non-negative sigma");
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Replaces each `block×block` tile (anchored at the origin) by its mean.
pub fn block_mean(img: &Image, block: usize) -> Image {
    let mut out = img.clone();
    if block <= 1 {
        return out;
    }
    let (h, w) = (img.height(), img.width());
    for c in 0..3 {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for by in (0..h).step_by(block) {
            for bx in (0..w).step_by(block) {
                let (ey, ex) = ((by + block).min(h), (bx + block).min(w));
                let mut sum = 0.0f64;
                for y in by..ey {
                    sum += src[y * w + bx..y * w + ex].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = (sum / ((ey - by) * (ex - bx)) as f64) as f32;
                for y in by..ey {
                    dst[y * w + bx..y * w + ex].fill(mean);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn texture() -> Image {
        Image::from_fn(16, 16, |c, y, x| (((x * 3 + y * 5 + c) % 11) as f32) / 10.0)
    }

    #[test]
    fn level_zero_is_identity() {
        let img = texture();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in DistortionKind::ALL {
            let spec = DistortionSpec::with_default_table(kind, 0, 5).unwrap();
            assert_eq!(apply_distortion(&img, &spec, &mut rng), img);
        }
    }

    #[test]
    fn blur_keeps_constant_images() {
        let img = Image::filled(9, 13, 0.3);
        let out = gaussian_blur(&img, 2.0);
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn full_size_block_gives_global_mean() {
        let img = texture();
        let out = block_mean(&img, 16);
        for c in 0..3 {
            let mean = img.plane(c).iter().map(|&v| v as f64).sum::<f64>() / 256.0;
            assert!(out.plane(c).iter().all(|&v| (v as f64 - mean).abs() < 1e-6));
        }
    }

    #[test]
    fn noise_is_clamped_and_seeded() {
        let img = texture();
        let a = additive_noise(&img, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
        let b = additive_noise(&img, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_ne!(a, img);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn magnitudes_increase_with_level() {
        for kind in DistortionKind::ALL {
            let m: Vec<f64> = (0..10).map(|l| kind.default_magnitude(l)).collect();
            assert!(m.windows(2).all(|w| w[1] > w[0]), "{kind}");
        }
        assert!(DistortionSpec::new(DistortionKind::GaussianBlur, 1, vec![0.0, 0.0]).is_err());
        assert!(DistortionSpec::new(DistortionKind::GaussianBlur, 3, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn stronger_blur_removes_more_detail() {
        let img = texture();
        let energy = |i: &Image| -> f64 {
            (0..16).flat_map(|y| (1..16).map(move |x| (y, x))).map(|(y, x)| (i.get(0, y, x) - i.get(0, y, x - 1)).abs() as f64).sum()
        };
        let e: Vec<f64> = (1..5).map(|l| energy(&gaussian_blur(&img, 0.6 * l as f64))).collect();
        assert!(e.windows(2).all(|w| w[1] < w[0]));
    }
}
