//! Procedural source images and graded synthetic distortion datasets.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{apply_distortion, derive_seed, DataError, DistortionKind, DistortionSpec, Image, Manifest, SampleRecord};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_sources: usize,
    pub kinds: Vec<DistortionKind>,
    /// Levels per kind, including pristine level 0.
    pub levels: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sources: 10,
            kinds: DistortionKind::ALL.to_vec(),
            levels: 5,
            height: 64,
            width: 64,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_sources == 0 || self.kinds.is_empty() {
            return Err(DataError::Invalid("need at least one source and one distortion kind".into()));
        }
        if self.levels < 2 {
            return Err(DataError::Invalid(format!("need at least 2 levels, got {}", self.levels)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(DataError::Invalid("image size must be positive".into()));
        }
        let mut kinds = self.kinds.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.kinds.len() {
            return Err(DataError::Invalid("distortion kinds repeat".into()));
        }
        Ok(())
    }

    pub fn pseudo_mos(&self, level: usize) -> f64 {
        1.0 - level as f64 / (self.levels - 1) as f64
    }
}

fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let ((xi, yi), (xj, yj)) = (poly[i], poly[j]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

const POLYGONS: usize = 24;

type Polygon = (Vec<(f64, f64)>, [f64; 3]);

/// Gradient field overlaid with sinusoid gratings and many small filled
/// polygons, so every source carries edges throughout the frame.
pub fn source_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<[f64; 3]> = (0..3)
        .map(|_| [rng.random_range(0.35..0.65), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)])
        .collect();
    let gratings: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let freq = rng.random_range(8.0..16.0);
            let angle = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.04..0.08);
            let tint = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
            (freq, angle, phase, amp, tint)
        })
        .collect();
    let scale = height.min(width) as f64;
    let polygons: Vec<Polygon> = (0..POLYGONS)
        .map(|_| {
            let (cx, cy) = (rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64));
            let radius = rng.random_range(0.04..0.2) * scale;
            let sides = rng.random_range(3..=5);
            let start = rng.random_range(0.0..2.0 * PI);
            let pts = (0..sides)
                .map(|k| {
                    let a = start + 2.0 * PI * k as f64 / sides as f64;
                    let r = radius * rng.random_range(0.6..1.0);
                    (cx + r * a.cos(), cy + r * a.sin())
                })
                .collect();
            let color = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            (pts, color)
        })
        .collect();

    Image::from_fn(height, width, |c, y, x| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let mut val = base[c][0] + base[c][1] * u + base[c][2] * v;
        for (freq, angle, phase, amp, tint) in &gratings {
            let t = u * angle.cos() + v * angle.sin();
            val += amp * tint[c] * (2.0 * PI * freq * t + phase).sin();
        }
        for (pts, color) in &polygons {
            if inside(pts, x as f64 + 0.5, y as f64 + 0.5) {
                val = 0.3 * val + 0.7 * color[c];
            }
        }
        val.clamp(0.0, 1.0) as f32
    })
}

fn kind_code(kind: DistortionKind) -> u64 {
    match kind {
        DistortionKind::GaussianBlur => 1,
        DistortionKind::AdditiveNoise => 2,
        DistortionKind::Blockiness => 3,
    }
}

/// Writes `out_dir/src{i}/{kind}_{level}.png` for every source, kind and
/// level plus `out_dir/manifest.csv`. Each record references the level-0
/// image of its own series and belongs to group `src{i}`.
pub fn synth_dataset(out_dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<Manifest, DataError> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| DataError::io(out_dir, e))?;

    let per_source = par::map_range(cfg.n_sources, |i| -> Result<Vec<SampleRecord>, DataError> {
        let dir = out_dir.join(format!("src{i}"));
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        let source = source_image(cfg.height, cfg.width, derive_seed(&[cfg.seed, i as u64]));
        let mut records = Vec::with_capacity(cfg.kinds.len() * cfg.levels);
        for &kind in &cfg.kinds {
            let reference = format!("src{i}/{kind}_0.png");
            for level in 0..cfg.levels {
                let spec = DistortionSpec::with_default_table(kind, level, cfg.levels)?;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, i as u64, kind_code(kind), level as u64]));
                let img = apply_distortion(&source, &spec, &mut rng);
                let rel = format!("src{i}/{kind}_{level}.png");
                img.save_png(out_dir.join(&rel))?;
                records.push(
                    SampleRecord::new(rel, cfg.pseudo_mos(level))
                        .with_reference(reference.clone())
                        .with_group(format!("src{i}")),
                );
            }
        }
        Ok(records)
    });

    let mut records = Vec::with_capacity(cfg.n_sources * cfg.kinds.len() * cfg.levels);
    for r in per_source {
        records.extend(r?);
    }
    let mut manifest = Manifest::new(records, out_dir)?;
    manifest.score_range = Some((0.0, 1.0));
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_sources: 3,
            levels: 4,
            height: 24,
            width: 20,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn counts_groups_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(dir.path(), &small(1)).unwrap();
        assert_eq!(m.len(), 3 * 3 * 4);
        let groups: HashSet<_> = m.records.iter().map(|r| r.group_key().to_string()).collect();
        assert_eq!(groups.len(), 3);
        for r in &m.records {
            let level: usize = r.media_path.rsplit('_').next().unwrap().trim_end_matches(".png").parse().unwrap();
            assert_eq!(r.mos, 1.0 - level as f64 / 3.0);
            assert!(m.resolve(&r.media_path).exists());
            assert!(m.resolve(r.ref_path.as_ref().unwrap()).exists());
        }
        let reloaded = Manifest::load(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(reloaded.records, m.records);
        assert_eq!(reloaded.score_range, Some((0.0, 1.0)));
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = synth_dataset(a.path(), &small(7)).unwrap();
        synth_dataset(b.path(), &small(7)).unwrap();
        for r in &ma.records {
            let fa = fs::read(a.path().join(&r.media_path)).unwrap();
            let fb = fs::read(b.path().join(&r.media_path)).unwrap();
            assert_eq!(fa, fb, "{}", r.media_path);
        }
        assert_ne!(source_image(16, 16, 1), source_image(16, 16, 2));
    }

    #[test]
    fn pristine_levels_match_across_kinds() {
        let dir = tempfile::tempdir().unwrap();
        synth_dataset(dir.path(), &small(3)).unwrap();
        let a = Image::load(dir.path().join("src0/gaussian_blur_0.png")).unwrap();
        let b = Image::load(dir.path().join("src0/blockiness_0.png")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_single_level() {
        let cfg = SynthConfig { levels: 1, ..small(0) };
        assert!(synth_dataset(tempfile::tempdir().unwrap().path(), &cfg).is_err());
    }
}
