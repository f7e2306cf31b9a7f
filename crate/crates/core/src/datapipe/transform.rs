//! Geometric and photometric preprocessing.

use rand::Rng;

use super::image::Image;
use super::DataError;
use crate::diffcore::Tensor;

/// Resizes so the short side equals `target`, scaling the long side by the
/// same ratio (rounded, at least 1). Bilinear with half-pixel centres.
pub fn resize_short_side(img: &Image, target: usize) -> Image {
    assert!(target >= 1, "resize target must be positive");
    let (h, w) = (img.height(), img.width());
    let short = h.min(w);
    if short == target {
        return img.clone();
    }
    let scale = target as f64 / short as f64;
    let (nh, nw) = if h <= w {
        (target, ((w as f64 * scale).round() as usize).max(1))
    } else {
        (((h as f64 * scale).round() as usize).max(1), target)
    };
    resize_bilinear(img, nh, nw)
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

pub fn resize_bilinear(img: &Image, nh: usize, nw: usize) -> Image {
    let ys = axis_taps(img.height(), nh);
    let xs = axis_taps(img.width(), nw);
    Image::from_fn(nh, nw, |c, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
        let bottom = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

fn check_fits(img: &Image, h: usize, w: usize) -> Result<(), DataError> {
    if h == 0 || w == 0 || h > img.height() || w > img.width() {
        return Err(DataError::CropTooLarge {
            crop: (h, w),
            image: (img.height(), img.width()),
        });
    }
    Ok(())
}

/// `h×w` window whose top-left corner is `origin = (y, x)`.
pub fn crop_at(img: &Image, origin: (usize, usize), h: usize, w: usize) -> Result<Image, DataError> {
    if origin.0 + h > img.height() || origin.1 + w > img.width() {
        return Err(DataError::CropTooLarge {
            crop: (origin.0 + h, origin.1 + w),
            image: (img.height(), img.width()),
        });
    }
    check_fits(img, h, w)?;
    Ok(Image::from_fn(h, w, |c, y, x| img.get(c, y + origin.0, x + origin.1)))
}

/// Origin drawn uniformly over all valid positions of an `h×w` window.
pub fn random_crop_origin(
    img_h: usize,
    img_w: usize,
    h: usize,
    w: usize,
    rng: &mut impl Rng,
) -> (usize, usize) {
    (rng.random_range(0..=img_h - h), rng.random_range(0..=img_w - w))
}

pub fn random_crop(img: &Image, h: usize, w: usize, rng: &mut impl Rng) -> Result<(Image, (usize, usize)), DataError> {
    check_fits(img, h, w)?;
    let origin = random_crop_origin(img.height(), img.width(), h, w, rng);
    Ok((crop_at(img, origin, h, w)?, origin))
}

pub fn center_crop_origin(img_h: usize, img_w: usize, h: usize, w: usize) -> (usize, usize) {
    ((img_h - h) / 2, (img_w - w) / 2)
}

pub fn center_crop(img: &Image, h: usize, w: usize) -> Result<Image, DataError> {
    check_fits(img, h, w)?;
    crop_at(img, center_crop_origin(img.height(), img.width(), h, w), h, w)
}

/// Mirror image left to right.
pub fn flip_horizontal(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(img.height(), w, |c, y, x| img.get(c, y, w - 1 - x))
}

/// Mirrors with probability `p`, otherwise returns the image unchanged.
pub fn hflip(img: &Image, p: f64, rng: &mut impl Rng) -> Image {
    if rng.random_bool(p.clamp(0.0, 1.0)) {
        flip_horizontal(img)
    } else {
        img.clone()
    }
}

/// Per-channel affine normalisation `(v − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

impl Normalization {
    pub fn apply(&self, img: &Image) -> Tensor<f32> {
        let mut data = Vec::with_capacity(img.data().len());
        for c in 0..3 {
            let (m, s) = (self.mean[c], self.std[c]);
            data.extend(img.plane(c).iter().map(|&v| (v - m) / s));
        }
        Tensor::new(vec![3, img.height(), img.width()], data).expect("image dims are positive")
    }

    pub fn invert(&self, t: &Tensor<f32>) -> Result<Image, DataError> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(DataError::BadImage(format!("expected 3×H×W tensor, got {s:?}")));
        }
        let n = s[1] * s[2];
        let mut data = Vec::with_capacity(t.numel());
        for c in 0..3 {
            data.extend(t.data()[c * n..(c + 1) * n].iter().map(|&v| v * self.std[c] + self.mean[c]));
        }
        Image::new(s[1], s[2], data)
    }
}

/// `(v − 0.5) / 0.5` per channel: maps `[0, 1]` onto `[−1, 1]`.
pub fn normalize(img: &Image) -> Tensor<f32> {
    Normalization::default().apply(img)
}

/// Random geometry drawn once per sample so a distorted/reference pair gets
/// identical treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentPlan {
    pub origin: (usize, usize),
    pub flip: bool,
}

impl AugmentPlan {
    pub fn draw(img_h: usize, img_w: usize, crop_h: usize, crop_w: usize, flip_prob: f64, rng: &mut impl Rng) -> Self {
        let origin = random_crop_origin(img_h, img_w, crop_h, crop_w, rng);
        let flip = rng.random_bool(flip_prob.clamp(0.0, 1.0));
        Self { origin, flip }
    }

    pub fn center(img_h: usize, img_w: usize, crop_h: usize, crop_w: usize) -> Self {
        Self {
            origin: center_crop_origin(img_h, img_w, crop_h, crop_w),
            flip: false,
        }
    }

    pub fn apply(&self, img: &Image, crop_h: usize, crop_w: usize) -> Result<Image, DataError> {
        let cropped = crop_at(img, self.origin, crop_h, crop_w)?;
        Ok(if self.flip { flip_horizontal(&cropped) } else { cropped })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |c, y, x| ((c * 7 + y * w + x) % 97) as f32 / 96.0)
    }

    #[test]
    fn resize_examples() {
        let big = Image::filled(1080, 1920, 0.25);
        let r = resize_short_side(&big, 540);
        assert_eq!((r.width(), r.height()), (960, 540));
        let same = ramp(30, 50);
        assert_eq!(resize_short_side(&same, 30), same);
        let sq = resize_short_side(&ramp(100, 100), 50);
        assert_eq!((sq.height(), sq.width()), (50, 50));
        let tall = resize_short_side(&ramp(90, 30), 10);
        assert_eq!((tall.height(), tall.width()), (30, 10));
    }

    #[test]
    fn resize_preserves_constants_and_aspect() {
        let r = resize_short_side(&Image::filled(37, 53, 0.4), 20);
        assert!(r.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
        for (h, w, t) in [(37, 53, 20), (480, 640, 224), (7, 1000, 3), (1000, 7, 5)] {
            let r = resize_short_side(&Image::filled(h, w, 0.0), t);
            let (long_in, short_in) = (h.max(w) as f64, h.min(w) as f64);
            let (long_out, short_out) = (r.height().max(r.width()) as f64, r.height().min(r.width()) as f64);
            assert_eq!(short_out as usize, t);
            assert!((long_out - long_in * short_out / short_in).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn crops() {
        let img = ramp(10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let whole = ramp(4, 4);
        let (c, origin) = random_crop(&whole, 4, 4, &mut rng).unwrap();
        assert_eq!((c, origin), (whole.clone(), (0, 0)));

        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| random_crop(&img, 4, 4, &mut rng).unwrap().1).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));

        let c = center_crop(&img, 4, 4).unwrap();
        assert_eq!(c, crop_at(&img, (3, 3), 4, 4).unwrap());
        assert_eq!(c, center_crop(&img, 4, 4).unwrap());
        assert_eq!(center_crop(&img, 10, 10).unwrap(), img);
        assert!(matches!(center_crop(&img, 11, 4), Err(DataError::CropTooLarge { .. })));
        assert!(matches!(random_crop(&img, 4, 12, &mut rng), Err(DataError::CropTooLarge { .. })));
    }

    #[test]
    fn random_crop_origins_are_uniform() {
        let img = ramp(10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 10_000;
        let mut counts = [[0usize; 7]; 2];
        for _ in 0..trials {
            let (_, (y, x)) = random_crop(&img, 4, 4, &mut rng).unwrap();
            counts[0][y] += 1;
            counts[1][x] += 1;
        }
        let p = 1.0 / 7.0;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for axis in counts {
            for c in axis {
                assert!((c as f64 - mean).abs() <= 3.0 * sigma, "count {c} vs {mean}");
            }
        }
    }

    #[test]
    fn flips() {
        let img = ramp(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(hflip(&img, 0.0, &mut rng), img);
        }
        let f = hflip(&img, 1.0, &mut rng);
        assert_eq!(f.get(1, 2, 0), img.get(1, 2, 4));
        assert_eq!(flip_horizontal(&f), img);

        let trials = 10_000;
        let flipped = (0..trials).filter(|_| hflip(&img, 0.5, &mut rng) != img).count();
        let sigma = (trials as f64 * 0.25).sqrt();
        assert!((flipped as f64 - trials as f64 / 2.0).abs() <= 3.0 * sigma);
    }

    #[test]
    fn normalisation() {
        let t = normalize(&Image::filled(2, 2, 0.5));
        assert!(t.data().iter().all(|&v| v == 0.0));
        let t = normalize(&Image::from_fn(1, 2, |_, _, x| x as f32));
        assert_eq!(&t.data()[..2], &[-1.0, 1.0]);
        let img = ramp(4, 6);
        let back = Normalization::default().invert(&normalize(&img)).unwrap();
        assert!(back.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn pair_plan_keeps_pair_aligned() {
        let img = ramp(12, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let plan = AugmentPlan::draw(12, 16, 8, 8, 0.5, &mut rng);
            let a = plan.apply(&img, 8, 8).unwrap();
            let b = plan.apply(&img.clone(), 8, 8).unwrap();
            assert_eq!(a, b);
        }
    }
}
