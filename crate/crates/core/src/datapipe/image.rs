use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::DataError;

/// Three-channel image with planar (CHW) values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(DataError::BadImage(format!(
                "{height}×{width} image needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; 3 * height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Values from an 8-bit RGB buffer, each mapped to `v / 255`.
    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.as_raw();
        Self::from_fn(h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
    }

    /// Quantises to 8 bits with rounding and clamping.
    pub fn to_rgb8(&self) -> RgbImage {
        let mut buf = vec![0u8; 3 * self.height * self.width];
        for c in 0..3 {
            for (i, &v) in self.plane(c).iter().enumerate() {
                buf[i * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        RgbImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer sized above")
    }

    /// Reads an 8-bit PNG or binary PPM file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => ImageFormat::Png,
            Some("ppm") | Some("pnm") => ImageFormat::Pnm,
            _ => return Err(DataError::UnsupportedFormat(path.to_path_buf())),
        };
        let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
        let dynimg = image::load_from_memory_with_format(&bytes, format)
            .map_err(|e| DataError::Decode(path.to_path_buf(), e.to_string()))?;
        if dynimg.color().bytes_per_pixel() / dynimg.color().channel_count() != 1 {
            return Err(DataError::Decode(path.to_path_buf(), "only 8-bit images are supported".into()));
        }
        Ok(Self::from_rgb8(&dynimg.to_rgb8()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        self.to_rgb8()
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| DataError::Encode(path.to_path_buf(), e.to_string()))
    }
}

/// True for file names this crate can decode.
pub fn is_supported_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pnm")
    )
}
