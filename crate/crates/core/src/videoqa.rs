//! Video scoring from frame directories, plus the single-image scoring path
//! it is built on.

use std::fs;
use std::path::{Path, PathBuf};

use crate::datapipe::{center_crop, is_supported_image, normalize, resize_short_side, DataError, Image};
use crate::diffcore::Tensor;
use crate::par;
use crate::qmodel::{Mode, ModelError, QualityModel};

#[derive(Debug, thiserror::Error)]
pub enum VideoError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}: no decodable frames")]
    NoFrames(PathBuf),
    #[error("{file}: frame is {got:?} but earlier frames are {expected:?}")]
    MixedResolution {
        file: PathBuf,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("distorted video has {distorted} frames, reference has {reference}")]
    FrameCountMismatch { distorted: usize, reference: usize },
    #[error("frame stride must be at least 1")]
    BadStride,
}

/// Time-ordered frames sharing one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Image>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>) -> Result<Self, VideoError> {
        let first = frames.first().ok_or_else(|| VideoError::NoFrames(PathBuf::new()))?;
        let expected = (first.height(), first.width());
        for (i, f) in frames.iter().enumerate() {
            if (f.height(), f.width()) != expected {
                return Err(VideoError::MixedResolution {
                    file: PathBuf::from(format!("frame #{i}")),
                    expected,
                    got: (f.height(), f.width()),
                });
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.frames[0].height(), self.frames[0].width())
    }
}

/// Image files of `dir` in lexicographic name order.
pub fn frame_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, VideoError> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let path = entry.map_err(|e| DataError::io(dir, e))?.path();
        if path.is_file() && is_supported_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every `stride`-th frame, starting with the first.
pub fn load_frames(dir: impl AsRef<Path>, stride: usize) -> Result<FrameSequence, VideoError> {
    if stride == 0 {
        return Err(VideoError::BadStride);
    }
    let dir = dir.as_ref();
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(VideoError::NoFrames(dir.to_path_buf()));
    }
    let mut frames: Vec<Image> = Vec::new();
    for file in files.iter().step_by(stride) {
        let img = Image::load(file)?;
        if let Some(first) = frames.first() {
            let expected = (first.height(), first.width());
            if (img.height(), img.width()) != expected {
                return Err(VideoError::MixedResolution {
                    file: file.clone(),
                    expected,
                    got: (img.height(), img.width()),
                });
            }
        }
        frames.push(img);
    }
    Ok(FrameSequence { frames })
}

/// Deterministic inference preprocessing: short-side resize, centre crop,
/// normalisation. Returns a 1×3×H×W tensor.
pub fn prepare_eval(img: &Image, resize_target: usize, crop_h: usize, crop_w: usize) -> Result<Tensor<f32>, DataError> {
    let resized = resize_short_side(img, resize_target);
    let cropped = center_crop(&resized, crop_h, crop_w)?;
    let t = normalize(&cropped);
    Ok(t.reshape(&[1, 3, crop_h, crop_w]).expect("same element count"))
}

fn require(model: &QualityModel, mode: Mode) -> Result<(), ModelError> {
    if model.mode() != mode {
        return Err(ModelError::WrongMode {
            requested: mode,
            actual: model.mode(),
        });
    }
    Ok(())
}

pub fn score_image_nr(model: &QualityModel, img: &Image, crop_h: usize, crop_w: usize) -> Result<f64, VideoError> {
    require(model, Mode::Nr)?;
    let x = prepare_eval(img, model.config().resize_target, crop_h, crop_w)?;
    Ok(model.forward_nr(&x)?[0] as f64)
}

/// Both images go through identical geometry before the pair is combined.
pub fn score_image_fr(
    model: &QualityModel,
    distorted: &Image,
    reference: &Image,
    crop_h: usize,
    crop_w: usize,
) -> Result<f64, VideoError> {
    require(model, Mode::Fr)?;
    if (distorted.height(), distorted.width()) != (reference.height(), reference.width()) {
        return Err(ModelError::MisalignedPair {
            distorted: vec![3, distorted.height(), distorted.width()],
            reference: vec![3, reference.height(), reference.width()],
        }
        .into());
    }
    let target = model.config().resize_target;
    let d = prepare_eval(distorted, target, crop_h, crop_w)?;
    let r = prepare_eval(reference, target, crop_h, crop_w)?;
    Ok(model.forward_fr(&d, &r)?[0] as f64)
}

/// Arithmetic mean, summed in order.
pub fn mean_score(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

pub fn frame_scores_nr(model: &QualityModel, frames: &FrameSequence, crop_h: usize, crop_w: usize) -> Result<Vec<f64>, VideoError> {
    require(model, Mode::Nr)?;
    par::map_range(frames.len(), |i| score_image_nr(model, &frames.frames[i], crop_h, crop_w))
        .into_iter()
        .collect()
}

pub fn frame_scores_fr(
    model: &QualityModel,
    distorted: &FrameSequence,
    reference: &FrameSequence,
    crop_h: usize,
    crop_w: usize,
) -> Result<Vec<f64>, VideoError> {
    require(model, Mode::Fr)?;
    if distorted.len() != reference.len() {
        return Err(VideoError::FrameCountMismatch {
            distorted: distorted.len(),
            reference: reference.len(),
        });
    }
    par::map_range(distorted.len(), |i| {
        score_image_fr(model, &distorted.frames[i], &reference.frames[i], crop_h, crop_w)
    })
    .into_iter()
    .collect()
}

/// Mean of per-frame no-reference scores.
pub fn score_video_nr(model: &QualityModel, frames: &FrameSequence, crop_h: usize, crop_w: usize) -> Result<f64, VideoError> {
    Ok(mean_score(&frame_scores_nr(model, frames, crop_h, crop_w)?))
}

/// Mean of per-frame full-reference scores over aligned frame pairs.
pub fn score_video_fr(
    model: &QualityModel,
    distorted: &FrameSequence,
    reference: &FrameSequence,
    crop_h: usize,
    crop_w: usize,
) -> Result<f64, VideoError> {
    Ok(mean_score(&frame_scores_fr(model, distorted, reference, crop_h, crop_w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmodel::ModelConfig;

    fn frame(seed: usize) -> Image {
        Image::from_fn(20, 24, |c, y, x| (((x * 7 + y * 3 + c * 5 + seed * 11) % 17) as f32) / 16.0)
    }

    fn model(mode: Mode) -> QualityModel {
        let mut cfg = ModelConfig::micro(mode);
        cfg.crop_height = 16;
        cfg.crop_width = 16;
        cfg.resize_target = 20;
        QualityModel::build(cfg, 3).unwrap()
    }

    fn write_frames(dir: &Path, frames: &[Image]) {
        for (i, f) in frames.iter().enumerate() {
            f.save_png(dir.join(format!("f{i:03}.png"))).unwrap();
        }
    }

    #[test]
    fn stride_picks_every_kth_frame() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Image> = (0..10).map(frame).collect();
        write_frames(dir.path(), &frames);
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        assert_eq!(load_frames(dir.path(), 1).unwrap().len(), 10);
        let s = load_frames(dir.path(), 3).unwrap();
        assert_eq!(s.len(), 4);
        for (k, i) in [0, 3, 6, 9].into_iter().enumerate() {
            assert_eq!(s.frames()[k], Image::load(dir.path().join(format!("f{i:03}.png"))).unwrap());
        }
        assert!(matches!(load_frames(dir.path(), 0), Err(VideoError::BadStride)));
    }

    #[test]
    fn loading_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_frames(dir.path(), 1), Err(VideoError::NoFrames(_))));
        write_frames(dir.path(), &[frame(0)]);
        Image::filled(8, 8, 0.5).save_png(dir.path().join("f001.png")).unwrap();
        match load_frames(dir.path(), 1) {
            Err(VideoError::MixedResolution { file, .. }) => assert!(file.ends_with("f001.png")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn video_score_is_frame_mean() {
        let m = model(Mode::Nr);
        let frames: Vec<Image> = (0..3).map(frame).collect();
        let seq = FrameSequence::new(frames.clone()).unwrap();
        let per: Vec<f64> = frames.iter().map(|f| score_image_nr(&m, f, 16, 16).unwrap()).collect();
        assert_eq!(score_video_nr(&m, &seq, 16, 16).unwrap(), (per[0] + per[1] + per[2]) / 3.0);
        let single = FrameSequence::new(vec![frames[1].clone()]).unwrap();
        assert_eq!(score_video_nr(&m, &single, 16, 16).unwrap(), per[1]);
        assert_eq!(mean_score(&[0.2, 0.4, 0.6]), (0.2 + 0.4 + 0.6) / 3.0);
    }

    #[test]
    fn fr_requires_aligned_videos() {
        let m = model(Mode::Fr);
        let a = FrameSequence::new((0..3).map(frame).collect()).unwrap();
        let b = FrameSequence::new((0..2).map(frame).collect()).unwrap();
        assert!(matches!(
            score_video_fr(&m, &a, &b, 16, 16),
            Err(VideoError::FrameCountMismatch { distorted: 3, reference: 2 })
        ));
        let same = score_video_fr(&m, &a, &a, 16, 16).unwrap();
        let per: Vec<f64> = a.frames().iter().map(|f| score_image_fr(&m, f, f, 16, 16).unwrap()).collect();
        assert_eq!(same, mean_score(&per));
        assert!(matches!(score_video_nr(&m, &a, 16, 16), Err(VideoError::Model(ModelError::WrongMode { .. }))));
    }
}
