use std::fs;
use std::path::Path;

use vqa_core::datapipe::Image;
use vqa_core::qmodel::{Mode, ModelConfig, QualityModel};
use vqa_core::videoqa::{frame_scores_fr, frame_scores_nr, load_frames, score_video_fr, score_video_nr, FrameSequence};

fn model(mode: Mode) -> QualityModel {
    let mut cfg = ModelConfig::micro(mode);
    cfg.backbone.stage_channels = vec![8, 8];
    cfg.fc_hidden = 16;
    cfg.crop_height = 24;
    cfg.crop_width = 24;
    cfg.resize_target = 32;
    QualityModel::build(cfg, 3).unwrap()
}

fn frame(k: usize) -> Image {
    Image::from_fn(32, 40, |c, y, x| {
        (0.5 + 0.45 * ((x as f32 * 0.2 + k as f32 * 0.7 + c as f32).sin() * (y as f32 * 0.15 - k as f32).cos())).clamp(0.0, 1.0)
    })
}

fn write_frames(dir: &Path, frames: &[Image]) {
    fs::create_dir_all(dir).unwrap();
    for (i, f) in frames.iter().enumerate() {
        f.save_png(dir.join(format!("{i:05}.png"))).unwrap();
    }
}

#[test]
fn doubling_a_sequence_keeps_its_score() {
    let m = model(Mode::Nr);
    let frames: Vec<Image> = (0..5).map(frame).collect();
    let once = score_video_nr(&m, &FrameSequence::new(frames.clone()).unwrap(), 24, 24).unwrap();
    let twice = score_video_nr(&m, &FrameSequence::new([frames.clone(), frames].concat()).unwrap(), 24, 24).unwrap();
    assert!((once - twice).abs() <= 1e-12, "{once} vs {twice}");
}

#[test]
fn score_lies_between_frame_extremes() {
    let m = model(Mode::Nr);
    let seq = FrameSequence::new((0..6).map(frame).collect()).unwrap();
    let per = frame_scores_nr(&m, &seq, 24, 24).unwrap();
    let video = score_video_nr(&m, &seq, 24, 24).unwrap();
    let (lo, hi) = per.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
    assert!(lo < hi);
    assert!(lo <= video && video <= hi);

    let fr = model(Mode::Fr);
    let reference = FrameSequence::new((0..6).map(|k| frame(k + 1)).collect()).unwrap();
    let per = frame_scores_fr(&fr, &seq, &reference, 24, 24).unwrap();
    let video = score_video_fr(&fr, &seq, &reference, 24, 24).unwrap();
    let (lo, hi) = per.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
    assert!(lo <= video && video <= hi);
}

#[test]
fn stride_matches_manual_subsampling() {
    let tmp = tempfile::tempdir().unwrap();
    let frames: Vec<Image> = (0..7).map(frame).collect();
    write_frames(&tmp.path().join("all"), &frames);
    let every_third: Vec<Image> = frames.iter().step_by(3).cloned().collect();
    write_frames(&tmp.path().join("thinned"), &every_third);

    let m = model(Mode::Nr);
    let strided = load_frames(tmp.path().join("all"), 3).unwrap();
    let manual = load_frames(tmp.path().join("thinned"), 1).unwrap();
    assert_eq!(strided.len(), 3);
    assert_eq!(
        score_video_nr(&m, &strided, 24, 24).unwrap(),
        score_video_nr(&m, &manual, 24, 24).unwrap()
    );
}
