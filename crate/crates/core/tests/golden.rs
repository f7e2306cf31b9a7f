//! Frozen forward-pass scores of a fixed-seed network on fixed inputs.

use vqa_core::diffcore::Tensor;
use vqa_core::qmodel::{Mode, ModelConfig, QualityModel};

fn inputs(channels: usize) -> Tensor<f32> {
    let (n, h, w) = (3, 16, 16);
    let data = (0..n * channels * h * w)
        .map(|i| {
            let (s, rest) = (i / (channels * h * w), i % (channels * h * w));
            let (c, y, x) = (rest / (h * w), rest / w % h, rest % w);
            (((x * (s + 1) + 2 * y + 3 * c) % 11) as f32 / 5.0) - 1.0
        })
        .collect();
    Tensor::new(vec![n, channels, h, w], data).unwrap()
}

const NR_SCORES: [f32; 3] = [-0.4242385, -0.120232895, 0.020247696];
const FR_SCORES: [f32; 3] = [0.8347134, 0.8999718, 1.2646698];

fn close(got: &[f32], want: &[f32]) -> bool {
    got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-5 * (1.0 + w.abs()))
}

#[test]
fn nr_forward_matches_frozen_scores() {
    let model = QualityModel::build(ModelConfig::micro(Mode::Nr), 42).unwrap();
    let got = model.score_input(&inputs(3)).unwrap();
    assert!(close(&got, &NR_SCORES), "{got:?}");
}

#[test]
fn fr_forward_matches_frozen_scores() {
    let model = QualityModel::build(ModelConfig::micro(Mode::Fr), 42).unwrap();
    let got = model.score_input(&inputs(6)).unwrap();
    assert!(close(&got, &FR_SCORES), "{got:?}");
}
