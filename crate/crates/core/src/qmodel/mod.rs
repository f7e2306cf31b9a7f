//! No-reference and full-reference quality networks.
//!
//! Both share one layout: a residual convolutional backbone, global average
//! pooling, a hidden fully connected layer with relu and a final linear layer
//! producing one unbounded score per sample. The full-reference variant feeds
//! six channels: the distorted image followed by the reference/distorted
//! difference.

mod weights;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::{AutodiffError, Real, Tape, Tensor, Var};
use crate::qoptim::ParamMap;

pub use weights::{load_weights, read_weights, save_weights, write_weights, FORMAT_VERSION, MAGIC};

/// Images scored per forward pass during inference.
pub const INFERENCE_BATCH: usize = 32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("model is {actual}, but a {requested} request was made")]
    WrongMode { requested: Mode, actual: Mode },
    #[error("input shape {got:?} does not fit the model (expected N×{channels}×H×W with H,W ≥ {min_size})")]
    InputShape {
        got: Vec<usize>,
        channels: usize,
        min_size: usize,
    },
    #[error("distorted {distorted:?} and reference {reference:?} are not aligned")]
    MisalignedPair {
        distorted: Vec<usize>,
        reference: Vec<usize>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("weight file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("weight file format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("weight file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("weight file inconsistent with its config: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// No-reference: distorted image only.
    Nr,
    /// Full-reference: distorted image plus its pristine reference.
    Fr,
}

impl Mode {
    pub fn input_channels(self) -> usize {
        match self {
            Mode::Nr => 3,
            Mode::Fr => 6,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Nr => "nr",
            Mode::Fr => "fr",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nr" => Ok(Mode::Nr),
            "fr" => Ok(Mode::Fr),
            other => Err(format!("unknown mode `{other}` (expected nr or fr)")),
        }
    }
}

/// Sign convention of the full-reference difference channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffDirection {
    /// reference − distorted
    #[default]
    RefMinusDist,
    /// distorted − reference
    DistMinusRef,
}

impl fmt::Display for DiffDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffDirection::RefMinusDist => "ref_minus_dist",
            DiffDirection::DistMinusRef => "dist_minus_ref",
        })
    }
}

impl FromStr for DiffDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ref_minus_dist" => Ok(Self::RefMinusDist),
            "dist_minus_ref" => Ok(Self::DistMinusRef),
            other => Err(format!(
                "unknown diff direction `{other}` (expected ref_minus_dist or dist_minus_ref)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// One entry per stage; every stage halves the spatial size.
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    /// 3 for no-reference, 6 for full-reference.
    pub input_channels: usize,
}

impl BackboneConfig {
    /// Small residual backbone trainable on a CPU in minutes.
    pub fn micro(mode: Mode) -> Self {
        Self {
            stem_channels: 16,
            stem_kernel: 3,
            stem_stride: 1,
            stage_channels: vec![16, 32, 64],
            blocks_per_stage: 2,
            input_channels: mode.input_channels(),
        }
    }

    /// Stage layout of ResNet-18 (without batch normalisation).
    pub fn resnet18(mode: Mode) -> Self {
        Self {
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
            input_channels: mode.input_channels(),
        }
    }

    /// Smallest input side that survives every downsampling step.
    pub fn min_input_size(&self) -> usize {
        self.stem_stride << self.stage_channels.len()
    }

    pub fn feature_channels(&self) -> usize {
        *self.stage_channels.last().unwrap_or(&self.stem_channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub backbone: BackboneConfig,
    pub fc_hidden: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    /// Short-side length images are resized to before cropping.
    pub resize_target: usize,
    pub diff_direction: DiffDirection,
}

impl ModelConfig {
    pub fn micro(mode: Mode) -> Self {
        Self {
            mode,
            backbone: BackboneConfig::micro(mode),
            fc_hidden: 128,
            crop_height: 48,
            crop_width: 48,
            resize_target: 64,
            diff_direction: DiffDirection::default(),
        }
    }

    /// Full-size configuration: ResNet-18 stage layout, 1024 hidden units.
    pub fn full_scale(mode: Mode) -> Self {
        Self {
            mode,
            backbone: BackboneConfig::resnet18(mode),
            fc_hidden: 1024,
            crop_height: 224,
            crop_width: 224,
            resize_target: 1080,
            diff_direction: DiffDirection::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let b = &self.backbone;
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if !matches!(b.input_channels, 3 | 6) {
            return bad(format!("input_channels must be 3 or 6, got {}", b.input_channels));
        }
        if b.input_channels != self.mode.input_channels() {
            return bad(format!(
                "{} mode needs {} input channels, config has {}",
                self.mode,
                self.mode.input_channels(),
                b.input_channels
            ));
        }
        if b.stage_channels.is_empty() {
            return bad("stage_channels must not be empty".into());
        }
        if b.stem_channels == 0 || b.stage_channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if b.blocks_per_stage == 0 || b.stem_kernel == 0 || b.stem_kernel.is_multiple_of(2) || b.stem_stride == 0 {
            return bad("blocks_per_stage, stem_stride must be positive and stem_kernel odd".into());
        }
        if self.fc_hidden == 0 {
            return bad("fc_hidden must be positive".into());
        }
        let min = b.min_input_size();
        if self.crop_height < min || self.crop_width < min {
            return bad(format!(
                "crop {}×{} is smaller than the backbone minimum {min}",
                self.crop_height, self.crop_width
            ));
        }
        if self.resize_target < self.crop_height.min(self.crop_width) {
            return bad(format!(
                "resize_target {} is smaller than the crop",
                self.resize_target
            ));
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        let b = &self.backbone;
        let stages: Vec<String> = b.stage_channels.iter().map(|c| c.to_string()).collect();
        format!(
            "mode={}\ninput_channels={}\nstem_channels={}\nstem_kernel={}\nstem_stride={}\nstage_channels={}\nblocks_per_stage={}\nfc_hidden={}\ncrop_height={}\ncrop_width={}\nresize_target={}\ndiff_direction={}\n",
            self.mode,
            b.input_channels,
            b.stem_channels,
            b.stem_kernel,
            b.stem_stride,
            stages.join(","),
            b.blocks_per_stage,
            self.fc_hidden,
            self.crop_height,
            self.crop_width,
            self.resize_target,
            self.diff_direction
        )
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::InvalidConfig(format!("malformed line `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| ModelError::InvalidConfig(format!("missing key `{k}`")))
        };
        let num = |k: &str| -> Result<usize, ModelError> {
            get(k)?
                .parse()
                .map_err(|_| ModelError::InvalidConfig(format!("`{k}` is not a positive integer")))
        };
        let mode: Mode = get("mode")?.parse().map_err(ModelError::InvalidConfig)?;
        let stage_channels = get("stage_channels")?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ModelError::InvalidConfig("bad stage_channels list".into()))?;
        let config = Self {
            mode,
            backbone: BackboneConfig {
                stem_channels: num("stem_channels")?,
                stem_kernel: num("stem_kernel")?,
                stem_stride: num("stem_stride")?,
                stage_channels,
                blocks_per_stage: num("blocks_per_stage")?,
                input_channels: num("input_channels")?,
            },
            fc_hidden: num("fc_hidden")?,
            crop_height: num("crop_height")?,
            crop_width: num("crop_width")?,
            resize_target: num("resize_target")?,
            diff_direction: get("diff_direction")?.parse().map_err(ModelError::InvalidConfig)?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// One convolution in the backbone.
#[derive(Debug, Clone)]
struct ConvSpec {
    name: String,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    /// Followed directly by relu (drives the initialisation gain).
    relu_after: bool,
}

#[derive(Debug, Clone)]
struct BlockSpec {
    conv1: ConvSpec,
    conv2: ConvSpec,
    proj: Option<ConvSpec>,
}

#[derive(Debug, Clone)]
struct Architecture {
    stem: ConvSpec,
    blocks: Vec<BlockSpec>,
    feature: usize,
}

fn architecture(cfg: &ModelConfig) -> Architecture {
    let b = &cfg.backbone;
    let stem = ConvSpec {
        name: "stem".into(),
        in_ch: b.input_channels,
        out_ch: b.stem_channels,
        kernel: b.stem_kernel,
        stride: b.stem_stride,
        pad: b.stem_kernel / 2,
        relu_after: true,
    };
    let mut blocks = Vec::new();
    let mut ch = b.stem_channels;
    for (s, &out) in b.stage_channels.iter().enumerate() {
        for k in 0..b.blocks_per_stage {
            let stride = if k == 0 { 2 } else { 1 };
            let prefix = format!("stage{s}.block{k}");
            let conv1 = ConvSpec {
                name: format!("{prefix}.conv1"),
                in_ch: ch,
                out_ch: out,
                kernel: 3,
                stride,
                pad: 1,
                relu_after: true,
            };
            let conv2 = ConvSpec {
                name: format!("{prefix}.conv2"),
                in_ch: out,
                out_ch: out,
                kernel: 3,
                stride: 1,
                pad: 1,
                relu_after: false,
            };
            let proj = (stride != 1 || ch != out).then(|| ConvSpec {
                name: format!("{prefix}.proj"),
                in_ch: ch,
                out_ch: out,
                kernel: 1,
                stride,
                pad: 0,
                relu_after: false,
            });
            blocks.push(BlockSpec { conv1, conv2, proj });
            ch = out;
        }
    }
    Architecture {
        stem,
        blocks,
        feature: ch,
    }
}

/// Parameter names and shapes in construction order.
fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize, bool)> {
    let arch = architecture(cfg);
    let mut out = Vec::new();
    let mut conv = |c: &ConvSpec| {
        let fan_in = c.in_ch * c.kernel * c.kernel;
        out.push((format!("{}.weight", c.name), vec![c.out_ch, c.in_ch, c.kernel, c.kernel], fan_in, c.relu_after));
        out.push((format!("{}.bias", c.name), vec![c.out_ch], 0, false));
    };
    conv(&arch.stem);
    for b in &arch.blocks {
        conv(&b.conv1);
        conv(&b.conv2);
        if let Some(p) = &b.proj {
            conv(p);
        }
    }
    out.push(("fc1.weight".into(), vec![arch.feature, cfg.fc_hidden], arch.feature, true));
    out.push(("fc1.bias".into(), vec![cfg.fc_hidden], 0, false));
    out.push(("fc2.weight".into(), vec![cfg.fc_hidden, 1], cfg.fc_hidden, false));
    out.push(("fc2.bias".into(), vec![1], 0, false));
    out
}

/// Channels 0–2: distorted; channels 3–5: difference per `direction`.
pub fn make_fr_input<F: Real>(
    distorted: &Tensor<F>,
    reference: &Tensor<F>,
    direction: DiffDirection,
) -> Result<Tensor<F>, ModelError> {
    let (ds, rs) = (distorted.shape(), reference.shape());
    if ds != rs || ds.len() != 4 || ds[1] != 3 {
        return Err(ModelError::MisalignedPair {
            distorted: ds.to_vec(),
            reference: rs.to_vec(),
        });
    }
    let plane = 3 * ds[2] * ds[3];
    let mut data = Vec::with_capacity(2 * distorted.numel());
    for s in 0..ds[0] {
        let d = &distorted.data()[s * plane..(s + 1) * plane];
        let r = &reference.data()[s * plane..(s + 1) * plane];
        data.extend_from_slice(d);
        match direction {
            DiffDirection::RefMinusDist => data.extend(r.iter().zip(d).map(|(&r, &d)| r - d)),
            DiffDirection::DistMinusRef => data.extend(r.iter().zip(d).map(|(&r, &d)| d - r)),
        }
    }
    Ok(Tensor::new(vec![ds[0], 6, ds[2], ds[3]], data)?)
}

/// A quality network: configuration plus named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityModel {
    config: ModelConfig,
    params: ParamMap<f32>,
}

impl QualityModel {
    /// Fan-in scaled uniform initialisation from `seed`; biases start at zero.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamMap::new();
        for (name, shape, fan_in, relu_after) in parameter_layout(&config) {
            let numel: usize = shape.iter().product();
            let data = if fan_in == 0 {
                vec![0.0f32; numel]
            } else {
                let gain = if relu_after { 2.0 } else { 1.0 };
                let bound = (3.0 * gain / fan_in as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-bound..bound) as f32).collect()
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn params(&self) -> &ParamMap<f32> {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Replaces every parameter; names and shapes must match exactly.
    pub fn set_params(&mut self, params: ParamMap<f32>) -> Result<(), ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::Inconsistent(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (name, p) in &params {
            match self.params.get(name) {
                Some(cur) if cur.shape() == p.shape() => {}
                Some(cur) => {
                    return Err(ModelError::Inconsistent(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        p.shape(),
                        cur.shape()
                    )))
                }
                None => return Err(ModelError::Inconsistent(format!("unexpected parameter `{name}`"))),
            }
        }
        self.params = params;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamMap<f32> {
        &mut self.params
    }

    fn check_input(&self, shape: &[usize]) -> Result<(), ModelError> {
        let channels = self.config.backbone.input_channels;
        let min_size = self.config.backbone.min_input_size();
        if shape.len() != 4 || shape[1] != channels || shape[2] < min_size || shape[3] < min_size {
            return Err(ModelError::InputShape {
                got: shape.to_vec(),
                channels,
                min_size,
            });
        }
        Ok(())
    }

    /// Records the network on `tape` for an already assembled input
    /// (3 or 6 channels). Returns the N-vector of scores and the tape handle
    /// of every parameter.
    pub fn record<F: Real>(
        &self,
        tape: &mut Tape<F>,
        input: Var,
        trainable: bool,
    ) -> Result<(Var, BTreeMap<String, Var>), ModelError> {
        self.check_input(tape.shape(input))?;
        let n = tape.shape(input)[0];
        let mut vars = BTreeMap::new();
        for (name, p) in &self.params {
            vars.insert(name.clone(), tape.leaf(p.cast::<F>(), trainable));
        }
        let conv = |tape: &mut Tape<F>, x: Var, c: &ConvSpec| -> Result<Var, AutodiffError> {
            let w = vars[&format!("{}.weight", c.name)];
            let b = vars[&format!("{}.bias", c.name)];
            tape.conv2d(x, w, b, c.stride, c.pad)
        };
        let arch = architecture(&self.config);
        let mut x = conv(tape, input, &arch.stem)?;
        x = tape.relu(x)?;
        for block in &arch.blocks {
            let h = conv(tape, x, &block.conv1)?;
            let h = tape.relu(h)?;
            let h = conv(tape, h, &block.conv2)?;
            let skip = match &block.proj {
                Some(p) => conv(tape, x, p)?,
                None => x,
            };
            let sum = tape.add(h, skip)?;
            x = tape.relu(sum)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let hidden = tape.fully_connected(pooled, vars["fc1.weight"], vars["fc1.bias"])?;
        let hidden = tape.relu(hidden)?;
        let out = tape.fully_connected(hidden, vars["fc2.weight"], vars["fc2.bias"])?;
        let scores = tape.reshape(out, &[n])?;
        Ok((scores, vars))
    }

    /// Scores an assembled input batch (3 channels for NR, 6 for FR).
    pub fn score_input(&self, input: &Tensor<f32>) -> Result<Vec<f32>, ModelError> {
        self.check_input(input.shape())?;
        let n = input.shape()[0];
        let per = input.numel() / n;
        let mut scores = Vec::with_capacity(n);
        for start in (0..n).step_by(INFERENCE_BATCH) {
            let end = (start + INFERENCE_BATCH).min(n);
            let mut shape = input.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, input.data()[start * per..end * per].to_vec())?;
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(chunk);
            let (out, _) = self.record(&mut tape, x, false)?;
            scores.extend_from_slice(tape.value(out).data());
        }
        Ok(scores)
    }

    pub fn forward_nr(&self, images: &Tensor<f32>) -> Result<Vec<f32>, ModelError> {
        if self.mode() != Mode::Nr {
            return Err(ModelError::WrongMode {
                requested: Mode::Nr,
                actual: self.mode(),
            });
        }
        self.score_input(images)
    }

    pub fn forward_fr(&self, distorted: &Tensor<f32>, reference: &Tensor<f32>) -> Result<Vec<f32>, ModelError> {
        if self.mode() != Mode::Fr {
            return Err(ModelError::WrongMode {
                requested: Mode::Fr,
                actual: self.mode(),
            });
        }
        let input = make_fr_input(distorted, reference, self.config.diff_direction)?;
        self.score_input(&input)
    }
}
