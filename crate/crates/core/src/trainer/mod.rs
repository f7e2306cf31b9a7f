//! Training loop, evaluation and the repeated grouped-split protocol.

mod config_file;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config_file::{parse_config_text, ConfigError, ConfigFile};

use crate::datapipe::{derive_seed, normalize, resize_short_side, split_dataset, AugmentPlan, DataError, Image, Manifest, SampleRecord};
use crate::diffcore::{AutodiffError, Tape, Tensor};
use crate::qloss::{combined_loss, LossConfig, LossError};
use crate::qmetrics::{median_over_repeats, EvalResult, MetricError};
use crate::qmodel::{make_fr_input, Mode, ModelConfig, ModelError, QualityModel};
use crate::qoptim::{cosine_lr, swa_start_epoch, OptimError, OptimizerConfig, OptimizerKind, OptimizerState, ParamMap, ScheduleConfig, SwaState};
use crate::videoqa::{load_frames, score_image_fr, score_image_nr, score_video_fr, score_video_nr, VideoError};
use crate::par;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} manifest is empty")]
    EmptyManifest(&'static str),
    #[error("full-reference training needs a reference for `{0}`")]
    MissingReference(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite training loss at epoch {epoch}")]
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    /// `total_epochs` is the epoch count.
    pub schedule: ScheduleConfig,
    /// `None` picks Adam when training from a fresh initialisation and SGD
    /// with momentum when fine-tuning loaded weights.
    pub optimizer: Option<OptimizerKind>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub flip_prob: f64,
    pub swa: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            loss: LossConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: None,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            flip_prob: 0.5,
            swa: false,
            seed: 0,
        }
    }

    pub fn epochs(&self) -> usize {
        self.schedule.total_epochs
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        LossConfig::new(self.loss.lambda)?;
        if self.epochs() > 0 {
            self.schedule.validate()?;
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.batch_size < 2 && self.loss.lambda > 0.0 {
            return Err(TrainError::Config("the ranking term needs batch_size ≥ 2 when lambda > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(TrainError::Config(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if !(self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return Err(TrainError::Config("momentum and weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    fn optimizer_config(&self, from_scratch: bool) -> OptimizerConfig {
        let kind = self.optimizer.unwrap_or(if from_scratch {
            OptimizerKind::Adam
        } else {
            OptimizerKind::SgdMomentum
        });
        OptimizerConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            ..OptimizerConfig::new(kind)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_mae: f64,
    pub loss_rank: f64,
    pub val_plcc: Option<f64>,
    pub val_srcc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,lr,loss,loss_mae,loss_rank,val_plcc,val_srcc";

    /// Floats use the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.loss,
                r.loss_mae,
                r.loss_rank,
                opt(r.val_plcc),
                opt(r.val_srcc)
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| DataError::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights after the last epoch, SWA-averaged when enabled.
    pub model: QualityModel,
    /// Highest validation SRCC seen at an epoch end, if validation ran.
    pub best: Option<(usize, QualityModel)>,
    pub log: TrainLog,
}

/// A resized training sample; `reference` is set in FR mode.
struct Prepared {
    media: Image,
    reference: Option<Image>,
    mos: f32,
}

fn load_resized(manifest: &Manifest, path: &str, target: usize) -> Result<Image, DataError> {
    Ok(resize_short_side(&Image::load(manifest.resolve(path))?, target))
}

fn prepare(manifest: &Manifest, mode: Mode, target: usize) -> Result<Vec<Prepared>, TrainError> {
    par::map_range(manifest.len(), |i| -> Result<Prepared, TrainError> {
        let r = &manifest.records[i];
        let media = load_resized(manifest, &r.media_path, target)?;
        let reference = match mode {
            Mode::Nr => None,
            Mode::Fr => {
                let rp = r.ref_path.as_ref().ok_or_else(|| TrainError::MissingReference(r.media_path.clone()))?;
                let img = load_resized(manifest, rp, target)?;
                if (img.height(), img.width()) != (media.height(), media.width()) {
                    return Err(ModelError::MisalignedPair {
                        distorted: vec![3, media.height(), media.width()],
                        reference: vec![3, img.height(), img.width()],
                    }
                    .into());
                }
                Some(img)
            }
        };
        Ok(Prepared { media, reference, mos: r.mos as f32 })
    })
    .into_iter()
    .collect()
}

/// Augmented network input for the listed samples: N×3×H×W or N×6×H×W.
fn assemble_batch(cfg: &TrainConfig, data: &[Prepared], idx: &[usize], epoch: usize) -> Result<Tensor<f32>, TrainError> {
    let (ch, cw) = (cfg.model.crop_height, cfg.model.crop_width);
    let views = par::map_range(idx.len(), |k| -> Result<(Tensor<f32>, Option<Tensor<f32>>), TrainError> {
        let i = idx[k];
        let s = &data[i];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 2, epoch as u64, i as u64]));
        let plan = AugmentPlan::draw(s.media.height(), s.media.width(), ch, cw, cfg.flip_prob, &mut rng);
        let d = normalize(&plan.apply(&s.media, ch, cw)?);
        let r = match &s.reference {
            Some(r) => Some(normalize(&plan.apply(r, ch, cw)?)),
            None => None,
        };
        Ok((d, r))
    });
    let mut dist = Vec::with_capacity(idx.len());
    let mut refs = Vec::new();
    for v in views {
        let (d, r) = v?;
        dist.push(d);
        refs.extend(r);
    }
    let d = Tensor::stack(&dist)?;
    Ok(match cfg.model.mode {
        Mode::Nr => d,
        Mode::Fr => make_fr_input(&d, &Tensor::stack(&refs)?, cfg.model.diff_direction)?,
    })
}

/// Loss values of one optimisation step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub mae: f64,
    pub rank: f64,
}

/// Forward, combined loss, backward and one optimiser update on a prepared
/// batch.
pub fn train_step(
    model: &mut QualityModel,
    optimizer: &mut OptimizerState<f32>,
    input: Tensor<f32>,
    target: &[f32],
    loss: LossConfig,
    lr: f64,
) -> Result<StepLoss, TrainError> {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(input);
    let (scores, vars) = model.record(&mut tape, x, true)?;
    let terms = combined_loss(&mut tape, scores, target, loss)?;
    let grads = tape.backward(terms.total)?;
    let grad_map: ParamMap<f32> = vars.iter().map(|(name, &v)| (name.clone(), grads.get(v))).collect();
    optimizer.step(model.params_mut(), &grad_map, lr)?;
    Ok(StepLoss {
        total: tape.value(terms.total).item() as f64,
        mae: tape.value(terms.mae).item() as f64,
        rank: tape.value(terms.rank).item() as f64,
    })
}

/// Trains a freshly initialised model seeded from `config.seed`.
pub fn train(config: &TrainConfig, train_set: &Manifest, val_set: Option<&Manifest>) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let model = QualityModel::build(config.model.clone(), config.seed)?;
    run_training(config, model, true, train_set, val_set)
}

/// Continues training from existing weights.
pub fn fine_tune(
    config: &TrainConfig,
    initial: QualityModel,
    train_set: &Manifest,
    val_set: Option<&Manifest>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if initial.config() != &config.model {
        return Err(TrainError::Config("loaded weights were built with a different model config".into()));
    }
    run_training(config, initial, false, train_set, val_set)
}

fn run_training(
    config: &TrainConfig,
    mut model: QualityModel,
    from_scratch: bool,
    train_set: &Manifest,
    val_set: Option<&Manifest>,
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyManifest("training"));
    }
    if let Some(v) = val_set {
        if v.is_empty() {
            return Err(TrainError::EmptyManifest("validation"));
        }
    }
    let epochs = config.epochs();
    let mut log = TrainLog::default();
    if epochs == 0 {
        return Ok(TrainOutcome { model, best: None, log });
    }

    let data = prepare(train_set, config.model.mode, config.model.resize_target)?;
    let mut optimizer = OptimizerState::<f32>::new(config.optimizer_config(from_scratch));
    let mut swa = SwaState::<f32>::new();
    let swa_from = swa_start_epoch(epochs);
    let mut best: Option<(usize, f64, QualityModel)> = None;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..epochs {
        let lr = cosine_lr(epoch, &config.schedule)?;
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 1, epoch as u64])));

        let (mut sum, mut sum_mae, mut sum_rank) = (0.0f64, 0.0f64, 0.0f64);
        for batch in order.chunks(config.batch_size) {
            let input = assemble_batch(config, &data, batch, epoch)?;
            let target: Vec<f32> = batch.iter().map(|&i| data[i].mos).collect();
            let step = train_step(&mut model, &mut optimizer, input, &target, config.loss, lr)?;
            let n = batch.len() as f64;
            sum += step.total * n;
            sum_mae += step.mae * n;
            sum_rank += step.rank * n;
        }
        let total = data.len() as f64;
        if !sum.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }

        let mut record = EpochRecord {
            epoch,
            lr,
            loss: sum / total,
            loss_mae: sum_mae / total,
            loss_rank: sum_rank / total,
            val_plcc: None,
            val_srcc: None,
        };
        if let Some(v) = val_set {
            let r = evaluate(&model, v)?;
            record.val_plcc = r.plcc;
            record.val_srcc = r.srcc;
            if let Some(s) = r.srcc {
                if best.as_ref().is_none_or(|(_, b, _)| s > *b) {
                    best = Some((epoch, s, model.clone()));
                }
            }
        }
        log.epochs.push(record);

        if config.swa && epoch >= swa_from {
            swa.update(model.params())?;
        }
    }

    if config.swa {
        model.set_params(swa.finalize()?)?;
    }
    Ok(TrainOutcome {
        model,
        best: best.map(|(e, _, m)| (e, m)),
        log,
    })
}

/// Predicted score for one manifest record: centre-crop inference on an
/// image, or the frame mean for a frame directory.
pub fn predict_record(model: &QualityModel, manifest: &Manifest, record: &SampleRecord) -> Result<f64, TrainError> {
    let (ch, cw) = (model.config().crop_height, model.config().crop_width);
    let media = manifest.resolve(&record.media_path);
    let reference = match model.mode() {
        Mode::Nr => None,
        Mode::Fr => Some(manifest.resolve(
            record.ref_path.as_ref().ok_or_else(|| TrainError::MissingReference(record.media_path.clone()))?,
        )),
    };
    let score = if media.is_dir() {
        let frames = load_frames(&media, 1)?;
        match reference {
            None => score_video_nr(model, &frames, ch, cw)?,
            Some(r) => score_video_fr(model, &frames, &load_frames(r, 1)?, ch, cw)?,
        }
    } else {
        let img = Image::load(&media)?;
        match reference {
            None => score_image_nr(model, &img, ch, cw)?,
            Some(r) => score_image_fr(model, &img, &Image::load(r)?, ch, cw)?,
        }
    };
    Ok(score)
}

/// Correlates `predict(record)` with MOS; undefined correlations stay `None`.
pub fn evaluate_with<P>(manifest: &Manifest, predict: P) -> Result<EvalResult, TrainError>
where
    P: Fn(&SampleRecord) -> Result<f64, TrainError> + Sync + Send,
{
    if manifest.is_empty() {
        return Err(TrainError::EmptyManifest("evaluation"));
    }
    let preds = par::map_range(manifest.len(), |i| predict(&manifest.records[i]))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mos: Vec<f64> = manifest.records.iter().map(|r| r.mos).collect();
    Ok(EvalResult::compute(&preds, &mos))
}

pub fn evaluate(model: &QualityModel, manifest: &Manifest) -> Result<EvalResult, TrainError> {
    evaluate_with(manifest, |r| predict_record(model, manifest, r))
}

#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub seed: u64,
    pub test_groups: BTreeSet<String>,
    pub train_groups: BTreeSet<String>,
    pub result: EvalResult,
}

#[derive(Debug, Clone)]
pub struct ProtocolReport {
    pub median: EvalResult,
    pub repeats: Vec<RepeatResult>,
}

fn groups(m: &Manifest) -> BTreeSet<String> {
    m.records.iter().map(|r| r.group_key().to_string()).collect()
}

/// Seed used for repeat `r` (1-based) of the split protocol.
pub fn repeat_seed(base: u64, r: usize) -> u64 {
    derive_seed(&[base, 3, r as u64])
}

/// Grouped split, train from scratch, test; repeated and reduced by median.
pub fn run_split_protocol(
    config: &TrainConfig,
    manifest: &Manifest,
    repeats: usize,
    test_fraction: f64,
) -> Result<ProtocolReport, TrainError> {
    if repeats == 0 {
        return Err(TrainError::Config("repeats must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(repeats);
    for r in 1..=repeats {
        let seed = repeat_seed(config.seed, r);
        let (train_set, test_set) = split_dataset(manifest, test_fraction, seed, true)?;
        let cfg = TrainConfig { seed, ..config.clone() };
        let outcome = train(&cfg, &train_set, None)?;
        out.push(RepeatResult {
            seed,
            test_groups: groups(&test_set),
            train_groups: groups(&train_set),
            result: evaluate(&outcome.model, &test_set)?,
        });
    }
    let results: Vec<EvalResult> = out.iter().map(|r| r.result).collect();
    Ok(ProtocolReport {
        median: median_over_repeats(&results)?,
        repeats: out,
    })
}
