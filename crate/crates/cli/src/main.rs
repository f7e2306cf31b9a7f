use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vqa_core::datapipe::{synth_dataset, DataError, DistortionKind, Image, Manifest, SynthConfig};
use vqa_core::gradsuite::{run_suite_with_fault, SuiteOptions};
use vqa_core::qmodel::{load_weights, save_weights, Mode, ModelError, QualityModel};
use vqa_core::trainer::{evaluate, fine_tune, parse_config_text, train, TrainError};
use vqa_core::videoqa::{load_frames, score_image_fr, score_image_nr, score_video_fr, score_video_nr, VideoError};
use vqa_core::par;

const EXIT_CHECK: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_TRAIN: u8 = 4;
const EXIT_DEGENERATE: u8 = 5;

/// Image and video quality assessment: data generation, training, scoring.
#[derive(Parser)]
#[command(name = "vqa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic distortion dataset with a manifest.
    GenData(GenDataArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Report PLCC/SRCC of a model on a manifest.
    Eval(EvalArgs),
    /// Score one image or frame directory.
    Predict(PredictArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    sources: usize,
    /// Comma-separated distortion kinds.
    #[arg(long, value_delimiter = ',', default_value = "gaussian_blur,additive_noise,blockiness")]
    kinds: Vec<String>,
    #[arg(long, default_value_t = 5)]
    levels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side length of the generated square images.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train_manifest: PathBuf,
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long)]
    out_weights: PathBuf,
    /// Training log CSV; defaults to the weight path with `.log.csv` appended.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also write the best-by-validation-SRCC weights here.
    #[arg(long)]
    best_weights: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Nr,
    Fr,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nr => Mode::Nr,
            ModeArg::Fr => Mode::Fr,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Expected model mode; a mismatch with the weights is an error.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Image file or directory of frames.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Score every n-th frame of a frame directory.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    stride: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "double")]
    precision: PrecisionArg,
    /// Random points checked per case.
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl fmt::Display) -> Self {
        Self {
            code,
            msg: msg.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::Manifest { .. } | DataError::UnsupportedFormat(_) | DataError::Invalid(_) | DataError::BadDistortion(_) => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::WrongMode { .. } | ModelError::MisalignedPair { .. } | ModelError::InputShape { .. } => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

fn video_failure(e: VideoError) -> Failure {
    let code = match &e {
        VideoError::Data(d) => data_code(d),
        VideoError::Model(m) => model_code(m),
        VideoError::BadStride | VideoError::FrameCountMismatch { .. } | VideoError::MixedResolution { .. } => EXIT_USAGE,
        VideoError::NoFrames(_) => EXIT_IO,
    };
    Failure::new(code, e)
}

fn eval_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Video(v) => video_failure(v),
        TrainError::Data(d) => Failure::new(data_code(&d), d),
        TrainError::Model(m) => Failure::new(model_code(&m), m),
        TrainError::MissingReference(_) | TrainError::EmptyManifest(_) => Failure::new(EXIT_USAGE, e),
        other => Failure::new(EXIT_IO, other),
    }
}

fn load_manifest(path: &Path) -> Result<Manifest, Failure> {
    if !path.is_file() {
        return Err(Failure::new(EXIT_USAGE, format!("manifest not found: {}", path.display())));
    }
    Manifest::load(path).map_err(|e| Failure::new(data_code(&e), format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<QualityModel, Failure> {
    load_weights(path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn gen_data(a: GenDataArgs) -> CmdResult {
    let kinds = a
        .kinds
        .iter()
        .map(|k| k.trim().parse::<DistortionKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let cfg = SynthConfig {
        n_sources: a.sources,
        kinds,
        levels: a.levels,
        height: a.size,
        width: a.size,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let manifest = synth_dataset(&a.out, &cfg).map_err(|e| Failure::new(data_code(&e), e))?;
    println!("records={} manifest={}", manifest.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn run_train(a: TrainArgs) -> CmdResult {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", a.config.display())))?;
    let file = parse_config_text(&text).map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", a.config.display())))?;
    let cfg = file.train;
    let train_set = load_manifest(&a.train_manifest)?;
    let val_set = a.val_manifest.as_deref().map(load_manifest).transpose()?;

    println!(
        "mode={} lambda={} l_init={} l_min={} epochs={} batch_size={} swa={} seed={}",
        cfg.model.mode,
        cfg.loss.lambda,
        cfg.schedule.l_init,
        cfg.schedule.l_min,
        cfg.epochs(),
        cfg.batch_size,
        cfg.swa,
        cfg.seed
    );
    let outcome = match &file.init_weights {
        Some(p) => {
            let init = load_model(p)?;
            fine_tune(&cfg, init, &train_set, val_set.as_ref())
        }
        None => train(&cfg, &train_set, val_set.as_ref()),
    }
    .map_err(|e| Failure::new(EXIT_TRAIN, format!("training failed: {e}")))?;

    save_weights(&outcome.model, &a.out_weights)
        .map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", a.out_weights.display())))?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut s = a.out_weights.clone().into_os_string();
        s.push(".log.csv");
        PathBuf::from(s)
    });
    outcome.log.save(&log_path).map_err(|e| Failure::new(EXIT_IO, e))?;
    if let (Some(path), Some((epoch, best))) = (&a.best_weights, &outcome.best) {
        save_weights(best, path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))?;
        println!("best epoch={epoch} weights={}", path.display());
    }
    if let Some(v) = &val_set {
        let r = evaluate(&outcome.model, v).map_err(eval_failure)?;
        println!("{r}");
    }
    println!("weights={} log={}", a.out_weights.display(), log_path.display());
    Ok(())
}

fn run_eval(a: EvalArgs) -> CmdResult {
    let model = load_model(&a.weights)?;
    if let Some(m) = a.mode {
        let requested = Mode::from(m);
        if requested != model.mode() {
            return Err(Failure::new(
                EXIT_USAGE,
                ModelError::WrongMode {
                    requested,
                    actual: model.mode(),
                },
            ));
        }
    }
    let manifest = load_manifest(&a.manifest)?;
    if model.mode() == Mode::Fr && !manifest.has_references() {
        return Err(Failure::new(EXIT_USAGE, "full-reference weights need a manifest with ref_path on every row"));
    }
    let r = evaluate(&model, &manifest).map_err(eval_failure)?;
    println!("{r}");
    if !r.is_defined() {
        return Err(Failure::new(EXIT_DEGENERATE, "correlation undefined (constant predictions or fewer than 3 samples)"));
    }
    Ok(())
}

fn run_predict(a: PredictArgs) -> CmdResult {
    let model = load_model(&a.weights)?;
    let (ch, cw) = (model.config().crop_height, model.config().crop_width);
    match (model.mode(), &a.reference) {
        (Mode::Fr, None) => return Err(Failure::new(EXIT_USAGE, "full-reference weights need --reference")),
        (Mode::Nr, Some(_)) => return Err(Failure::new(EXIT_USAGE, "--reference given but the weights are no-reference")),
        _ => {}
    }
    let stride = a.stride as usize;
    let score = if a.input.is_dir() {
        let frames = load_frames(&a.input, stride).map_err(video_failure)?;
        match &a.reference {
            None => score_video_nr(&model, &frames, ch, cw),
            Some(r) => load_frames(r, stride).and_then(|refs| score_video_fr(&model, &frames, &refs, ch, cw)),
        }
    } else {
        let img = Image::load(&a.input).map_err(|e| Failure::new(data_code(&e), e))?;
        match &a.reference {
            None => score_image_nr(&model, &img, ch, cw),
            Some(r) => Image::load(r)
                .map_err(VideoError::from)
                .and_then(|refimg| score_image_fr(&model, &img, &refimg, ch, cw)),
        }
    }
    .map_err(video_failure)?;
    println!("{score:.6}");
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> CmdResult {
    if a.precision != PrecisionArg::Double {
        return Err(Failure::new(EXIT_USAGE, "gradient checking runs in double precision only"));
    }
    let opts = SuiteOptions {
        points: a.points,
        seed: a.seed,
        ..SuiteOptions::default()
    };
    let fault: Option<&'static str> = a.inject_fault.map(|s| &*Box::leak(s.into_boxed_str()));
    let report = run_suite_with_fault(&opts, fault).map_err(|e| Failure::new(EXIT_CHECK, e))?;
    for c in &report.cases {
        println!(
            "{:<16} max_rel_error={:.3e} points={} excluded={} {}",
            c.name,
            c.max_rel_error,
            c.checked,
            c.excluded,
            if c.passed(&opts) { "ok" } else { "FAIL" }
        );
    }
    let failed = report.failures();
    if failed.is_empty() {
        println!("all {} cases within {:e}", report.cases.len(), opts.tolerance);
        Ok(())
    } else {
        Err(Failure::new(EXIT_CHECK, format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    par::configure_from_env();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Predict(a) => run_predict(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
