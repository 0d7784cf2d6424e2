use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use avkit_core::backend::train_backend;
use avkit_core::calibration::{self, TrainOptions, DEFAULT_PRIOR};
use avkit_core::error::{Error, ErrorClass, Result};
use avkit_core::face::{MatchMode, MatchPolicy};
use avkit_core::frontend::wav::{read_wav, write_wav};
use avkit_core::frontend::{apply_vad, mfcc, pcm_energy_vad, resample, sliding_cmn, FrontendConfig};
use avkit_core::io;
use avkit_core::metrics::{self, DcfParams, EvalReport};
use avkit_core::pipeline::{scoring, Pipeline, PipelineConfig, PipelineReport, Stage};
use avkit_core::synth::{self, SynthSpec};
use avkit_core::trials::ScoreSet;
use avkit_core::wpe::{enhance_waveform, WpeConfig};

#[derive(Parser)]
#[command(name = "avkit", version, about = "Audio-visual person verification toolkit")]
struct Cli {
    /// TOML configuration (pipeline config for `run`, generator spec for
    /// `simulate`, front-end or WPE settings for `mfcc` / `enhance`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides any seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract MFCC features from a WAV file.
    Mfcc(MfccArgs),
    /// Dereverberate a WAV file with WPE.
    Enhance(EnhanceArgs),
    /// Train the LDA + PLDA backend on labelled embeddings.
    TrainBackend(TrainBackendArgs),
    /// Score trials with a trained backend.
    ScoreAudio(ScoreAudioArgs),
    /// Score trials by face template matching.
    ScoreFace(ScoreFaceArgs),
    /// Train a single-system calibration.
    Calibrate(CalibrateArgs),
    /// Train (or apply) a fusion of several systems.
    Fuse(FuseArgs),
    /// Compute EER, minDCF and actDCF.
    Evaluate(EvaluateArgs),
    /// Write a synthetic audio-visual corpus and a matching pipeline config.
    Simulate(SimulateArgs),
    /// Run the full pipeline described by --config.
    Run(RunArgs),
    /// Print a report as a table.
    Report(ReportArgs),
}

#[derive(Args)]
struct MfccArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Operating sample rate; input is resampled when it differs.
    #[arg(long, default_value_t = 8000)]
    rate: u32,
    /// Apply sliding-window CMN.
    #[arg(long)]
    cmn: bool,
    /// Drop non-speech frames.
    #[arg(long)]
    vad: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    taps: Option<usize>,
    #[arg(long)]
    delay: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    psd_context: Option<usize>,
}

#[derive(Args)]
struct TrainBackendArgs {
    #[arg(long)]
    emb: PathBuf,
    /// `utterance<TAB>speaker`; without it the speaker is the id up to the
    /// first '-'.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 150)]
    lda_dim: usize,
    #[arg(long, default_value_t = 10)]
    em_iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreAudioArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    enroll: PathBuf,
    /// `segment<TAB>model`; without it each enrollment id is its own model.
    #[arg(long)]
    enroll_map: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TopK,
    TopPercent,
}

#[derive(Args)]
struct ScoreFaceArgs {
    #[arg(long)]
    enroll_det: PathBuf,
    /// Annotated boxes `video<TAB>frame<TAB>x<TAB>y<TAB>w<TAB>h`.
    #[arg(long)]
    enroll_boxes: PathBuf,
    #[arg(long)]
    test_det: PathBuf,
    #[arg(long)]
    emb: PathBuf,
    #[arg(long, value_enum, default_value = "top-k")]
    mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PRIOR)]
    prior: f64,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    /// Training key; required unless --model is given.
    #[arg(long, required_unless_present = "model")]
    key: Option<PathBuf>,
    /// Apply an existing fusion model instead of training one.
    #[arg(long, conflicts_with_all = ["key", "model_out"])]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PRIOR)]
    prior: f64,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    p_target: f64,
    #[arg(long, default_value_t = 1.0)]
    c_miss: f64,
    #[arg(long, default_value_t = 1.0)]
    c_fa: f64,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// DET curve points (probit P_fa, probit P_miss).
    #[arg(long)]
    det: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// First stage to execute; earlier artifacts are read from disk.
    #[arg(long, default_value = "embed")]
    from: String,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Mfcc(a) => cmd_mfcc(a, config),
        Command::Enhance(a) => cmd_enhance(a, config),
        Command::TrainBackend(a) => cmd_train_backend(a),
        Command::ScoreAudio(a) => cmd_score_audio(a),
        Command::ScoreFace(a) => cmd_score_face(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Simulate(a) => cmd_simulate(a, config, cli.seed),
        Command::Run(a) => cmd_run(a, config, cli.seed),
        Command::Report(a) => cmd_report(a),
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = io::read_text(path).map_err(|e| Error::Config(e.to_string()))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_mfcc(a: &MfccArgs, config: Option<&Path>) -> Result<()> {
    let audio = read_wav::<f64>(&a.input)?;
    let audio = if audio.sample_rate() == a.rate {
        audio
    } else {
        resample(&audio, a.rate)?
    };
    let cfg = match config {
        Some(p) => load_toml(p)?,
        None => FrontendConfig::for_rate(a.rate),
    };
    let raw = mfcc(&audio, &cfg)?;
    let mask = pcm_energy_vad(&raw, &cfg);
    let mut features = if a.cmn {
        sliding_cmn(&raw, cfg.cmn_frames())
    } else {
        raw
    };
    if a.vad {
        features = apply_vad(&features, &mask)?;
    }
    io::write_bytes(&a.out, &io::write_features(&features)?)
}

fn cmd_enhance(a: &EnhanceArgs, config: Option<&Path>) -> Result<()> {
    let mut cfg: WpeConfig = match config {
        Some(p) => load_toml(p)?,
        None => WpeConfig::default(),
    };
    if let Some(v) = a.taps {
        cfg.taps = v;
    }
    if let Some(v) = a.delay {
        cfg.delay = v;
    }
    if let Some(v) = a.iters {
        cfg.iterations = v;
    }
    if let Some(v) = a.psd_context {
        cfg.psd_context = v;
    }
    cfg.validate()?;
    let audio = read_wav::<f64>(&a.input)?;
    let enhanced = enhance_waveform(&audio, &FrontendConfig::for_enhancement(audio.sample_rate()), &cfg)?;
    write_wav(&a.out, &enhanced)
}

fn cmd_train_backend(a: &TrainBackendArgs) -> Result<()> {
    let table = io::load_embeddings::<f64>(&a.emb)?;
    let labels = match &a.labels {
        Some(p) => io::load_pairs(p)?,
        None => table
            .ids()
            .iter()
            .map(|id| (id.clone(), id.split('-').next().unwrap_or(id).to_string()))
            .collect(),
    };
    let model = train_backend(&table.labelled(&labels)?, a.lda_dim, a.em_iters)?;
    io::write_bytes(&a.out, &io::write_backend(&model)?)
}

fn cmd_score_audio(a: &ScoreAudioArgs) -> Result<()> {
    let model = io::read_backend::<f64>(&io::read_bytes(&a.model)?)?;
    let map = a.enroll_map.as_deref().map(io::load_pairs).transpose()?;
    let scores = scoring::score_embeddings(
        &model,
        &io::load_embeddings(&a.enroll)?,
        map.as_deref(),
        &io::load_embeddings(&a.test)?,
        &io::load_trials(&a.trials)?,
        "audio",
    )?;
    io::write_text(&a.out, &io::format_scores(&scores)?)
}

fn cmd_score_face(a: &ScoreFaceArgs) -> Result<()> {
    let policy = MatchPolicy {
        mode: match a.mode {
            ModeArg::TopK => MatchMode::TopK,
            ModeArg::TopPercent => MatchMode::TopPercent,
        },
        k: a.k,
        p: a.p,
        iou_threshold: a.iou_threshold,
    };
    policy.validate().map_err(|e| Error::Config(e.to_string()))?;
    let result = scoring::score_faces::<f64>(
        &io::load_embeddings(&a.emb)?,
        &io::load_detections(&a.enroll_det)?,
        &io::load_boxes(&a.enroll_boxes)?,
        &io::load_detections(&a.test_det)?,
        &io::load_trials(&a.trials)?,
        &policy,
        "face",
    )?;
    io::write_text(&a.out, &io::format_scores(&result.scores)?)
}

fn train_options(prior: f64, ridge: f64) -> Result<TrainOptions> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::Config(format!("--prior must lie in (0, 1), got {prior}")));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("--ridge must be non-negative, got {ridge}")));
    }
    Ok(TrainOptions {
        prior,
        ridge,
        ..Default::default()
    })
}

fn load_systems(paths: &[PathBuf]) -> Result<Vec<ScoreSet<f64>>> {
    let systems: Vec<ScoreSet<f64>> = paths.iter().map(|p| io::load_scores(p, None)).collect::<Result<_>>()?;
    let mut ids: Vec<&str> = systems.iter().map(ScoreSet::system_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("score files must have distinct file stems".into()));
    }
    Ok(systems)
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let options = train_options(a.prior, a.ridge)?;
    let systems = load_systems(std::slice::from_ref(&a.scores))?;
    let model = calibration::train(&systems, &io::load_key(&a.key)?, &options)?;
    io::write_text(&a.out, &io::format_calibration(&model)?)
}

fn cmd_fuse(a: &FuseArgs) -> Result<()> {
    let systems = load_systems(&a.scores)?;
    let model = match (&a.model, &a.key) {
        (Some(path), _) => {
            let m = io::parse_calibration::<f64>(&io::read_text(path)?, &path.display().to_string())?;
            // Scores are matched to weights by position; ids come from file stems.
            if m.system_ids.len() != systems.len() {
                return Err(Error::Config(format!(
                    "model has {} systems, {} score files given",
                    m.system_ids.len(),
                    systems.len()
                )));
            }
            m
        }
        (None, Some(key)) => {
            let options = train_options(a.prior, a.ridge)?;
            calibration::train(&systems, &io::load_key(key)?, &options)?
        }
        (None, None) => return Err(Error::Config("either --key or --model is required".into())),
    };
    let systems: Vec<ScoreSet<f64>> = systems
        .into_iter()
        .zip(&model.system_ids)
        .map(|(s, id)| s.with_system_id(id))
        .collect();
    let fused = calibration::apply(&model, &systems, "fusion")?;
    io::write_text(&a.out, &io::format_scores(&fused)?)?;
    if let Some(out) = &a.model_out {
        io::write_text(out, &io::format_calibration(&model)?)?;
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let params = DcfParams {
        p_target: a.p_target,
        c_miss: a.c_miss,
        c_fa: a.c_fa,
    };
    params.validate().map_err(|e| Error::Config(e.to_string()))?;
    let scores = io::load_scores::<f64>(&a.scores, None)?;
    let key = io::load_key(&a.key)?;
    let report = metrics::evaluate(&scores, &key, &params)?;
    let json = to_json(&report)?;
    match &a.out {
        Some(p) => io::write_text(p, &json)?,
        None => print!("{json}"),
    }
    if let Some(p) = &a.det {
        let curve = metrics::roc_points(&scores, &key)?;
        io::write_text(p, &io::format_det(&metrics::det_points(&curve)))?;
    }
    Ok(())
}

fn to_json<S: serde::Serialize>(v: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn cmd_simulate(a: &SimulateArgs, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut spec: SynthSpec = match config {
        Some(p) => load_toml(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    synth::write_corpus(&spec, &a.out)?;
    Ok(())
}

fn cmd_run(a: &RunArgs, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let path = config.ok_or_else(|| Error::Config("`run` needs --config <pipeline.toml>".into()))?;
    let from: Stage = a.from.parse()?;
    let pipeline = Pipeline::new(PipelineConfig::load(path)?, seed)?;
    let report = pipeline.run(from)?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let text = io::read_text(&a.input)?;
    if let Ok(r) = serde_json::from_str::<PipelineReport>(&text) {
        print!("{}", r.table());
        return Ok(());
    }
    let r: EvalReport =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: not a report: {e}", a.input.display())))?;
    println!(
        "EER {:.2}%  minDCF {:.3}  actDCF {:.3}  ({} target, {} nontarget, p_target {})",
        r.eer_percent, r.min_dcf, r.act_dcf, r.n_target, r.n_nontarget, r.params.p_target
    );
    Ok(())
}
