//! Command-line front end.
//!
//! Settings are layered: published defaults, then `--config`, then `--set
//! key=value`, then subcommand flags, then the global flags. The resolved
//! configuration is hashed into every artifact and written in full to the
//! run log next to the artifact (`<out>.log.jsonl`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::decoder::{gen_dataset, train_decoder, DecoderModel};
use crate::error::{Error, Result};
use crate::evaluator::{self, StudyConfig};
use crate::formats::{self, ModelFile};
use crate::lattice::CodeLayout;
use crate::noise::{derive_stream, RngStream};
use crate::plot;
use crate::reoptimizer::{self, reoptimize};
use crate::runlog::{num, RunLog};
use crate::syndrome_field::{evaluate_approximator, train_approximator, SyndromeField};

#[derive(Debug, Parser)]
#[command(name = "toric-reopt", version, about = "Toric-code neural decoder workbench")]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluation worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Omit wall-clock fields from run logs so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run log path (default: `<out>.log.jsonl`).
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a syndrome/error dataset.
    GenData(GenData),
    /// Train the neural approximator of the relaxed syndrome function.
    TrainApprox(TrainApprox),
    /// Train a decoder on a dataset.
    TrainDecoder(TrainDecoder),
    /// Fine-tune a decoder through the relaxed syndrome function.
    Reoptimize(Reopt),
    /// Logical error rate sweep of one decoder.
    Evaluate(Evaluate),
    /// Paired sweep of decoders before and after reoptimization.
    Compare(Compare),
    /// Dataset-size study.
    ScalingStudy(ScalingStudy),
    /// Noise-bias study.
    BiasStudy(BiasStudy),
    /// Render a result CSV as SVG.
    ExportPlot(ExportPlot),
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// depolarizing or biased.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    p_min: Option<f64>,
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long)]
    p_step: Option<f64>,
    /// Monte Carlo trials per grid point.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainApprox {
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    hidden_scale: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Cosine-anneal the learning rate to zero over training.
    #[arg(long)]
    cosine_decay: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainDecoder {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    hidden_scale: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Reopt {
    #[arg(long)]
    decoder: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Approximator model; the exact relaxation is used when absent.
    #[arg(long)]
    f_model: Option<PathBuf>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Evaluate {
    #[arg(long)]
    decoder: PathBuf,
    /// Dataset whose header must agree with the decoder's distance.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Compare {
    #[arg(long, num_args = 1.., required = true)]
    before: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    after: Vec<PathBuf>,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[arg(long = "L")]
    l: Option<usize>,
    /// Training error rate.
    #[arg(long)]
    p: Option<f64>,
    /// Base dataset size.
    #[arg(long)]
    n: Option<usize>,
    /// Number of training seeds, counted up from `--seed`.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    f_model: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScalingStudy {
    /// Comma-separated dataset multipliers.
    #[arg(long)]
    multipliers: Option<String>,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Debug, Args)]
struct BiasStudy {
    /// Comma-separated bias parameters.
    #[arg(long)]
    etas: Option<String>,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Debug, Args)]
struct ExportPlot {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn set<T: ToString>(cfg: &mut RunConfig, key: &str, value: &Option<T>) -> Result<()> {
    match value {
        Some(v) => cfg.apply(key, &v.to_string()),
        None => Ok(()),
    }
}

fn set_noise(cfg: &mut RunConfig, a: &NoiseArgs) -> Result<()> {
    set(cfg, "noise", &a.noise)?;
    set(cfg, "eta", &a.eta)
}

fn set_grid(cfg: &mut RunConfig, a: &GridArgs) -> Result<()> {
    set(cfg, "p_min", &a.p_min)?;
    set(cfg, "p_max", &a.p_max)?;
    set(cfg, "p_step", &a.p_step)?;
    set(cfg, "eval_trials", &a.trials)
}

fn set_study(cfg: &mut RunConfig, a: &StudyArgs) -> Result<()> {
    set(cfg, "L", &a.l)?;
    set(cfg, "p", &a.p)?;
    set(cfg, "data_n", &a.n)?;
    set(cfg, "study_seeds", &a.seeds)?;
    set(cfg, "f_model", &a.f_model.as_ref().map(|p| p.display()))?;
    set_grid(cfg, &a.grid)?;
    set(cfg, "out", &Some(a.out.display()))
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.apply(k.trim(), v.trim())?;
        }
        let c = &mut cfg;
        let disp = |p: &Path| Some(p.display().to_string());
        match &self.command {
            Command::GenData(a) => {
                set(c, "L", &a.l)?;
                set(c, "p", &a.p)?;
                set(c, "data_n", &a.n)?;
                set_noise(c, &a.noise)?;
                set(c, "out", &disp(&a.out))?;
            }
            Command::TrainApprox(a) => {
                set(c, "L", &a.l)?;
                set(c, "approx_hidden_scale", &a.hidden_scale)?;
                set(c, "approx_n_train", &a.n_train)?;
                set(c, "approx_n_test", &a.n_test)?;
                set(c, "approx_batch", &a.batch)?;
                set(c, "approx_epochs", &a.epochs)?;
                set(c, "approx_lr", &a.lr)?;
                set(c, "approx_weight_decay", &a.weight_decay)?;
                if a.cosine_decay {
                    c.apply("approx_cosine_decay", "true")?;
                }
                set(c, "out", &disp(&a.out))?;
            }
            Command::TrainDecoder(a) => {
                set(c, "data", &disp(&a.data))?;
                set(c, "decoder_hidden_layers", &a.hidden_layers)?;
                set(c, "decoder_hidden_scale", &a.hidden_scale)?;
                set(c, "decoder_batch", &a.batch)?;
                set(c, "decoder_epochs", &a.epochs)?;
                set(c, "decoder_lr", &a.lr)?;
                set(c, "decoder_val_fraction", &a.val_fraction)?;
                set(c, "out", &disp(&a.out))?;
            }
            Command::Reoptimize(a) => {
                set(c, "decoder", &disp(&a.decoder))?;
                set(c, "data", &disp(&a.data))?;
                set(c, "f_model", &a.f_model.as_deref().and_then(disp))?;
                set(c, "reopt_batch", &a.batch)?;
                set(c, "reopt_epochs", &a.epochs)?;
                set(c, "reopt_lr", &a.lr)?;
                set(c, "out", &disp(&a.out))?;
            }
            Command::Evaluate(a) => {
                set(c, "decoder", &disp(&a.decoder))?;
                set(c, "data", &a.data.as_deref().and_then(disp))?;
                set_noise(c, &a.noise)?;
                set_grid(c, &a.grid)?;
                set(c, "out", &disp(&a.out))?;
            }
            Command::Compare(a) => {
                set_noise(c, &a.noise)?;
                set_grid(c, &a.grid)?;
                set(c, "out", &disp(&a.out))?;
            }
            Command::ScalingStudy(a) => {
                set(c, "scaling_multipliers", &a.multipliers)?;
                set_study(c, &a.study)?;
            }
            Command::BiasStudy(a) => {
                set(c, "bias_etas", &a.etas)?;
                set_study(c, &a.study)?;
            }
            Command::ExportPlot(a) => set(c, "out", &disp(&a.out))?,
        }
        set(c, "seed", &self.seed)?;
        set(c, "workers", &self.workers)?;
        if self.deterministic {
            c.apply("deterministic", "true")?;
        }
        Ok(cfg)
    }

    fn out(&self) -> &Path {
        match &self.command {
            Command::GenData(a) => &a.out,
            Command::TrainApprox(a) => &a.out,
            Command::TrainDecoder(a) => &a.out,
            Command::Reoptimize(a) => &a.out,
            Command::Evaluate(a) => &a.out,
            Command::Compare(a) => &a.out,
            Command::ScalingStudy(a) => &a.study.out,
            Command::BiasStudy(a) => &a.study.out,
            Command::ExportPlot(a) => &a.out,
        }
    }

    fn name(&self) -> &'static str {
        match &self.command {
            Command::GenData(_) => "gen-data",
            Command::TrainApprox(_) => "train-approx",
            Command::TrainDecoder(_) => "train-decoder",
            Command::Reoptimize(_) => "reoptimize",
            Command::Evaluate(_) => "evaluate",
            Command::Compare(_) => "compare",
            Command::ScalingStudy(_) => "scaling-study",
            Command::BiasStudy(_) => "bias-study",
            Command::ExportPlot(_) => "export-plot",
        }
    }
}

/// Parses `argv` and runs the subcommand; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: &Cli, argv: &[OsString]) -> Result<()> {
    let cfg = cli.resolve()?;
    // an already-initialised global pool is fine: results do not depend on it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    let log_path = cli.log.clone().unwrap_or_else(|| {
        let mut p = cli.out().as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log = RunLog::create(&log_path, cfg.deterministic)?;
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    log.event(
        "start",
        json!({
            "command": cli.name(),
            "argv": argv,
            "config_hash": format!("{:016x}", cfg.hash()),
            "seed": cfg.seed,
            "config": cfg.to_text(),
        }),
    )?;
    let result = dispatch(cli, &cfg, &mut log);
    match &result {
        Ok(()) => log.event("end", json!({"status": 0}))?,
        Err(e) => log.event("end", json!({"status": e.exit_code(), "error": e.to_string()}))?,
    }
    result
}

fn record_artifact(log: &mut RunLog, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    log.event(
        "artifact",
        json!({"path": path.display().to_string(), "bytes": bytes.len(), "sha256": hex::encode(Sha256::digest(&bytes))}),
    )
}

fn write_text(log: &mut RunLog, path: &Path, text: &str) -> Result<()> {
    formats::write_atomic(path, text.as_bytes())?;
    record_artifact(log, path)
}

fn load_field(cfg: &RunConfig, l: usize) -> Result<SyndromeField> {
    let layout = CodeLayout::new(l)?;
    if cfg.f_model.is_empty() {
        return Ok(SyndromeField::exact(layout));
    }
    let file = formats::read_model(Path::new(&cfg.f_model))?;
    if file.l != l {
        return Err(Error::Dimension(format!("f-model is for L = {}, run for L = {l}", file.l)));
    }
    SyndromeField::approximated(layout, file.into_field_net()?)
}

fn study_config(cfg: &RunConfig) -> Result<StudyConfig> {
    Ok(StudyConfig {
        l: cfg.l,
        train_p: cfg.p,
        base_n: cfg.data_n,
        decoder: cfg.decoder_config(),
        reopt: cfg.reopt_config(),
        field: load_field(cfg, cfg.l)?,
        grid: cfg.grid()?,
        trials: cfg.eval_trials,
        eval_seed: derive_stream(cfg.seed, 4).next_u64(),
    })
}

fn study_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.study_seeds as u64).map(|k| cfg.seed.wrapping_add(k)).collect()
}

fn same_distance(models: &[DecoderModel]) -> Result<usize> {
    let l = models[0].meta.l;
    if let Some(m) = models.iter().find(|m| m.meta.l != l) {
        return Err(Error::Dimension(format!("decoders for L = {l} and L = {} mixed", m.meta.l)));
    }
    Ok(l)
}

fn dispatch(cli: &Cli, cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let hash = cfg.hash();
    match &cli.command {
        Command::GenData(a) => {
            let layout = CodeLayout::new(cfg.l)?;
            let data = gen_dataset(&layout, cfg.noise_model()?, cfg.data_n, &mut RngStream::new(cfg.seed))?;
            formats::write_dataset(&a.out, &data, hash)?;
            record_artifact(log, &a.out)
        }
        Command::TrainApprox(a) => {
            let layout = CodeLayout::new(cfg.l)?;
            let mut epoch_log = Ok(());
            let net = train_approximator(&layout, &cfg.approx_config(), &mut RngStream::new(cfg.seed), |r| {
                epoch_log = epoch_log.take_ok().and_then(|()| log.epoch("approx", r));
            })?;
            epoch_log?;
            let field = SyndromeField::approximated(layout, net.clone())?;
            let m = evaluate_approximator(&field, cfg.approx_n_test, &mut derive_stream(cfg.seed, 3))?;
            log.event(
                "metrics",
                json!({"cosine": num(m.cosine), "mse": num(m.mse), "mae": num(m.mae), "n_test": m.n, "zero_targets": m.zero_targets}),
            )?;
            formats::write_model(&a.out, &ModelFile::field_model(cfg.l, net, hash))?;
            record_artifact(log, &a.out)
        }
        Command::TrainDecoder(a) => {
            let (data, _) = formats::read_dataset(&a.data)?;
            let mut epoch_log = Ok(());
            let model = train_decoder(&data, &cfg.decoder_config(), cfg.seed, |r| {
                epoch_log = epoch_log.take_ok().and_then(|()| log.epoch("train", r));
            })?;
            epoch_log?;
            formats::write_model(&a.out, &ModelFile::from_decoder(&model, hash))?;
            record_artifact(log, &a.out)
        }
        Command::Reoptimize(a) => {
            let model = formats::read_decoder(&a.decoder)?;
            let (data, _) = formats::read_dataset(&a.data)?;
            let field = load_field(cfg, model.meta.l)?;
            let mut epoch_log = Ok(());
            let tuned = reoptimize(&model, &field, &data, &cfg.reopt_config(), cfg.seed, |r| {
                epoch_log = epoch_log.take_ok().and_then(|()| log.epoch("reoptimize", r));
            })?;
            epoch_log?;
            log.event(
                "reoptimized",
                json!({"source": formats::decoder_hash(&model), "result": formats::decoder_hash(&tuned), "field": reoptimizer::field_label(&field)}),
            )?;
            formats::write_model(&a.out, &ModelFile::from_decoder(&tuned, hash))?;
            record_artifact(log, &a.out)
        }
        Command::Evaluate(a) => {
            let model = formats::read_decoder(&a.decoder)?;
            if let Some(path) = &a.data {
                let (_, header) = formats::read_dataset(path)?;
                if header.l != model.meta.l {
                    return Err(Error::Dimension(format!(
                        "dataset header says L = {}, decoder is for L = {}",
                        header.l, model.meta.l
                    )));
                }
            }
            let layout = CodeLayout::new(model.meta.l)?;
            let result = evaluator::sweep(
                &model,
                &layout,
                cfg.noise_model()?,
                &cfg.grid()?,
                cfg.eval_trials,
                cfg.seed,
                &formats::decoder_hash(&model),
            )?;
            write_text(log, &a.out, &result.to_csv())
        }
        Command::Compare(a) => {
            let before = a.before.iter().map(|p| formats::read_decoder(p)).collect::<Result<Vec<_>>>()?;
            let after = a.after.iter().map(|p| formats::read_decoder(p)).collect::<Result<Vec<_>>>()?;
            let l = same_distance(&before)?;
            if same_distance(&after)? != l {
                return Err(Error::Dimension("before and after decoders differ in L".into()));
            }
            let layout = CodeLayout::new(l)?;
            let result = evaluator::compare_before_after(
                &before,
                &after,
                &layout,
                cfg.noise_model()?,
                &cfg.grid()?,
                cfg.eval_trials,
                cfg.seed,
            )?;
            write_text(log, &a.out, &result.to_csv())
        }
        Command::ScalingStudy(a) => {
            let report = evaluator::dataset_scaling_study(&study_config(cfg)?, &cfg.scaling_multipliers, &study_seeds(cfg))?;
            write_text(log, &a.study.out, &report.to_csv())
        }
        Command::BiasStudy(a) => {
            let report = evaluator::bias_study(&study_config(cfg)?, &cfg.bias_etas, &study_seeds(cfg))?;
            write_text(log, &a.study.out, &report.to_csv())
        }
        Command::ExportPlot(a) => {
            let csv = std::fs::read_to_string(&a.input)?;
            let title = a.title.clone().unwrap_or_else(|| a.input.display().to_string());
            write_text(log, &a.out, &plot::render_svg(&csv, &title)?)
        }
    }
}

trait TakeOk {
    fn take_ok(&mut self) -> Result<()>;
}

impl TakeOk for Result<()> {
    fn take_ok(&mut self) -> Result<()> {
        std::mem::replace(self, Ok(()))
    }
}
