//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed check, 2 bad input, 3 I/O failure,
//! 4 numeric abort.

mod config;
mod gradcheck;
mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::GradCheckOptions;
use crate::data::{
    expand_dataset, from_model_range, load_image, load_image_resized, save_image, AugmentSpec,
    Dataset, FillMode, ImageU8, Interpolation,
};
use crate::error::Error;
use crate::gan::{load_checkpoint, sample_latent, save_checkpoint, LossTrace, Trainer};
use crate::tensor::Tensor;

pub use config::{PathsConfig, RunConfig};
pub use gradcheck::{gradcheck_suite, CheckCase};
pub use plot::{loss_range, render_svg};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MICROGAN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "microgan",
    version,
    about = "Deep convolutional GAN for microstructure images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a directory of PNGs into an augmented corpus.
    Augment(AugmentArgs),
    /// Train from a JSON run configuration.
    Train(TrainArgs),
    /// Write generator samples from a checkpoint.
    Sample(SampleArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Render a loss trace CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FillArg {
    Nearest,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpArg {
    Nearest,
    Bilinear,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub width_shift: f64,
    #[arg(long, default_value_t = 0.1)]
    pub height_shift: f64,
    #[arg(long, default_value_t = 0.2)]
    pub shear: f64,
    #[arg(long, default_value_t = 0.2)]
    pub zoom: f64,
    #[arg(long)]
    pub no_hflip: bool,
    #[arg(long)]
    pub no_vflip: bool,
    #[arg(long, value_enum, default_value_t = FillArg::Nearest)]
    pub fill: FillArg,
    /// Pixel value used by `--fill constant`.
    #[arg(long, default_value_t = 255)]
    pub fill_value: u8,
    #[arg(long, value_enum, default_value_t = InterpArg::Bilinear)]
    pub interpolation: InterpArg,
    /// Center-crop and resize every source to this square size first.
    #[arg(long)]
    pub size: Option<usize>,
}

impl AugmentArgs {
    pub fn spec(&self) -> AugmentSpec {
        AugmentSpec {
            width_shift_range: self.width_shift,
            height_shift_range: self.height_shift,
            shear_range: self.shear,
            zoom_range: self.zoom,
            horizontal_flip: !self.no_hflip,
            vertical_flip: !self.no_vflip,
            fill_mode: match self.fill {
                FillArg::Nearest => FillMode::Nearest,
                FillArg::Constant => FillMode::Constant {
                    value: self.fill_value,
                },
            },
            interpolation: match self.interpolation {
                InterpArg::Nearest => Interpolation::Nearest,
                InterpArg::Bilinear => Interpolation::Bilinear,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Channel shrink factor of the checked networks.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 64)]
    pub max_coords: usize,
    #[arg(long, default_value_t = GradCheckOptions::default().seed)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// A message with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            Error::NonFinite(_) => EXIT_NUMERIC,
            _ => EXIT_BAD_INPUT,
        };
        Failure::new(code, e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns its exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_BAD_INPUT
            } else {
                EXIT_OK
            };
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::Augment(a) => cmd_augment(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Plot(a) => cmd_plot(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        // a global pool built earlier in this process keeps its size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::from(Error::io(path, e))
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> std::result::Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::new(
            EXIT_BAD_INPUT,
            format!("no PNG files in {}", dir.display()),
        ));
    }
    Ok(paths)
}

fn read_sources(
    paths: &[PathBuf],
    size: Option<usize>,
) -> std::result::Result<Vec<ImageU8>, Failure> {
    paths
        .iter()
        .map(|p| {
            match size {
                Some(s) => load_image_resized(p, s),
                None => load_image(p),
            }
            .map_err(|e| match e {
                Error::Io { .. } => Failure::new(EXIT_BAD_INPUT, e.to_string()),
                other => other.into(),
            })
        })
        .collect()
}

fn cmd_augment(args: &AugmentArgs) -> CmdResult {
    let spec = args.spec();
    spec.validate()?;
    let paths = list_pngs(&args.input)?;
    let sources = read_sources(&paths, args.size)?;
    let mut dataset = expand_dataset(&sources, args.count, &spec)?;
    let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    dataset.set_source_paths(&names);

    create_dir(&args.out)?;
    let outputs: Vec<String> = (0..dataset.len()).map(|i| format!("{i:05}.png")).collect();
    for (i, (item, prov)) in dataset.items().iter().zip(dataset.provenance()).enumerate() {
        let target = args.out.join(&outputs[i]);
        if prov.params.is_none() && args.size.is_none() {
            std::fs::copy(&paths[prov.source_index], &target)
                .map_err(|e| io_failure(&target, e))?;
        } else {
            save_image(item, &target)?;
        }
    }
    dataset.write_manifest(args.out.join("manifest.jsonl"), Some(&outputs))?;
    println!("sources: {}, outputs: {}", sources.len(), dataset.len());
    Ok(())
}

/// Tiles a batch of 3×H×W generator outputs into one roughly square image.
pub fn sample_grid(batch: &Tensor<f32>) -> crate::Result<ImageU8> {
    let (n, _, h, w) = batch.dims4()?;
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let tiles: Vec<ImageU8> = (0..n)
        .map(|i| from_model_range(&slice_item(batch, i)?))
        .collect::<crate::Result<_>>()?;
    ImageU8::from_fn(cols * w, rows * h, |x, y| {
        let i = (y / h) * cols + x / w;
        tiles.get(i).map_or([0; 3], |t| t.pixel(x % w, y % h))
    })
}

fn slice_item(batch: &Tensor<f32>, i: usize) -> crate::Result<Tensor<f32>> {
    let (_, c, h, w) = batch.dims4()?;
    let per = c * h * w;
    Tensor::from_vec(&[c, h, w], batch.data()[i * per..(i + 1) * per].to_vec())
}

fn load_training_set(config: &RunConfig) -> std::result::Result<Dataset, Failure> {
    let paths = list_pngs(&config.paths.data_dir)?;
    let images = read_sources(&paths, Some(config.model.image_size))?;
    let mut dataset = Dataset::from_images(images)?;
    let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    dataset.set_source_paths(&names);
    Ok(dataset)
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let config = RunConfig::load(&args.config)?;
    let dataset = load_training_set(&config)?;
    let out = config.paths.out_dir.clone();
    create_dir(&out)?;
    let config_path = out.join("config.json");
    std::fs::write(&config_path, config.to_json()).map_err(|e| io_failure(&config_path, e))?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let mut ckpt = load_checkpoint(path)?;
            if ckpt.model != config.model {
                return Err(Failure::new(
                    EXIT_BAD_INPUT,
                    format!(
                        "{} was trained with a different model configuration",
                        path.display()
                    ),
                ));
            }
            ckpt.config.total_iterations = config.train.total_iterations;
            Trainer::resume(ckpt, dataset)?
        }
        None => Trainer::new(config.train.clone(), config.model, &config.init, dataset)?,
    };

    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    probe_rng.set_stream(u64::MAX);
    let probe: Tensor<f32> =
        sample_latent(config.probe_count, config.model.latent_dim, &mut probe_rng)?;
    let samples_dir = out.join("samples");
    let checkpoints_dir = out.join("checkpoints");
    let trace_path = out.join("trace.csv");

    let result = trainer.run(|t| {
        let it = t.iteration();
        if config.snapshot_every > 0 && it % config.snapshot_every == 0 {
            std::fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
            let grid = sample_grid(&t.sample(&probe)?)?;
            save_image(&grid, samples_dir.join(format!("iter_{it:06}.png")))?;
        }
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 {
            std::fs::create_dir_all(&checkpoints_dir)
                .map_err(|e| Error::io(&checkpoints_dir, e))?;
            save_checkpoint(
                &t.checkpoint(),
                checkpoints_dir.join(format!("iter_{it:06}.ckpt")),
            )?;
            t.trace().write_csv(&trace_path)?;
        }
        Ok(())
    });
    trainer.trace().write_csv(&trace_path)?;
    let stop = result?;
    save_checkpoint(&trainer.checkpoint(), config.checkpoint_path())?;
    if let Some(last) = trainer.trace().last() {
        println!(
            "{stop:?} after {} iterations: d_loss {:.4}, g_loss {:.4}, accuracy {:.3}",
            last.iteration,
            last.d_loss,
            last.g_loss,
            last.d_acc_combined()
        );
    }
    Ok(())
}

fn cmd_sample(args: &SampleArgs) -> CmdResult {
    if args.n == 0 {
        return Err(Failure::new(EXIT_BAD_INPUT, "--n must be positive"));
    }
    let ckpt = load_checkpoint(&args.checkpoint).map_err(|e| match e {
        Error::Io { .. } => Failure::new(EXIT_BAD_INPUT, e.to_string()),
        other => other.into(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let z: Tensor<f32> = sample_latent(args.n, ckpt.model.latent_dim, &mut rng)?;
    let images = ckpt.generator.forward_eval(&z)?;
    if let Some(v) = images.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Failure::new(
            EXIT_NUMERIC,
            format!("generator output {v} outside [-1, 1]"),
        ));
    }
    create_dir(&args.out)?;
    for i in 0..args.n {
        let img = from_model_range(&slice_item(&images, i)?)?;
        save_image(&img, args.out.join(format!("sample_{i:04}.png")))?;
    }
    println!("wrote {} samples to {}", args.n, args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CmdResult {
    if args.scale == 0 {
        return Err(Failure::new(EXIT_BAD_INPUT, "--scale must be positive"));
    }
    let opts = GradCheckOptions {
        step: args.step,
        tol: args.tol,
        max_coords: args.max_coords,
        seed: args.seed,
        ..GradCheckOptions::default()
    };
    let cases = gradcheck_suite(args.scale, &opts)?;
    println!(
        "{:<26} {:<40} {:>6} {:>7} {:>12}",
        "check", "parameter", "coords", "skipped", "max rel err"
    );
    let mut worst: Option<(&str, &str, f64)> = None;
    for case in &cases {
        for p in &case.report.params {
            let (idx, a, n) = p.worst;
            let flag = if p.max_rel_error < args.tol {
                String::new()
            } else {
                format!("  FAIL at [{idx}]: analytic {a:.6e}, numeric {n:.6e}")
            };
            println!(
                "{:<26} {:<40} {:>6} {:>7} {:>12.3e}{flag}",
                case.name, p.name, p.coords, p.skipped, p.max_rel_error
            );
            if worst.is_none_or(|(_, _, e)| p.max_rel_error > e) {
                worst = Some((&case.name, &p.name, p.max_rel_error));
            }
        }
    }
    let mut rules: Vec<&str> = cases.iter().flat_map(|c| c.rules.iter().copied()).collect();
    rules.sort_unstable();
    rules.dedup();
    println!("backward rules covered: {}", rules.join(", "));
    match worst {
        Some((case, name, e)) if !(e < args.tol) => Err(Failure::new(
            EXIT_CHECK_FAILED,
            format!("gradient check failed: worst offender {name} in {case} with relative error {e:.3e} ≥ {:e}", args.tol),
        )),
        _ => {
            println!("all gradients within {:e}", args.tol);
            Ok(())
        }
    }
}

fn cmd_plot(args: &PlotArgs) -> CmdResult {
    let trace = LossTrace::read_csv(&args.trace).map_err(|e| match e {
        Error::Io { .. } => Failure::new(EXIT_BAD_INPUT, e.to_string()),
        other => other.into(),
    })?;
    if trace.is_empty() {
        return Err(Failure::new(
            EXIT_BAD_INPUT,
            format!("{}: trace has no records", args.trace.display()),
        ));
    }
    let svg = render_svg(&trace)?;
    std::fs::write(&args.out, svg).map_err(|e| io_failure(&args.out, e))?;
    Ok(())
}
