use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use rainforge::error::{Error, Result};
use rainforge::pipeline::dataset::{stem, threads_from_env, with_threads, write_outputs};
use rainforge::pipeline::image_io::load_image;
use rainforge::pipeline::sweep::{parse_values, write_sweep};
use rainforge::pipeline::{generate_dataset, sweep_factor, GenerationConfig, Generator, SweepFactor};
use rainforge::recovery::{
    fit_factors, grad_check, FreeSet, GradCheckEntry, GradCheckReport, RecoveryProblem, RecoveryVariables, SyntheticSpec,
};
use rainforge::rot_tv::{degree_grid, orientation_scan};

#[derive(Parser)]
#[command(name = "rainforge", version, about = "Controllable rain synthesis")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML generation config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one rainy image with explicit factors.
    Render(RenderArgs),
    /// Generate a paired dataset from the config.
    Dataset(DatasetArgs),
    /// Render one image per value of a single factor.
    Sweep(SweepArgs),
    /// Recover orientation and scales from a rain-layer image.
    Recover(RecoverArgs),
    /// Compare analytic and finite-difference gradients on random problems.
    Gradcheck(GradcheckArgs),
    /// Scan the rotatable TV of an image over angles.
    Tvscan(TvscanArgs),
}

#[derive(Args)]
struct BackgroundArgs {
    /// Background image; a flat grey square when absent.
    #[arg(long)]
    background: Option<PathBuf>,
    /// Side of the flat background.
    #[arg(long, default_value_t = 128)]
    size: usize,
}

impl BackgroundArgs {
    fn load(&self) -> Result<rainforge::Tensor3> {
        match &self.background {
            Some(p) => load_image(p),
            None => Ok(rainforge::Tensor3::filled(self.size, self.size, 3, 0.3)),
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    /// Orientation in degrees, clockwise from vertical.
    #[arg(long = "theta-deg", allow_hyphen_values = true)]
    theta_deg: f64,
    /// Length scale.
    #[arg(long, allow_hyphen_values = true)]
    sl: f64,
    /// Width scale.
    #[arg(long, allow_hyphen_values = true)]
    sw: f64,
    /// Rain-map threshold.
    #[arg(long, allow_hyphen_values = true)]
    tau: f64,
    /// Image index whose noise and mixing weights are used.
    #[arg(long, default_value_t = 0)]
    index: u64,
    #[command(flatten)]
    bg: BackgroundArgs,
}

#[derive(Args)]
struct DatasetArgs {
    /// Number of images; overrides the config file.
    #[arg(long)]
    count: Option<usize>,
    /// Worker threads (0 = automatic); overrides RAINFORGE_THREADS.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// theta, s_l, s_w or tau.
    #[arg(long)]
    factor: String,
    /// Comma-separated values (degrees for theta).
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    #[command(flatten)]
    bg: BackgroundArgs,
}

#[derive(Args)]
struct RecoverArgs {
    /// Rain-layer PNG rendered with the same config and seed.
    #[arg(long)]
    target: PathBuf,
    /// Comma-separated free variables among theta, s_l, s_w, alpha, tau.
    #[arg(long, default_value = "theta,s_l,s_w")]
    free: String,
    /// Starting `theta_deg,s_l,s_w`.
    #[arg(long, default_value = "0,1,1", allow_hyphen_values = true)]
    init: String,
    /// Image index whose noise, mixing weights and threshold are used.
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Weight of the rotatable TV term.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random problems.
    #[arg(long, default_value_t = 5)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Scene side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct TvscanArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long = "theta-min", default_value_t = -90.0, allow_hyphen_values = true)]
    theta_min: f64,
    #[arg(long = "theta-max", default_value_t = 90.0, allow_hyphen_values = true)]
    theta_max: f64,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
}

fn load_config(cli: &Cli) -> Result<GenerationConfig> {
    let mut cfg = match &cli.config {
        Some(p) => GenerationConfig::load(p)?,
        None => GenerationConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &GenerationConfig) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let threads = threads_from_env()?;
    match &cli.command {
        Command::Render(a) => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, &cfg)?;
            let gen = Generator::new(cfg)?;
            let mut f = gen.sample(a.index)?;
            f.theta_deg.iter_mut().for_each(|t| *t = a.theta_deg);
            f.s_l = a.sl;
            f.s_w = a.sw;
            f.tau = a.tau;
            let bg = a.bg.load()?;
            let mut r = with_threads(threads, || gen.render_rainy(&bg, &f))??;
            let source = a
                .bg
                .background
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "grey".into());
            write_outputs(&gen, &out, &source, &mut r)?;
            println!(
                "wrote {}/{}_rainy.png (sparsity {:.4})",
                out.display(),
                stem(a.index),
                r.record.sparsity
            );
        }
        Command::Dataset(a) => {
            let mut cfg = load_config(cli)?;
            if let Some(c) = a.count {
                cfg.count = c;
            }
            cfg.validate()?;
            let workers = match a.workers {
                Some(0) => None,
                Some(n) => Some(n),
                None => threads,
            };
            let summary = generate_dataset(&cfg, workers)?;
            println!(
                "wrote {} of {} images to {} (mean sparsity {:.4}, {} backgrounds skipped)",
                summary.written,
                summary.requested,
                cfg.output_dir.display(),
                summary.mean_sparsity,
                summary.skipped_backgrounds.len()
            );
        }
        Command::Sweep(a) => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, &cfg)?;
            let factor: SweepFactor = a.factor.parse()?;
            let values = parse_values(&a.values)?;
            let gen = Generator::new(cfg)?;
            let bg = a.bg.load()?;
            let sweep = with_threads(threads, || sweep_factor(&gen, &bg, factor, &values))??;
            let measured = with_threads(threads, || write_sweep(&sweep, &out))??;
            for (i, v) in values.iter().enumerate() {
                let m = measured
                    .as_ref()
                    .map(|m| format!("{:.3}", m[i]))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{:?} = {v}: sparsity {:.4}, measured {m}",
                    factor, sweep.renders[i].record.sparsity
                );
            }
            println!("montage: {}", out.join("montage.png").display());
        }
        Command::Recover(a) => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, &cfg)?;
            let free = FreeSet::parse(&a.free)?;
            let init = parse_values(&a.init)?;
            let [theta_deg, s_l, s_w] = init[..] else {
                return Err(Error::InvalidArgument("--init expects theta_deg,s_l,s_w".into()));
            };
            let target = load_image(&a.target)?;
            let gen = Generator::new(cfg)?;
            let f = gen.sample(a.index)?;
            let noise = gen.noise(f.lineage, target.height(), target.width());
            let mut problem = RecoveryProblem::new(
                target,
                gen.dict.clone(),
                gen.map_weights.clone(),
                noise,
                free,
                a.lambda,
            )?;
            problem.settings.max_iters = a.max_iters;
            // map intensity folds into the last stage by linearity
            let mut alpha = f.alpha.clone();
            if let Some(last) = alpha.last_mut() {
                *last = last.scaled(gen.config.map.intensity);
            }
            let start = RecoveryVariables {
                theta: theta_deg.to_radians(),
                s_l,
                s_w,
                alpha,
                tau: f.tau,
            };
            let (best, trace) = with_threads(threads, || fit_factors(&problem, &start))??;
            let path = out.join("recovery_trace.csv");
            trace.write_csv(create(&path)?).map_err(io_err(&path))?;
            println!(
                "{:?} after {} iterations: theta {:.3} deg, s_l {:.4}, s_w {:.4}, tau {:.4}, loss {:.6e}",
                trace.status,
                trace.rows.len(),
                best.theta.to_degrees(),
                best.s_l,
                best.s_w,
                best.tau,
                trace.best_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Gradcheck(a) => {
            let seed = cli.seed.unwrap_or(0);
            let out = cli.out.clone();
            let spec = SyntheticSpec {
                size: a.size,
                lambda: 1e-3,
                stages: 2,
                ..SyntheticSpec::default()
            };
            let mut all = GradCheckReport {
                h: a.h,
                tolerance: a.tol,
                entries: Vec::new(),
            };
            for s in 0..a.samples as u64 {
                let syn = spec.build(seed.wrapping_add(s), FreeSet::all())?;
                let mut v = syn.truth.clone();
                v.theta += 0.1;
                v.s_l *= 1.1;
                v.s_w *= 0.9;
                let report = with_threads(threads, || grad_check(&syn.problem, &[v], a.h, a.tol))??;
                let verdict = if report.checked() == 0 {
                    "no smooth coordinates"
                } else if report.passed() {
                    "pass"
                } else {
                    "FAIL"
                };
                println!(
                    "problem {s}: checked {}, excluded {}, max rel error {:.3e} -> {verdict}",
                    report.checked(),
                    report.excluded(),
                    report.max_rel_error(),
                );
                all.entries.extend(report.entries.into_iter().map(|e| GradCheckEntry {
                    sample: s as usize,
                    ..e
                }));
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let path = dir.join("gradcheck.csv");
                all.write_csv(create(&path)?).map_err(io_err(&path))?;
            }
            println!(
                "checked {}, excluded {}, max relative error {:.3e}",
                all.checked(),
                all.excluded(),
                all.max_rel_error()
            );
            if !all.passed() {
                return Err(Error::InvalidArgument(format!(
                    "gradient check failed at tolerance {}",
                    a.tol
                )));
            }
        }
        Command::Tvscan(a) => {
            let layer = load_image(&a.input)?;
            let grid = degree_grid(a.theta_min, a.theta_max, a.step)?;
            let scan = with_threads(threads, || orientation_scan(&layer, &grid))??;
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
                let path = dir.join("tvscan.csv");
                scan.write_csv(create(&path)?).map_err(io_err(&path))?;
            }
            println!("best theta {} deg (loss {:.6e})", scan.best_deg, scan.best_loss);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    info!("rainforge {}", env!("CARGO_PKG_VERSION"));
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
