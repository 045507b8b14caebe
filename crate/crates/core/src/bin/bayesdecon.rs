//! Command-line front end: simulate, deconvolve and compare.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use bayesdecon::camera::{adu_to_photon_estimate, simulate_raw};
use bayesdecon::config::ExperimentConfig;
use bayesdecon::inference::Model;
use bayesdecon::io::{self, Manifest};
use bayesdecon::metrics::{compare_values, radial_spectrum, MetricsRow};
use bayesdecon::parallel::run_model_wavefront;
use bayesdecon::rl::rl_run;
use bayesdecon::targets::TargetKind;
use bayesdecon::{Error, ImageGrid, Result, Role};

/// Environment variable giving the default worker count.
const WORKERS_ENV: &str = "BAYESDECON_WORKERS";

#[derive(Parser)]
#[command(
    name = "bayesdecon",
    version,
    about = "Bayesian and Richardson-Lucy deconvolution"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a raw camera image of a synthetic target.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        target: Option<TargetKind>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Deconvolve a raw image.
    #[command(subcommand)]
    Deconv(Deconv),
    /// PSNR and RMSE of one image against a reference.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Peak used for PSNR: `ref`, `a`, or a number.
        #[arg(long, default_value = "ref")]
        max_from: String,
    },
}

#[derive(Args)]
struct Common {
    /// Raw image in ADU; defaults to `paths.input` of the config.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground truth for metrics; defaults to `paths.reference` of the config.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Deconv {
    /// Richardson-Lucy on the gain- and offset-corrected image.
    Rl {
        #[command(flatten)]
        common: Common,
        /// Comma-separated iterations to save.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Posterior sampling.
    Bayes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        #[arg(long)]
        chunk_side: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            if matches!(e, Error::Io { .. }) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            config,
            out,
            target,
            seed,
        } => simulate(&config, out, target, seed),
        Command::Deconv(Deconv::Rl {
            common,
            checkpoints,
            iters,
        }) => deconv_rl(common, checkpoints, iters),
        Command::Deconv(Deconv::Bayes {
            common,
            samples,
            burn_in,
            thin,
            workers,
            chunk_side,
            seed,
        }) => {
            let mut cfg = ExperimentConfig::load(&common.config)?;
            if let Some(n) = samples {
                cfg.sampler.n_samples = n;
            }
            if let Some(n) = burn_in {
                cfg.sampler.burn_in = n;
            }
            if let Some(n) = thin {
                cfg.sampler.thin = n;
            }
            if let Some(side) = chunk_side {
                cfg.sampler.chunk_side = Some(side);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.sampler.seed = cfg.seed;
            deconv_bayes(common, cfg, workers.unwrap_or(1))
        }
        Command::Compare { a, b, max_from } => compare(&a, &b, &max_from),
    }
}

fn output_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| Error::invalid("no output directory: pass --out or set paths.output"))?;
    io::create_dir(&dir)?;
    Ok(dir)
}

fn save(dir: &Path, name: &str, values: &Array2<f64>, manifest: &mut Manifest) -> Result<()> {
    if let Some(parent) = Path::new(name).parent() {
        io::create_dir(&dir.join(parent))?;
    }
    io::save_array(&dir.join(name), values)?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn simulate(
    config: &Path,
    out: Option<PathBuf>,
    target: Option<TargetKind>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(t) = target {
        cfg.target.kind = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.sampler.seed = s;
    }
    let dir = output_dir(out, &cfg)?;
    let psf = cfg.psf()?;
    let object = cfg.target_object(&psf)?;
    let camera = cfg.camera(object.shape())?;
    let record = simulate_raw(&object, &psf, &camera, cfg.seed)?;
    let mut manifest = Manifest::new("simulate", &cfg);
    manifest.set("psf_side", psf.side());
    save(
        &dir,
        "ground_truth.tif",
        record.ground_truth.values(),
        &mut manifest,
    )?;
    save(
        &dir,
        "expected.tif",
        record.expected.values(),
        &mut manifest,
    )?;
    save(&dir, "photons.tif", record.photons.values(), &mut manifest)?;
    save(&dir, "raw.tif", record.raw.values(), &mut manifest)?;
    manifest.write(&dir.join("manifest.json"))?;
    log::info!(
        "simulated {:?} {} into {}",
        object.shape(),
        cfg.target.kind,
        dir.display()
    );
    Ok(())
}

struct Inputs {
    cfg: ExperimentConfig,
    raw: ImageGrid,
    reference: Option<ImageGrid>,
    dir: PathBuf,
}

fn load_inputs(common: Common, cfg: Option<ExperimentConfig>) -> Result<Inputs> {
    let cfg = match cfg {
        Some(c) => c,
        None => ExperimentConfig::load(&common.config)?,
    };
    let input = common
        .input
        .or_else(|| cfg.paths.input.clone())
        .ok_or_else(|| Error::invalid("no input image: pass --input or set paths.input"))?;
    let raw = cfg.load_image(&input, Role::Adu)?;
    let reference = match common.reference.or_else(|| cfg.paths.reference.clone()) {
        Some(p) => Some(cfg.load_image(&p, Role::Object)?),
        None => None,
    };
    let dir = output_dir(common.out, &cfg)?;
    Ok(Inputs {
        cfg,
        raw,
        reference,
        dir,
    })
}

fn deconv_rl(common: Common, checkpoints: Option<Vec<usize>>, iters: Option<usize>) -> Result<()> {
    let Inputs {
        mut cfg,
        raw,
        reference,
        dir,
    } = load_inputs(common, None)?;
    if let Some(c) = checkpoints {
        cfg.rl.checkpoints = c;
    }
    let max_checkpoint = cfg.rl.checkpoints.iter().copied().max().unwrap_or(0);
    cfg.rl.n_iters = iters.unwrap_or(cfg.rl.n_iters.max(max_checkpoint));
    let psf = cfg.psf()?;
    let camera = cfg.camera(raw.shape())?;
    let data = adu_to_photon_estimate(&raw, &camera)?;
    let start = Instant::now();
    let trace = rl_run(
        &data,
        &psf,
        cfg.rl.n_iters,
        &cfg.rl.checkpoints,
        reference.as_ref(),
    )?;
    log::info!(
        "{} RL iterations in {:.2?}",
        cfg.rl.n_iters,
        start.elapsed()
    );

    let mut manifest = Manifest::new("deconv rl", &cfg);
    manifest.set("psf_side", psf.side());
    for (it, est) in &trace.snapshots {
        save(
            &dir,
            &format!("rl_{it:04}.tif"),
            est.values(),
            &mut manifest,
        )?;
    }
    if reference.is_none() {
        log::warn!("no reference image; metrics.csv holds only its header");
    }
    let rows: Vec<MetricsRow> = trace
        .metrics
        .iter()
        .enumerate()
        .map(|(i, m)| MetricsRow::new("rl", i + 1, m))
        .collect();
    io::write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    manifest.outputs.push("metrics.csv".into());
    if let Some(best) = trace.best_iteration() {
        manifest.set("best_iteration", best);
    }
    manifest.write(&dir.join("manifest.json"))
}

fn deconv_bayes(common: Common, cfg: ExperimentConfig, workers: usize) -> Result<()> {
    let Inputs {
        cfg,
        raw,
        reference,
        dir,
    } = load_inputs(common, Some(cfg))?;
    let psf = cfg.psf()?;
    let camera = cfg.camera(raw.shape())?;
    let sampler = cfg.sampler_config();
    let model = Model::new(raw, psf, camera)?;
    let h = model.half_support();
    sampler.validate(h)?;
    let start = Instant::now();
    let summary = run_model_wavefront(&model, &sampler, workers)?;
    let elapsed = start.elapsed();
    log::info!(
        "{} sweeps in {elapsed:.2?}, acceptance {:.3}",
        sampler.total_sweeps(),
        summary.diagnostics.acceptance_rate()
    );

    let mut manifest = Manifest::new("deconv bayes", &cfg);
    manifest.set("workers", workers);
    manifest.set("chunk_side", sampler.effective_chunk_side(h));
    manifest.set("psf_side", model.psf().side());
    manifest.set("diagnostics", &summary.diagnostics);
    manifest.set("acceptance_rate", summary.diagnostics.acceptance_rate());
    manifest.set("elapsed_s", elapsed.as_secs_f64());

    save(&dir, "mean.tif", summary.mean.values(), &mut manifest)?;
    save(&dir, "cv.tif", &summary.cv, &mut manifest)?;
    save(&dir, "std.tif", &summary.std(), &mut manifest)?;
    for (i, s) in summary.retained_samples.iter().enumerate() {
        save(
            &dir,
            &format!("samples/sample_{:04}.tif", i + 1),
            s.values(),
            &mut manifest,
        )?;
    }

    let mut rows = Vec::new();
    if let Some(r) = &reference {
        // Metrics of the running mean over the first N samples.
        let mut sum = Array2::<f64>::zeros(r.shape());
        for (i, s) in summary.retained_samples.iter().enumerate() {
            sum += s.values();
            let mean = &sum / (i + 1) as f64;
            rows.push(MetricsRow::new(
                "bayes",
                i + 1,
                &compare_values(mean.view(), r.view(), None)?,
            ));
        }
        if rows.is_empty() {
            let report = compare_values(summary.mean.view(), r.view(), None)?;
            rows.push(MetricsRow::new("bayes", summary.n_accumulated, &report));
        }
    } else {
        log::warn!("no reference image; metrics.csv holds only its header");
    }
    io::write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    manifest.outputs.push("metrics.csv".into());

    let spectrum = radial_spectrum(summary.mean.view(), summary.mean.pixel_pitch());
    io::write_spectrum_csv(&dir.join("spectrum.csv"), &spectrum)?;
    manifest.outputs.push("spectrum.csv".into());
    manifest.write(&dir.join("manifest.json"))
}

fn compare(a: &Path, b: &Path, max_from: &str) -> Result<()> {
    let av = io::load_array(a)?;
    let bv = io::load_array(b)?;
    let max = match max_from {
        "ref" | "b" => None,
        "a" => Some(av.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        v => Some(v.parse::<f64>().map_err(|_| {
            Error::invalid(format!("--max-from takes ref, a or a number, got '{v}'"))
        })?),
    };
    let report = compare_values(av.view(), bv.view(), max)?;
    println!("psnr_db,rmse,n_pixels,max_value");
    println!(
        "{:?},{:?},{},{:?}",
        report.psnr_db, report.rmse, report.n_pixels, report.max_value_used
    );
    Ok(())
}
