use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gcsr::config::PipelineConfig;
use gcsr::pipeline::{evaluate, synthesize};
use gcsr::raster::{load_image, save_image, Raster};
use gcsr::resample::{enlarge, Interpolation};

#[derive(Parser)]
#[command(name = "gcsr", version, about = "Example-based texture superresolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enlarge a target using high-resolution example textures.
    Enlarge(EnlargeArgs),
    /// Plain interpolation enlargement.
    Baseline(BaselineArgs),
    /// Compare two images of equal size.
    Eval(EvalArgs),
    /// Print every configuration key with its value.
    DumpConfig {
        /// Config file applied on top of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Pipeline flags. Each one overrides the config key of the same name.
#[derive(Args, Default)]
struct Tuning {
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    patch_size: Option<String>,
    #[arg(long)]
    overlap: Option<String>,
    #[arg(long)]
    w_edge: Option<String>,
    #[arg(long)]
    w_lum: Option<String>,
    #[arg(long)]
    w_chroma: Option<String>,
    /// A value, or `auto` for half the squared patch size.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    /// Comma-separated subset of identity,flip_h,flip_v,rot180.
    #[arg(long)]
    transforms: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    smooth_weight: Option<String>,
    #[arg(long)]
    bp_lambda: Option<String>,
    #[arg(long)]
    bp_iters: Option<String>,
    #[arg(long)]
    bp_tol: Option<String>,
    /// Match on high-passed luminosity.
    #[arg(long)]
    equalize: bool,
    /// Contrast-normalize instead of high-passing when equalizing.
    #[arg(long)]
    contrast_c: Option<String>,
    #[arg(long)]
    dump_intermediates: Option<PathBuf>,
    #[arg(long)]
    threads: Option<String>,
}

impl Tuning {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        put("method", &self.method);
        put("patch-size", &self.patch_size);
        put("overlap", &self.overlap);
        put("w-edge", &self.w_edge);
        put("w-lum", &self.w_lum);
        put("w-chroma", &self.w_chroma);
        put("epsilon", &self.epsilon);
        put("metric", &self.metric);
        put("transforms", &self.transforms);
        put("k", &self.k);
        put("smooth-weight", &self.smooth_weight);
        put("bp-lambda", &self.bp_lambda);
        put("bp-iters", &self.bp_iters);
        put("bp-tol", &self.bp_tol);
        put("contrast-c", &self.contrast_c);
        put("threads", &self.threads);
        if self.equalize {
            out.push(("equalize", "true".into()));
        }
        if let Some(d) = &self.dump_intermediates {
            out.push(("dump-intermediates", d.display().to_string()));
        }
        out
    }
}

#[derive(Args)]
struct EnlargeArgs {
    #[arg(long)]
    target: PathBuf,
    /// High-resolution example texture; may be repeated.
    #[arg(long, required = true)]
    source: Vec<PathBuf>,
    #[arg(long)]
    factor: String,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.report.txt`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    factor: usize,
    #[arg(long, default_value = "bicubic")]
    method: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    a: PathBuf,
    b: PathBuf,
    /// Blur radius for the band-pass figures.
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        cfg.apply_kv(&text).with_context(|| format!("parsing config {}", p.display()))?;
    }
    Ok(cfg)
}

/// Writes through a sibling temporary file so a failed run leaves no output.
fn write_atomically(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = write(&tmp).and_then(|()| std::fs::rename(&tmp, path).map_err(Into::into));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn save_rgb(r: &Raster, path: &Path) -> Result<()> {
    write_atomically(path, |tmp| Ok(save_image(r, tmp)?))
}

fn run_enlarge(args: EnlargeArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref()).context("configuration")?;
    cfg.set("factor", &args.factor).context("configuration")?;
    for (k, v) in args.tuning.pairs() {
        cfg.set(k, &v).context("configuration")?;
    }
    cfg.validate().context("configuration")?;

    let target = load_image(&args.target).context("loading target")?;
    let sources = args
        .source
        .iter()
        .map(|p| load_image(p).with_context(|| format!("loading source {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let out = synthesize(&target, &sources, &cfg).context("synthesis")?;
    for (stage, secs) in &out.report.timings {
        log::info!("{stage}: {secs:.3} s");
    }

    let report = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".report.txt");
        PathBuf::from(p)
    });
    write_atomically(&report, |tmp| Ok(std::fs::write(tmp, out.report.to_text(true))?)).context("writing report")?;
    save_rgb(&out.rgb, &args.out).context("writing output")?;
    Ok(())
}

fn run_baseline(args: BaselineArgs) -> Result<()> {
    let method: Interpolation = args.method.parse().context("parsing --method")?;
    let target = load_image(&args.target).context("loading target")?;
    let up = enlarge(&target, args.factor, method).context("enlarging")?;
    save_rgb(&up, &args.out).context("writing output")
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let a = load_image(&args.a).context("loading first image")?;
    let b = load_image(&args.b).context("loading second image")?;
    if a.extent() != b.extent() {
        bail!("comparing: extents differ, {:?} vs {:?}", a.extent(), b.extent());
    }
    let e = evaluate(&a, &b, args.radius).context("comparing")?;
    if e.psnr.is_infinite() {
        println!("psnr_db: inf");
    } else {
        println!("psnr_db: {:.4}", e.psnr);
    }
    println!("mae: {:.6}", e.mae);
    println!("bandpass_mae: {:.6}", e.bandpass_mae);
    println!("bandpass_energy_a: {:.6}", e.bandpass_energy.0);
    println!("bandpass_energy_b: {:.6}", e.bandpass_energy.1);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Enlarge(a) => run_enlarge(a),
        Command::Baseline(a) => run_baseline(a),
        Command::Eval(a) => run_eval(a),
        Command::DumpConfig { config } => load_config(config.as_deref())
            .and_then(|c| {
                c.validate()?;
                Ok(c)
            })
            .map(|c| print!("{}", c.to_kv())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
