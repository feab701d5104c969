use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use avlsp::config::PipelineConfig;
use avlsp::io;
use avlsp::phantom::{self, bundle, PhantomSpec};
use avlsp::pipeline::{self, PipelineInputs};
use avlsp::preprocess::assemble_six_channel_with;
use avlsp::{argmax_labels, Parallelism};

#[derive(Parser)]
#[command(name = "avlsp", version, about = "Artery/vein labeling by score propagation over vessel trees")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Full pipeline: labels, propagation, metrics (with --truth), AVR (with --od).
    ///
    /// Bundle directories given as arguments are processed as independent
    /// images, `--jobs` at a time, each into `<out-dir>/<bundle name>`.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        bundles: Vec<PathBuf>,
    },
    /// Six-channel normalized raster (`preprocessed.avpm`) from an RGB image.
    Preprocess(Common),
    /// Argmax labels (`labels.png`) from a probability map.
    Label(Common),
    /// Argmax labels refined by score propagation (`labels.png`).
    Lsp(Common),
    /// Metrics of a label image against truth (`metrics.csv`, `roc.csv`).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Label image to evaluate.
        #[arg(long)]
        labels: PathBuf,
    },
    /// Local and global AVR of a label image (`avr.csv`).
    Avr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Writes a synthetic bundle: image, truth, probabilities, FOV, disc.
    Phantom {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        flip: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long)]
    fov: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    od: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    centerline_only: bool,
}

impl Common {
    /// Defaults, then the config file, then flags.
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("config {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        for (slot, flag) in [
            (&mut c.image, &self.image),
            (&mut c.probs, &self.probs),
            (&mut c.fov, &self.fov),
            (&mut c.truth, &self.truth),
            (&mut c.od, &self.od),
            (&mut c.out_dir, &self.out_dir),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if let Some(n) = self.iterations {
            c.iterations = n;
        }
        c.centerline_only |= self.centerline_only;
        c.validate()?;
        Ok(c)
    }
}

fn out_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => bail!("--{flag} is required"),
    }
}

/// Config for one bundle directory: the bundle's files fill any path the
/// flags left unset.
fn bundle_config(base: &PipelineConfig, dir: &Path) -> PipelineConfig {
    let mut c = base.clone();
    let pick = |name: &str| {
        let p = dir.join(name);
        p.exists().then_some(p)
    };
    c.probs = Some(dir.join(bundle::PROBS));
    c.fov = Some(dir.join(bundle::FOV));
    c.image = c.image.take().or_else(|| pick(bundle::IMAGE));
    c.truth = c.truth.take().or_else(|| pick(bundle::TRUTH));
    c.od = c.od.take().or_else(|| pick(bundle::OD));
    let name = dir.file_name().map(PathBuf::from).unwrap_or_else(|| "bundle".into());
    c.out_dir = Some(base.out_dir.clone().unwrap_or_else(|| ".".into()).join(name));
    c
}

fn run_one(cfg: &PipelineConfig) -> Result<()> {
    let out = pipeline::run_pipeline(cfg, Parallelism::Sequential)?;
    if let Some(ev) = &out.evaluation {
        for m in ["accuracy", "accuracy_argmax", "branch_accuracy", "branch_accuracy_argmax"] {
            if let Some(v) = ev.get("all", m) {
                eprintln!("{m}: {v:.4}");
            }
        }
    }
    if let Some(avr) = &out.avr {
        print_avr(avr);
    }
    Ok(())
}

fn print_avr(r: &avlsp::avr::AvrReport) {
    for (k, v) in [("local_avr", r.local_avr), ("global_avr", r.global_avr)] {
        match v {
            Some(v) => eprintln!("{k}: {v:.4}"),
            None => eprintln!("{k}: n/a"),
        }
    }
}

#[cfg(feature = "parallel")]
fn run_batch(cfgs: &[PipelineConfig], jobs: usize) -> Vec<Result<()>> {
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(|| cfgs.par_iter().map(run_one).collect()),
        Err(e) => vec![Err(e.into())],
    }
}

#[cfg(not(feature = "parallel"))]
fn run_batch(cfgs: &[PipelineConfig], _jobs: usize) -> Vec<Result<()>> {
    cfgs.iter().map(run_one).collect()
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run { common, jobs, bundles } => {
            let cfg = common.config()?;
            if bundles.is_empty() {
                return run_one(&cfg);
            }
            let cfgs: Vec<_> = bundles.iter().map(|d| bundle_config(&cfg, d)).collect();
            let mut failed = 0;
            for (dir, r) in bundles.iter().zip(run_batch(&cfgs, jobs)) {
                if let Err(e) = r {
                    eprintln!("{}: {e:#}", dir.display());
                    failed += 1;
                }
            }
            if failed > 0 {
                bail!("{failed} of {} bundles failed", bundles.len());
            }
        }
        Cmd::Preprocess(common) => {
            let cfg = common.config()?;
            let image = need(&cfg.image, "image")?;
            let fov_path = need(&cfg.fov, "fov")?;
            let fov = io::read_fov_png(fov_path).with_context(|| format!("fov {}", fov_path.display()))?;
            let rgb = io::read_rgb_png(image).with_context(|| format!("image {}", image.display()))?;
            let six = assemble_six_channel_with(&rgb, &cfg.normalization, &fov, Parallelism::Sequential)?;
            io::write_avpm(&six, out_dir(&cfg)?.join("preprocessed.avpm"))?;
        }
        Cmd::Label(common) => {
            let cfg = common.config()?;
            let inputs = PipelineInputs::load(&cfg)?;
            let labels = argmax_labels(&inputs.probs, &inputs.fov)?;
            io::write_label_png(&labels, out_dir(&cfg)?.join(pipeline::LABELS_FILE))?;
        }
        Cmd::Lsp(common) => {
            let mut cfg = common.config()?;
            let inputs = PipelineInputs::load(&cfg)?;
            let lsp = pipeline::label_and_propagate(&inputs.probs, &inputs.fov, &cfg, Parallelism::Sequential)?;
            cfg.out_dir = Some(out_dir(&cfg)?);
            let out = pipeline::PipelineOutput {
                lsp,
                evaluation: None,
                avr: None,
            };
            pipeline::write_outputs(&out, &inputs.name, &cfg, cfg.out_dir.as_deref().unwrap())?;
        }
        Cmd::Eval { common, labels } => {
            let cfg = common.config()?;
            let truth_path = need(&cfg.truth, "truth")?;
            let inputs = PipelineInputs::load(&cfg)?;
            let pred = io::read_label_png(&labels).with_context(|| format!("labels {}", labels.display()))?;
            pred.check_size(inputs.fov.width(), inputs.fov.height(), "labels")?;
            let truth = inputs
                .truth
                .as_ref()
                .with_context(|| format!("truth {}", truth_path.display()))?;
            let ev = pipeline::evaluate(&pred, truth, &inputs.fov, Some(&inputs.probs), cfg.centerline_only)?;
            let dir = out_dir(&cfg)?;
            ev.write_csv(&inputs.name, std::fs::File::create(dir.join(pipeline::METRICS_FILE))?)?;
            if let (true, Some(roc)) = (cfg.write_roc, &ev.roc) {
                roc.write_csv(std::fs::File::create(dir.join(pipeline::ROC_FILE))?)?;
            }
        }
        Cmd::Avr { common, labels } => {
            let cfg = common.config()?;
            let fov_path = need(&cfg.fov, "fov")?;
            let od_path = need(&cfg.od, "od")?;
            let fov = io::read_fov_png(fov_path).with_context(|| format!("fov {}", fov_path.display()))?;
            let od = io::read_od_json(od_path).with_context(|| format!("od {}", od_path.display()))?;
            let od = avlsp::avr::OpticDiscSpec::new((od.cx, od.cy), od.dd, &fov)?;
            let pred = io::read_label_png(&labels).with_context(|| format!("labels {}", labels.display()))?;
            pred.check_size(fov.width(), fov.height(), "labels")?;
            let report = pipeline::avr_from_labels(&pred, &fov, Some(&od), &cfg)?;
            let name = pipeline::report_name(&cfg);
            let name = if cfg.probs.is_none() && cfg.image.is_none() {
                labels.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(name)
            } else {
                name
            };
            report.write_csv(&name, std::fs::File::create(out_dir(&cfg)?.join(pipeline::AVR_FILE))?)?;
            print_avr(&report);
        }
        Cmd::Phantom {
            seed,
            flip,
            noise,
            out_dir,
        } => {
            let mut spec = PhantomSpec {
                seed,
                ..PhantomSpec::default()
            };
            if let Some(f) = flip {
                spec.flip_fraction = f;
            }
            if let Some(n) = noise {
                spec.noise_sigma = n;
            }
            phantom::write_bundle(&spec, &out_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
