use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use tumorseg::metrics::Measure;
use tumorseg::pipeline::{stages, PipelineConfig};
use tumorseg::volume::RegionId;
use tumorseg::{Error, Result};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_MISSING_INPUT: u8 = 4;
const EXIT_CHECK_FAILED: u8 = 5;

/// Brain-tumor segmentation and survival regression pipeline.
#[derive(Parser, Debug)]
#[command(name = "tumorseg", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    stage: Stage,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-case parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Stage {
    /// Convert one volume between NIfTI (.nii / .nii.gz) and .mvol, by extension.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Store the result as a label map.
        #[arg(long)]
        labels: bool,
    },
    /// Write brain-normalized copies of every case.
    Preprocess {
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the segmentation network on labelled cases.
    Train {
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Segment cases with a trained checkpoint.
    Predict {
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        window: WindowArgs,
        /// Skip left-right flip averaging.
        #[arg(long)]
        no_flip: bool,
    },
    /// Remove small tumors and relabel small enhancing regions.
    Postprocess {
        /// Directory of `<case>.mvol` label maps.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        thresholds: PostArgs,
    },
    /// Score label maps against the cases' segmentations.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract survival features from segmentations or predicted label maps.
    Features {
        #[arg(long)]
        cases: Option<PathBuf>,
        /// Directory of predicted label maps; defaults to the cases' own segmentations.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the survival forest on a features CSV.
    SurvivalTrain {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate the survival forest on a features CSV.
    SurvivalCv {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Predict survival days with a fitted forest.
    SurvivalPredict {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Run the full pipeline on generated phantoms.
    Demo {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of segmented phantom cases.
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        thresholds: PostArgs,
        #[arg(long)]
        folds: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct WindowArgs {
    /// Sliding-window edge (must equal the model patch size).
    #[arg(long)]
    window: Option<usize>,
    /// Sliding-window stride (default: half the window).
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args, Debug)]
struct PostArgs {
    /// Tumors with fewer voxels are removed.
    #[arg(long)]
    min_voxels: Option<usize>,
    /// Enhancing regions with fewer voxels become necrosis.
    #[arg(long)]
    et_threshold: Option<usize>,
}

impl WindowArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.inference.window = self.window.or(cfg.inference.window);
        cfg.inference.stride = self.stride.or(cfg.inference.stride);
    }
}

impl PostArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.min_voxels {
            cfg.postprocess.min_voxels = v;
        }
        if let Some(v) = self.et_threshold {
            cfg.postprocess.et_threshold = v;
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::MissingInput(_) => EXIT_MISSING_INPUT,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_INPUT,
        _ => EXIT_FAILURE,
    }
}

fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| Error::MissingInput(format!("{what} (pass --{what} or set it in the config)")))
}

fn output_dir(flag: Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf> {
    pick(flag, &cfg.paths.output, "out")
}

fn parent_of(p: &Path) -> Option<&Path> {
    p.parent().filter(|d| !d.as_os_str().is_empty())
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match (&cli.global.config, &cli.stage) {
        (Some(p), _) => PipelineConfig::load(p)?,
        (None, Stage::Demo { .. }) => PipelineConfig::demo_defaults(),
        (None, _) => PipelineConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    match &cli.stage {
        Stage::Train { steps: Some(n), .. } => cfg.training.steps = *n,
        Stage::Predict { window, no_flip, .. } => {
            window.apply(&mut cfg);
            cfg.inference.flip_average &= !no_flip;
        }
        Stage::Postprocess { thresholds, .. } => thresholds.apply(&mut cfg),
        Stage::SurvivalCv { folds: Some(k), .. } => cfg.survival.folds = *k,
        Stage::Demo { cases, steps, window, thresholds, folds, .. } => {
            if let Some(n) = cases {
                cfg.demo.cases = *n;
            }
            if let Some(n) = steps {
                cfg.training.steps = *n;
            }
            if let Some(k) = folds {
                cfg.survival.folds = *k;
            }
            window.apply(&mut cfg);
            thresholds.apply(&mut cfg);
        }
        _ => {}
    }
    let cfg = cfg.materialize()?;

    match cli.stage {
        Stage::Convert { input, output, labels } => {
            cfg.echo(None)?;
            stages::convert(&input, &output, labels)?;
            println!("wrote {}", output.display());
        }
        Stage::Preprocess { cases, out } => {
            let cases = pick(cases, &cfg.paths.cases, "cases")?;
            let out = output_dir(out, &cfg)?;
            cfg.echo(Some(&out))?;
            let n = stages::preprocess(&cases, &out)?;
            println!("normalized {n} cases into {}", out.display());
        }
        Stage::Train { cases, out, .. } => {
            let cases = pick(cases, &cfg.paths.cases, "cases")?;
            let out = output_dir(out, &cfg)?;
            cfg.echo(Some(&out))?;
            let r = stages::train(&cfg, &cases, &out)?;
            println!("wrote {}", r.checkpoint.display());
        }
        Stage::Predict { cases, checkpoint, out, .. } => {
            let checkpoint = pick(checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
            let cases = pick(cases, &cfg.paths.cases, "cases")?;
            let out = output_dir(out, &cfg)?;
            cfg.echo(Some(&out))?;
            let ids = stages::predict(&cfg, &cases, &checkpoint, &out)?;
            println!("segmented {} cases into {}", ids.len(), out.display());
        }
        Stage::Postprocess { input, out, .. } => {
            let out = output_dir(out, &cfg)?;
            cfg.echo(Some(&out))?;
            let n = stages::postprocess(&cfg, &input, &out)?;
            println!("post-processed {n} label maps into {}", out.display());
        }
        Stage::Evaluate { predictions, cases, out } => {
            let cases = pick(cases, &cfg.paths.cases, "cases")?;
            let out = output_dir(out, &cfg)?;
            cfg.echo(Some(&out))?;
            let s = stages::evaluate(&predictions, &cases, &out, "metrics_")?;
            println!("scored {} cases into {}", s.cases, out.display());
        }
        Stage::Features { cases, labels, out } => {
            let cases = pick(cases, &cfg.paths.cases, "cases")?;
            cfg.echo(parent_of(&out))?;
            let rows = stages::features(&cases, labels.as_deref(), &out)?;
            println!("wrote features of {} cases to {}", rows.len(), out.display());
        }
        Stage::SurvivalTrain { features, out } => {
            let out = output_dir(out, &cfg)?;
            cfg.echo(Some(&out))?;
            stages::survival_train(&cfg, &features, &out)?;
        }
        Stage::SurvivalCv { features, out, .. } => {
            let out = output_dir(out, &cfg)?;
            cfg.echo(Some(&out))?;
            stages::survival_cv(&cfg, &features, &out)?;
        }
        Stage::SurvivalPredict { features, model, out } => {
            cfg.echo(parent_of(&out))?;
            let days = stages::survival_predict(&cfg, &features, &model, &out)?;
            println!("predicted survival of {} cases into {}", days.len(), out.display());
        }
        Stage::Gradcheck { seeds } => {
            cfg.echo(None)?;
            let t = Instant::now();
            let report = stages::gradcheck(seeds)?;
            println!("gradcheck finished in {:.1} s", t.elapsed().as_secs_f64());
            if !report.passed() {
                eprintln!("error: gradient check failed");
                return Ok(EXIT_CHECK_FAILED);
            }
            println!("gradcheck passed");
        }
        Stage::Demo { out, .. } => {
            let out = out.or_else(|| cfg.paths.output.clone()).unwrap_or_else(|| PathBuf::from("demo_out"));
            cfg.echo(Some(&out))?;
            let t = Instant::now();
            let r = stages::demo(&cfg, &out)?;
            for (name, s) in [("raw", &r.raw), ("post-processed", &r.post)] {
                for m in [Measure::Dice, Measure::Hausdorff95] {
                    let means: Vec<String> =
                        RegionId::ALL.iter().map(|&reg| format!("{reg:?} {:.4}", s.get(m, reg).mean)).collect();
                    println!("{name:>14} mean {:<11}  {}", m.name(), means.join("  "));
                }
            }
            println!("demo finished in {:.1} s; artifacts in {}", t.elapsed().as_secs_f64(), out.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
