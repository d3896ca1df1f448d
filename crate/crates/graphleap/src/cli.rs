//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphleap_core::config::{
    preset, HardwareParams, Mode, ModelSpec, RunConfig, Schedule, WeightSource, IMAGE_CHANNELS, PRESET_NAMES,
};
use graphleap_core::perf::{self, measured_vs_model};
use graphleap_core::schedule::{compare_modes, run_graphleap_sequential, run_standard, Engine, RunOutput};
use graphleap_core::stages::ImageTensor;
use graphleap_core::weights::{init_weights, ModelWeights};

use crate::config_doc::{load_config_file, Config};
use crate::error::{Error, Result};
use crate::pipeline::run_graphleap_overlapped;
use crate::report::{alignment_table, config_echo, divergence_table, perf_table, PerfRow, RunReport};
use crate::io;

#[derive(Debug, Parser)]
#[command(name = "graphleap", version, about = "Leap-ahead Vision GNN inference and pipeline model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one inference and print a report.
    Infer(InferArgs),
    /// Compare standard and leap-ahead graphs block by block.
    Compare(CompareArgs),
    /// Print predicted accelerator latency.
    Perf(PerfArgs),
    /// Write a deterministic weight bundle and input image.
    Gen(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Standard,
    Graphleap,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleArg {
    Sequential,
    Overlapped,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration document.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named architecture; replaces the configured model.
    #[arg(long)]
    pub preset: Option<String>,
    /// Input resolution in pixels.
    #[arg(long, value_parser = ["224", "448"])]
    pub resolution: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    /// Output file (infer, compare, perf) or directory (gen).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input image tensor (3 x H x W `.glpt`).
    #[arg(long, conflicts_with = "random")]
    pub input: Option<PathBuf>,
    /// Synthesize the input from the seed (the default).
    #[arg(long)]
    pub random: bool,
    /// Weight bundle; overrides the configured source.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Include wall-clock time and measured schedule in the report.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, conflicts_with = "random")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub random: bool,
    #[arg(long, conflicts_with = "frozen")]
    pub weights: Option<PathBuf>,
    /// Identity input projection and zero elsewhere.
    #[arg(long)]
    pub frozen: bool,
}

#[derive(Debug, Args)]
pub struct PerfArgs {
    #[command(flatten)]
    pub common: Common,
    /// Every named architecture at 224 and 448.
    #[arg(long)]
    pub all_presets: bool,
}

/// Configuration after applying command-line overrides.
fn resolve(c: &Common) -> Result<Config> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => load_config_file(path)?,
        (None, Some(_)) => Config {
            model: preset(PRESET_NAMES[0]).map_err(Error::Config)?,
            hardware: HardwareParams::default(),
            run: RunConfig::default(),
        },
        (None, None) => return Err(Error::validation("--config", "either --config or --preset is required")),
    };
    if let Some(name) = &c.preset {
        cfg.model = preset(name).map_err(Error::Config)?;
    }
    if let Some(r) = &c.resolution {
        let size: usize = r.parse().map_err(|_| Error::validation("--resolution", "not a number"))?;
        cfg.model = cfg.model.with_image_size(size).map_err(Error::Config)?;
    }
    if let Some(seed) = c.seed {
        cfg.run.seed = seed;
    }
    if let Some(m) = c.mode {
        cfg.run.mode = match m {
            ModeArg::Standard => Mode::StandardViG,
            ModeArg::Graphleap => Mode::GraphLeap,
        };
        if cfg.run.mode == Mode::StandardViG && c.schedule.is_none() {
            cfg.run.schedule = Schedule::Sequential;
        }
    }
    if let Some(s) = c.schedule {
        cfg.run.schedule = match s {
            ScheduleArg::Sequential => Schedule::Sequential,
            ScheduleArg::Overlapped => Schedule::Overlapped,
        };
    }
    cfg.run.validate().map_err(Error::Config)?;
    Ok(cfg)
}

fn load_weights(spec: &ModelSpec, run: &RunConfig) -> Result<ModelWeights> {
    match &run.weight_source {
        WeightSource::RandomSeeded => Ok(init_weights(spec, run.seed)),
        WeightSource::File(path) => io::load_weights(Path::new(path), spec),
    }
}

fn load_input(spec: &ModelSpec, seed: u64, input: Option<&Path>) -> Result<ImageTensor> {
    let Some(path) = input else {
        return Ok(ImageTensor::random(spec, seed));
    };
    let img = io::load_image(path)?;
    let expected = [IMAGE_CHANNELS, spec.image_size, spec.image_size];
    if img.dims() != expected {
        return Err(Error::validation(
            "--input",
            format!("{} has shape {:?}, model expects {expected:?}", path.display(), img.dims()),
        ));
    }
    Ok(img)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        std::fs::write(path, text).map_err(Error::file(path))?;
    }
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(text.as_bytes())
        .and_then(|()| stdout.flush())
        .map_err(Error::file("<stdout>"))
}

pub fn infer(args: &InferArgs) -> Result<String> {
    let mut cfg = resolve(&args.common)?;
    if let Some(w) = &args.weights {
        cfg.run.weight_source = WeightSource::File(w.display().to_string());
    }
    let Config { model, hardware, run } = &cfg;
    let weights = load_weights(model, run)?;
    let img = load_input(model, run.seed, args.input.as_deref())?;
    let engine = Engine::new(model, &weights, run.block, hardware).map_err(Error::Config)?;
    let x0 = engine.embed(&img)?;

    let started = Instant::now();
    let mut measured = None;
    let out: RunOutput = match (run.mode, run.schedule) {
        (Mode::StandardViG, _) => run_standard(&x0, &engine)?,
        (Mode::GraphLeap, Schedule::Sequential) => run_graphleap_sequential(&x0, &engine)?,
        (Mode::GraphLeap, Schedule::Overlapped) => {
            let o = run_graphleap_overlapped(&x0, &engine, hardware)?;
            measured = Some(o.timeline.clone());
            o.into_run_output()
        }
    };
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    log::info!("inference took {wall_ms:.3} ms wall-clock");

    let predicted = perf::total_latency(model, hardware, run.schedule);
    let mut report = RunReport::new(model, hardware, run, &out.logits, &out.trace, predicted.total_ms());
    let mut text = String::new();
    if args.timing {
        report.wall_ms = Some(wall_ms);
    }
    text.push_str(&report.to_string());
    if let (true, Some(m)) = (args.timing, measured) {
        let model_tl = perf::total_latency(model, hardware, Schedule::Overlapped);
        text.push_str(&alignment_table(&measured_vs_model(&m, &model_tl)?));
    }
    Ok(text)
}

pub fn compare(args: &CompareArgs) -> Result<String> {
    let mut cfg = resolve(&args.common)?;
    if let Some(w) = &args.weights {
        cfg.run.weight_source = WeightSource::File(w.display().to_string());
    }
    let Config { model, hardware, run } = &cfg;
    let weights = if args.frozen {
        ModelWeights::frozen(model, run.seed)
    } else {
        load_weights(model, run)?
    };
    let img = load_input(model, run.seed, args.input.as_deref())?;
    let engine = Engine::new(model, &weights, run.block, hardware).map_err(Error::Config)?;
    let d = compare_modes(&engine.embed(&img)?, &engine)?;
    let mean = d.jaccard.iter().sum::<f64>() / d.jaccard.len().max(1) as f64;
    let mut text = format!(
        "# {}: mean Jaccard {mean:.4} over {} blocks, logit L2 {:.3e}\n",
        model.display_name(),
        d.jaccard.len(),
        d.logit_l2
    );
    for (k, v) in config_echo(model, hardware, run) {
        text.push_str(&format!("config\t{k}\t{v}\n"));
    }
    text.push_str(&divergence_table(&d));
    Ok(text)
}

pub fn perf_cmd(args: &PerfArgs) -> Result<String> {
    let (specs, hw) = if args.all_presets {
        let hw = match &args.common.config {
            Some(path) => load_config_file(path)?.hardware,
            None => HardwareParams::default(),
        };
        let mut specs = Vec::new();
        for name in PRESET_NAMES {
            let base = preset(name).map_err(Error::Config)?;
            for res in [224, 448] {
                specs.push(base.with_image_size(res).map_err(Error::Config)?);
            }
        }
        (specs, hw)
    } else {
        let cfg = resolve(&args.common)?;
        (vec![cfg.model], cfg.hardware)
    };
    let rows: Vec<PerfRow> = specs
        .iter()
        .map(|s| PerfRow::new(s, &perf::predict(s, &hw)))
        .collect();
    let mut text = format!(
        "# predicted at {:.0} MHz, {}x{} PEs, {} look-ahead buffers\n",
        hw.f_clk / 1e6,
        hw.p_n,
        hw.p_d,
        hw.n_buf
    );
    text.push_str(&perf_table(&rows));
    Ok(text)
}

/// Returns the paths written.
pub fn gen(args: &Common) -> Result<(PathBuf, PathBuf, usize)> {
    let cfg = resolve(args)?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(Error::file(&dir))?;
    let weights = init_weights(&cfg.model, cfg.run.seed);
    let wpath = dir.join("weights.glpw");
    let ipath = dir.join("input.glpt");
    io::save_weights(&wpath, &weights)?;
    io::save_image(&ipath, &ImageTensor::random(&cfg.model, cfg.run.seed))?;
    Ok((wpath, ipath, weights.blocks.len()))
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Infer(a) => infer(a).and_then(|t| emit(&t, a.common.out.as_deref())),
        Command::Compare(a) => compare(a).and_then(|t| emit(&t, a.common.out.as_deref())),
        Command::Perf(a) => perf_cmd(a).and_then(|t| emit(&t, a.common.out.as_deref())),
        Command::Gen(a) => gen(a).and_then(|(w, i, blocks)| {
            emit(
                &format!("weights\t{}\t{blocks} blocks\ninput\t{}\n", w.display(), i.display()),
                None,
            )
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
