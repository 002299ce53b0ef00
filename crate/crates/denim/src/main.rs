//! Command-line surface: train, apply, eval, bench, inspect.
//!
//! Exit status: 0 on success, 2 on usage errors (handled by clap), 1 on
//! runtime errors.

use clap::{Args, Parser, Subcommand};
use denim::checkpoint;
use denim::dncm::DncmParams;
use denim::encoder::EncoderParams;
use denim::image::CanonicalImage;
use denim::metrics;
use denim::pipeline::{
    assemble_stack, bench, run_pipeline, validate_settings, BenchProtocol, PipelineConfig,
};
use denim::ppm;
use denim::rng::SplitMix64;
use denim::train::{loss_curve_csv, synthesize_sample, train, TrainConfig, TrainSample, WbSimConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "denim", version, about = "Deterministic neural illumination mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train projection matrices (and optionally the encoder) on a dataset
    /// directory or a synthetic von Kries dataset.
    Train(TrainArgs),
    /// Apply a trained parameter file to per-setting images or a raw stack.
    Apply(ApplyArgs),
    /// Compare a directory of predictions against ground truth.
    Eval(EvalArgs),
    /// Time naive-chain vs precomposed inference.
    Bench(BenchArgs),
    /// Summarize a parameter file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory with, per sample stem S, `S.<letter>.ppm` for every
    /// setting letter plus `S.gt.ppm` as the target.
    #[arg(long, conflicts_with = "synthetic")]
    data_dir: Option<PathBuf>,
    /// Generate this many synthetic samples instead of reading a directory.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Side length of synthetic samples.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Setting letters, e.g. "tds".
    #[arg(long, default_value = "tds")]
    settings: String,
    /// Output parameter file.
    #[arg(long)]
    out: PathBuf,
    /// Optional loss-curve CSV path.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-2)]
    weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 32)]
    k: usize,
    #[arg(long, default_value_t = 256)]
    low_res_side: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep the encoder at its initialization; train only the projections.
    #[arg(long)]
    freeze_encoder: bool,
}

#[derive(Args)]
struct ApplyArgs {
    /// Trained parameter file.
    #[arg(long)]
    params: PathBuf,
    /// Per-setting input images, in the order of --settings.
    #[arg(long, num_args = 1.., conflicts_with = "stack")]
    inputs: Vec<PathBuf>,
    /// Raw stack file as an alternative to per-setting images.
    #[arg(long)]
    stack: Option<PathBuf>,
    #[arg(long, default_value = "tds")]
    settings: String,
    /// Output path for the canonical (illumination-normalized) image.
    #[arg(long)]
    canonical: Option<PathBuf>,
    /// Output path for the final AWB image.
    #[arg(long)]
    awb: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    low_res_side: usize,
    /// Use the precomposed per-image matrix instead of the naive chain.
    #[arg(long)]
    precompose: bool,
    /// Worker threads for per-pixel mapping; 0 means all available cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted .ppm images.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Directory of ground-truth .ppm images with matching file names.
    #[arg(long)]
    gt_dir: PathBuf,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Optional trained parameter file; a seeded random model is used when
    /// omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    k: usize,
    /// Number of white-balance settings for the random model.
    #[arg(long, default_value_t = 5)]
    n_settings: usize,
    /// Comma-separated WIDTHxHEIGHT list, e.g. "1024x768,4000x3000".
    #[arg(long, default_value = "1024x1024")]
    resolutions: String,
    #[arg(long, default_value_t = 2)]
    warmups: usize,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 64)]
    low_res_side: usize,
}

#[derive(Args)]
struct InspectArgs {
    /// Parameter file to summarize.
    #[arg(long)]
    params: PathBuf,
}

fn resolve_threads(flag: usize) -> usize {
    if flag > 0 {
        flag
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

fn parse_letters(s: &str) -> denim::Result<Vec<char>> {
    let letters: Vec<char> = s.chars().collect();
    validate_settings(&letters)?;
    Ok(letters)
}

fn settings_for(n: usize) -> Vec<char> {
    denim::pipeline::SETTING_LETTERS[..n.min(5)].to_vec()
}

fn load_dataset_dir(dir: &Path, letters: &[char]) -> denim::Result<Vec<TrainSample>> {
    let entries = std::fs::read_dir(dir).map_err(|e| denim::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut stems: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| denim::Error::Io { path: dir.to_path_buf(), source: e })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".gt.ppm") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    let mut samples = Vec::with_capacity(stems.len());
    for stem in stems {
        let target = ppm::load_image(&dir.join(format!("{}.gt.ppm", stem)))?;
        let images: Vec<CanonicalImage> = letters
            .iter()
            .map(|l| ppm::load_image(&dir.join(format!("{}.{}.ppm", stem, l))))
            .collect::<denim::Result<_>>()?;
        let refs: Vec<&CanonicalImage> = images.iter().collect();
        samples.push(TrainSample {
            stack: assemble_stack(&refs, letters)?,
            target,
        });
    }
    if samples.is_empty() {
        return Err(denim::Error::EmptyDataset);
    }
    Ok(samples)
}

fn synthetic_dataset(
    count: usize,
    size: usize,
    letters: &[char],
    seed: u64,
) -> denim::Result<Vec<TrainSample>> {
    let sim = WbSimConfig::default();
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let base = CanonicalImage::new(
                size,
                size,
                (0..size * size * 3).map(|_| rng.next_f64()).collect(),
            )?;
            synthesize_sample(&base, &sim, letters)
        })
        .collect()
}

fn cmd_train(args: &TrainArgs) -> denim::Result<()> {
    let letters = parse_letters(&args.settings)?;
    let dataset = match (&args.data_dir, args.synthetic) {
        (Some(dir), None) => load_dataset_dir(dir, &letters)?,
        (None, Some(count)) => synthetic_dataset(count, args.size, &letters, args.seed ^ 0x5941)?,
        _ => return Err(denim::Error::EmptyDataset),
    };
    let cfg = TrainConfig {
        lr: args.lr,
        weight_decay: args.weight_decay,
        batch_size: args.batch_size,
        steps: args.steps,
        low_res_side: args.low_res_side,
        k: args.k,
        seed: args.seed,
        freeze_encoder: args.freeze_encoder,
        ..TrainConfig::default()
    };
    let result = train(&dataset, &cfg)?;
    checkpoint::save_params(&args.out, &result.params, &result.encoder)?;
    if let Some(curve) = &args.curve {
        std::fs::write(curve, loss_curve_csv(&result.curve)).map_err(|e| denim::Error::Io {
            path: curve.clone(),
            source: e,
        })?;
    }
    if let Some(last) = result.curve.last() {
        println!(
            "trained {} steps, final batch loss {:.6e} ({:.6e} per pixel)",
            result.curve.len(),
            last.loss_sum,
            last.loss_per_pixel
        );
    }
    println!("saved parameters to {}", args.out.display());
    Ok(())
}

fn cmd_apply(args: &ApplyArgs) -> denim::Result<()> {
    let letters = parse_letters(&args.settings)?;
    let (params, enc) = checkpoint::load_params(&args.params)?;
    let stack = match (&args.stack, args.inputs.is_empty()) {
        (Some(path), _) => checkpoint::load_stack(path)?,
        (None, false) => {
            let images: Vec<CanonicalImage> = args
                .inputs
                .iter()
                .map(|p| ppm::load_image(p))
                .collect::<denim::Result<_>>()?;
            let refs: Vec<&CanonicalImage> = images.iter().collect();
            assemble_stack(&refs, &letters)?
        }
        (None, true) => {
            return Err(denim::Error::Dimension {
                context: "apply inputs",
                expected: "--stack or at least one --inputs image".to_string(),
                got: "neither".to_string(),
            })
        }
    };
    let cfg = PipelineConfig::new(
        letters,
        args.low_res_side,
        args.precompose,
        resolve_threads(args.threads),
    )?;
    let out = run_pipeline(&stack, &params, &enc, &cfg)?;
    if let Some(path) = &args.canonical {
        ppm::save_image(path, &out.canonical)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.awb {
        ppm::save_image(path, &out.awb)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> denim::Result<()> {
    let entries = std::fs::read_dir(&args.pred_dir).map_err(|e| denim::Error::Io {
        path: args.pred_dir.clone(),
        source: e,
    })?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| denim::Error::Io {
            path: args.pred_dir.clone(),
            source: e,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".ppm") {
            names.push(name);
        }
    }
    names.sort();
    let mut loaded = Vec::with_capacity(names.len());
    for name in &names {
        let pred = ppm::load_image(&args.pred_dir.join(name))?;
        let gt = ppm::load_image(&args.gt_dir.join(name))?;
        loaded.push((name.clone(), pred, gt));
    }
    let pairs: Vec<(String, &CanonicalImage, &CanonicalImage)> = loaded
        .iter()
        .map(|(n, p, g)| (n.clone(), p, g))
        .collect();
    let report = metrics::report(&pairs)?;
    let csv = report.to_csv();
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| denim::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            println!("{}", report.to_summary());
        }
        None => print!("{}", csv),
    }
    Ok(())
}

fn parse_resolutions(s: &str) -> denim::Result<Vec<(usize, usize)>> {
    let bad = || denim::Error::Dimension {
        context: "bench resolutions",
        expected: "comma-separated WIDTHxHEIGHT list".to_string(),
        got: s.to_string(),
    };
    s.split(',')
        .map(|part| {
            let (w, h) = part.trim().split_once('x').ok_or_else(bad)?;
            let w: usize = w.parse().map_err(|_| bad())?;
            let h: usize = h.parse().map_err(|_| bad())?;
            if w == 0 || h == 0 {
                return Err(bad());
            }
            Ok((h, w))
        })
        .collect()
}

fn cmd_bench(args: &BenchArgs) -> denim::Result<()> {
    let (params, enc) = match &args.params {
        Some(path) => checkpoint::load_params(path)?,
        None => (
            DncmParams::init(args.k, args.n_settings, 7)?,
            EncoderParams::init(args.n_settings, args.k, &[16, 32, 64], 8),
        ),
    };
    let letters = settings_for(params.n_settings);
    let cfg = PipelineConfig::new(
        letters,
        args.low_res_side,
        false,
        resolve_threads(args.threads),
    )?;
    let resolutions = parse_resolutions(&args.resolutions)?;
    let proto = BenchProtocol { warmups: args.warmups, runs: args.runs };
    let report = bench(&resolutions, &params, &enc, &cfg, &proto)?;
    print!("{}", report.to_text());
    for &(h, w) in &resolutions {
        if let Some(s) = report.speedup(h, w) {
            println!("speedup {}x{}: {:.2}x", w, h, s);
        }
    }
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> denim::Result<()> {
    let (params, enc) = checkpoint::load_params(&args.params)?;
    println!("k = {}", params.k);
    println!("settings N = {}", params.n_settings);
    for (name, m) in [
        ("Pc", &params.pc),
        ("Qc", &params.qc),
        ("Rc", &params.rc),
        ("Pa", &params.pa),
        ("Qa", &params.qa),
        ("Ra", &params.ra),
    ] {
        println!("{} {}x{}", name, m.rows(), m.cols());
    }
    let widths: Vec<String> = enc.stages.iter().map(|s| s.out_ch.to_string()).collect();
    println!("encoder stages: {}", widths.join(","));
    println!("projection parameters: {}", params.parameter_count());
    println!("encoder parameters: {}", enc.parameter_count());
    println!(
        "total parameters: {}",
        params.parameter_count() + enc.parameter_count()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Apply(args) => cmd_apply(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
