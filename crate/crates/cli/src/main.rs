use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hapcac::lod::LodParams;
use hapcac::model::{load_checkpoint, save_checkpoint, ContextModel, ModelConfig};
use hapcac::neighborhood::{InputMode, NeighborParams};
use hapcac::pipeline::{self, CodecConfig, EvalOptions, TrainOptions};
use hapcac::pointcloud::ply::{read_ply, read_ply_geometry, write_ply};
use hapcac::{synthetic, AttributeSpace, Error, PointCloud};

#[derive(Parser)]
#[command(name = "hapcac", version, about = "Lossless point cloud attribute compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress the attributes of a PLY file.
    Encode(EncodeArgs),
    /// Restore attributes onto a geometry-only PLY file.
    Decode(DecodeArgs),
    /// Train a context model on a directory of PLY files.
    Train(TrainArgs),
    /// Encode and decode a corpus under geometry and reflectance requantization.
    Eval(EvalArgs),
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1 << 14)]
    slice_size: usize,
}

#[derive(Args)]
struct ModelChoice {
    #[arg(long, conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Use the training-free predictor.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    model: ModelChoice,
    #[command(flatten)]
    common: Common,
    /// Rate report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Compressed stream.
    #[arg(long)]
    input: PathBuf,
    /// PLY file supplying the positions.
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Residual,
    Raw,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of PLY files.
    #[arg(long)]
    input: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "residual")]
    input_mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_units: usize,
    #[arg(long, default_value_t = 64)]
    targets_per_unit: usize,
    #[arg(long, default_value_t = 1)]
    slices_per_cloud: usize,
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 32)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    k1: usize,
    #[arg(long, default_value_t = 8)]
    k2: usize,
    #[command(flatten)]
    common: Common,
    /// Loss curve CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// PLY file or directory of PLY files.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    model: ModelChoice,
    /// Geometry quantization steps to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    quant_step: Vec<u32>,
    /// Reflectance bit depths to evaluate; omitted means the native depth.
    #[arg(long, value_delimiter = ',')]
    refl_bits: Vec<u8>,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Reflectance,
    Color,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 16384)]
    points: usize,
    #[arg(long, default_value_t = 12)]
    geom_bits: u8,
    #[arg(long, value_enum, default_value = "reflectance")]
    kind: KindArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: Option<&Path>) -> Result<Option<ContextModel>> {
    path.map(|p| Ok(load_checkpoint(&read_file(p)?)?)).transpose()
}

fn choose_model(choice: &ModelChoice) -> Result<Option<ContextModel>> {
    if choice.checkpoint.is_none() && !choice.baseline {
        bail!("pass --checkpoint <file> or --baseline");
    }
    load_model(choice.checkpoint.as_deref())
}

fn codec_config(common: &Common) -> CodecConfig {
    CodecConfig {
        lod: LodParams { slice_size: common.slice_size, seed: common.seed, ..LodParams::default() },
        neighbors: NeighborParams::default(),
        threads: common.threads,
    }
}

fn ply_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .ply files in {}", path.display());
    }
    Ok(files)
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    read_ply(&read_file(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn write_report(path: Option<&Path>, f: impl FnOnce(&mut Vec<u8>) -> hapcac::Result<()>) -> Result<()> {
    if let Some(p) = path {
        let mut buf = Vec::new();
        f(&mut buf)?;
        write_file(p, &buf)?;
    }
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode(a) => {
            let pc = read_cloud(&a.input)?;
            let model = choose_model(&a.model)?;
            let enc = pipeline::encode(&pc, &codec_config(&a.common), model.as_ref())?;
            write_file(&a.output, &enc.bytes)?;
            let name = file_name(&a.input);
            write_report(a.report.as_deref(), |w| pipeline::write_report_csv(w, &[(name, enc.report.clone())]))?;
            eprintln!(
                "{} points, {} bytes, {:.4} bpp, {:.3} s",
                enc.report.points,
                enc.report.file_bytes,
                enc.report.bpp(),
                enc.report.encode_s
            );
        }
        Command::Decode(a) => {
            let bytes = read_file(&a.input)?;
            let (positions, _) = read_ply_geometry(&read_file(&a.geometry)?)
                .with_context(|| format!("parsing {}", a.geometry.display()))?;
            let model = load_model(a.checkpoint.as_deref())?;
            let pc = pipeline::decode(&positions, &bytes, model.as_ref(), a.threads)?;
            write_file(&a.output, &write_ply(&pc)?)?;
            eprintln!("{} points decoded", pc.len());
        }
        Command::Train(a) => {
            let files = ply_files(&a.input)?;
            let corpus = files.iter().map(|f| read_cloud(f)).collect::<Result<Vec<_>>>()?;
            let space = corpus[0].space().coding_space();
            let config = ModelConfig {
                feature_dim: a.feature_dim,
                hidden_dim: a.hidden_dim,
                channels: space.channels(),
                k: a.k,
                k1: a.k1,
                k2: a.k2,
                input_mode: match a.input_mode {
                    ModeArg::Residual => InputMode::Residual,
                    ModeArg::Raw => InputMode::Raw,
                },
            };
            let lod = LodParams { slice_size: a.common.slice_size, seed: a.common.seed, ..LodParams::default() };
            let opts = TrainOptions {
                epochs: a.epochs,
                learning_rate: a.lr,
                batch_units: a.batch_units,
                targets_per_unit: a.targets_per_unit,
                slices_per_cloud: a.slices_per_cloud,
                seed: a.common.seed,
                threads: a.common.threads,
            };
            let out = pipeline::train(&corpus, config, &lod, &opts)?;
            write_file(&a.output, &save_checkpoint(&out.model))?;
            write_report(a.report.as_deref(), |w| pipeline::write_loss_csv(w, &out.epoch_bits_per_point))?;
            for (e, b) in out.epoch_bits_per_point.iter().enumerate() {
                eprintln!("epoch {} {:.4} bits/point", e + 1, b);
            }
        }
        Command::Eval(a) => {
            let model = choose_model(&a.model)?;
            let cfg = codec_config(&a.common);
            let mut rows = Vec::new();
            for f in ply_files(&a.input)? {
                let pc = read_cloud(&f)?;
                let depths: Vec<Option<u8>> = match pc.space() {
                    AttributeSpace::Reflectance { .. } if !a.refl_bits.is_empty() => {
                        a.refl_bits.iter().map(|&b| Some(b)).collect()
                    }
                    _ => vec![None],
                };
                for &step in &a.quant_step {
                    for &refl_bits in &depths {
                        let r = pipeline::eval_cloud(&pc, &cfg, model.as_ref(), EvalOptions { quant_step: step, refl_bits })?;
                        let bits = refl_bits.map_or(String::new(), |b| format!(" refl_bits={b}"));
                        eprintln!("{} step={step}{bits}: {} points, {:.4} bpp", file_name(&f), r.points, r.bpp());
                        let tag = refl_bits.map_or(String::new(), |b| format!("@r{b}"));
                        rows.push((format!("{}@q{step}{tag}", file_name(&f)), r));
                    }
                }
            }
            match a.report.as_deref() {
                Some(p) => write_report(Some(p), |w| pipeline::write_report_csv(w, &rows))?,
                None => pipeline::write_report_csv(&mut std::io::stdout().lock(), &rows)?,
            }
        }
        Command::Synth(a) => {
            let space = match a.kind {
                KindArg::Reflectance => AttributeSpace::Reflectance { bits: 8 },
                KindArg::Color => AttributeSpace::ColorRgb,
            };
            fs::create_dir_all(&a.output)?;
            for i in 0..a.count {
                let pc = synthetic::smooth_cloud(a.points, a.geom_bits, space, a.seed + i as u64);
                write_file(&a.output.join(format!("synth_{i:03}.ply")), &write_ply(&pc)?)?;
            }
            std::io::stderr().flush()?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Format(_)) => 2,
        Some(Error::Desync(_) | Error::Integrity(_) | Error::Causality(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
