//! Command line front end: synthesis, degradation, training, estimation,
//! evaluation and architecture inspection.
//!
//! Every subcommand takes `--seed`, echoes its resolved configuration as
//! `key = value` lines on stdout, and writes a `.cfg` sidecar next to each
//! artifact. Exit codes: 0 success, 2 argument or precondition, 3 state
//! compatibility, 4 numeric failure.

mod render;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use manet_core::degrade::{degrade, degrade_invariant, DegradationConfig};
use manet_core::io::{self, Mant, MantData};
use manet_core::kernel::{
    make_kernel_field, synth_kernel, Kernel, KernelMap, KernelParams, DEFAULT_KERNEL_SIZE,
    DEFAULT_PATCH_SIZE,
};
use manet_core::nn::cost::{
    count_flops, count_params, maconv_param_formula, plain_conv_params, receptive_field_analytic,
};
use manet_core::nn::manet::{main_path, MaNet, MaNetConfig};
use manet_core::nn::probe::receptive_field_probe;
use manet_core::rng::{sample_rng, StreamId};
use manet_core::train::{
    evaluate, load_net, train, DatasetSource, Estimator, EvalMode, TrainConfig,
};
use manet_core::{Error, Result};

#[derive(Parser)]
#[command(name = "manet", version, about = "Spatially variant blur kernel estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one anisotropic Gaussian kernel.
    SynthKernel(SynthKernelArgs),
    /// Degrade an HR image into LR plus its ground-truth kernel map.
    Degrade(DegradeArgs),
    /// Train an estimator on procedural or directory data.
    Train(TrainArgs),
    /// Estimate a kernel map from an LR image.
    Estimate(EstimateArgs),
    /// Score kernel estimates over a dataset.
    Eval(EvalArgs),
    /// Print parameter, FLOP and receptive-field numbers.
    Inspect(InspectArgs),
    /// Render stored kernels, maps and images.
    Viz(VizArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthKernel(a) => run_synth_kernel(a),
        Command::Degrade(a) => run_degrade(a),
        Command::Train(a) => run_train(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Eval(a) => run_eval(a),
        Command::Inspect(a) => run_inspect(a),
        Command::Viz(a) => run_viz(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

/// Print the resolved configuration block that also lands in sidecars.
fn echo(pairs: &[(String, String)]) {
    print!("{}", io::format_kv(pairs));
}

fn pair(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

#[derive(Args)]
struct SynthKernelArgs {
    #[arg(long)]
    sigma1: f64,
    #[arg(long)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Odd kernel support.
    #[arg(long, default_value_t = DEFAULT_KERNEL_SIZE)]
    size: usize,
    /// Output MANT path; the PGM rendering lands next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_synth_kernel(a: &SynthKernelArgs) -> Result<()> {
    let params = KernelParams::new(a.sigma1, a.sigma2, a.theta)?;
    let kernel = synth_kernel(params, a.size)?;
    let render_path = sibling(&a.out, "pgm")?;
    let pairs = vec![
        pair("command", "synth-kernel"),
        pair("sigma1", params.sigma1),
        pair("sigma2", params.sigma2),
        pair("theta", params.theta),
        pair("size", a.size),
        pair("seed", a.seed),
        pair("out", a.out.display()),
        pair("render", render_path.display()),
    ];
    echo(&pairs);
    let m = Mant::new(
        vec![a.size as u32, a.size as u32],
        MantData::F64(kernel.taps().to_vec()),
    )?;
    io::write_mant(&a.out, &m)?;
    io::write_sidecar(&a.out, &pairs)?;
    io::write_pgm(&render_path, &render::kernel_tile(&kernel))?;
    io::write_sidecar(&render_path, &pairs)?;
    Ok(())
}

/// `path` with its extension replaced, refusing to clobber the original.
fn sibling(path: &Path, ext: &str) -> Result<PathBuf> {
    let out = path.with_extension(ext);
    if out == path {
        return Err(Error::Argument(format!(
            "output {} would collide with its {ext} rendering; pick another extension",
            path.display()
        )));
    }
    Ok(out)
}

#[derive(Args)]
struct DegradeArgs {
    /// Input HR image (PGM or PNG).
    input: PathBuf,
    /// Output LR image.
    output: PathBuf,
    #[arg(long)]
    scale: usize,
    /// 0 applies one explicit kernel everywhere; 1-5 are the variant
    /// field families.
    #[arg(long, default_value_t = 0)]
    field_type: u8,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
    /// Noise standard deviation on the 0-255 scale.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Kernel width for --field-type 0.
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Where to write the ground-truth kernel map (MANT).
    #[arg(long)]
    gt_kernels: Option<PathBuf>,
}

fn run_degrade(a: &DegradeArgs) -> Result<()> {
    let img = io::read_image(&a.input)?;
    let (h, w) = img.extent();
    let cfg = DegradationConfig::new(a.scale, a.noise, a.seed)?;
    let mut pairs = vec![
        pair("command", "degrade"),
        pair("input", a.input.display()),
        pair("output", a.output.display()),
        pair("scale", a.scale),
        pair("field_type", a.field_type),
        pair("patch_size", a.patch_size),
        pair("noise", a.noise),
        pair("seed", a.seed),
    ];
    let (lr, map) = if a.field_type == 0 {
        let (Some(s1), Some(s2)) = (a.sigma1, a.sigma2) else {
            return Err(Error::Argument(
                "--field-type 0 needs explicit --sigma1 and --sigma2".into(),
            ));
        };
        let p = KernelParams::new(s1, s2, a.theta)?;
        pairs.push(pair("sigma1", p.sigma1));
        pairs.push(pair("sigma2", p.sigma2));
        pairs.push(pair("theta", p.theta));
        let kernel = synth_kernel(p, DEFAULT_KERNEL_SIZE)?;
        degrade_invariant(&img, &kernel, &cfg)?
    } else {
        let mut rng = sample_rng(a.seed, StreamId::Kernels, a.field_type as u64);
        let field = make_kernel_field(a.field_type, h, w, a.patch_size, a.scale, &mut rng)?;
        degrade(&img, &field, &cfg)?
    };
    echo(&pairs);
    io::write_image(&a.output, &lr)?;
    io::write_sidecar(&a.output, &pairs)?;
    if let Some(gt) = &a.gt_kernels {
        io::write_mant(gt, &Mant::from_tensor(&map.to_tensor::<f64>()?))?;
        io::write_sidecar(gt, &pairs)?;
    }
    println!("lr_extent = {}x{}", lr.extent().0, lr.extent().1);
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Key=value config file; explicit flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scale: Option<usize>,
    /// HR crop extent.
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Upper bound of the per-sample noise draw, 0-255 scale.
    #[arg(long)]
    noise_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Three channel widths, comma separated.
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    split: Option<usize>,
    #[arg(long)]
    in_channels: Option<usize>,
    /// Train against this one kernel instead of random draws.
    #[arg(long)]
    fixed_sigma1: Option<f64>,
    #[arg(long)]
    fixed_sigma2: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    fixed_theta: f64,
    /// Directory of HR images; omitted, training uses procedural targets.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Structure density of the procedural source.
    #[arg(long, default_value_t = 2.0)]
    density: f64,
    /// Output directory for checkpoints, metrics and the resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to resume from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::from_pairs(&io::read_kv(path)?)?,
        None => TrainConfig::default(),
    };
    macro_rules! override_field {
        ($($field:ident),*) => {
            $(if let Some(v) = a.$field {
                cfg.$field = v;
            })*
        };
    }
    override_field!(scale, crop, batch, steps, lr, noise_max, seed, checkpoint_every, split, in_channels);
    if let Some(spec) = &a.channels {
        cfg.channels = parse_channels(spec)?;
    }
    match (a.fixed_sigma1, a.fixed_sigma2) {
        (Some(s1), Some(s2)) => {
            cfg.fixed_kernel = Some(KernelParams::new(s1, s2, a.fixed_theta)?)
        }
        (None, None) => {}
        _ => {
            return Err(Error::Argument(
                "--fixed-sigma1 and --fixed-sigma2 must be given together".into(),
            ))
        }
    }
    cfg.validate()?;
    let source = match &a.data {
        Some(dir) => DatasetSource::from_dir(dir)?,
        None => DatasetSource::procedural(a.density),
    };
    let mut pairs = vec![pair("command", "train"), pair("out", a.out.display())];
    pairs.push(pair(
        "source",
        match &a.data {
            Some(dir) => format!("dir:{}", dir.display()),
            None => format!("procedural:{}", a.density),
        },
    ));
    if let Some(resume) = &a.resume {
        pairs.push(pair("resume", resume.display()));
    }
    pairs.extend(cfg.to_pairs());
    echo(&pairs);
    let report = train(&cfg, &source, &a.out, a.resume.as_deref())?;
    let last = report.log.last().expect("training ran at least one step");
    println!("final_checkpoint = {}", report.final_checkpoint.display());
    println!("final_loss = {:.8e}", last.loss);
    println!("seconds = {:.3}", last.seconds);
    Ok(())
}

fn parse_channels(spec: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Argument(format!("cannot parse channels {spec:?}")))?;
    let [c1, c2, c3] = parts[..] else {
        return Err(Error::Argument(format!(
            "expected three comma-separated channel widths, got {spec:?}"
        )));
    };
    Ok([c1, c2, c3])
}

#[derive(Args)]
struct EstimateArgs {
    /// LR input image.
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Train config to validate the checkpoint against.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output kernel map (MANT).
    #[arg(long)]
    out_kernels: PathBuf,
    /// Montage rendering: the input nearest-upscaled with kernel tiles.
    #[arg(long)]
    out_viz: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_estimate(a: &EstimateArgs) -> Result<()> {
    let (net, step) = load_net(&a.checkpoint)?;
    if let Some(path) = &a.config {
        let want = TrainConfig::from_pairs(&io::read_kv(path)?)?.manet_config();
        if *net.config() != want {
            return Err(Error::State(format!(
                "checkpoint architecture [{}] does not match config [{}]",
                net.config().signature(),
                want.signature()
            )));
        }
    }
    let img = io::read_image(&a.input)?;
    let map = net.estimate_map(&img)?;
    let (h, w) = map.extent();
    let mut pairs = vec![
        pair("command", "estimate"),
        pair("input", a.input.display()),
        pair("checkpoint", a.checkpoint.display()),
        pair("checkpoint_step", step),
        pair("seed", a.seed),
        pair("out_kernels", a.out_kernels.display()),
        pair("map_shape", format!("{}x{h}x{w}", map.size() * map.size())),
    ];
    if let Some(viz) = &a.out_viz {
        pairs.push(pair("out_viz", viz.display()));
    }
    echo(&pairs);
    io::write_mant(&a.out_kernels, &Mant::from_tensor(&map.to_tensor::<f64>()?))?;
    io::write_sidecar(&a.out_kernels, &pairs)?;
    if let Some(viz) = &a.out_viz {
        io::write_pgm(viz, &render::montage(&img, &map, 3, 3)?)?;
        io::write_sidecar(viz, &pairs)?;
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Invariant,
    Variant,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of HR images.
    #[arg(long)]
    dataset_dir: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    scale: usize,
    /// Output report path; a key=value copy lands next to it.
    #[arg(long)]
    report: PathBuf,
    /// Score the ground-truth maps themselves, the estimator upper bound.
    #[arg(long, default_value_t = false)]
    oracle_gt: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let DatasetSource::Directory { images } = DatasetSource::from_dir(&a.dataset_dir)? else {
        unreachable!("from_dir always yields a directory source");
    };
    let mode = match a.mode {
        Mode::Invariant => EvalMode::Invariant,
        Mode::Variant => EvalMode::Variant,
    };
    let net;
    let est = if a.oracle_gt {
        Estimator::OracleGt
    } else {
        let Some(ckpt) = &a.checkpoint else {
            return Err(Error::Argument(
                "pass --checkpoint or score the oracle with --oracle-gt".into(),
            ));
        };
        net = load_net(ckpt)?.0;
        if net.config().scale != a.scale {
            return Err(Error::State(format!(
                "checkpoint was trained for x{} but evaluation asked for x{}",
                net.config().scale,
                a.scale
            )));
        }
        Estimator::Net(&net)
    };
    let pairs = vec![
        pair("command", "eval"),
        pair("dataset_dir", a.dataset_dir.display()),
        pair(
            "mode",
            match mode {
                EvalMode::Invariant => "invariant",
                EvalMode::Variant => "variant",
            },
        ),
        pair("scale", a.scale),
        pair("estimator", if a.oracle_gt { "oracle-gt".to_string() } else { "net".to_string() }),
        pair("seed", a.seed),
        pair("images", images.len()),
        pair("report", a.report.display()),
    ];
    echo(&pairs);
    let report = evaluate(&est, &images, mode, a.scale, a.seed)?;
    print!("{}", report.render_text());
    std::fs::write(&a.report, report.render_text())?;
    io::write_kv(sibling(&a.report, "kv")?, &report.to_pairs())?;
    io::write_sidecar(&a.report, &pairs)?;
    Ok(())
}

#[derive(Args)]
struct InspectArgs {
    /// Key=value train config describing the architecture.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint whose stored architecture and weights to inspect.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input extent for the FLOP count, HxW.
    #[arg(long, default_value = "256x256")]
    extent: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_inspect(a: &InspectArgs) -> Result<()> {
    let net: MaNet<f64> = match (&a.checkpoint, &a.config) {
        (Some(_), Some(_)) => {
            return Err(Error::Argument(
                "--config and --checkpoint are mutually exclusive".into(),
            ))
        }
        (Some(ckpt), None) => load_net(ckpt)?.0,
        (None, Some(path)) => {
            let cfg = TrainConfig::from_pairs(&io::read_kv(path)?)?.manet_config();
            MaNet::new(cfg, a.seed)?
        }
        (None, None) => MaNet::new(MaNetConfig::default(), a.seed)?,
    };
    let cfg = *net.config();
    let (hf, wf) = parse_extent(&a.extent)?;
    echo(&[
        pair("command", "inspect"),
        pair("channels", format!("{},{},{}", cfg.channels[0], cfg.channels[1], cfg.channels[2])),
        pair("split", cfg.split),
        pair("scale", cfg.scale),
        pair("in_channels", cfg.in_channels),
        pair("extent", format!("{hf}x{wf}")),
        pair("seed", a.seed),
    ]);

    println!("\nparameters by layer (weights only):");
    let weights = count_params(net.params(), false);
    for (name, n) in weights.entries() {
        println!("  {name:<28} {n:>12}");
    }
    let flops = count_flops(&net, hf, wf)?;
    println!("flops by stage at {hf}x{wf}:");
    for (name, n) in flops.entries() {
        println!("  {name:<28} {n:>12}");
    }
    let (rf_h, rf_w) = receptive_field_analytic(&main_path(&cfg));
    let probe = receptive_field_probe(&net)?;
    println!("mutual affine conv at 128 channels, 2 splits: {} weights", maconv_param_formula(128, 128, 2)?);
    println!("plain 3x3 conv at 128 channels: {} weights", plain_conv_params(128, 128, 3));
    println!();
    echo(&[
        pair("params_total", count_params(net.params(), true).total()),
        pair("params_weights", weights.total()),
        pair(format!("flops_at_{hf}x{wf}").as_str(), flops.total()),
        pair("receptive_field_h", rf_h),
        pair("receptive_field_w", rf_w),
        pair("probe_support_h", probe.support.0),
        pair("probe_support_w", probe.support.1),
        pair("probe_low_coverage", probe.low_coverage),
    ]);
    Ok(())
}

fn parse_extent(spec: &str) -> Result<(usize, usize)> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Argument(format!("cannot parse extent {spec:?}")))
    };
    match spec.split_once('x') {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => Err(Error::Argument(format!(
            "extent must look like 256x256, got {spec:?}"
        ))),
    }
}

#[derive(Args)]
struct VizArgs {
    /// MANT kernel, MANT kernel map, or image to render.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// For kernel maps: render the kernel at HR site `r,c` instead of a
    /// grid of sites.
    #[arg(long)]
    site: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_viz(a: &VizArgs) -> Result<()> {
    let ext = a
        .input
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let mut pairs = vec![
        pair("command", "viz"),
        pair("input", a.input.display()),
        pair("out", a.out.display()),
        pair("seed", a.seed),
    ];
    let rendered = if ext == "mant" {
        let m = io::read_mant(&a.input)?;
        match m.dims.as_slice() {
            [s1, s2] if s1 == s2 => {
                pairs.push(pair("kind", "kernel"));
                let taps = match &m.data {
                    MantData::F32(v) => v.iter().map(|&x| x as f64).collect(),
                    MantData::F64(v) => v.clone(),
                };
                render::kernel_tile(&Kernel::from_taps(*s1 as usize, taps)?)
            }
            [_, c, _, _] if (*c as f64).sqrt().fract() == 0.0 && *c > 1 => {
                let size = (*c as f64).sqrt() as usize;
                let map = KernelMap::from_tensor(&m.to_tensor::<f64>()?, size)?;
                match &a.site {
                    Some(spec) => {
                        let (r, c) = parse_site(spec)?;
                        pairs.push(pair("kind", format!("kernel at {r},{c}")));
                        render::kernel_tile(&map.kernel_at(r, c)?)
                    }
                    None => {
                        pairs.push(pair("kind", "kernel map grid"));
                        render::map_grid(&map, 3, 3)?
                    }
                }
            }
            dims => {
                return Err(Error::Argument(format!(
                    "no rendering for a tensor of extents {dims:?}"
                )))
            }
        }
    } else {
        pairs.push(pair("kind", "image"));
        let img = io::read_image(&a.input)?;
        if img.channels() == 1 { img } else { img.to_luminance() }
    };
    echo(&pairs);
    io::write_pgm(&a.out, &rendered)?;
    io::write_sidecar(&a.out, &pairs)?;
    Ok(())
}

fn parse_site(spec: &str) -> Result<(usize, usize)> {
    let err = || Error::Argument(format!("site must look like r,c, got {spec:?}"));
    let (r, c) = spec.split_once(',').ok_or_else(err)?;
    Ok((
        r.trim().parse().map_err(|_| err())?,
        c.trim().parse().map_err(|_| err())?,
    ))
}
