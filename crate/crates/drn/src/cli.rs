//! Command-line entry point: train | eval | upscale | ablate | bounds |
//! gradcheck | synth. Exit code 0 on success, 1 on usage errors, 2 on
//! runtime errors.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bounds::{
    bound_rademacher, empirical_error, empirical_rademacher, BoundVariant, LossTable,
    RademacherMode,
};
use crate::error::{Error, Result};
use crate::imaging::{load_image, save_image};
use crate::losses::{loss_dual, loss_gp, loss_gs, loss_mae, loss_mse, LossKind, LossTag};
use crate::metrics::{ChannelMode, EvalConfig};
use crate::model::{load_checkpoint, save_checkpoint, DrnModel};
use crate::tensor::{grad_check_params, stream_rng, Shape, Tape, Tensor};
use crate::train::{
    ablate, ablation_table, evaluate, objective, synthetic_texture, train_loop, upscale, Dataset,
    TrainConfig,
};

use rand::Rng;

#[derive(Parser)]
#[command(
    name = "drn",
    about = "Dual reconstruction networks for image super-resolution",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.log plus final.drn
    Train(TrainArgs),
    /// Score a checkpoint against a folder of HR images
    Eval(EvalArgs),
    /// Super-resolve a single image
    Upscale(UpscaleArgs),
    /// Train the four ablation cells and print the comparison table
    Ablate(AblateArgs),
    /// Evaluate generalization bounds for a loss table
    Bounds(BoundsArgs),
    /// Run the gradient-check suite and print max errors
    Gradcheck(GradcheckArgs),
    /// Write seeded synthetic texture images
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Paper,
    Toy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Channel {
    Luma,
    Rgb,
}

#[derive(Args)]
struct TrainArgs {
    /// Plain-text `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset the config and flags override
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// Upscaling factor (2, 4, or 8)
    #[arg(long)]
    scale: Option<usize>,
    /// RNG seed for init, batches, and synthetic data
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the dual cycle-consistency terms
    #[arg(long)]
    no_dual: bool,
    /// Supervise only the final level
    #[arg(long)]
    no_progressive: bool,
    /// Directory of HR training images (default: built-in synthetic textures)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory of HR validation images, scored at the eval cadence
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Output directory for metrics.log, checkpoints, and final.drn
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint to score
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of HR images
    #[arg(long)]
    data: PathBuf,
    /// Expected upscaling factor; must match the checkpoint
    #[arg(long)]
    scale: Option<usize>,
    /// Score on the BT.601 luma channel or on RGB
    #[arg(long, value_enum, default_value = "luma")]
    channel: Channel,
    /// Border pixels to shave before scoring (default: the scale)
    #[arg(long)]
    shave: Option<usize>,
}

#[derive(Args)]
struct UpscaleArgs {
    /// LR input image (PNG or binary PPM/PGM)
    input: PathBuf,
    /// Model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output PNG path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Plain-text `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset the config and flags override
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// Upscaling factor (2, 4, or 8)
    #[arg(long)]
    scale: Option<usize>,
    /// RNG seed shared by all four cells
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of HR training images (default: built-in synthetic textures)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory of HR eval images (default: held-out synthetic textures)
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Optional file to also write the table to
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Loss table file: first line `m M`, then one hypothesis row per line
    #[arg(long)]
    table: PathBuf,
    /// Confidence parameter in (0, 1]
    #[arg(long, default_value = "0.05")]
    delta: f64,
    /// Monte-Carlo draws when m is too large to enumerate
    #[arg(long, default_value = "100000")]
    draws: usize,
    /// Seed for Monte-Carlo sign vectors
    #[arg(long, default_value = "0")]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Finite-difference step
    #[arg(long, default_value = "1e-5")]
    eps: f64,
    /// Failure threshold on the max relative error
    #[arg(long, default_value = "1e-4")]
    tolerance: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of images to write
    #[arg(long, default_value = "16")]
    count: usize,
    /// Image side length in pixels
    #[arg(long, default_value = "96")]
    size: usize,
    /// Base seed; image i depends only on (seed, i)
    #[arg(long, default_value = "0")]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse argv and dispatch; returns the process exit code.
pub fn run_from<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("drn: {msg}");
            1
        }
        Err(CliError::Run(e)) => {
            eprintln!("drn: {e}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Upscale(a) => cmd_upscale(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

// ---------------------------------------------------------------------------
// Config files

const CONFIG_KEYS: &[&str] = &[
    "scale",
    "width",
    "n_res",
    "crop",
    "batch",
    "lambda",
    "lr",
    "lr_decay",
    "lr_interval",
    "iterations",
    "seed",
    "primal_loss",
    "dual_loss",
    "use_dual",
    "progressive",
    "checkpoint_every",
    "eval_every",
    "data_dir",
    "eval_dir",
    "out_dir",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("bad value {v:?} for config key `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "bad value {v:?} for config key `{key}` (want true/false)"
        ))),
    }
}

fn apply_config_line(cfg: &mut TrainConfig, key: &str, value: &str) -> CliResult<()> {
    match key {
        "scale" => cfg.scale = parse_num(key, value)?,
        "width" => cfg.width = parse_num(key, value)?,
        "n_res" => cfg.n_res = parse_num(key, value)?,
        "crop" => cfg.crop = parse_num(key, value)?,
        "batch" => cfg.batch = parse_num(key, value)?,
        "lambda" => cfg.lambda = parse_num(key, value)?,
        "lr" => cfg.lr_initial = parse_num(key, value)?,
        "lr_decay" => cfg.lr_decay = parse_num(key, value)?,
        "lr_interval" => cfg.lr_interval = parse_num(key, value)?,
        "iterations" => cfg.iterations = parse_num(key, value)?,
        "seed" => cfg.seed = parse_num(key, value)?,
        "primal_loss" => {
            cfg.primal_loss = value
                .parse::<LossTag>()
                .map_err(|e| CliError::Usage(e.to_string()))?
        }
        "dual_loss" => {
            cfg.dual_loss = value
                .parse::<LossTag>()
                .map_err(|e| CliError::Usage(e.to_string()))?
        }
        "use_dual" => cfg.use_dual = parse_bool(key, value)?,
        "progressive" => cfg.progressive = parse_bool(key, value)?,
        "checkpoint_every" => cfg.checkpoint_every = parse_num(key, value)?,
        "eval_every" => cfg.eval_every = parse_num(key, value)?,
        "data_dir" => cfg.data_dir = Some(PathBuf::from(value)),
        "eval_dir" => cfg.eval_dir = Some(PathBuf::from(value)),
        "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
        _ => {
            return Err(CliError::Usage(format!(
                "unknown config key `{key}`; valid keys: {}",
                CONFIG_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

fn load_config_file(cfg: &mut TrainConfig, path: &PathBuf) -> CliResult<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (idx, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected `key = value`, got {body:?}",
                path.display(),
                idx + 1
            ))
        })?;
        apply_config_line(cfg, key.trim(), value.trim())?;
    }
    Ok(())
}

fn build_config(
    preset: Preset,
    config: &Option<PathBuf>,
    scale: Option<usize>,
    seed: Option<u64>,
    no_dual: bool,
    no_progressive: bool,
) -> CliResult<TrainConfig> {
    let base_scale = scale.unwrap_or(4);
    let mut cfg = match preset {
        Preset::Paper => TrainConfig::paper(base_scale),
        Preset::Toy => TrainConfig::toy(base_scale),
    };
    if let Some(path) = config {
        load_config_file(&mut cfg, path)?;
    }
    if let Some(s) = scale {
        cfg.scale = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if no_dual {
        cfg.use_dual = false;
    }
    if no_progressive {
        cfg.progressive = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Built-in training data when no directory is given: seeded textures half
/// again as large as the crop, so crop positions vary.
fn default_dataset(cfg: &TrainConfig, hold_out: bool) -> Result<Dataset> {
    let size = cfg.crop + cfg.crop / 2;
    let (count, seed_salt) = if hold_out { (4, 0xe7a1) } else { (16, 0) };
    Dataset::synthetic(count, size, cfg.seed.wrapping_add(seed_salt))
}

fn dataset_from(dir: &Option<PathBuf>, cfg: &TrainConfig, hold_out: bool) -> Result<Dataset> {
    match dir {
        Some(d) => Dataset::from_dir(d),
        None => default_dataset(cfg, hold_out),
    }
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let mut cfg = build_config(
        a.preset,
        &a.config,
        a.scale,
        a.seed,
        a.no_dual,
        a.no_progressive,
    )?;
    if a.data.is_some() {
        cfg.data_dir = a.data.clone();
    }
    if a.eval_data.is_some() {
        cfg.eval_dir = a.eval_data.clone();
    }
    if a.out.is_some() {
        cfg.out_dir = a.out.clone();
    }
    if let Some(out) = &cfg.out_dir {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    }

    let dataset = dataset_from(&cfg.data_dir.clone(), &cfg, false)?;
    let eval_set = match &cfg.eval_dir {
        Some(d) => Some(Dataset::from_dir(d)?),
        None => None,
    };
    let model: DrnModel<f32> = cfg.build_model()?;
    eprintln!("training {model:?} on {} images", dataset.len());

    let eval_cfg = EvalConfig::luma(cfg.scale);
    let eval_every = cfg.eval_every;
    let records = train_loop(&model, &dataset, &cfg, |rec| {
        if (rec.iteration + 1) % 100 == 0 {
            eprintln!("{}", rec.line());
        }
        if eval_every > 0 && (rec.iteration + 1) % eval_every == 0 {
            if let Some(set) = &eval_set {
                match evaluate(&model, set, &eval_cfg) {
                    Ok(rep) => eprintln!(
                        "eval @ {}: psnr {:.4} (bicubic {:.4})",
                        rec.iteration + 1,
                        rep.mean.psnr,
                        rep.mean.psnr_bicubic
                    ),
                    Err(e) => eprintln!("eval @ {}: {e}", rec.iteration + 1),
                }
            }
        }
    })?;

    if let Some(out) = &cfg.out_dir {
        let mut log = String::new();
        for rec in &records {
            log.push_str(&rec.line());
            log.push('\n');
        }
        let log_path = out.join("metrics.log");
        fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
        save_checkpoint(&model, out.join("final.drn"))?;
        eprintln!("wrote {}", out.join("final.drn").display());
    }
    if let Some(set) = &eval_set {
        let report = evaluate(&model, set, &eval_cfg)?;
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    if let Some(s) = a.scale {
        if s != model.scale() {
            return Err(CliError::Run(Error::Contract(format!(
                "checkpoint is a {}x model, --scale says {s}",
                model.scale()
            ))));
        }
    }
    let shave = a.shave.unwrap_or(model.scale());
    let mode = match a.channel {
        Channel::Luma => ChannelMode::Luma,
        Channel::Rgb => ChannelMode::Rgb,
    };
    let eval_cfg = EvalConfig::new(mode, shave, 1.0)?;
    let dataset = Dataset::from_dir(&a.data)?;
    let report = evaluate(&model, &dataset, &eval_cfg)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_upscale(a: UpscaleArgs) -> CliResult<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let lr = load_image(&a.input)?;
    let sr = upscale(&model, &lr)?;
    save_image(&sr, &a.out)?;
    eprintln!(
        "{} ({}x{}) -> {} ({}x{})",
        a.input.display(),
        lr.width(),
        lr.height(),
        a.out.display(),
        sr.width(),
        sr.height()
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> CliResult<()> {
    let cfg = build_config(a.preset, &a.config, a.scale, a.seed, false, false)?;
    let train_set = dataset_from(&a.data.clone().or(cfg.data_dir.clone()), &cfg, false)?;
    let eval_set = dataset_from(&a.eval_data.clone().or(cfg.eval_dir.clone()), &cfg, true)?;
    let cells = ablate(&train_set, &eval_set, &cfg, &EvalConfig::luma(cfg.scale))?;
    let table = ablation_table(&cells);
    print!("{table}");
    if let Some(out) = &a.out {
        fs::write(out, table).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn cmd_bounds(a: BoundsArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.table).map_err(|e| Error::io(&a.table, e))?;
    let table = LossTable::parse(&text)?;
    println!("m = {}  M = {}", table.m(), table.bound());
    let mut best = (0usize, f64::INFINITY);
    for (h, row) in table.rows().iter().enumerate() {
        let e = empirical_error(row)?;
        println!("E_hat[{h}] = {e:.6}");
        if e < best.1 {
            best = (h, e);
        }
    }
    let (mode, label) = if table.m() <= 20 {
        (RademacherMode::Exhaustive, "exhaustive".to_string())
    } else {
        (
            RademacherMode::MonteCarlo {
                draws: a.draws,
                seed: a.seed,
            },
            format!("monte-carlo, {} draws", a.draws),
        )
    };
    let r_hat = empirical_rademacher(&table, mode)?;
    println!("R_hat = {r_hat:.6} ({label})");
    println!("delta = {}", a.delta);
    // Theorem 1 holds uniformly; report it for the empirically best row.
    let e_best = best.1;
    println!("best hypothesis: {} (E_hat = {e_best:.6})", best.0);
    let pop = bound_rademacher(
        e_best,
        r_hat,
        table.bound(),
        table.m(),
        a.delta,
        BoundVariant::Population,
    )?;
    let emp = bound_rademacher(
        e_best,
        r_hat,
        table.bound(),
        table.m(),
        a.delta,
        BoundVariant::Empirical,
    )?;
    println!("bound[population] = {pop:.6}");
    println!("bound[empirical] = {emp:.6}");
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let entries = gradcheck_suite(a.eps)?;
    let mut worst: f64 = 0.0;
    for (name, err) in &entries {
        println!("{name}: max rel err {err:.3e}");
        worst = worst.max(*err);
    }
    println!("worst: {worst:.3e} (tolerance {:.1e})", a.tolerance);
    if worst >= a.tolerance {
        return Err(CliError::Run(Error::Contract(format!(
            "gradient check failed: {worst:.3e} >= {:.1e}",
            a.tolerance
        ))));
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    if a.size < 16 {
        return Err(CliError::Usage("--size must be at least 16".into()));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for i in 0..a.count {
        let s = a
            .seed
            .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let img = synthetic_texture(a.size, s);
        let path = a.out.join(format!("synth{i:03}.png"));
        save_image(&img, &path)?;
    }
    eprintln!("wrote {} images to {}", a.count, a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Gradient-check suite

fn rand_tensor(shape: Shape, seed: u64, lo: f64, hi: f64, leaf: bool) -> Tensor<f64> {
    let mut rng = stream_rng(seed, 0x6763_6b73);
    let data: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect();
    if leaf {
        Tensor::leaf(data, shape).unwrap()
    } else {
        Tensor::constant(data, shape).unwrap()
    }
}

/// Autodiff vs central finite differences for every differentiable op and
/// loss, plus the full multi-scale objective on a small 2x model. Returns
/// (name, max relative error) per check.
pub fn gradcheck_suite(eps: f64) -> Result<Vec<(String, f64)>> {
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut check = |name: &str,
                     params: Vec<Tensor<f64>>,
                     f: &dyn Fn(&Tape<f64>) -> Result<Tensor<f64>>|
     -> Result<()> {
        let err = grad_check_params(f, &params, eps)?;
        out.push((name.to_string(), err));
        Ok(())
    };

    let s = Shape::new(2, 3, 6, 6);
    let a = rand_tensor(s, 1, -1.0, 1.0, true);
    let b = rand_tensor(s, 2, -1.0, 1.0, true);
    // keep relu/abs inputs away from the kink at zero
    let pos = rand_tensor(s, 3, 0.1, 1.0, true);
    let neg = rand_tensor(s, 4, -1.0, -0.1, true);

    check("add", vec![a.clone(), b.clone()], &|t| {
        let r = t.add(&a, &b)?;
        Ok(t.sum(&r))
    })?;
    check("sub", vec![a.clone(), b.clone()], &|t| {
        let r = t.sub(&a, &b)?;
        Ok(t.sum(&r))
    })?;
    check("mul", vec![a.clone(), b.clone()], &|t| {
        let r = t.mul(&a, &b)?;
        Ok(t.sum(&r))
    })?;
    check("scale", vec![a.clone()], &|t| {
        let r = t.scale(&a, -1.7);
        Ok(t.sum(&r))
    })?;
    check("relu", vec![pos.clone(), neg.clone()], &|t| {
        let r = t.relu(&t.add(&pos, &neg)?);
        Ok(t.mean(&r))
    })?;
    check("abs", vec![pos.clone(), neg.clone()], &|t| {
        let r = t.abs(&t.add(&pos, &neg)?);
        Ok(t.mean(&r))
    })?;
    check("mean", vec![a.clone()], &|t| Ok(t.mean(&a)))?;
    check("fwd_diff_x", vec![a.clone()], &|t| {
        let r = t.fwd_diff_x(&a);
        Ok(t.sum(&t.mul(&r, &r)?))
    })?;
    check("fwd_diff_y", vec![a.clone()], &|t| {
        let r = t.fwd_diff_y(&a);
        Ok(t.sum(&t.mul(&r, &r)?))
    })?;

    let x = rand_tensor(Shape::new(2, 3, 6, 6), 5, -1.0, 1.0, true);
    let w = rand_tensor(Shape::new(4, 3, 3, 3), 6, -0.5, 0.5, true);
    let bias = rand_tensor(Shape::new(1, 4, 1, 1), 7, -0.5, 0.5, true);
    check("conv2d", vec![x.clone(), w.clone(), bias.clone()], &|t| {
        let r = t.conv2d(&x, &w, &bias, 1, 1)?;
        Ok(t.sum(&t.mul(&r, &r)?))
    })?;

    let px = rand_tensor(Shape::new(1, 8, 4, 4), 8, -1.0, 1.0, true);
    check("pixel_shuffle", vec![px.clone()], &|t| {
        let r = t.pixel_shuffle(&px, 2)?;
        Ok(t.sum(&t.mul(&r, &r)?))
    })?;

    let img = Shape::new(2, 3, 8, 8);
    let reference = rand_tensor(img, 9, 0.0, 1.0, false);
    let pred = rand_tensor(img, 10, 0.0, 1.0, true);
    check("loss_mse", vec![pred.clone()], &|t| {
        loss_mse(t, &reference, &pred)
    })?;
    check("loss_mae", vec![pred.clone()], &|t| {
        loss_mae(t, &reference, &pred)
    })?;
    check("loss_g", vec![pred.clone()], &|t| {
        crate::losses::loss_gradient(t, &reference, &pred)
    })?;
    check("loss_gp", vec![pred.clone()], &|t| {
        loss_gp(t, &reference, &pred, 2.0)
    })?;
    check("loss_gs", vec![pred.clone()], &|t| {
        loss_gs(t, &reference, &pred, 2.0)
    })?;

    let lr_shape = Shape::new(1, 3, 8, 8);
    let hr_shape = Shape::new(1, 3, 16, 16);
    let xin = rand_tensor(lr_shape, 11, 0.0, 1.0, false);
    let y = rand_tensor(hr_shape, 12, 0.0, 1.0, false);
    let p_out = rand_tensor(hr_shape, 13, 0.0, 1.0, true);
    let d_out = rand_tensor(lr_shape, 14, 0.0, 1.0, true);
    let gs = LossKind::new(LossTag::Gs, 2.0)?;
    check("loss_dr", vec![p_out.clone(), d_out.clone()], &|t| {
        loss_dual(t, &xin, &y, &p_out, &d_out, gs, gs)
    })?;

    // full objective on a small 2x model: every parameter checked
    let model: DrnModel<f64> = crate::model::init_model(2, 4, 1, 42, true, true)?;
    let mx = rand_tensor(Shape::new(1, 3, 8, 8), 15, 0.0, 1.0, false);
    let my = rand_tensor(Shape::new(1, 3, 16, 16), 16, 0.0, 1.0, false);
    let targets = vec![my];
    check("objective_eq7", model.params(), &|t| {
        objective(t, &model, &mx, &targets, gs, gs)
    })?;

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn help_lists_subcommands() {
        let help = Cli::command().render_long_help().to_string();
        for sub in [
            "train",
            "eval",
            "upscale",
            "ablate",
            "bounds",
            "gradcheck",
            "synth",
        ] {
            assert!(help.contains(sub), "missing `{sub}` in help:\n{help}");
        }
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run_from(["drn", "frobnicate"]), 1);
        assert_eq!(run_from(["drn", "train", "--bogus-flag"]), 1);
        assert_eq!(run_from(["drn"]), 1);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run_from(["drn", "--help"]), 0);
        assert_eq!(run_from(["drn", "train", "--help"]), 0);
    }

    #[test]
    fn unknown_config_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, "iterations = 2\nbogus = 1\n").unwrap();
        let mut cfg = TrainConfig::toy(2);
        match load_config_file(&mut cfg, &path) {
            Err(CliError::Usage(msg)) => {
                assert!(msg.contains("bogus"));
                assert!(msg.contains("lr_interval"), "should list valid keys");
            }
            _ => panic!("expected usage error"),
        }
    }

    #[test]
    fn config_file_overrides_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(
            &path,
            "# comment\niterations = 7\nlambda = 0.5 # trailing comment\nprimal_loss = mae\nuse_dual = false\n",
        )
        .unwrap();
        let mut cfg = TrainConfig::toy(2);
        load_config_file(&mut cfg, &path).map_err(|_| "err").unwrap();
        assert_eq!(cfg.iterations, 7);
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.primal_loss, LossTag::Mae);
        assert!(!cfg.use_dual);
    }

    #[test]
    fn flags_override_config() {
        let cfg = build_config(Preset::Toy, &None, Some(2), Some(9), true, true)
            .map_err(|_| "err")
            .unwrap();
        assert_eq!(cfg.scale, 2);
        assert_eq!(cfg.seed, 9);
        assert!(!cfg.use_dual);
        assert!(!cfg.progressive);
    }

    #[test]
    fn bad_scale_flag_is_usage_error() {
        match build_config(Preset::Toy, &None, Some(3), None, false, false) {
            Err(CliError::Run(Error::Contract(_))) => {}
            Err(CliError::Usage(_)) => {}
            _ => panic!("scale 3 must be rejected"),
        }
    }

    #[test]
    fn synth_writes_images() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("synth");
        let code = run_from([
            "drn",
            "synth",
            "--count",
            "2",
            "--size",
            "24",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert!(out.join("synth000.png").exists());
        assert!(out.join("synth001.png").exists());
        let img = load_image(out.join("synth000.png")).unwrap();
        assert_eq!((img.height(), img.width()), (24, 24));
    }

    #[test]
    fn bounds_subcommand_matches_module() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        fs::write(&path, "1 1.0\n0\n1\n").unwrap();
        let code = run_from([
            "drn",
            "bounds",
            "--table",
            path.to_str().unwrap(),
            "--delta",
            "0.05",
        ]);
        assert_eq!(code, 0);
        // malformed table is a runtime error
        fs::write(&path, "oops\n").unwrap();
        let code = run_from(["drn", "bounds", "--table", path.to_str().unwrap()]);
        assert_eq!(code, 2);
    }
}
