use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;

use sdcn_core::presets;
use sdcn_core::storage;
use sdcn_core::synth::{build_test_set, build_training_set, Pol};

use crate::config::layered;
use crate::{Common, Ctx};

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,

    /// Parameter preset: `paper` (10,000/class, 100 test angles, 32x32) or
    /// `desk` (1,000/class, 20 test angles, 16x16)
    #[arg(long, default_value = "desk")]
    pub preset: String,

    /// Training samples per class (overrides preset)
    #[arg(long)]
    pub n_per_class: Option<usize>,

    /// Random test aspect angles per object class (overrides preset)
    #[arg(long)]
    pub test_angles: Option<usize>,

    /// Chip side length in pixels (overrides preset)
    #[arg(long)]
    pub chip: Option<usize>,

    /// Polarizations to render, e.g. HH-HV-VV
    #[arg(long)]
    pub channels: Option<String>,

    /// Training mixture lower bound (overrides preset)
    #[arg(long)]
    pub lambda_min: Option<f64>,

    /// Training mixture upper bound (overrides preset)
    #[arg(long)]
    pub lambda_max: Option<f64>,

    /// Ground smoothing width, pixels (overrides preset)
    #[arg(long)]
    pub ground_corr: Option<f64>,

    /// Training container filename within the output directory
    #[arg(long, default_value = "train.sdcd")]
    pub train_out: PathBuf,

    /// Test container filename within the output directory
    #[arg(long, default_value = "test.sdcd")]
    pub test_out: PathBuf,
}

pub fn run(ctx: &Ctx, args: &GenDataArgs) -> Result<()> {
    let preset = layered(
        Some(args.preset.clone()),
        &ctx.cfg,
        "preset",
        "desk".to_string(),
    )?;
    let mut gen = match preset.as_str() {
        "paper" => presets::paper_gen(ctx.seed),
        "desk" => presets::desk_gen(ctx.seed),
        other => bail!("unknown preset '{}' (expected paper or desk)", other),
    };
    gen.n_per_class = layered(args.n_per_class, &ctx.cfg, "n_per_class", gen.n_per_class)?;
    gen.test_angles = layered(args.test_angles, &ctx.cfg, "test_angles", gen.test_angles)?;
    let chip = layered(args.chip, &ctx.cfg, "chip", gen.chip_h)?;
    gen.chip_h = chip;
    gen.chip_w = chip;
    gen.lambda_range.0 = layered(args.lambda_min, &ctx.cfg, "lambda_min", gen.lambda_range.0)?;
    gen.lambda_range.1 = layered(args.lambda_max, &ctx.cfg, "lambda_max", gen.lambda_range.1)?;
    gen.ground_corr = layered(args.ground_corr, &ctx.cfg, "ground_corr", gen.ground_corr)?;
    let channels = match args
        .channels
        .clone()
        .or_else(|| ctx.cfg.get_str("channels").map(String::from))
    {
        Some(s) => Pol::parse_combo(&s)?,
        None => gen.channels.clone(),
    };
    gen.channels = channels;

    let train_path = ctx.out_dir.join(&args.train_out);
    let test_path = ctx.out_dir.join(&args.test_out);

    let train = build_training_set(&gen)?;
    storage::save_dataset(&train, &train_path)?;
    let test = build_test_set(&gen)?;
    storage::save_dataset(&test, &test_path)?;

    println!("{}", storage::describe(&train_path)?);
    println!("{}", storage::describe(&test_path)?);
    Ok(())
}
