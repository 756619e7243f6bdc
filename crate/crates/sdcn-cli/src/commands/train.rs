use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use sdcn_core::optim::OptKind;
use sdcn_core::presets;
use sdcn_core::storage;
use sdcn_core::synth::Pol;
use sdcn_core::train::{train_with_progress, EpochStats, TrainMode};
use sdcn_core::{NetworkConfig, TrainConfig};

use crate::config::layered;
use crate::{Common, Ctx};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,

    /// Training dataset container
    #[arg(long)]
    pub data: PathBuf,

    /// Objective: sdcn (joint), cnn-only (cross-entropy ablation), two-step
    #[arg(long, default_value = "sdcn")]
    pub mode: String,

    /// Architecture preset: `paper` (D1=10, D2=3, 64 filters, 512/128) or
    /// `desk` (slim). Chip size and channels always come from the dataset.
    #[arg(long, default_value = "desk")]
    pub net_preset: String,

    /// Polarization subset to train on, e.g. HH-VV (default: all channels
    /// in the dataset)
    #[arg(long)]
    pub combo: Option<String>,

    #[arg(long)]
    pub d1: Option<usize>,
    #[arg(long)]
    pub d2: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub fc1: Option<usize>,
    #[arg(long)]
    pub fc2: Option<usize>,
    /// Joint-loss weight on the cross-entropy term
    #[arg(long)]
    pub gamma: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// sgd | momentum | adam
    #[arg(long)]
    pub optimizer: Option<String>,

    /// Checkpoint filename (default: {mode}_{combo}.sdcn)
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,

    /// Per-epoch loss/accuracy CSV filename (default: history_{mode}_{combo}.csv)
    #[arg(long)]
    pub history_out: Option<PathBuf>,
}

fn mode_prefix(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Sdcn => "sdcn",
        TrainMode::CnnOnly => "cnn",
        TrainMode::TwoStep => "twostep",
    }
}

fn write_history_row(file: &mut File, e: &EpochStats) -> std::io::Result<()> {
    writeln!(
        file,
        "{},{:.8e},{:.8e},{:.8e},{:.8e}",
        e.epoch, e.l1, e.l2, e.total, e.train_acc
    )
}

pub fn run(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let mode: TrainMode = layered(
        Some(args.mode.clone()),
        &ctx.cfg,
        "mode",
        "sdcn".to_string(),
    )?
    .parse()
    .map_err(anyhow::Error::msg)?;

    let dataset = storage::load_dataset(&args.data)
        .with_context(|| format!("loading training data {}", args.data.display()))?;
    let combo = match args
        .combo
        .clone()
        .or_else(|| ctx.cfg.get_str("combo").map(String::from))
    {
        Some(s) => Pol::parse_combo(&s)?,
        None => dataset.channels.clone(),
    };
    let dataset = dataset.select_channels(&combo)?;
    let combo_name = Pol::combo_name(&combo);

    let net_preset = layered(
        Some(args.net_preset.clone()),
        &ctx.cfg,
        "net_preset",
        "desk".to_string(),
    )?;
    let base = match net_preset.as_str() {
        "paper" => presets::paper_net(combo.len()),
        "desk" => presets::desk_net(combo.len()),
        other => bail!("unknown net preset '{}' (expected paper or desk)", other),
    };
    let net = NetworkConfig {
        d1: layered(args.d1, &ctx.cfg, "d1", base.d1)?,
        d2: layered(args.d2, &ctx.cfg, "d2", base.d2)?,
        channels: combo.len(),
        chip_h: dataset.chip_h,
        chip_w: dataset.chip_w,
        filters: layered(args.filters, &ctx.cfg, "filters", base.filters)?,
        fc1: layered(args.fc1, &ctx.cfg, "fc1", base.fc1)?,
        fc2: layered(args.fc2, &ctx.cfg, "fc2", base.fc2)?,
        classes: 2,
        gamma: layered(args.gamma, &ctx.cfg, "gamma", base.gamma)?,
    };
    net.validate()?;

    let optimizer: OptKind = layered(
        args.optimizer.clone(),
        &ctx.cfg,
        "optimizer",
        "adam".to_string(),
    )?
    .parse()
    .map_err(anyhow::Error::msg)?;
    let train_defaults = match net_preset.as_str() {
        "paper" => presets::paper_train(ctx.seed),
        _ => presets::desk_train(ctx.seed),
    };
    let tc = TrainConfig {
        epochs: layered(args.epochs, &ctx.cfg, "epochs", train_defaults.epochs)?,
        batch_size: layered(args.batch_size, &ctx.cfg, "batch_size", train_defaults.batch_size)?,
        learning_rate: layered(args.lr, &ctx.cfg, "lr", train_defaults.learning_rate)?,
        optimizer,
        seed: ctx.seed,
        gamma: None,
    };

    let checkpoint_path = ctx.out_dir.join(args.checkpoint_out.clone().unwrap_or_else(|| {
        PathBuf::from(format!("{}_{}.sdcn", mode_prefix(mode), combo_name))
    }));
    let history_path = ctx.out_dir.join(args.history_out.clone().unwrap_or_else(|| {
        PathBuf::from(format!("history_{}_{}.csv", mode_prefix(mode), combo_name))
    }));

    println!(
        "training {} on {} ({} samples, combo {}, {} epochs, {} params)",
        mode_prefix(mode),
        args.data.display(),
        dataset.samples.len(),
        combo_name,
        tc.epochs,
        sdcn_core::model::init_params(&net, 0)?.scalar_count(),
    );

    // History streams to disk per epoch so a divergence abort preserves the
    // rows written so far.
    let mut history_file = File::create(&history_path)
        .with_context(|| format!("creating {}", history_path.display()))?;
    writeln!(history_file, "epoch,l1,l2,total,train_acc")?;

    let items = dataset.train_items();
    let outcome = train_with_progress(&items, &net, &tc, mode, |e| {
        let _ = write_history_row(&mut history_file, e);
        println!(
            "epoch {:3}: total {:.6} l1 {:.6} l2 {:.6} train_acc {:.4}",
            e.epoch, e.total, e.l1, e.l2, e.train_acc
        );
    });
    history_file.flush()?;

    match outcome {
        Ok((params, history)) => {
            storage::save_model(&params, &checkpoint_path)?;
            let last = history.last().expect("nonempty history");
            println!(
                "done: final total {:.6} (l1 {:.6}, l2 {:.6}), train accuracy {:.4}",
                last.total, last.l1, last.l2, last.train_acc
            );
            println!("checkpoint: {}", checkpoint_path.display());
            println!("history:    {}", history_path.display());
            Ok(())
        }
        Err(e) => {
            // Partial history is already on disk.
            Err(e).with_context(|| {
                format!(
                    "training aborted; partial history preserved at {}",
                    history_path.display()
                )
            })
        }
    }
}
