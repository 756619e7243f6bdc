use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use sdcn_core::eval::{accuracy_table, snr_table, EvalRecord, Method, Prediction};
use sdcn_core::model::{decompose, predict_label};
use sdcn_core::presets;
use sdcn_core::src_baseline::{build_reference_dictionary, src_classify_batch};
use sdcn_core::storage;
use sdcn_core::svg::{render_svg, AxesSpec};
use sdcn_core::synth::{Chip, ClassLabel, Dataset, Pol};
use sdcn_core::Metric;

use crate::config::layered;
use crate::{Common, Ctx};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,

    /// Test dataset container
    #[arg(long)]
    pub test: PathBuf,

    /// Directory holding checkpoints named {sdcn|cnn}_{combo}.sdcn
    /// (default: the output directory)
    #[arg(long)]
    pub models: Option<PathBuf>,

    /// Comma-separated methods: sdcn, cnn, src-sm, src-single
    #[arg(long, default_value = "sdcn")]
    pub methods: String,

    /// Comma-separated polarization combos, e.g. HH,HH-VV,HH-HV-VV
    /// (default: the test set's full channel list)
    #[arg(long)]
    pub combos: Option<String>,

    /// Sparsity budget for the SRC solvers
    #[arg(long)]
    pub src_k: Option<usize>,

    /// Residual tolerance for the SRC solvers
    #[arg(long)]
    pub src_tol: Option<f64>,

    /// Ground atoms in the SRC dictionary
    #[arg(long)]
    pub src_grounds: Option<usize>,

    /// Ground smoothing width used for dictionary ground atoms
    #[arg(long)]
    pub ground_corr: Option<f64>,
}

fn nn_predictions(
    params: &sdcn_core::NetworkParams,
    test: &Dataset,
) -> Result<Vec<Prediction>> {
    use rayon::prelude::*;
    let preds: sdcn_core::Result<Vec<Prediction>> = test
        .samples
        .par_iter()
        .map(|s| {
            let predicted = ClassLabel::from_index(predict_label(params, &s.noisy)?)?;
            Ok(Prediction {
                truth: s.label,
                predicted,
                lambda: s.lambda,
            })
        })
        .collect();
    Ok(preds?)
}

pub fn run(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let test_full = storage::load_dataset(&args.test)
        .with_context(|| format!("loading test data {}", args.test.display()))?;

    let methods_str = layered(
        Some(args.methods.clone()),
        &ctx.cfg,
        "methods",
        "sdcn".to_string(),
    )?;
    let methods: Vec<Method> = methods_str
        .split(',')
        .map(Method::parse)
        .collect::<sdcn_core::Result<_>>()?;
    if methods.is_empty() {
        bail!("no methods requested");
    }

    let combos: Vec<Vec<Pol>> = match args
        .combos
        .clone()
        .or_else(|| ctx.cfg.get_str("combos").map(String::from))
    {
        Some(s) => s
            .split(',')
            .map(Pol::parse_combo)
            .collect::<sdcn_core::Result<_>>()?,
        None => vec![test_full.channels.clone()],
    };

    let models_dir = args.models.clone().unwrap_or_else(|| ctx.out_dir.clone());
    let src_k = layered(args.src_k, &ctx.cfg, "src_k", 8)?;
    let src_tol = layered(args.src_tol, &ctx.cfg, "src_tol", 1e-6)?;
    let src_grounds = layered(args.src_grounds, &ctx.cfg, "src_grounds", 60)?;
    let ground_corr = layered(args.ground_corr, &ctx.cfg, "ground_corr", presets::GROUND_CORR)?;

    let mut records: Vec<EvalRecord> = Vec::new();
    for combo in &combos {
        let combo_name = Pol::combo_name(combo);
        let test = test_full.select_channels(combo)?;
        for &method in &methods {
            match method {
                Method::Sdcn | Method::CnnOnly => {
                    let prefix = if method == Method::Sdcn { "sdcn" } else { "cnn" };
                    let path = models_dir.join(format!("{}_{}.sdcn", prefix, combo_name));
                    let params = storage::load_model(&path).with_context(|| {
                        format!("loading checkpoint for {} {}", method.name(), combo_name)
                    })?;
                    if params.config.channels != combo.len() {
                        bail!(
                            "checkpoint {} expects {} channel(s) but combo {} has {}",
                            path.display(),
                            params.config.channels,
                            combo_name,
                            combo.len()
                        );
                    }
                    if params.config.chip_h != test.chip_h || params.config.chip_w != test.chip_w {
                        bail!(
                            "checkpoint {} expects {}x{} chips but the test set is {}x{}",
                            path.display(),
                            params.config.chip_h,
                            params.config.chip_w,
                            test.chip_h,
                            test.chip_w
                        );
                    }
                    let preds = nn_predictions(&params, &test)?;
                    records.extend(accuracy_table(method, &combo_name, &preds));
                    if method == Method::Sdcn {
                        let samples: Vec<&sdcn_core::Sample> = test.samples.iter().collect();
                        records.extend(snr_table(method, &combo_name, &samples, |noisy| {
                            decompose(&params, noisy)
                        })?);
                    }
                }
                Method::SrcSm | Method::SrcSingle => {
                    let dict = build_reference_dictionary(
                        combo,
                        test.chip_h,
                        test.chip_w,
                        src_grounds,
                        ground_corr,
                        ctx.seed,
                    )?;
                    let chips: Vec<Chip> = test
                        .samples
                        .iter()
                        .map(|s| Chip {
                            channels: combo.clone(),
                            data: s.noisy.clone(),
                        })
                        .collect();
                    let results = src_classify_batch(
                        &dict,
                        &chips,
                        src_k,
                        src_tol,
                        method == Method::SrcSm,
                    )?;
                    let preds: Vec<Prediction> = test
                        .samples
                        .iter()
                        .zip(results.iter())
                        .map(|(s, r)| Prediction {
                            truth: s.label,
                            predicted: r.label,
                            lambda: s.lambda,
                        })
                        .collect();
                    records.extend(accuracy_table(method, &combo_name, &preds));
                }
            }
            println!("evaluated {} on {}", method.name(), combo_name);
        }
    }

    if records.is_empty() {
        bail!("evaluation produced no records (empty test set?)");
    }

    let csv_path = ctx.out_dir.join("results.csv");
    sdcn_core::eval::export_csv(&records, &csv_path)?;
    println!("wrote {}", csv_path.display());

    let acc_records: Vec<EvalRecord> = records
        .iter()
        .filter(|r| r.metric == Metric::Accuracy)
        .cloned()
        .collect();
    if !acc_records.is_empty() {
        let path = ctx.out_dir.join("accuracy.svg");
        render_svg(
            &acc_records,
            &AxesSpec {
                title: "Classification accuracy vs. noise level".into(),
                x_label: "noise level lambda".into(),
                y_label: "accuracy".into(),
                y_min: Some(0.0),
                y_max: Some(1.0),
            },
            &path,
        )?;
        println!("wrote {}", path.display());
    }

    let snr_records: Vec<EvalRecord> = records
        .iter()
        .filter(|r| matches!(r.metric, Metric::SnrInputDb | Metric::SnrDenoisedDb))
        .cloned()
        .collect();
    if !snr_records.is_empty() {
        let path = ctx.out_dir.join("snr.svg");
        render_svg(
            &snr_records,
            &AxesSpec {
                title: "SNR of input and denoised signals".into(),
                x_label: "noise level lambda".into(),
                y_label: "SNR (dB)".into(),
                y_min: None,
                y_max: None,
            },
            &path,
        )?;
        println!("wrote {}", path.display());
    } else {
        eprintln!("note: no SNR records (sdcn not among the requested methods); snr.svg skipped");
    }
    Ok(())
}
