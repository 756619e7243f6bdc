use anyhow::{bail, Result};
use clap::Args;

use sdcn_core::gradcheck::{
    check_conv2d, check_end_to_end, check_linear, check_maxpool, check_relu,
    check_softmax_cross_entropy,
};
use sdcn_core::layers::Padding;

use crate::config::layered;
use crate::{Common, Ctx};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,

    /// Comma-separated layer subset: conv2d, linear, relu, maxpool, softmax,
    /// end-to-end (default: all)
    #[arg(long)]
    pub layers: Option<String>,

    /// Central-difference step
    #[arg(long)]
    pub step: Option<f64>,

    /// Random instances per layer
    #[arg(long)]
    pub rounds: Option<u64>,
}

const LAYER_THRESHOLD: f64 = 1e-4;
const END_TO_END_THRESHOLD: f64 = 1e-3;

pub fn run(ctx: &Ctx, args: &GradcheckArgs) -> Result<()> {
    let step = layered(args.step, &ctx.cfg, "step", 1e-4)?;
    let rounds = layered(args.rounds, &ctx.cfg, "rounds", 20)?;
    let all = "conv2d,linear,relu,maxpool,softmax,end-to-end".to_string();
    let layers = layered(args.layers.clone(), &ctx.cfg, "layers", all)?;

    let worst_over = |f: &dyn Fn(u64) -> f64| -> f64 {
        (0..rounds)
            .map(|r| f(ctx.seed.wrapping_add(r)))
            .fold(0.0, f64::max)
    };

    let mut failures = 0usize;
    let mut report = |name: &str, err: f64, threshold: f64| {
        let ok = err < threshold;
        println!(
            "{} {:24} max rel error {:.3e} (threshold {:.0e})",
            if ok { "PASS" } else { "FAIL" },
            name,
            err,
            threshold
        );
        if !ok {
            failures += 1;
        }
    };

    for layer in layers.split(',') {
        match layer.trim() {
            "conv2d" => {
                report(
                    "conv2d (same)",
                    worst_over(&|s| check_conv2d(Padding::Same, s, step)),
                    LAYER_THRESHOLD,
                );
                report(
                    "conv2d (valid)",
                    worst_over(&|s| check_conv2d(Padding::Valid, s, step)),
                    LAYER_THRESHOLD,
                );
            }
            "linear" => report("linear", worst_over(&|s| check_linear(s, step)), LAYER_THRESHOLD),
            "relu" => report("relu", worst_over(&|s| check_relu(s, step)), LAYER_THRESHOLD),
            "maxpool" => report(
                "maxpool2x2",
                worst_over(&|s| check_maxpool(s, step)),
                LAYER_THRESHOLD,
            ),
            "softmax" => report(
                "softmax+cross-entropy",
                worst_over(&|s| check_softmax_cross_entropy(s, step)),
                LAYER_THRESHOLD,
            ),
            "end-to-end" | "end_to_end" => {
                // The full-network check is heavier; a few seeds suffice.
                let n = rounds.min(3);
                let err = (0..n)
                    .map(|r| check_end_to_end(ctx.seed.wrapping_add(r), step))
                    .fold(0.0, f64::max);
                report("end-to-end joint loss", err, END_TO_END_THRESHOLD);
            }
            other => bail!("unknown layer '{}' for gradcheck", other),
        }
    }

    if failures > 0 {
        bail!("{} gradient check(s) above threshold", failures);
    }
    Ok(())
}
