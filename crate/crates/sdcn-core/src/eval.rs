//! Evaluation surfaces: SNR of input vs. denoised signals, and accuracy as a
//! function of noise level and polarization combination, exported as CSV.
//!
//! SNR is `10*log10(||x||_F^2 / ||x_hat - x||_F^2)` per channel, averaged
//! over channels in dB; an error norm below `1e-12 * ||x||` is reported as
//! the +120 dB cap.

use std::path::Path;

use crate::error::{Error, Result};
use crate::synth::{ClassLabel, Sample};
use crate::tensor::Tensor;

/// Classification/denoising method a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Sdcn,
    CnnOnly,
    SrcSm,
    SrcSingle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sdcn => "SDCN",
            Method::CnnOnly => "CNN_only",
            Method::SrcSm => "SRC_SM",
            Method::SrcSingle => "SRC_single",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sdcn" => Ok(Method::Sdcn),
            "cnn" | "cnn-only" | "cnn_only" => Ok(Method::CnnOnly),
            "src-sm" | "src_sm" => Ok(Method::SrcSm),
            "src-single" | "src_single" => Ok(Method::SrcSingle),
            other => Err(Error::Config(format!("unknown method '{}'", other))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Measured quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Accuracy,
    SnrInputDb,
    SnrDenoisedDb,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::SnrInputDb => "snr_input_db",
            Metric::SnrDenoisedDb => "snr_denoised_db",
        }
    }

    pub fn parse(s: &str) -> Result<Metric> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "snr_input_db" => Ok(Metric::SnrInputDb),
            "snr_denoised_db" => Ok(Metric::SnrDenoisedDb),
            other => Err(Error::Format(format!("unknown metric '{}'", other))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One measurement row of the result surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub method: Method,
    /// Polarization combination, e.g. "HH-VV".
    pub combo: String,
    pub lambda: f64,
    pub metric: Metric,
    pub value: f64,
    /// Sample count behind the value.
    pub n: usize,
}

/// dB cap reported when the error norm falls below `1e-12 * ||x||`.
pub const SNR_CAP_DB: f64 = 120.0;

/// Per-channel SNR in dB of an estimate against its reference.
pub fn snr_db_per_channel(reference: &Tensor, estimate: &Tensor) -> Result<Vec<f64>> {
    if reference.shape() != estimate.shape() {
        return Err(Error::Shape(format!(
            "snr shapes disagree: {:?} vs {:?}",
            reference.shape(),
            estimate.shape()
        )));
    }
    if reference.rank() != 3 {
        return Err(Error::Shape(format!(
            "snr expects [C,H,W] tensors, got {:?}",
            reference.shape()
        )));
    }
    let (c, h, w) = (
        reference.shape()[0],
        reference.shape()[1],
        reference.shape()[2],
    );
    let mut out = Vec::with_capacity(c);
    for ch in 0..c {
        let x = &reference.data()[ch * h * w..(ch + 1) * h * w];
        let e = &estimate.data()[ch * h * w..(ch + 1) * h * w];
        let sig: f64 = x.iter().map(|&v| v * v).sum();
        if sig <= 0.0 {
            return Err(Error::Numeric(format!(
                "zero reference signal in channel {}",
                ch
            )));
        }
        let err: f64 = x
            .iter()
            .zip(e.iter())
            .map(|(&a, &b)| (b - a) * (b - a))
            .sum();
        if err.sqrt() < 1e-12 * sig.sqrt() {
            out.push(SNR_CAP_DB);
        } else {
            out.push(10.0 * (sig / err).log10());
        }
    }
    Ok(out)
}

/// Channel-averaged SNR in dB.
pub fn snr_db(reference: &Tensor, estimate: &Tensor) -> Result<f64> {
    let per = snr_db_per_channel(reference, estimate)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// One test-set verdict, tagged with the sample's noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub truth: ClassLabel,
    pub predicted: ClassLabel,
    pub lambda: f64,
}

fn distinct_lambdas_sorted(lambdas: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for l in lambdas {
        if !out.iter().any(|&x| x == l) {
            out.push(l);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Fraction-correct records per noise level. Empty prediction lists produce
/// no records (the caller decides whether to warn).
pub fn accuracy_table(method: Method, combo: &str, predictions: &[Prediction]) -> Vec<EvalRecord> {
    let lambdas = distinct_lambdas_sorted(predictions.iter().map(|p| p.lambda));
    lambdas
        .into_iter()
        .map(|lambda| {
            let group: Vec<&Prediction> = predictions
                .iter()
                .filter(|p| p.lambda == lambda)
                .collect();
            let correct = group.iter().filter(|p| p.truth == p.predicted).count();
            EvalRecord {
                method,
                combo: combo.to_string(),
                lambda,
                metric: Metric::Accuracy,
                value: correct as f64 / group.len() as f64,
                n: group.len(),
            }
        })
        .collect()
}

/// Mean input and denoised SNR per noise level, for any decomposer.
pub fn snr_table<F>(
    method: Method,
    combo: &str,
    samples: &[&Sample],
    mut decompose: F,
) -> Result<Vec<EvalRecord>>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let lambdas = distinct_lambdas_sorted(samples.iter().map(|s| s.lambda));
    let mut records = Vec::new();
    for lambda in lambdas {
        let group: Vec<&&Sample> = samples.iter().filter(|s| s.lambda == lambda).collect();
        let mut input_sum = 0.0;
        let mut denoised_sum = 0.0;
        for s in &group {
            input_sum += snr_db(&s.clean, &s.noisy)?;
            let x_bar = decompose(&s.noisy)?;
            denoised_sum += snr_db(&s.clean, &x_bar)?;
        }
        let n = group.len();
        records.push(EvalRecord {
            method,
            combo: combo.to_string(),
            lambda,
            metric: Metric::SnrInputDb,
            value: input_sum / n as f64,
            n,
        });
        records.push(EvalRecord {
            method,
            combo: combo.to_string(),
            lambda,
            metric: Metric::SnrDenoisedDb,
            value: denoised_sum / n as f64,
            n,
        });
    }
    Ok(records)
}

fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| {
        a.method
            .name()
            .cmp(b.method.name())
            .then(a.combo.cmp(&b.combo))
            .then(a.lambda.partial_cmp(&b.lambda).unwrap())
            .then(a.metric.name().cmp(b.metric.name()))
    });
}

/// Serializes records to CSV: fixed header, 9 significant digits, rows
/// sorted by (method, combo, lambda, metric). Byte-deterministic.
pub fn export_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = String::from("method,combo,lambda,metric,value,n\n");
    for r in &sorted {
        out.push_str(&format!(
            "{},{},{},{},{:.8e},{}\n",
            r.method, r.combo, r.lambda, r.metric, r.value, r.n
        ));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a CSV written by [`export_csv`].
pub fn parse_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("method,combo,lambda,metric,value,n") => {}
        other => {
            return Err(Error::Format(format!(
                "{}: bad CSV header {:?}",
                path.display(),
                other
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!(
                "{}: row {} has {} fields",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Format(format!("{}: row {}: bad {}", path.display(), i + 2, what));
        records.push(EvalRecord {
            method: Method::parse(fields[0])?,
            combo: fields[1].to_string(),
            lambda: fields[2].parse().map_err(|_| bad("lambda"))?,
            metric: Metric::parse(fields[3])?,
            value: fields[4].parse().map_err(|_| bad("value"))?,
            n: fields[5].parse().map_err(|_| bad("n"))?,
        });
    }
    Ok(records)
}
