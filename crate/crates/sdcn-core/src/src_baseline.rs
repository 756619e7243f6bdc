//! Sparse-representation classification with a shared ground dictionary.
//!
//! Training chips are vectorized per channel into a single dictionary
//! `D = [Dt | Dc | Dg]` with unit-norm columns. A noisy signal is sparse-coded
//! over the whole dictionary (greedy OMP, or SOMP with one support shared
//! across channels), the ground block's contribution is subtracted
//! (`x_bar = x_tilde - Dg * a_g`), and the class with the smaller remaining
//! residual wins; ties go to the target class.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeds;
use crate::synth::{
    make_ground_chip, make_object_chip, standard_templates, Chip, ClassLabel, GroundModel, Pol,
    TRAIN_ANGLES,
};
use crate::tensor::Tensor;

/// Column-normalized atom sets, one matrix per channel.
///
/// Atoms are stored as rows of an `[n_atoms, dim]` tensor so each atom is
/// contiguous; `dim = chip_h * chip_w`. Block order is targets, confusers,
/// grounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub channels: Vec<Pol>,
    pub chip_h: usize,
    pub chip_w: usize,
    pub n_targets: usize,
    pub n_confusers: usize,
    pub n_grounds: usize,
    atoms_by_channel: Vec<Tensor>,
}

impl Dictionary {
    pub fn n_atoms(&self) -> usize {
        self.n_targets + self.n_confusers + self.n_grounds
    }

    pub fn dim(&self) -> usize {
        self.chip_h * self.chip_w
    }

    /// Contiguous column index ranges of the target/confuser/ground blocks.
    pub fn block_ranges(&self) -> (Range<usize>, Range<usize>, Range<usize>) {
        let t = 0..self.n_targets;
        let c = self.n_targets..self.n_targets + self.n_confusers;
        let g = self.n_targets + self.n_confusers..self.n_atoms();
        (t, c, g)
    }

    /// Atom `j` of channel `ch`.
    pub fn atom(&self, ch: usize, j: usize) -> &[f64] {
        let dim = self.dim();
        &self.atoms_by_channel[ch].data()[j * dim..(j + 1) * dim]
    }

    /// Assembles a dictionary from pre-normalized per-channel atom matrices.
    /// Column norms and block arithmetic are validated.
    pub fn from_parts(
        channels: Vec<Pol>,
        chip_h: usize,
        chip_w: usize,
        n_targets: usize,
        n_confusers: usize,
        n_grounds: usize,
        atoms_by_channel: Vec<Tensor>,
    ) -> Result<Dictionary> {
        if channels.is_empty() || channels.len() != atoms_by_channel.len() {
            return Err(Error::Config(format!(
                "dictionary needs one atom matrix per channel ({} channels, {} matrices)",
                channels.len(),
                atoms_by_channel.len()
            )));
        }
        let n_atoms = n_targets + n_confusers + n_grounds;
        let dim = chip_h * chip_w;
        for (ch, atoms) in atoms_by_channel.iter().enumerate() {
            if atoms.shape() != [n_atoms, dim] {
                return Err(Error::Shape(format!(
                    "channel {} atom matrix is {:?}, expected [{}, {}]",
                    ch,
                    atoms.shape(),
                    n_atoms,
                    dim
                )));
            }
            for j in 0..n_atoms {
                let norm: f64 = atoms.data()[j * dim..(j + 1) * dim]
                    .iter()
                    .map(|&v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::Numeric(format!(
                        "channel {} atom {} has norm {}, expected 1",
                        ch, j, norm
                    )));
                }
            }
        }
        Ok(Dictionary {
            channels,
            chip_h,
            chip_w,
            n_targets,
            n_confusers,
            n_grounds,
            atoms_by_channel,
        })
    }

    pub(crate) fn atom_matrices(&self) -> &[Tensor] {
        &self.atoms_by_channel
    }
}

fn vectorize_block(chips: &[Chip], channels: &[Pol], dim: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    // Returns per-channel flat storage of the block's columns.
    let mut per_channel = vec![Vec::with_capacity(chips.len() * dim); channels.len()];
    for (idx, chip) in chips.iter().enumerate() {
        if chip.channels != channels {
            return Err(Error::Shape(format!(
                "{} chip {} channels {:?} differ from {:?}",
                what, idx, chip.channels, channels
            )));
        }
        if chip.h() * chip.w() != dim {
            return Err(Error::Shape(format!(
                "{} chip {} is {}x{}, expected dim {}",
                what,
                idx,
                chip.h(),
                chip.w(),
                dim
            )));
        }
        for ch in 0..channels.len() {
            let col = &chip.data.data()[ch * dim..(ch + 1) * dim];
            let norm: f64 = col.iter().map(|&v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::Numeric(format!(
                    "{} chip {} channel {} has zero norm",
                    what, idx, ch
                )));
            }
            per_channel[ch].extend(col.iter().map(|&v| v / norm));
        }
    }
    Ok(per_channel)
}

/// Vectorizes and column-normalizes clean chips into `D = [Dt | Dc | Dg]`.
pub fn build_dictionary(
    target_chips: &[Chip],
    confuser_chips: &[Chip],
    ground_chips: &[Chip],
) -> Result<Dictionary> {
    let first = target_chips
        .first()
        .or_else(|| confuser_chips.first())
        .or_else(|| ground_chips.first())
        .ok_or(Error::EmptyBatch)?;
    let channels = first.channels.clone();
    let (h, w) = (first.h(), first.w());
    let dim = h * w;

    let t = vectorize_block(target_chips, &channels, dim, "target")?;
    let c = vectorize_block(confuser_chips, &channels, dim, "confuser")?;
    let g = vectorize_block(ground_chips, &channels, dim, "ground")?;

    let n_atoms = target_chips.len() + confuser_chips.len() + ground_chips.len();
    let atoms_by_channel = (0..channels.len())
        .map(|ch| {
            let mut data = Vec::with_capacity(n_atoms * dim);
            data.extend_from_slice(&t[ch]);
            data.extend_from_slice(&c[ch]);
            data.extend_from_slice(&g[ch]);
            Tensor::from_vec(&[n_atoms, dim], data)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dictionary {
        channels,
        chip_h: h,
        chip_w: w,
        n_targets: target_chips.len(),
        n_confusers: confuser_chips.len(),
        n_grounds: ground_chips.len(),
        atoms_by_channel,
    })
}

/// Chip seed [`build_reference_dictionary`] uses for one (template, grid
/// angle) cell; exposed so callers can re-render the exact dictionary atoms.
pub fn reference_chip_seed(seed: u64, template_idx: usize, angle_idx: usize) -> u64 {
    seeds::derive(
        seed,
        0x0d1c7 + (template_idx * TRAIN_ANGLES.len() + angle_idx) as u64,
    )
}

/// The canonical dictionary for a generator setup: all 10 templates rendered
/// at the 12 training angles, plus `n_grounds` pure-ground chips.
pub fn build_reference_dictionary(
    channels: &[Pol],
    chip_h: usize,
    chip_w: usize,
    n_grounds: usize,
    ground_corr: f64,
    seed: u64,
) -> Result<Dictionary> {
    let templates = standard_templates();
    let mut targets = Vec::new();
    let mut confusers = Vec::new();
    for (ti, template) in templates.iter().enumerate() {
        for (ai, &angle) in TRAIN_ANGLES.iter().enumerate() {
            let chip_seed = reference_chip_seed(seed, ti, ai);
            let chip = make_object_chip(template, angle, channels, chip_h, chip_w, chip_seed)?;
            match template.label() {
                ClassLabel::Target => targets.push(chip),
                ClassLabel::Confuser => confusers.push(chip),
            }
        }
    }
    let grounds = (0..n_grounds)
        .map(|i| {
            make_ground_chip(
                &GroundModel {
                    scale: 1.0,
                    correlation_length: ground_corr,
                    seed: seeds::derive(seed, 0x96d + i as u64),
                },
                channels,
                chip_h,
                chip_w,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    build_dictionary(&targets, &confusers, &grounds)
}

/// A greedy sparse code: one support, per-channel coefficients and residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    /// Selected atom indices, in selection order.
    pub support: Vec<usize>,
    /// Coefficient vector over the support, one per channel.
    pub coefficients: Vec<Vec<f64>>,
    /// Final residual l2 norm per channel.
    pub residual_norm: Vec<f64>,
    /// Total residual norm before iteration 1 and after each iteration.
    pub residual_history: Vec<f64>,
    /// A support least-squares solve was rank deficient (minimum-norm
    /// solution used).
    pub rank_deficient: bool,
}

impl SparseCode {
    /// Total residual norm across channels.
    pub fn total_residual(&self) -> f64 {
        self.residual_norm
            .iter()
            .map(|&r| r * r)
            .sum::<f64>()
            .sqrt()
    }
}

const RANK_TOL: f64 = 1e-10;
const JACOBI_SWEEPS: usize = 30;
const JACOBI_EPS: f64 = 1e-14;

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix (row-major
/// `n x n`). Returns (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..JACOBI_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off < JACOBI_EPS * JACOBI_EPS {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < JACOBI_EPS {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| a[i * n + i]).collect();
    (eig, v)
}

/// Minimum-norm least-squares coefficients for `min ||A x - s||` via the
/// pseudo-inverse of the (small) Gram matrix. Returns the solution and
/// whether the system was rank deficient.
fn least_squares_min_norm(columns: &[&[f64]], signal: &[f64]) -> (Vec<f64>, bool) {
    let k = columns.len();
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for i in 0..k {
        for j in i..k {
            let dot: f64 = columns[i]
                .iter()
                .zip(columns[j].iter())
                .map(|(&a, &b)| a * b)
                .sum();
            gram[i * k + j] = dot;
            gram[j * k + i] = dot;
        }
        rhs[i] = columns[i]
            .iter()
            .zip(signal.iter())
            .map(|(&a, &b)| a * b)
            .sum();
    }
    let (eig, vecs) = jacobi_eigen(gram, k);
    let max_eig = eig.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = RANK_TOL * max_eig.max(1e-300);
    let deficient = eig.iter().any(|&l| l <= cutoff);
    // x = V diag(1/lambda) V^T rhs, dropping tiny eigenvalues.
    let mut proj = vec![0.0; k];
    for j in 0..k {
        if eig[j] > cutoff {
            let mut dot = 0.0;
            for i in 0..k {
                dot += vecs[i * k + j] * rhs[i];
            }
            proj[j] = dot / eig[j];
        }
    }
    let mut x = vec![0.0; k];
    for i in 0..k {
        let mut acc = 0.0;
        for j in 0..k {
            acc += vecs[i * k + j] * proj[j];
        }
        x[i] = acc;
    }
    (x, deficient)
}

fn check_signal(dict: &Dictionary, signal: &Chip) -> Result<()> {
    if signal.channels != dict.channels {
        return Err(Error::Shape(format!(
            "signal channels {:?} differ from dictionary {:?}",
            signal.channels, dict.channels
        )));
    }
    if signal.h() != dict.chip_h || signal.w() != dict.chip_w {
        return Err(Error::Shape(format!(
            "signal is {}x{}, dictionary expects {}x{}",
            signal.h(),
            signal.w(),
            dict.chip_h,
            dict.chip_w
        )));
    }
    Ok(())
}

/// Greedy pursuit with one support shared across channels.
///
/// Selection maximizes the l2 norm of per-channel correlations with the
/// residual (scores tie-break to the lowest atom index); after each selection
/// the coefficients are re-solved by least squares per channel, so the
/// residual stays orthogonal to the selected atoms and its norm never
/// increases. Stops at `max_atoms` or when the total residual drops to
/// `residual_tol`.
fn somp_core(dict: &Dictionary, signals: &[&[f64]], max_atoms: usize, residual_tol: f64) -> SparseCode {
    let n_ch = signals.len();
    let n_atoms = dict.n_atoms();
    let dim = dict.dim();
    let mut residuals: Vec<Vec<f64>> = signals.iter().map(|s| s.to_vec()).collect();
    let mut support: Vec<usize> = Vec::new();
    let mut in_support = vec![false; n_atoms];
    let mut coefficients: Vec<Vec<f64>> = vec![Vec::new(); n_ch];
    let mut rank_deficient = false;

    let total_norm = |rs: &[Vec<f64>]| -> f64 {
        rs.iter()
            .map(|r| r.iter().map(|&v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    };
    let mut residual_history = vec![total_norm(&residuals)];

    while support.len() < max_atoms && *residual_history.last().unwrap() > residual_tol {
        // Atom scoring.
        let mut best = usize::MAX;
        let mut best_score = 0.0;
        for j in 0..n_atoms {
            if in_support[j] {
                continue;
            }
            let mut score = 0.0;
            for ch in 0..n_ch {
                let atom = &dict.atom_matrices()[ch].data()[j * dim..(j + 1) * dim];
                let corr: f64 = atom
                    .iter()
                    .zip(residuals[ch].iter())
                    .map(|(&a, &r)| a * r)
                    .sum();
                score += corr * corr;
            }
            if score > best_score {
                best_score = score;
                best = j;
            }
        }
        if best == usize::MAX || best_score == 0.0 {
            break;
        }
        support.push(best);
        in_support[best] = true;

        // Re-solve least squares on the support, per channel.
        for ch in 0..n_ch {
            let columns: Vec<&[f64]> = support.iter().map(|&j| dict.atom(ch, j)).collect();
            let (coef, deficient) = least_squares_min_norm(&columns, signals[ch]);
            rank_deficient |= deficient;
            let mut r = signals[ch].to_vec();
            for (&j, &x) in support.iter().zip(coef.iter()) {
                let atom = dict.atom(ch, j);
                for (rv, &av) in r.iter_mut().zip(atom.iter()) {
                    *rv -= x * av;
                }
            }
            residuals[ch] = r;
            coefficients[ch] = coef;
        }
        residual_history.push(total_norm(&residuals));
    }

    let residual_norm = residuals
        .iter()
        .map(|r| r.iter().map(|&v| v * v).sum::<f64>().sqrt())
        .collect();
    SparseCode {
        support,
        coefficients,
        residual_norm,
        residual_history,
        rank_deficient,
    }
}

/// Orthogonal matching pursuit over the full dictionary (single channel).
pub fn omp(dict: &Dictionary, signal: &Chip, max_atoms: usize, residual_tol: f64) -> Result<SparseCode> {
    check_signal(dict, signal)?;
    if dict.channels.len() != 1 {
        return Err(Error::Config(format!(
            "omp expects a single-channel dictionary, got {} channels (use somp)",
            dict.channels.len()
        )));
    }
    Ok(somp_core(dict, &[signal.data.data()], max_atoms, residual_tol))
}

/// Simultaneous OMP: a single support shared by all channels.
pub fn somp(dict: &Dictionary, signal: &Chip, max_atoms: usize, residual_tol: f64) -> Result<SparseCode> {
    check_signal(dict, signal)?;
    let dim = dict.dim();
    let slices: Vec<&[f64]> = (0..dict.channels.len())
        .map(|ch| &signal.data.data()[ch * dim..(ch + 1) * dim])
        .collect();
    Ok(somp_core(dict, &slices, max_atoms, residual_tol))
}

/// Classification output: the residual rule's verdict plus the ground-
/// eliminated signal.
#[derive(Debug, Clone)]
pub struct SrcResult {
    pub label: ClassLabel,
    /// `x_bar = x_tilde - Dg * a_g`, per channel.
    pub denoised: Chip,
    pub residual_target: f64,
    pub residual_confuser: f64,
    /// One code for the simultaneous solver, one per channel otherwise.
    pub codes: Vec<SparseCode>,
}

fn classify_from_codes(
    dict: &Dictionary,
    signal: &Chip,
    per_channel_codes: &[(usize, SparseCode)],
) -> Result<SrcResult> {
    let dim = dict.dim();
    let (t_range, c_range, g_range) = dict.block_ranges();
    let mut denoised = signal.data.data().to_vec();
    let mut r_t_sq = 0.0;
    let mut r_c_sq = 0.0;

    for (ch, code) in per_channel_codes {
        let ch = *ch;
        let base = ch * dim;
        // Ground elimination.
        for (&j, &x) in code.support.iter().zip(code.coefficients[ch_index(code, ch)].iter()) {
            if g_range.contains(&j) {
                let atom = dict.atom(ch, j);
                for (d, &a) in denoised[base..base + dim].iter_mut().zip(atom.iter()) {
                    *d -= x * a;
                }
            }
        }
        // Class residuals: || x_bar - D_i a_i || per channel, accumulated.
        for (range, acc) in [(&t_range, &mut r_t_sq), (&c_range, &mut r_c_sq)] {
            let mut r: Vec<f64> = denoised[base..base + dim].to_vec();
            for (&j, &x) in code.support.iter().zip(code.coefficients[ch_index(code, ch)].iter()) {
                if range.contains(&j) {
                    let atom = dict.atom(ch, j);
                    for (rv, &a) in r.iter_mut().zip(atom.iter()) {
                        *rv -= x * a;
                    }
                }
            }
            *acc += r.iter().map(|&v| v * v).sum::<f64>();
        }
    }

    let (r_t, r_c) = (r_t_sq.sqrt(), r_c_sq.sqrt());
    let label = if r_t <= r_c {
        ClassLabel::Target
    } else {
        ClassLabel::Confuser
    };
    Ok(SrcResult {
        label,
        denoised: Chip {
            channels: signal.channels.clone(),
            data: Tensor::from_vec(signal.data.shape(), denoised)?,
        },
        residual_target: r_t,
        residual_confuser: r_c,
        codes: per_channel_codes.iter().map(|(_, c)| c.clone()).collect(),
    })
}

// The simultaneous code stores one coefficient vector per channel; a
// per-channel code stores exactly one.
fn ch_index(code: &SparseCode, ch: usize) -> usize {
    if code.coefficients.len() == 1 {
        0
    } else {
        ch
    }
}

/// Residual-rule classification with the simultaneous (shared-support)
/// solver; single-channel dictionaries reduce to plain OMP.
pub fn src_classify(
    dict: &Dictionary,
    signal: &Chip,
    max_atoms: usize,
    residual_tol: f64,
) -> Result<SrcResult> {
    check_signal(dict, signal)?;
    let code = somp(dict, signal, max_atoms, residual_tol)?;
    let per_channel: Vec<(usize, SparseCode)> = (0..dict.channels.len())
        .map(|ch| (ch, code.clone()))
        .collect();
    let mut result = classify_from_codes(dict, signal, &per_channel)?;
    result.codes = vec![code];
    Ok(result)
}

/// Residual-rule classification coding each channel independently
/// (single-channel variant applied channel-wise; class residuals are
/// accumulated across channels).
pub fn src_classify_single(
    dict: &Dictionary,
    signal: &Chip,
    max_atoms: usize,
    residual_tol: f64,
) -> Result<SrcResult> {
    check_signal(dict, signal)?;
    let dim = dict.dim();
    let per_channel: Vec<(usize, SparseCode)> = (0..dict.channels.len())
        .map(|ch| {
            let slice = &signal.data.data()[ch * dim..(ch + 1) * dim];
            let mut code = somp_core(dict, &[slice], max_atoms, residual_tol);
            // Rehome the single coefficient vector at the channel's slot.
            let coef = code.coefficients.remove(0);
            let mut coefs = vec![Vec::new(); dict.channels.len()];
            coefs[ch] = coef;
            code.coefficients = coefs;
            (ch, code)
        })
        .collect();
    classify_from_codes(dict, signal, &per_channel)
}

/// Classifies a batch in parallel with deterministic output order.
pub fn src_classify_batch(
    dict: &Dictionary,
    signals: &[Chip],
    max_atoms: usize,
    residual_tol: f64,
    simultaneous: bool,
) -> Result<Vec<SrcResult>> {
    signals
        .par_iter()
        .map(|s| {
            if simultaneous {
                src_classify(dict, s, max_atoms, residual_tol)
            } else {
                src_classify_single(dict, s, max_atoms, residual_tol)
            }
        })
        .collect()
}
