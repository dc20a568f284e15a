//! Mutual information estimation, EXIT transfer curves, trajectories and
//! area-theorem rates.
//!
//! The J-function uses the usual two-piece fit:
//!
//! ```text
//! J(s)     = -0.0421061 s^3 + 0.209252 s^2 - 0.00640081 s                        s <= 1.6363
//!          = 1 - exp(0.00181491 s^3 - 0.142675 s^2 - 0.0822054 s + 0.0549608)     1.6363 < s < 10
//!          = 1                                                                    s >= 10
//! J^-1(I)  = 1.09542 I^2 + 0.214217 I + 2.33727 sqrt(I)                          I <= 0.3646
//!          = -0.706692 ln(0.386013 (1 - I)) + 1.75017 I                          I > 0.3646
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicm::{bcjr_siso_decode, rsc_encode, CodeSpec, Interleaver};
use crate::channel::{apply_channel, make_channel, noise_variance, ChannelProfile};
use crate::fde::{
    detector_extrinsic, FdeEqualizer, ReceiverConfig, ReceiverDiagnostics, StreamSpec,
};
use crate::mapping::{map_bits, Constellation, ConstellationKind};
use crate::numerics::RngStream;
use crate::{Error, Result, LLR_CLAMP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitPoint {
    pub i_a: f64,
    pub i_e: f64,
    pub snr_db: f64,
    pub tag: String,
}

/// Transfer curve sampled on a strictly increasing `I_A` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitCurve {
    pub points: Vec<ExitPoint>,
}

impl ExitCurve {
    pub fn new(points: Vec<ExitPoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].i_a > w[0].i_a)) {
            return Err(Error::Analysis("I_A must be strictly increasing".into()));
        }
        if points
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p.i_a) || !(0.0..=1.0).contains(&p.i_e))
        {
            return Err(Error::Analysis("mutual information outside [0, 1]".into()));
        }
        Ok(Self { points })
    }

    /// Piecewise-linear `I_E(i_a)`, held constant beyond the grid ends.
    pub fn interpolate(&self, i_a: f64) -> f64 {
        let p = &self.points;
        match p.iter().position(|pt| pt.i_a >= i_a) {
            None => p.last().map_or(0.0, |pt| pt.i_e),
            Some(0) => p[0].i_e,
            Some(j) => {
                let (a, b) = (&p[j - 1], &p[j]);
                a.i_e + (b.i_e - a.i_e) * (i_a - a.i_a) / (b.i_a - a.i_a)
            }
        }
    }
}

/// `1 - mean log2(1 + exp(-(1 - 2 d) L))`, clamped to `[0, 1]`.
pub fn estimate_mi(llrs: &[f64], bits: &[u8]) -> Result<f64> {
    if llrs.len() != bits.len() {
        return Err(Error::LengthMismatch {
            expected: bits.len(),
            actual: llrs.len(),
        });
    }
    if llrs.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let acc: f64 = llrs
        .iter()
        .zip(bits)
        .map(|(&l, &d)| {
            let x = if d == 0 { l } else { -l };
            softplus(-x)
        })
        .sum();
    Ok((1.0 - acc / (llrs.len() as f64 * std::f64::consts::LN_2)).clamp(0.0, 1.0))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Histogram estimate of `I(L; d)` from the empirical conditional densities.
/// Does not rely on LLR consistency; used to cross-check [`estimate_mi`].
pub fn estimate_mi_histogram(llrs: &[f64], bits: &[u8], bins: usize) -> Result<f64> {
    if llrs.len() != bits.len() {
        return Err(Error::LengthMismatch {
            expected: bits.len(),
            actual: llrs.len(),
        });
    }
    if llrs.is_empty() || bins == 0 {
        return Err(Error::EmptyBlock);
    }
    let lo = llrs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = llrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(1e-12);
    let mut counts = vec![[0usize; 2]; bins];
    let mut totals = [0usize; 2];
    for (&l, &d) in llrs.iter().zip(bits) {
        let b = (((l - lo) / width) as usize).min(bins - 1);
        counts[b][d as usize & 1] += 1;
        totals[d as usize & 1] += 1;
    }
    let mut mi = 0.0;
    for c in &counts {
        for d in 0..2 {
            if c[d] == 0 || totals[d] == 0 {
                continue;
            }
            let p = c[d] as f64 / totals[d] as f64;
            let mix = 0.5
                * (c[0] as f64 / totals[0].max(1) as f64 + c[1] as f64 / totals[1].max(1) as f64);
            mi += 0.5 * p * (p / mix).log2();
        }
    }
    Ok(mi.clamp(0.0, 1.0))
}

const J_SIGMA_SPLIT: f64 = 1.6363;
const J_INV_SPLIT: f64 = 0.3646;

/// Mutual information of consistent Gaussian LLRs with standard deviation `sigma`.
pub fn j_function(sigma: f64) -> f64 {
    let s = sigma.max(0.0);
    if s <= J_SIGMA_SPLIT {
        -0.0421061 * s.powi(3) + 0.209252 * s * s - 0.00640081 * s
    } else if s < 10.0 {
        1.0 - (0.00181491 * s.powi(3) - 0.142675 * s * s - 0.0822054 * s + 0.0549608).exp()
    } else {
        1.0
    }
    .clamp(0.0, 1.0)
}

pub fn j_inverse(i: f64) -> f64 {
    let i = i.clamp(0.0, 1.0);
    if i <= J_INV_SPLIT {
        1.09542 * i * i + 0.214217 * i + 2.33727 * i.sqrt()
    } else if i < 1.0 {
        -0.706692 * (0.386013 * (1.0 - i)).ln() + 1.75017 * i
    } else {
        f64::INFINITY
    }
}

/// Consistent Gaussian a-priori LLRs `L = (1 - 2d) sigma^2 / 2 + sigma n`, `sigma = J^-1(I_A)`.
pub fn gaussian_prior_llrs(bits: &[u8], i_a: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&i_a) {
        return Err(Error::Analysis(format!("I_A = {i_a} outside [0, 1]")));
    }
    let sign = |d: u8| if d == 0 { 1.0 } else { -1.0 };
    if i_a == 0.0 {
        return Ok(vec![0.0; bits.len()]);
    }
    let sigma = j_inverse(i_a);
    if !sigma.is_finite() {
        return Ok(bits.iter().map(|&d| sign(d) * LLR_CLAMP).collect());
    }
    Ok(bits
        .iter()
        .map(|&d| {
            (sign(d) * sigma * sigma / 2.0 + sigma * rng.standard_normal())
                .clamp(-LLR_CLAMP, LLR_CLAMP)
        })
        .collect())
}

/// Single-antenna SC-FDE setup for receiver EXIT measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitScenario {
    pub profile: ChannelProfile,
    pub constellation: ConstellationKind,
    pub block_len: usize,
    /// Feedback mode, `S` (from `s_per_tau[0]`) and damping of the detector.
    pub receiver: ReceiverConfig,
    /// Rate used to convert Eb/N0 to the noise variance.
    pub code_rate: f64,
    pub seed: u64,
    pub tag: String,
}

const PURPOSE_DATA: u64 = 0;
const PURPOSE_CHANNEL: u64 = 1;
const PURPOSE_NOISE: u64 = 2;
const PURPOSE_PRIOR: u64 = 3;

fn exit_stream(seed: u64, grid: usize, block: usize, purpose: u64) -> RngStream {
    RngStream::new(
        seed,
        ((grid as u64) << 40) | ((block as u64) << 4) | purpose,
    )
}

fn block_exit(
    sc: &ExitScenario,
    c: &Constellation,
    noise_var: f64,
    i_a: f64,
    grid: usize,
    block: usize,
) -> Result<f64> {
    let k = sc.block_len;
    let nbits = k * c.bits_per_symbol();
    let bits = exit_stream(sc.seed, grid, block, PURPOSE_DATA).bits(nbits);
    let x = map_bits(&bits, c)?;
    let ch = make_channel(
        &sc.profile,
        k,
        noise_var,
        &mut exit_stream(sc.seed, grid, block, PURPOSE_CHANNEL),
    )?;
    let y = apply_channel(
        &x,
        &ch,
        &mut exit_stream(sc.seed, grid, block, PURPOSE_NOISE),
    )?;
    let la = gaussian_prior_llrs(
        &bits,
        i_a,
        &mut exit_stream(sc.seed, grid, block, PURPOSE_PRIOR),
    )?;
    let pi = Interleaver::identity(nbits);
    let spec = StreamSpec {
        constellation: c,
        code: None,
        interleaver: &pi,
        mapped_bits: None,
    };
    let mut eq = FdeEqualizer::new(&y, &ch)?;
    let le = detector_extrinsic(&mut eq, &[spec], &[la], &sc.receiver, 0)?;
    estimate_mi(&le[0], &bits)
}

/// Receiver transfer curve: Gaussian priors at each `I_A`, `S` self iterations,
/// `I_E` of the demapper extrinsic averaged over `n_blocks`.
pub fn measure_receiver_exit(
    sc: &ExitScenario,
    ia_grid: &[f64],
    snr_db: f64,
    n_blocks: usize,
) -> Result<ExitCurve> {
    if n_blocks == 0 {
        return Err(Error::Analysis(
            "need at least one block per EXIT point".into(),
        ));
    }
    let c = Constellation::new(sc.constellation);
    let noise_var = noise_variance(snr_db, c.bits_per_symbol(), sc.code_rate);
    let points = ia_grid
        .par_iter()
        .enumerate()
        .map(|(g, &i_a)| {
            let per_block = (0..n_blocks)
                .into_par_iter()
                .map(|b| block_exit(sc, &c, noise_var, i_a, g, b))
                .collect::<Result<Vec<f64>>>()?;
            Ok(ExitPoint {
                i_a,
                i_e: per_block.iter().sum::<f64>() / n_blocks as f64,
                snr_db,
                tag: sc.tag.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ExitCurve::new(points)
}

/// Decoder transfer curve: Gaussian priors on the coded bits, `I_E` of the BCJR extrinsic.
pub fn measure_decoder_exit(
    code: &CodeSpec,
    ia_grid: &[f64],
    n_blocks: usize,
    seed: u64,
) -> Result<ExitCurve> {
    if n_blocks == 0 {
        return Err(Error::Analysis(
            "need at least one block per EXIT point".into(),
        ));
    }
    let points = ia_grid
        .par_iter()
        .enumerate()
        .map(|(g, &i_a)| {
            let per_block = (0..n_blocks)
                .into_par_iter()
                .map(|b| {
                    let info = exit_stream(seed, g, b, PURPOSE_DATA).bits(code.info_len);
                    let coded = rsc_encode(&info, code)?;
                    let la = gaussian_prior_llrs(
                        &coded,
                        i_a,
                        &mut exit_stream(seed, g, b, PURPOSE_PRIOR),
                    )?;
                    let out = bcjr_siso_decode(&la, code)?;
                    estimate_mi(&out.extrinsic.values, &coded)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(ExitPoint {
                i_a,
                i_e: per_block.iter().sum::<f64>() / n_blocks as f64,
                snr_db: f64::NAN,
                tag: "decoder".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ExitCurve::new(points)
}

/// Area theorem: `q * integral_0^1 I_E dI_A` (trapezoidal).
pub fn achievable_rate(curve: &ExitCurve, bits_per_symbol: usize) -> Result<f64> {
    let p = &curve.points;
    if p.len() < 2 {
        return Err(Error::Analysis("need at least two EXIT points".into()));
    }
    if p[0].i_a > 1e-9 || p[p.len() - 1].i_a < 1.0 - 1e-9 {
        return Err(Error::Analysis("EXIT curve must span I_A = 0 to 1".into()));
    }
    let area: f64 = p
        .windows(2)
        .map(|w| 0.5 * (w[0].i_e + w[1].i_e) * (w[1].i_a - w[0].i_a))
        .sum();
    Ok(bits_per_symbol as f64 * area)
}

/// Per-TI `(I_A, I_E)` points of a finite-length run. `I_A` at the first TI is
/// zero; later ones are the measured decoder output MI, or the decoder curve
/// evaluated at the previous `I_E` when no measurement exists.
pub fn record_trajectory(diag: &ReceiverDiagnostics, decoder: &ExitCurve) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(diag.mi_equalizer.len());
    let mut i_a = 0.0;
    for (tau, &i_e) in diag.mi_equalizer.iter().enumerate() {
        out.push((i_a, i_e));
        i_a = diag
            .mi_decoder
            .get(tau)
            .copied()
            .unwrap_or_else(|| decoder.interpolate(i_e));
    }
    out
}

/// Averages per-TI trajectories of equal length point by point.
pub fn mean_trajectory(runs: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|t| {
            let n = runs.len() as f64;
            let a = runs.iter().map(|r| r[t].0).sum::<f64>() / n;
            let e = runs.iter().map(|r| r[t].1).sum::<f64>() / n;
            (a, e)
        })
        .collect()
}
