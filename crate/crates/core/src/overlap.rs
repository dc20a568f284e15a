//! Overlap FDE: a long block without cyclic prefix is cut into overlapping
//! `N`-sample sub-blocks, each equalized with an `N`-point single-tap filter.
//! Inter-block interference (IBI) from the missing prefix is either ignored
//! (NI), treated as extra noise (IR), or cancelled with the current soft
//! feedback (IC).
//!
//! Within sub-block `n` starting at absolute index `k`,
//! `y_n = H_n x_n + G_n (x_{n-N} - x_n) + w_n`, where `x_{n-N}` holds the `N`
//! symbols preceding `k` and `G_n` is the `N x N` operator whose only nonzeros
//! sit in its top-right corner, `G[i][m] = h[N + i - m]` for `i < L - 1`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bicm::{CodeSpec, Interleaver};
use crate::channel::{frequency_response, TimeVaryingChannel};
use crate::fde::{
    compute_filter, equalize_fd, run_streams, JointEqualizer, ReceiverConfig, ReceiverOutput,
    Schedule, StreamSpec,
};
use crate::mapping::{Constellation, GaussianEstimate};
use crate::numerics::DftPlan;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IbiMode {
    Ni,
    Ir,
    Ic,
}

impl std::str::FromStr for IbiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ni" => Ok(Self::Ni),
            "ir" => Ok(Self::Ir),
            "ic" => Ok(Self::Ic),
            _ => Err(Error::config(
                "overlap.mode",
                format!("unknown IBI mode `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapSpec {
    /// Sub-block FFT length.
    pub n: usize,
    /// Symbols discarded at the head of each sub-block.
    pub n_l: usize,
    /// Symbols discarded at the tail.
    pub n_r: usize,
    pub mode: IbiMode,
    /// In IC mode, drop the overlap (`N_l = N_r = 0`) after the first turbo iteration.
    #[serde(default)]
    pub shrink_after_first_tau: bool,
}

impl OverlapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_l + self.n_r >= self.n {
            return Err(Error::config("overlap", "N_l + N_r must be smaller than N"));
        }
        Ok(())
    }

    /// Retained symbols per sub-block, `N_d = N - N_l - N_r`.
    pub fn n_d(&self) -> usize {
        self.n - self.n_l - self.n_r
    }

    pub fn num_subblocks(&self, block_len: usize) -> usize {
        block_len.div_ceil(self.n_d())
    }

    fn without_overlap(&self) -> Self {
        Self {
            n_l: 0,
            n_r: 0,
            ..*self
        }
    }
}

/// One sub-block with its own `N`-point circular channel model.
#[derive(Debug, Clone, PartialEq)]
pub struct SubblockView {
    /// Absolute index of the first sample (may be negative).
    pub start: isize,
    pub samples: Vec<Complex64>,
    pub taps: Vec<Complex64>,
    pub freq_response: Vec<Complex64>,
    /// Retained absolute range `[keep.0, keep.1)`.
    pub keep: (usize, usize),
}

impl SubblockView {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Offset of the retained window inside the sub-block.
    pub fn keep_offset(&self) -> usize {
        (self.keep.0 as isize - self.start) as usize
    }
}

fn gather(v: &[Complex64], start: isize, n: usize) -> Vec<Complex64> {
    (0..n as isize)
        .map(|i| {
            let idx = start + i;
            if idx >= 0 && (idx as usize) < v.len() {
                v[idx as usize]
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// Cuts `y` into sub-blocks starting at `n N_d - N_l`. `y` holds the `K`
/// samples of the block, optionally followed by the channel tail; samples
/// outside the available range are zero.
/// Each sub-block uses the taps in force at the middle of its retained window.
pub fn extract_subblocks(
    y: &[Complex64],
    block_len: usize,
    tv: &TimeVaryingChannel,
    spec: &OverlapSpec,
) -> Result<Vec<SubblockView>> {
    spec.validate()?;
    let k = block_len;
    if k == 0 || y.len() < k {
        return Err(Error::EmptyBlock);
    }
    if tv.num_taps() > spec.n {
        return Err(Error::ChannelTooLong {
            taps: tv.num_taps(),
            block: spec.n,
        });
    }
    let nd = spec.n_d();
    (0..spec.num_subblocks(k))
        .map(|b| {
            let start = (b * nd) as isize - spec.n_l as isize;
            let keep = (b * nd, ((b + 1) * nd).min(k));
            let taps = tv.taps_at((keep.0 + keep.1) / 2).to_vec();
            Ok(SubblockView {
                start,
                samples: gather(y, start, spec.n),
                freq_response: frequency_response(&taps, spec.n)?,
                taps,
                keep,
            })
        })
        .collect()
}

/// Diagonal of `F G G^H F^H` from the summed circular autocorrelation of the
/// columns of `G`, followed by one `N`-point DFT.
pub fn ibi_power_diag(taps: &[Complex64], n: usize) -> Result<Vec<f64>> {
    let l = taps.len();
    let mut r = vec![Complex64::new(0.0, 0.0); n];
    if l > 1 {
        // column c = N - j (j = 1..L-1) holds h[i + j] in rows i = 0..L-1-j
        for j in 1..l {
            let col: Vec<Complex64> = (0..l - j).map(|i| taps[i + j]).collect();
            for d in 0..col.len() {
                for i in 0..col.len() - d {
                    let v = col[i + d] * col[i].conj();
                    r[d] += v;
                    if d > 0 {
                        r[n - d] += v.conj();
                    }
                }
            }
        }
    }
    DftPlan::new(n)?.forward(&mut r);
    let scale = 1.0 / (n as f64).sqrt();
    Ok(r.iter().map(|z| (z.re * scale).max(0.0)).collect())
}

/// `sigma_w^2 + 2 residual_var diag(F G G^H F^H)`.
pub fn ibi_equivalent_noise_diag(
    sub: &SubblockView,
    noise_var: f64,
    residual_var: f64,
) -> Result<Vec<f64>> {
    let n = sub.len();
    if residual_var == 0.0 || sub.taps.len() <= 1 {
        return Ok(vec![noise_var; n]);
    }
    if !(residual_var >= 0.0) {
        return Err(Error::NegativeVariance(residual_var));
    }
    Ok(ibi_power_diag(&sub.taps, n)?
        .into_iter()
        .map(|p| noise_var + 2.0 * residual_var * p)
        .collect())
}

/// `G v` applied procedurally.
pub fn apply_tail_operator(taps: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    let l = taps.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (i, o) in out.iter_mut().enumerate().take(l.saturating_sub(1).min(n)) {
        for m in (n + i + 1 - l)..n {
            *o += taps[n + i - m] * v[m];
        }
    }
    out
}

/// `y' = y - G (x^d_{prev} - x^d_{cur})` with the feedback taken at the
/// sub-block's absolute positions.
pub fn ibi_cancel(sub: &SubblockView, x_d: &[Complex64]) -> Vec<Complex64> {
    let n = sub.len();
    let prev = gather(x_d, sub.start - n as isize, n);
    let cur = gather(x_d, sub.start, n);
    let diff: Vec<Complex64> = prev.iter().zip(&cur).map(|(a, b)| a - b).collect();
    let g = apply_tail_operator(&sub.taps, &diff);
    sub.samples.iter().zip(g).map(|(y, z)| y - z).collect()
}

struct Tiling {
    subs: Vec<SubblockView>,
    y_fd: Vec<Vec<Complex64>>,
    ibi_diag: Vec<Vec<f64>>,
    plan: DftPlan,
}

impl Tiling {
    fn new(
        y: &[Complex64],
        block_len: usize,
        tv: &TimeVaryingChannel,
        spec: &OverlapSpec,
    ) -> Result<Self> {
        let subs = extract_subblocks(y, block_len, tv, spec)?;
        let plan = DftPlan::new(spec.n)?;
        let y_fd = subs
            .iter()
            .map(|s| {
                let mut v = s.samples.clone();
                plan.forward(&mut v);
                v
            })
            .collect();
        let ibi_diag = if spec.mode == IbiMode::Ni {
            Vec::new()
        } else {
            subs.iter()
                .map(|s| ibi_power_diag(&s.taps, spec.n))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            subs,
            y_fd,
            ibi_diag,
            plan,
        })
    }
}

/// Single-stream equalizer running all sub-blocks under a common SI loop.
pub struct OverlapEqualizer {
    spec: OverlapSpec,
    noise_var: f64,
    block_len: usize,
    full: Tiling,
    shrunk: Option<Tiling>,
}

impl OverlapEqualizer {
    /// `y` carries `block_len` samples, optionally followed by the channel tail.
    pub fn new(
        y: &[Complex64],
        block_len: usize,
        tv: &TimeVaryingChannel,
        spec: &OverlapSpec,
    ) -> Result<Self> {
        let full = Tiling::new(y, block_len, tv, spec)?;
        let shrunk = if spec.mode == IbiMode::Ic
            && spec.shrink_after_first_tau
            && (spec.n_l > 0 || spec.n_r > 0)
        {
            Some(Tiling::new(y, block_len, tv, &spec.without_overlap())?)
        } else {
            None
        };
        Ok(Self {
            spec: *spec,
            noise_var: tv.noise_var(),
            block_len,
            full,
            shrunk,
        })
    }
}

impl JointEqualizer for OverlapEqualizer {
    fn num_streams(&self) -> usize {
        1
    }

    fn block_len(&self) -> usize {
        self.block_len
    }

    fn equalize(
        &mut self,
        feedback: &[GaussianEstimate],
        tau: usize,
        _s: usize,
    ) -> Result<Vec<GaussianEstimate>> {
        let fb = &feedback[0];
        let tiling = match &self.shrunk {
            Some(t) if tau > 0 => t,
            _ => &self.full,
        };
        let n = self.spec.n;
        let mut mean = vec![Complex64::new(0.0, 0.0); self.block_len];
        let mut ve_sum = 0.0;
        for (i, sub) in tiling.subs.iter().enumerate() {
            let (y_fd, noise) = match self.spec.mode {
                IbiMode::Ni => (tiling.y_fd[i].clone(), vec![self.noise_var; n]),
                IbiMode::Ir => (
                    tiling.y_fd[i].clone(),
                    tiling.ibi_diag[i]
                        .iter()
                        .map(|p| self.noise_var + 2.0 * p)
                        .collect(),
                ),
                IbiMode::Ic => {
                    let mut y = ibi_cancel(sub, &fb.mean);
                    tiling.plan.forward(&mut y);
                    let noise = tiling.ibi_diag[i]
                        .iter()
                        .map(|p| self.noise_var + 2.0 * fb.variance * p)
                        .collect();
                    (y, noise)
                }
            };
            let mut xd = gather(&fb.mean, sub.start, n);
            tiling.plan.forward(&mut xd);
            let filt = compute_filter(&sub.freq_response, &noise, fb.variance)?;
            let mut xe = equalize_fd(&y_fd, &xd, &sub.freq_response, &filt);
            tiling.plan.inverse(&mut xe);
            let off = sub.keep_offset();
            mean[sub.keep.0..sub.keep.1].copy_from_slice(&xe[off..off + sub.keep.1 - sub.keep.0]);
            ve_sum += filt.v_e;
        }
        Ok(vec![GaussianEstimate::new(
            mean,
            ve_sum / tiling.subs.len() as f64,
        )])
    }
}

/// Overlap FDE turbo receiver for one block.
pub fn run_overlap_receiver(
    y: &[Complex64],
    block_len: usize,
    tv: &TimeVaryingChannel,
    spec: &OverlapSpec,
    c: &Constellation,
    code: Option<&CodeSpec>,
    pi: &Interleaver,
    cfg: &ReceiverConfig,
) -> Result<ReceiverOutput> {
    let stream = StreamSpec {
        constellation: c,
        code,
        interleaver: pi,
        mapped_bits: None,
    };
    let mut eq = OverlapEqualizer::new(y, block_len, tv, spec)?;
    Ok(run_streams(&mut eq, &[stream], cfg, Schedule::Pic)?.remove(0))
}
