//! Channel realizations: static presets, block Rayleigh fading,
//! quasi-static time variation, MIMO and imperfect channel estimates.

use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::numerics::{circular_convolve, gaussian_vector, unitary_dft, RngStream};
use crate::{Error, Result};

/// Channel profile selected by name, or an explicit tap list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelProfile {
    /// Single unit tap (flat AWGN).
    Identity,
    ProakisB,
    ProakisC,
    /// Static uniform power delay profile with `paths` equal real taps.
    UniformStatic {
        paths: usize,
    },
    /// Block Rayleigh fading with a uniform `paths`-tap power delay profile.
    Rayleigh {
        paths: usize,
    },
    /// Uniform profile whose taps follow Clarke/Jakes fading across
    /// `segment_len`-sample segments, at normalized Doppler `doppler` (cycles/sample).
    DoublySelective {
        paths: usize,
        doppler: f64,
        segment_len: usize,
    },
    /// Explicit complex taps given as `[re, im]` pairs; normalized to unit energy.
    Explicit {
        taps: Vec<[f64; 2]>,
    },
}

impl FromStr for ChannelProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "awgn" | "flat" => Ok(Self::Identity),
            "proakisb" | "proakis_b" => Ok(Self::ProakisB),
            "proakisc" | "proakis_c" => Ok(Self::ProakisC),
            "equ16" => Ok(Self::Rayleigh { paths: 16 }),
            "awgn7" => Ok(Self::UniformStatic { paths: 7 }),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

impl ChannelProfile {
    pub fn is_random(&self) -> bool {
        matches!(self, Self::Rayleigh { .. } | Self::DoublySelective { .. })
    }

    pub fn paths(&self) -> usize {
        match self {
            Self::Identity => 1,
            Self::ProakisB => 3,
            Self::ProakisC => 5,
            Self::UniformStatic { paths }
            | Self::Rayleigh { paths }
            | Self::DoublySelective { paths, .. } => *paths,
            Self::Explicit { taps } => taps.len(),
        }
    }

    /// Draws one set of taps. Static profiles leave `rng` untouched.
    pub fn draw_taps(&self, rng: &mut RngStream) -> Result<Vec<Complex64>> {
        let real = |v: &[f64]| {
            v.iter()
                .map(|&x| Complex64::new(x, 0.0))
                .collect::<Vec<_>>()
        };
        let taps = match self {
            Self::Identity => real(&[1.0]),
            Self::ProakisB => real(&[0.407, 0.815, 0.407]),
            Self::ProakisC => real(&[1.0, 2.0, 3.0, 2.0, 1.0]),
            Self::UniformStatic { paths } => real(&vec![1.0; (*paths).max(1)]),
            Self::Rayleigh { paths } | Self::DoublySelective { paths, .. } => {
                return rayleigh_block_fade(*paths, rng)
            }
            Self::Explicit { taps } => taps
                .iter()
                .map(|&[re, im]| Complex64::new(re, im))
                .collect(),
        };
        normalize_energy(taps)
    }
}

fn normalize_energy(taps: Vec<Complex64>) -> Result<Vec<Complex64>> {
    let e: f64 = taps.iter().map(|h| h.norm_sqr()).sum();
    if taps.is_empty() || e <= 0.0 {
        return Err(Error::DegenerateChannel("taps have zero energy".into()));
    }
    let s = e.sqrt();
    Ok(taps.into_iter().map(|h| h / s).collect())
}

/// `sigma_w^2 = sigma_x^2 / (q R_c Eb/N0)`; an infinite Eb/N0 gives a noiseless channel.
pub fn noise_variance(ebn0_db: f64, bits_per_symbol: usize, code_rate: f64) -> f64 {
    if ebn0_db == f64::INFINITY {
        return 0.0;
    }
    1.0 / (bits_per_symbol as f64 * code_rate * 10f64.powf(ebn0_db / 10.0))
}

/// Circular channel over a `K`-symbol block with a diagonal FD noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Complex64>,
    pub freq_response: Vec<Complex64>,
    pub noise_cov_diag: Vec<f64>,
}

impl ChannelRealization {
    pub fn new(taps: Vec<Complex64>, block_len: usize, noise_var: f64) -> Result<Self> {
        if taps.len() > block_len {
            return Err(Error::ChannelTooLong {
                taps: taps.len(),
                block: block_len,
            });
        }
        if !(noise_var >= 0.0) {
            return Err(Error::NegativeVariance(noise_var));
        }
        Ok(Self {
            freq_response: frequency_response(&taps, block_len)?,
            taps,
            noise_cov_diag: vec![noise_var; block_len],
        })
    }

    pub fn block_len(&self) -> usize {
        self.freq_response.len()
    }

    /// Average per-sample noise variance.
    pub fn noise_var(&self) -> f64 {
        let d = &self.noise_cov_diag;
        if d.iter().all(|&v| v == d[0]) {
            return d[0];
        }
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// `h_k = sum_l h_l exp(-2j pi k l / K)`.
pub fn frequency_response(taps: &[Complex64], block_len: usize) -> Result<Vec<Complex64>> {
    if taps.len() > block_len {
        return Err(Error::ChannelTooLong {
            taps: taps.len(),
            block: block_len,
        });
    }
    let mut padded = taps.to_vec();
    padded.resize(block_len, Complex64::new(0.0, 0.0));
    let scale = (block_len as f64).sqrt();
    Ok(unitary_dft(&padded, false)?
        .into_iter()
        .map(|z| z * scale)
        .collect())
}

pub fn make_channel(
    profile: &ChannelProfile,
    block_len: usize,
    noise_var: f64,
    rng: &mut RngStream,
) -> Result<ChannelRealization> {
    if profile.paths() > block_len {
        return Err(Error::ChannelTooLong {
            taps: profile.paths(),
            block: block_len,
        });
    }
    ChannelRealization::new(profile.draw_taps(rng)?, block_len, noise_var)
}

/// I.i.d. CN(0, 1/L) taps.
pub fn rayleigh_block_fade(paths: usize, rng: &mut RngStream) -> Result<Vec<Complex64>> {
    if paths == 0 {
        return Err(Error::DegenerateChannel(
            "Rayleigh profile needs at least one path".into(),
        ));
    }
    let s = 1.0 / (paths as f64).sqrt();
    Ok((0..paths).map(|_| rng.complex_normal() * s).collect())
}

/// `y = h (*) x + w` with circular convolution.
pub fn apply_channel(
    x: &[Complex64],
    ch: &ChannelRealization,
    rng: &mut RngStream,
) -> Result<Vec<Complex64>> {
    if x.len() != ch.block_len() {
        return Err(Error::LengthMismatch {
            expected: ch.block_len(),
            actual: x.len(),
        });
    }
    let mut y = circular_convolve(&ch.taps, x);
    add_white_noise(&mut y, ch.noise_var(), rng)?;
    Ok(y)
}

fn add_white_noise(y: &mut [Complex64], noise_var: f64, rng: &mut RngStream) -> Result<()> {
    let w = gaussian_vector(y.len(), &vec![noise_var; y.len()], rng)?;
    y.iter_mut().zip(w).for_each(|(a, b)| *a += b);
    Ok(())
}

/// Channel that is static within consecutive `segment_len`-sample segments.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingChannel {
    pub segments: Vec<ChannelRealization>,
    pub segment_len: usize,
}

impl TimeVaryingChannel {
    pub fn new(segments: Vec<ChannelRealization>, segment_len: usize) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::Dimension("time-varying channel needs a segment".into()))?;
        if segment_len == 0 {
            return Err(Error::Dimension("segment length must be positive".into()));
        }
        let l = first.taps.len();
        if segments
            .iter()
            .any(|s| s.taps.len() != l || s.block_len() != segment_len)
        {
            return Err(Error::Dimension(
                "segments must share tap count and length".into(),
            ));
        }
        Ok(Self {
            segments,
            segment_len,
        })
    }

    /// One static realization covering a whole `block_len` block.
    pub fn static_block(taps: Vec<Complex64>, block_len: usize, noise_var: f64) -> Result<Self> {
        Self::new(
            vec![ChannelRealization::new(taps, block_len, noise_var)?],
            block_len,
        )
    }

    pub fn num_taps(&self) -> usize {
        self.segments[0].taps.len()
    }

    pub fn noise_var(&self) -> f64 {
        self.segments[0].noise_var()
    }

    /// Taps in force at sample `n` (clamped to the last segment).
    pub fn taps_at(&self, n: usize) -> &[Complex64] {
        let idx = (n / self.segment_len).min(self.segments.len() - 1);
        &self.segments[idx].taps
    }
}

/// Draws a time-varying realization for `block_len` samples.
pub fn make_time_varying(
    profile: &ChannelProfile,
    block_len: usize,
    noise_var: f64,
    rng: &mut RngStream,
) -> Result<TimeVaryingChannel> {
    match profile {
        ChannelProfile::DoublySelective {
            paths,
            doppler,
            segment_len,
        } => {
            let seg = (*segment_len).max(1);
            let nseg = block_len.div_ceil(seg);
            let centres: Vec<f64> = (0..nseg)
                .map(|i| (i * seg) as f64 + seg as f64 / 2.0)
                .collect();
            let per_tap = jakes_taps(*paths, *doppler, &centres, rng)?;
            let segments = (0..nseg)
                .map(|i| {
                    let taps = per_tap.iter().map(|tap| tap[i]).collect();
                    ChannelRealization::new(taps, seg, noise_var)
                })
                .collect::<Result<Vec<_>>>()?;
            TimeVaryingChannel::new(segments, seg)
        }
        _ => {
            let ch = make_channel(profile, block_len, noise_var, rng)?;
            TimeVaryingChannel::new(vec![ch], block_len)
        }
    }
}

/// Sum-of-sinusoids Clarke model: each tap has `SINUSOIDS` scatterers with
/// random arrival angle and phase; evaluated at sample instants `times`.
fn jakes_taps(
    paths: usize,
    doppler: f64,
    times: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<Vec<Complex64>>> {
    const SINUSOIDS: usize = 16;
    if paths == 0 {
        return Err(Error::DegenerateChannel(
            "doubly selective profile needs a path".into(),
        ));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let amp = 1.0 / ((paths * SINUSOIDS) as f64).sqrt();
    Ok((0..paths)
        .map(|_| {
            let scatter: Vec<(f64, f64)> = (0..SINUSOIDS)
                .map(|_| ((two_pi * rng.uniform()).cos(), two_pi * rng.uniform()))
                .collect();
            times
                .iter()
                .map(|&t| {
                    scatter
                        .iter()
                        .map(|&(cos_a, phi)| {
                            Complex64::from_polar(amp, two_pi * doppler * t * cos_a + phi)
                        })
                        .sum()
                })
                .collect()
        })
        .collect())
}

/// Linear convolution with per-segment taps (zero symbols before sample 0 and
/// after sample K-1) plus white noise. Returns the `K + L - 1` samples
/// including the channel tail.
pub fn apply_channel_time_varying(
    x: &[Complex64],
    tv: &TimeVaryingChannel,
    rng: &mut RngStream,
) -> Result<Vec<Complex64>> {
    let k = x.len();
    let mut y: Vec<Complex64> = (0..k + tv.num_taps() - 1)
        .map(|n| {
            tv.taps_at(n)
                .iter()
                .enumerate()
                .filter(|&(l, _)| l <= n && n - l < k)
                .map(|(l, h)| h * x[n - l])
                .sum()
        })
        .collect();
    add_white_noise(&mut y, tv.noise_var(), rng)?;
    Ok(y)
}

/// Pilot-aided channel estimate quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsiMismatchSpec {
    pub pilots: usize,
    #[serde(default = "enabled")]
    pub enabled: bool,
}

fn enabled() -> bool {
    true
}

/// Perturbs the taps with CN(0, sigma_w^2 / K_P) estimation noise and
/// recomputes the frequency response. Noise statistics are kept.
pub fn mismatch_channel(
    ch: &ChannelRealization,
    spec: &CsiMismatchSpec,
    rng: &mut RngStream,
) -> Result<ChannelRealization> {
    if !spec.enabled {
        return Ok(ch.clone());
    }
    if spec.pilots < ch.taps.len() {
        return Err(Error::TooFewPilots {
            pilots: spec.pilots,
            taps: ch.taps.len(),
        });
    }
    let var = estimation_noise_variance(ch.noise_var(), spec.pilots);
    let taps: Vec<Complex64> = ch
        .taps
        .iter()
        .map(|h| h + rng.complex_normal() * var.sqrt())
        .collect();
    let mut out = ChannelRealization::new(taps, ch.block_len(), 0.0)?;
    out.noise_cov_diag = ch.noise_cov_diag.clone();
    Ok(out)
}

/// `sigma_nu^2 = sigma_w^2 / (K_P sigma_x^2)` with unit symbol power.
pub fn estimation_noise_variance(noise_var: f64, pilots: usize) -> f64 {
    noise_var / pilots as f64
}

/// `R x T` frequency-selective MIMO channel over `K`-symbol blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoChannelRealization {
    pub tx: usize,
    pub rx: usize,
    /// taps[r][t]
    pub taps: Vec<Vec<Vec<Complex64>>>,
    /// freq[(k * rx + r) * tx + t]
    freq: Vec<Complex64>,
    pub block_len: usize,
    pub noise_var: f64,
}

impl MimoChannelRealization {
    pub fn new(taps: Vec<Vec<Vec<Complex64>>>, block_len: usize, noise_var: f64) -> Result<Self> {
        let rx = taps.len();
        let tx = taps.first().map_or(0, |r| r.len());
        if rx == 0 || tx == 0 || taps.iter().any(|r| r.len() != tx) {
            return Err(Error::Dimension(
                "MIMO taps must form a non-empty R x T table".into(),
            ));
        }
        let mut freq = vec![Complex64::new(0.0, 0.0); block_len * rx * tx];
        for (r, row) in taps.iter().enumerate() {
            for (t, h) in row.iter().enumerate() {
                for (k, z) in frequency_response(h, block_len)?.into_iter().enumerate() {
                    freq[(k * rx + r) * tx + t] = z;
                }
            }
        }
        Ok(Self {
            tx,
            rx,
            taps,
            freq,
            block_len,
            noise_var,
        })
    }

    /// Same profile on every antenna pair, drawn independently for random profiles.
    pub fn from_profile(
        profile: &ChannelProfile,
        tx: usize,
        rx: usize,
        block_len: usize,
        noise_var: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let taps = (0..rx)
            .map(|_| {
                (0..tx)
                    .map(|_| profile.draw_taps(rng))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(taps, block_len, noise_var)
    }

    /// Like [`Self::from_profile`], but every tap of every link is rotated by
    /// an independent uniform phase. The power delay profile is kept while a
    /// static preset no longer yields rank-one bins.
    pub fn from_profile_random_phase(
        profile: &ChannelProfile,
        tx: usize,
        rx: usize,
        block_len: usize,
        noise_var: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut taps = Vec::with_capacity(rx);
        for _ in 0..rx {
            let mut row = Vec::with_capacity(tx);
            for _ in 0..tx {
                let link: Vec<Complex64> = profile
                    .draw_taps(rng)?
                    .into_iter()
                    .map(|h| h * Complex64::from_polar(1.0, std::f64::consts::TAU * rng.uniform()))
                    .collect();
                row.push(link);
            }
            taps.push(row);
        }
        Self::new(taps, block_len, noise_var)
    }

    #[inline]
    pub fn h(&self, k: usize, r: usize, t: usize) -> Complex64 {
        self.freq[(k * self.rx + r) * self.tx + t]
    }

    /// The `R x T` matrix of bin `k`, row-major.
    pub fn bin(&self, k: usize) -> &[Complex64] {
        &self.freq[k * self.rx * self.tx..(k + 1) * self.rx * self.tx]
    }
}

/// `y_r = sum_t h_{r,t} (*) x_t + w_r`.
pub fn apply_mimo_channel(
    x_per_antenna: &[Vec<Complex64>],
    ch: &MimoChannelRealization,
    rng: &mut RngStream,
) -> Result<Vec<Vec<Complex64>>> {
    if x_per_antenna.len() != ch.tx || x_per_antenna.iter().any(|x| x.len() != ch.block_len) {
        return Err(Error::Dimension(format!(
            "expected {} blocks of {} symbols",
            ch.tx, ch.block_len
        )));
    }
    (0..ch.rx)
        .map(|r| {
            let mut y = vec![Complex64::new(0.0, 0.0); ch.block_len];
            for (t, x) in x_per_antenna.iter().enumerate() {
                for (acc, v) in y.iter_mut().zip(circular_convolve(&ch.taps[r][t], x)) {
                    *acc += v;
                }
            }
            add_white_noise(&mut y, ch.noise_var, rng)?;
            Ok(y)
        })
        .collect()
}
