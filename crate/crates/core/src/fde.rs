//! Single-tap MMSE frequency-domain equalization and the double-loop
//! (turbo iterations outside, self iterations inside) receiver driver.
//!
//! The driver is written against [`JointEqualizer`], so the circular SC-FDE
//! receiver here, the overlap receiver and the MIMO detector share one
//! implementation of demapping, feedback, decoding and bookkeeping.

use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::estimate_mi;
use crate::bicm::{bcjr_siso_decode, CodeSpec, Interleaver};
use crate::channel::ChannelRealization;
use crate::mapping::{
    demap_posterior_moments, ep_extrinsic_feedback, extrinsic_llrs, prior_moments, symbol_priors,
    Constellation, DampingSchedule, GaussianEstimate, SymbolPmf,
};
use crate::numerics::DftPlan;
use crate::{Error, Result, VARIANCE_FLOOR};

/// Single-tap filter for one `(tau, s)` pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FdeFilter {
    pub f: Vec<Complex64>,
    pub xi: f64,
    pub v_e: f64,
}

/// `f_k = h_k / (xi (sigma_k^2 + v_d |h_k|^2))`, `xi = mean_k |h_k|^2 / (sigma_k^2 + v_d |h_k|^2)`,
/// `v_e = 1/xi - v_d`.
pub fn compute_filter(h_fd: &[Complex64], noise_diag: &[f64], v_d: f64) -> Result<FdeFilter> {
    if h_fd.len() != noise_diag.len() {
        return Err(Error::LengthMismatch {
            expected: h_fd.len(),
            actual: noise_diag.len(),
        });
    }
    if h_fd.is_empty() {
        return Err(Error::EmptyBlock);
    }
    if !(v_d >= 0.0) || v_d.is_infinite() {
        return Err(Error::NegativeVariance(v_d));
    }
    let k = h_fd.len() as f64;
    let mut g: Vec<Complex64> = h_fd
        .iter()
        .zip(noise_diag)
        .map(|(h, &n)| {
            let den = n + v_d * h.norm_sqr();
            if den > 0.0 {
                h * (1.0 / den)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let xi = h_fd
        .iter()
        .zip(&g)
        .map(|(h, g)| (h.conj() * g).re)
        .sum::<f64>()
        / k;
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::DegenerateChannel(format!(
            "filter normalization xi = {xi}"
        )));
    }
    g.iter_mut().for_each(|z| *z /= xi);
    Ok(FdeFilter {
        f: g,
        xi,
        v_e: (1.0 / xi - v_d).max(0.0),
    })
}

/// Frequency-domain IC: `x^e_k = x^d_k + conj(f_k) (y_k - h_k x^d_k)`.
pub fn equalize_fd(
    y_fd: &[Complex64],
    x_d_fd: &[Complex64],
    h_fd: &[Complex64],
    filt: &FdeFilter,
) -> Vec<Complex64> {
    y_fd.iter()
        .zip(x_d_fd)
        .zip(h_fd)
        .zip(&filt.f)
        .map(|(((y, xd), h), f)| xd + f.conj() * (y - h * xd))
        .collect()
}

/// Time-domain equalizer message from FD inputs.
pub fn equalize(
    y_fd: &[Complex64],
    x_d_fd: &[Complex64],
    h_fd: &[Complex64],
    filt: &FdeFilter,
) -> Result<GaussianEstimate> {
    let k = y_fd.len();
    if x_d_fd.len() != k || h_fd.len() != k || filt.f.len() != k {
        return Err(Error::Dimension(
            "equalizer inputs must share the block length".into(),
        ));
    }
    let mut xe = equalize_fd(y_fd, x_d_fd, h_fd, filt);
    DftPlan::new(k)?.inverse(&mut xe);
    Ok(GaussianEstimate::new(xe, filt.v_e))
}

/// Which statistic the demapper feeds back to the equalizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    /// EP extrinsic (Gaussian division of the demapper posterior).
    Ep,
    /// Prior-only soft symbols, no self iterations (LE-EXTIC).
    Ext,
    /// Demapper/decoder posterior moments (LE-APPIC, SILE-APPIC).
    App,
}

impl FromStr for FeedbackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ep" => Ok(Self::Ep),
            "ext" => Ok(Self::Ext),
            "app" => Ok(Self::App),
            _ => Err(Error::config(
                "receiver.mode",
                format!("unknown feedback mode `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    pub feedback_mode: FeedbackMode,
    /// Self iterations `S_tau` for `tau = 0..=T`.
    pub s_per_tau: Vec<usize>,
    pub turbo_iterations: usize,
    pub damping: DampingSchedule,
}

impl ReceiverConfig {
    /// Same number of self iterations in every turbo iteration.
    pub fn uniform(
        mode: FeedbackMode,
        self_iterations: usize,
        turbo_iterations: usize,
        damping: DampingSchedule,
    ) -> Self {
        Self {
            feedback_mode: mode,
            s_per_tau: vec![self_iterations; turbo_iterations + 1],
            turbo_iterations,
            damping,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_per_tau.len() != self.turbo_iterations + 1 {
            return Err(Error::config(
                "receiver.s_per_tau",
                format!(
                    "expected {} entries, found {}",
                    self.turbo_iterations + 1,
                    self.s_per_tau.len()
                ),
            ));
        }
        self.damping.validate()
    }

    /// Self iterations actually run at `tau` (EXT never self-iterates).
    pub fn self_iterations(&self, tau: usize) -> usize {
        match self.feedback_mode {
            FeedbackMode::Ext => 0,
            _ => self.s_per_tau.get(tau).copied().unwrap_or(0),
        }
    }
}

/// Statistics of one self iteration of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiRecord {
    pub tau: usize,
    pub s: usize,
    pub v_d: f64,
    pub v_e: f64,
    pub gamma_bar: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReceiverDiagnostics {
    pub records: Vec<SiRecord>,
    /// Measured MI of the demapper extrinsic LLRs, one entry per turbo iteration
    /// (only when the transmitted bits were supplied).
    pub mi_equalizer: Vec<f64>,
    /// Measured MI of the decoder extrinsic LLRs on the coded bits.
    pub mi_decoder: Vec<f64>,
}

impl ReceiverDiagnostics {
    pub fn fallback_count(&self) -> usize {
        self.records.iter().map(|r| r.fallbacks).sum()
    }
}

/// Receiver output for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverOutput {
    /// Decisions after the last turbo iteration.
    pub info_hard: Vec<u8>,
    /// Decisions after each turbo iteration.
    pub info_hard_per_tau: Vec<Vec<u8>>,
    pub diagnostics: ReceiverDiagnostics,
}

/// Static description of one transmitted stream.
#[derive(Debug, Clone, Copy)]
pub struct StreamSpec<'a> {
    pub constellation: &'a Constellation,
    /// `None` for uncoded transmission (decisions straight from the demapper).
    pub code: Option<&'a CodeSpec>,
    pub interleaver: &'a Interleaver,
    /// Interleaved coded bits as mapped, for MI diagnostics.
    pub mapped_bits: Option<&'a [u8]>,
}

/// Equalizer producing one extrinsic message per stream from the demapper feedback.
pub trait JointEqualizer {
    fn num_streams(&self) -> usize;

    /// Symbols per stream.
    fn block_len(&self) -> usize;

    fn equalize(
        &mut self,
        feedback: &[GaussianEstimate],
        tau: usize,
        s: usize,
    ) -> Result<Vec<GaussianEstimate>>;
}

/// Circular SC-FDE over one stream.
pub struct FdeEqualizer {
    y_fd: Vec<Complex64>,
    h_fd: Vec<Complex64>,
    noise_diag: Vec<f64>,
    plan: DftPlan,
}

impl FdeEqualizer {
    /// `ch` is the receiver's (possibly mismatched) channel knowledge.
    pub fn new(y: &[Complex64], ch: &ChannelRealization) -> Result<Self> {
        if y.len() != ch.block_len() {
            return Err(Error::LengthMismatch {
                expected: ch.block_len(),
                actual: y.len(),
            });
        }
        let plan = DftPlan::new(y.len())?;
        let mut y_fd = y.to_vec();
        plan.forward(&mut y_fd);
        Ok(Self {
            y_fd,
            h_fd: ch.freq_response.clone(),
            noise_diag: ch.noise_cov_diag.clone(),
            plan,
        })
    }
}

impl JointEqualizer for FdeEqualizer {
    fn num_streams(&self) -> usize {
        1
    }

    fn block_len(&self) -> usize {
        self.y_fd.len()
    }

    fn equalize(
        &mut self,
        feedback: &[GaussianEstimate],
        _tau: usize,
        _s: usize,
    ) -> Result<Vec<GaussianEstimate>> {
        let fb = &feedback[0];
        let mut xd = fb.mean.clone();
        self.plan.forward(&mut xd);
        let filt = compute_filter(&self.h_fd, &self.noise_diag, fb.variance)?;
        let mut xe = equalize_fd(&self.y_fd, &xd, &self.h_fd, &filt);
        self.plan.inverse(&mut xe);
        Ok(vec![GaussianEstimate::new(xe, filt.v_e)])
    }
}

/// Turbo schedule across streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// All streams decoded together after each detection pass.
    Pic,
    /// Streams decoded one at a time in natural order, each followed by a fresh detection pass.
    Sic,
}

struct Stream<'a> {
    spec: StreamSpec<'a>,
    la: Vec<f64>,
    app_llrs: Option<Vec<f64>>,
    priors: SymbolPmf,
    ext: GaussianEstimate,
    prev: Option<GaussianEstimate>,
    out: ReceiverOutput,
}

impl<'a> Stream<'a> {
    fn new(spec: StreamSpec<'a>, k: usize) -> Result<Self> {
        let nbits = k * spec.constellation.bits_per_symbol();
        if spec.interleaver.len() != nbits {
            return Err(Error::LengthMismatch {
                expected: nbits,
                actual: spec.interleaver.len(),
            });
        }
        if let Some(code) = spec.code {
            if code.coded_len() != nbits {
                return Err(Error::LengthMismatch {
                    expected: nbits,
                    actual: code.coded_len(),
                });
            }
        }
        let la = vec![0.0; nbits];
        Ok(Self {
            priors: symbol_priors(&la, spec.constellation)?,
            spec,
            la,
            app_llrs: None,
            ext: GaussianEstimate::uninformative(k),
            prev: None,
            out: ReceiverOutput {
                info_hard: Vec::new(),
                info_hard_per_tau: Vec::new(),
                diagnostics: ReceiverDiagnostics::default(),
            },
        })
    }

    /// Start of a detection pass: fresh priors, no equalizer message, no damping memory.
    fn reset(&mut self) -> Result<()> {
        self.priors = symbol_priors(&self.la, self.spec.constellation)?;
        self.ext = GaussianEstimate::uninformative(self.ext.len());
        self.prev = None;
        Ok(())
    }

    fn feedback(
        &mut self,
        cfg: &ReceiverConfig,
        tau: usize,
        s: usize,
    ) -> Result<(GaussianEstimate, f64, bool)> {
        let c = self.spec.constellation;
        let (mut est, gamma_bar, fallback) = match (cfg.feedback_mode, s, &self.app_llrs) {
            (FeedbackMode::App, 0, Some(app)) => {
                let (mean, vars) = prior_moments(&symbol_priors(app, c)?, c);
                let g = vars.iter().sum::<f64>() / vars.len() as f64;
                (GaussianEstimate::new(mean, g), g, false)
            }
            (FeedbackMode::App, _, _) => {
                let post = demap_posterior_moments(&self.ext, &self.priors, c)?;
                let fresh = GaussianEstimate::new(post.mean, post.avg_variance);
                let est = crate::mapping::damp(fresh, self.prev.as_ref(), &cfg.damping, tau, s);
                (est, post.avg_variance, false)
            }
            _ => {
                let post = demap_posterior_moments(&self.ext, &self.priors, c)?;
                let fb = ep_extrinsic_feedback(
                    &post.mean,
                    post.avg_variance,
                    &self.ext,
                    self.prev.as_ref(),
                    &cfg.damping,
                    tau,
                    s,
                );
                (fb.estimate, post.avg_variance, fb.fallback)
            }
        };
        self.prev = Some(est.clone());
        est.variance = est.variance.max(VARIANCE_FLOOR);
        Ok((est, gamma_bar, fallback))
    }

    fn decode(&mut self) -> Result<()> {
        let c = self.spec.constellation;
        let le = extrinsic_llrs(&self.ext, &self.la, c)?;
        let diag = &mut self.out.diagnostics;
        if let Some(bits) = self.spec.mapped_bits {
            diag.mi_equalizer.push(estimate_mi(&le, bits)?);
        }
        let pi = self.spec.interleaver;
        match self.spec.code {
            None => {
                let post: Vec<f64> = le.iter().zip(&self.la).map(|(a, b)| a + b).collect();
                let hard = pi
                    .interleave(&post, true)?
                    .iter()
                    .map(|&l| u8::from(l < 0.0))
                    .collect();
                self.out.info_hard_per_tau.push(hard);
            }
            Some(code) => {
                let siso = bcjr_siso_decode(&pi.interleave(&le, true)?, code)?;
                if let Some(bits) = self.spec.mapped_bits {
                    let coded = pi.interleave(bits, true)?;
                    diag.mi_decoder
                        .push(estimate_mi(&siso.extrinsic.values, &coded)?);
                }
                self.la = pi.interleave(&siso.extrinsic.values, false)?;
                self.app_llrs = Some(pi.interleave(&siso.posterior_coded.values, false)?);
                self.out.info_hard_per_tau.push(siso.info_hard);
            }
        }
        self.out.info_hard = self
            .out
            .info_hard_per_tau
            .last()
            .cloned()
            .unwrap_or_default();
        Ok(())
    }
}

fn detection_pass<E: JointEqualizer + ?Sized>(
    eq: &mut E,
    streams: &mut [Stream<'_>],
    cfg: &ReceiverConfig,
    tau: usize,
) -> Result<()> {
    for st in streams.iter_mut() {
        st.reset()?;
    }
    for s in 0..=cfg.self_iterations(tau) {
        let mut feedback = Vec::with_capacity(streams.len());
        let mut stats = Vec::with_capacity(streams.len());
        for st in streams.iter_mut() {
            let (fb, g, fallback) = st.feedback(cfg, tau, s)?;
            stats.push((fb.variance, g, fallback));
            feedback.push(fb);
        }
        let ext = eq.equalize(&feedback, tau, s)?;
        if ext.len() != streams.len() {
            return Err(Error::Dimension(
                "equalizer returned the wrong number of streams".into(),
            ));
        }
        for ((st, e), (v_d, g, fallback)) in streams.iter_mut().zip(ext).zip(stats) {
            st.out.diagnostics.records.push(SiRecord {
                tau,
                s,
                v_d,
                v_e: e.variance,
                gamma_bar: g,
                fallbacks: usize::from(fallback),
            });
            st.ext = e;
        }
    }
    Ok(())
}

/// Runs the full turbo receiver on every stream of `eq`.
pub fn run_streams<E: JointEqualizer + ?Sized>(
    eq: &mut E,
    specs: &[StreamSpec<'_>],
    cfg: &ReceiverConfig,
    schedule: Schedule,
) -> Result<Vec<ReceiverOutput>> {
    cfg.validate()?;
    if specs.len() != eq.num_streams() {
        return Err(Error::Dimension(format!(
            "{} stream specs for an equalizer with {} streams",
            specs.len(),
            eq.num_streams()
        )));
    }
    let k = eq.block_len();
    let mut streams = specs
        .iter()
        .map(|&s| Stream::new(s, k))
        .collect::<Result<Vec<_>>>()?;
    let coded = specs.iter().any(|s| s.code.is_some());
    let last_tau = if coded { cfg.turbo_iterations } else { 0 };
    for tau in 0..=last_tau {
        match schedule {
            Schedule::Pic => {
                detection_pass(eq, &mut streams, cfg, tau)?;
                for st in streams.iter_mut() {
                    st.decode()?;
                }
            }
            Schedule::Sic => {
                for t in 0..streams.len() {
                    detection_pass(eq, &mut streams, cfg, tau)?;
                    streams[t].decode()?;
                }
            }
        }
    }
    Ok(streams.into_iter().map(|s| s.out).collect())
}

/// Demapper extrinsic LLRs after one detection pass with the given priors
/// (the equalizer side of an EXIT measurement).
pub fn detector_extrinsic<E: JointEqualizer + ?Sized>(
    eq: &mut E,
    specs: &[StreamSpec<'_>],
    la: &[Vec<f64>],
    cfg: &ReceiverConfig,
    tau: usize,
) -> Result<Vec<Vec<f64>>> {
    let k = eq.block_len();
    let mut streams = specs
        .iter()
        .map(|&s| Stream::new(s, k))
        .collect::<Result<Vec<_>>>()?;
    for (st, l) in streams.iter_mut().zip(la) {
        if l.len() != st.la.len() {
            return Err(Error::LengthMismatch {
                expected: st.la.len(),
                actual: l.len(),
            });
        }
        st.la = l.clone();
    }
    detection_pass(eq, &mut streams, cfg, tau)?;
    streams
        .iter()
        .map(|st| extrinsic_llrs(&st.ext, &st.la, st.spec.constellation))
        .collect()
}

/// Circular SC-FDE turbo receiver for one block.
pub fn run_receiver(
    y: &[Complex64],
    ch: &ChannelRealization,
    c: &Constellation,
    code: Option<&CodeSpec>,
    pi: &Interleaver,
    cfg: &ReceiverConfig,
) -> Result<ReceiverOutput> {
    let spec = StreamSpec {
        constellation: c,
        code,
        interleaver: pi,
        mapped_bits: None,
    };
    let mut eq = FdeEqualizer::new(y, ch)?;
    Ok(run_streams(&mut eq, &[spec], cfg, Schedule::Pic)?.remove(0))
}
