//! Frequency-domain MIMO detector for spatially multiplexed SC-FDE with one
//! EP demapper per transmit antenna, and the PIC/SIC turbo schedules.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::MimoChannelRealization;
use crate::fde::{
    run_streams, JointEqualizer, ReceiverConfig, ReceiverOutput, Schedule, StreamSpec,
};
use crate::mapping::GaussianEstimate;
use crate::numerics::DftPlan;
use crate::{Error, Result};

type C = Complex64;

/// Noise variance used in place of an exactly zero one.
pub const ZERO_NOISE_REGULARIZER: f64 = 1e-9;

/// Antenna configuration and turbo schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimoSpec {
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub schedule: Schedule,
}

/// Per-bin inverse covariances and per-antenna filter statistics of one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoDetectorState {
    pub rx: usize,
    /// `lambda[(k * R + r) * R + r']`.
    pub lambda: Vec<C>,
    pub xi: Vec<f64>,
    pub v_e: Vec<f64>,
}

impl MimoDetectorState {
    pub fn bin(&self, k: usize) -> &[C] {
        &self.lambda[k * self.rx * self.rx..(k + 1) * self.rx * self.rx]
    }
}

/// Inverse of a Hermitian positive definite `n x n` matrix (row-major).
fn hpd_inverse(a: &[C], n: usize, bin: usize) -> Result<Vec<C>> {
    match n {
        1 => {
            if !(a[0].re > 0.0) {
                return Err(Error::SingularBin(bin));
            }
            Ok(vec![C::new(1.0 / a[0].re, 0.0)])
        }
        2 => {
            let det = (a[0] * a[3] - a[1] * a[2]).re;
            if !(det > 0.0) || !(a[0].re > 0.0) {
                return Err(Error::SingularBin(bin));
            }
            Ok(vec![a[3] / det, -a[1] / det, -a[2] / det, a[0] / det])
        }
        _ => {
            // Cholesky a = L L^H, then a^-1 = L^-H L^-1
            let scale = (0..n).map(|i| a[i * n + i].re).fold(0.0, f64::max);
            let mut l = vec![C::new(0.0, 0.0); n * n];
            for i in 0..n {
                for j in 0..=i {
                    let mut s = a[i * n + j];
                    for p in 0..j {
                        s -= l[i * n + p] * l[j * n + p].conj();
                    }
                    if i == j {
                        if !(s.re > 1e-14 * scale) {
                            return Err(Error::SingularBin(bin));
                        }
                        l[i * n + i] = C::new(s.re.sqrt(), 0.0);
                    } else {
                        l[i * n + j] = s / l[j * n + j].re;
                    }
                }
            }
            let mut linv = vec![C::new(0.0, 0.0); n * n];
            for i in 0..n {
                linv[i * n + i] = C::new(1.0 / l[i * n + i].re, 0.0);
                for j in 0..i {
                    let mut s = C::new(0.0, 0.0);
                    for p in j..i {
                        s += l[i * n + p] * linv[p * n + j];
                    }
                    linv[i * n + j] = -s / l[i * n + i].re;
                }
            }
            let mut inv = vec![C::new(0.0, 0.0); n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut s = C::new(0.0, 0.0);
                    for p in i.max(j)..n {
                        s += linv[p * n + i].conj() * linv[p * n + j];
                    }
                    inv[i * n + j] = s;
                }
            }
            Ok(inv)
        }
    }
}

/// Per bin, `(sigma^2 I_R + sum_t v_d[t] h_t h_t^H)^-1`.
pub fn mimo_bin_inverse(
    ch: &MimoChannelRealization,
    v_d: &[f64],
    noise_var: f64,
) -> Result<Vec<C>> {
    if v_d.len() != ch.tx {
        return Err(Error::LengthMismatch {
            expected: ch.tx,
            actual: v_d.len(),
        });
    }
    let (r_n, t_n) = (ch.rx, ch.tx);
    let mut out = Vec::with_capacity(ch.block_len * r_n * r_n);
    let mut sigma = vec![C::new(0.0, 0.0); r_n * r_n];
    for k in 0..ch.block_len {
        for r in 0..r_n {
            let mut d = noise_var;
            for (t, &v) in v_d.iter().enumerate() {
                d += v * ch.h(k, r, t).norm_sqr();
            }
            sigma[r * r_n + r] = C::new(d, 0.0);
            for rp in 0..r {
                let mut z = C::new(0.0, 0.0);
                for (t, &v) in v_d.iter().enumerate().take(t_n) {
                    z += ch.h(k, r, t) * ch.h(k, rp, t).conj() * v;
                }
                sigma[r * r_n + rp] = z;
                sigma[rp * r_n + r] = z.conj();
            }
        }
        out.extend(hpd_inverse(&sigma, r_n, k)?);
    }
    Ok(out)
}

/// Filter statistics for feedback variances `v_d`.
pub fn mimo_filter(
    ch: &MimoChannelRealization,
    v_d: &[f64],
    noise_var: f64,
) -> Result<MimoDetectorState> {
    let lambda = mimo_bin_inverse(ch, v_d, noise_var)?;
    let (r_n, t_n, k_n) = (ch.rx, ch.tx, ch.block_len);
    let mut xi = vec![0.0; t_n];
    for k in 0..k_n {
        let lam = &lambda[k * r_n * r_n..(k + 1) * r_n * r_n];
        for (t, x) in xi.iter_mut().enumerate() {
            for r in 0..r_n {
                let mut g = C::new(0.0, 0.0);
                for rp in 0..r_n {
                    g += lam[r * r_n + rp] * ch.h(k, rp, t);
                }
                *x += (ch.h(k, r, t).conj() * g).re;
            }
        }
    }
    xi.iter_mut().for_each(|x| *x /= k_n as f64);
    if let Some(t) = xi.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::DegenerateChannel(format!(
            "transmit antenna {t} is not observed"
        )));
    }
    let v_e = xi
        .iter()
        .zip(v_d)
        .map(|(x, v)| (1.0 / x - v).max(0.0))
        .collect();
    Ok(MimoDetectorState {
        rx: r_n,
        lambda,
        xi,
        v_e,
    })
}

/// FD IC for all antennas: `x^e_{k,t} = x^d_{k,t} + sum_r conj(f_{k,r,t}) (y_{k,r} - sum_t' h_{k,r,t'} x^d_{k,t'})`
/// with `f_{k,:,t} = Lambda_k h_{k,:,t} / xi_t`. Inputs and outputs are in the frequency domain.
pub fn mimo_equalize_fd(
    y_fd: &[Vec<C>],
    x_d_fd: &[Vec<C>],
    ch: &MimoChannelRealization,
    state: &MimoDetectorState,
) -> Vec<Vec<C>> {
    let (r_n, t_n, k_n) = (ch.rx, ch.tx, ch.block_len);
    let mut out = vec![vec![C::new(0.0, 0.0); k_n]; t_n];
    let mut res = vec![C::new(0.0, 0.0); r_n];
    let mut g = vec![C::new(0.0, 0.0); r_n];
    for k in 0..k_n {
        for (r, e) in res.iter_mut().enumerate() {
            let mut z = C::new(0.0, 0.0);
            for (t, xd) in x_d_fd.iter().enumerate() {
                z += ch.h(k, r, t) * xd[k];
            }
            *e = y_fd[r][k] - z;
        }
        let lam = state.bin(k);
        for t in 0..t_n {
            for (r, gr) in g.iter_mut().enumerate() {
                let mut z = C::new(0.0, 0.0);
                for rp in 0..r_n {
                    z += lam[r * r_n + rp] * ch.h(k, rp, t);
                }
                *gr = z;
            }
            let mut acc = C::new(0.0, 0.0);
            for r in 0..r_n {
                acc += (g[r] / state.xi[t]).conj() * res[r];
            }
            out[t][k] = x_d_fd[t][k] + acc;
        }
    }
    out
}

/// Time-domain per-antenna extrinsic messages from time-domain feedback.
pub fn mimo_detect(
    y_fd: &[Vec<C>],
    x_d: &[GaussianEstimate],
    ch: &MimoChannelRealization,
    noise_var: f64,
) -> Result<Vec<GaussianEstimate>> {
    if y_fd.len() != ch.rx || x_d.len() != ch.tx {
        return Err(Error::Dimension(format!(
            "expected {} receive blocks and {} feedback messages",
            ch.rx, ch.tx
        )));
    }
    let plan = DftPlan::new(ch.block_len)?;
    let v_d: Vec<f64> = x_d.iter().map(|e| e.variance).collect();
    let state = mimo_filter(ch, &v_d, noise_var)?;
    let xd_fd: Vec<Vec<C>> = x_d
        .iter()
        .map(|e| {
            let mut v = e.mean.clone();
            plan.forward(&mut v);
            v
        })
        .collect();
    Ok(mimo_equalize_fd(y_fd, &xd_fd, ch, &state)
        .into_iter()
        .zip(&state.v_e)
        .map(|(mut xe, &ve)| {
            plan.inverse(&mut xe);
            GaussianEstimate::new(xe, ve)
        })
        .collect())
}

/// [`JointEqualizer`] over the `T` transmit streams.
pub struct MimoEqualizer {
    y_fd: Vec<Vec<C>>,
    ch: MimoChannelRealization,
    noise_var: f64,
}

impl MimoEqualizer {
    /// `ch` is the receiver's channel knowledge; a zero noise variance is regularized.
    pub fn new(y: &[Vec<C>], ch: &MimoChannelRealization) -> Result<Self> {
        if y.len() != ch.rx || y.iter().any(|v| v.len() != ch.block_len) {
            return Err(Error::Dimension(format!(
                "expected {} blocks of {} samples",
                ch.rx, ch.block_len
            )));
        }
        let plan = DftPlan::new(ch.block_len)?;
        let y_fd = y
            .iter()
            .map(|v| {
                let mut v = v.clone();
                plan.forward(&mut v);
                v
            })
            .collect();
        let noise_var = if ch.noise_var > 0.0 {
            ch.noise_var
        } else {
            ZERO_NOISE_REGULARIZER
        };
        Ok(Self {
            y_fd,
            ch: ch.clone(),
            noise_var,
        })
    }
}

impl JointEqualizer for MimoEqualizer {
    fn num_streams(&self) -> usize {
        self.ch.tx
    }

    fn block_len(&self) -> usize {
        self.ch.block_len
    }

    fn equalize(
        &mut self,
        feedback: &[GaussianEstimate],
        _tau: usize,
        _s: usize,
    ) -> Result<Vec<GaussianEstimate>> {
        mimo_detect(&self.y_fd, feedback, &self.ch, self.noise_var)
    }
}

/// MIMO turbo receiver; one independently coded stream per transmit antenna.
pub fn run_mimo_receiver(
    y: &[Vec<C>],
    ch: &MimoChannelRealization,
    schedule: Schedule,
    streams: &[StreamSpec<'_>],
    cfg: &ReceiverConfig,
) -> Result<Vec<ReceiverOutput>> {
    let mut eq = MimoEqualizer::new(y, ch)?;
    run_streams(&mut eq, streams, cfg, schedule)
}
