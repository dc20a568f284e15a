//! Gray-labelled constellations and the EP soft demapper.
//!
//! Bit labels are read most-significant bit first: bit `j` of a `q`-bit label
//! is `(label >> (q - 1 - j)) & 1`. Prior weights follow `exp(-b * L_a)`, so a
//! positive LLR favours bit 0.

use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bicm::clamp_llr;
use crate::{Error, Result, VARIANCE_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationKind {
    Bpsk,
    Qpsk,
    Psk8,
    Qam16,
    Qam64,
}

impl FromStr for ConstellationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::Bpsk),
            "qpsk" => Ok(Self::Qpsk),
            "psk8" | "8psk" => Ok(Self::Psk8),
            "qam16" | "16qam" => Ok(Self::Qam16),
            "qam64" | "64qam" => Ok(Self::Qam64),
            _ => Err(Error::UnknownConstellation(s.to_string())),
        }
    }
}

fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

/// Zero-mean, unit-power alphabet with a Gray bit labelling.
#[derive(Debug, Clone)]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<Complex64>,
    labels: Vec<u32>,
    q: usize,
    /// bits[a * q + j] = bit j of point a's label
    bits: Vec<u8>,
}

impl Constellation {
    pub fn new(kind: ConstellationKind) -> Self {
        let (points, labels) = match kind {
            ConstellationKind::Bpsk => (
                vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
                vec![0, 1],
            ),
            ConstellationKind::Qpsk => square_qam(1),
            ConstellationKind::Psk8 => {
                let pts = (0..8)
                    .map(|i| Complex64::from_polar(1.0, std::f64::consts::PI * i as f64 / 4.0))
                    .collect();
                (pts, (0..8).map(gray).collect())
            }
            ConstellationKind::Qam16 => square_qam(2),
            ConstellationKind::Qam64 => square_qam(3),
        };
        let q = points.len().trailing_zeros() as usize;
        let bits = labels
            .iter()
            .flat_map(|&l| (0..q).map(move |j| ((l >> (q - 1 - j)) & 1) as u8))
            .collect();
        Self {
            kind,
            points,
            labels,
            q,
            bits,
        }
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.q
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn bit(&self, point: usize, j: usize) -> u8 {
        self.bits[point * self.q + j]
    }

    /// Nearest-point hard decision, returned as label bits.
    pub fn hard_demap(&self, symbols: &[Complex64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(symbols.len() * self.q);
        for z in symbols {
            let best = (0..self.size())
                .min_by(|&a, &b| {
                    (z - self.points[a])
                        .norm_sqr()
                        .total_cmp(&(z - self.points[b]).norm_sqr())
                })
                .unwrap();
            out.extend_from_slice(&self.bits[best * self.q..(best + 1) * self.q]);
        }
        out
    }
}

/// Square QAM with `m` bits per axis: first half of the label drives I, second Q.
fn square_qam(m: u32) -> (Vec<Complex64>, Vec<u32>) {
    let side = 1u32 << m;
    let norm = (2.0 * ((side * side) as f64 - 1.0) / 3.0).sqrt();
    // level for per-axis label g: Gray-decoded index i maps to (side-1) - 2i
    let level = |g: u32| {
        let mut i = g;
        let mut shift = g >> 1;
        while shift != 0 {
            i ^= shift;
            shift >>= 1;
        }
        ((side - 1) as f64 - 2.0 * i as f64) / norm
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for gi in 0..side {
        for gq in 0..side {
            points.push(Complex64::new(level(gi), level(gq)));
            labels.push((gi << m) | gq);
        }
    }
    (points, labels)
}

/// Maps `coded_bits` (length `K q`) to `K` symbols.
pub fn map_bits(coded_bits: &[u8], c: &Constellation) -> Result<Vec<Complex64>> {
    let q = c.bits_per_symbol();
    if !coded_bits.len().is_multiple_of(q) {
        return Err(Error::Dimension(format!(
            "{} bits is not a multiple of {q} bits per symbol",
            coded_bits.len()
        )));
    }
    let mut by_label = vec![0usize; c.size()];
    for (a, &l) in c.labels().iter().enumerate() {
        by_label[l as usize] = a;
    }
    Ok(coded_bits
        .chunks(q)
        .map(|chunk| {
            let label = chunk
                .iter()
                .fold(0u32, |acc, &b| (acc << 1) | (b & 1) as u32);
            c.points()[by_label[label as usize]]
        })
        .collect())
}

/// White Gaussian message: per-symbol means with one shared variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEstimate {
    pub mean: Vec<Complex64>,
    pub variance: f64,
}

impl GaussianEstimate {
    pub fn new(mean: Vec<Complex64>, variance: f64) -> Self {
        Self { mean, variance }
    }

    /// The "no information" message (infinite variance).
    pub fn uninformative(len: usize) -> Self {
        Self {
            mean: vec![Complex64::new(0.0, 0.0); len],
            variance: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Per-symbol categorical distribution over the alphabet, held as normalized log weights.
#[derive(Debug, Clone)]
pub struct SymbolPmf {
    m: usize,
    log_weights: Vec<f64>,
}

impl SymbolPmf {
    fn from_log(m: usize, mut log_weights: Vec<f64>) -> Self {
        for row in log_weights.chunks_mut(m) {
            normalize_log(row);
        }
        Self { m, log_weights }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn alphabet_size(&self) -> usize {
        self.m
    }

    pub fn log_row(&self, k: usize) -> &[f64] {
        &self.log_weights[k * self.m..(k + 1) * self.m]
    }

    pub fn weight(&self, k: usize, a: usize) -> f64 {
        self.log_weights[k * self.m + a].exp()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }
}

fn normalize_log(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|l| (l - max).exp()).sum();
    let shift = max + sum.ln();
    row.iter_mut().for_each(|l| *l -= shift);
}

/// Symbol priors from bit LLRs: `P_k(a) ∝ prod_j exp(-b_j(a) L_a(d_kj))`.
pub fn symbol_priors(la: &[f64], c: &Constellation) -> Result<SymbolPmf> {
    let q = c.bits_per_symbol();
    if !la.len().is_multiple_of(q) {
        return Err(Error::Dimension(format!(
            "{} LLRs for {q} bits per symbol",
            la.len()
        )));
    }
    let m = c.size();
    let mut logw = Vec::with_capacity(la.len() / q * m);
    for llrs in la.chunks(q) {
        for a in 0..m {
            let mut acc = 0.0;
            for (j, &l) in llrs.iter().enumerate() {
                if c.bit(a, j) == 1 {
                    acc -= clamp_llr(l);
                }
            }
            logw.push(acc);
        }
    }
    Ok(SymbolPmf::from_log(m, logw))
}

/// Mean and variance of each prior row.
pub fn prior_moments(priors: &SymbolPmf, c: &Constellation) -> (Vec<Complex64>, Vec<f64>) {
    moments(&priors.log_weights, c)
}

fn moments(log_pmf: &[f64], c: &Constellation) -> (Vec<Complex64>, Vec<f64>) {
    let m = c.size();
    let k = log_pmf.len() / m;
    let mut means = Vec::with_capacity(k);
    let mut vars = Vec::with_capacity(k);
    for row in log_pmf.chunks(m) {
        let mut mu = Complex64::new(0.0, 0.0);
        let mut e2 = 0.0;
        for (a, &l) in row.iter().enumerate() {
            let w = l.exp();
            mu += c.points()[a] * w;
            e2 += c.points()[a].norm_sqr() * w;
        }
        means.push(mu);
        vars.push((e2 - mu.norm_sqr()).max(0.0));
    }
    (means, vars)
}

/// Normalized log posterior `ln D_k(a)` combining the equalizer message and priors.
pub fn posterior_log_pmf(
    ext: &GaussianEstimate,
    priors: &SymbolPmf,
    c: &Constellation,
) -> Result<Vec<f64>> {
    if ext.len() != priors.len() {
        return Err(Error::LengthMismatch {
            expected: priors.len(),
            actual: ext.len(),
        });
    }
    let m = c.size();
    let mut logd = priors.log_weights.clone();
    if ext.variance.is_finite() {
        let inv = 1.0 / ext.variance.max(VARIANCE_FLOOR);
        for (row, xe) in logd.chunks_mut(m).zip(&ext.mean) {
            for (a, l) in row.iter_mut().enumerate() {
                *l -= (c.points()[a] - xe).norm_sqr() * inv;
            }
            normalize_log(row);
        }
    }
    Ok(logd)
}

/// Moment-matched demapper posterior.
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    pub mean: Vec<Complex64>,
    pub variances: Vec<f64>,
    /// Sample average of the per-symbol variances.
    pub avg_variance: f64,
}

pub fn demap_posterior_moments(
    ext: &GaussianEstimate,
    priors: &SymbolPmf,
    c: &Constellation,
) -> Result<PosteriorMoments> {
    let logd = posterior_log_pmf(ext, priors, c)?;
    let (mean, variances) = moments(&logd, c);
    let avg_variance = variances.iter().sum::<f64>() / variances.len().max(1) as f64;
    Ok(PosteriorMoments {
        mean,
        variances,
        avg_variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DampingMode {
    /// Convex combination of means and variances.
    Linear,
    /// Convex combination of precisions and precision-weighted means.
    Feature,
    /// Linear for `tau < hybrid_switch_tau`, feature afterwards.
    Hybrid,
}

/// Clamped geometric damping `beta(tau, s) = clamp(beta0 * decay^(s + tau), floor, cap)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingSchedule {
    pub mode: DampingMode,
    pub beta0: f64,
    #[serde(default = "one")]
    pub decay: f64,
    #[serde(default)]
    pub floor: f64,
    #[serde(default = "one")]
    pub cap: f64,
    #[serde(default = "one_usize")]
    pub hybrid_switch_tau: usize,
    /// Count the exponent from the switch point once the hybrid schedule
    /// enters its feature phase.
    #[serde(default)]
    pub hybrid_restart_exponent: bool,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl DampingSchedule {
    pub fn none() -> Self {
        Self::fixed(DampingMode::Linear, 0.0)
    }

    pub fn fixed(mode: DampingMode, beta: f64) -> Self {
        Self::geometric(mode, beta, 1.0)
    }

    pub fn geometric(mode: DampingMode, beta0: f64, decay: f64) -> Self {
        Self {
            mode,
            beta0,
            decay,
            floor: 0.0,
            cap: 1.0,
            hybrid_switch_tau: 1,
            hybrid_restart_exponent: false,
        }
    }

    pub fn with_bounds(mut self, floor: f64, cap: f64) -> Self {
        self.floor = floor;
        self.cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.beta0) || !unit(self.floor) || !unit(self.cap) {
            return Err(Error::config(
                "damping",
                "beta0, floor and cap must lie in [0, 1]",
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("damping.decay", "decay must lie in (0, 1]"));
        }
        if self.floor > self.cap {
            return Err(Error::config("damping.floor", "floor exceeds cap"));
        }
        Ok(())
    }

    pub fn beta(&self, tau: usize, s: usize) -> f64 {
        let exponent = if self.mode == DampingMode::Hybrid
            && self.hybrid_restart_exponent
            && tau >= self.hybrid_switch_tau
        {
            s + tau - self.hybrid_switch_tau
        } else {
            s + tau
        };
        (self.beta0 * self.decay.powi(exponent as i32)).clamp(self.floor, self.cap)
    }

    /// Damping rule in force at turbo iteration `tau`.
    pub fn mode_at(&self, tau: usize) -> DampingMode {
        match self.mode {
            DampingMode::Hybrid if tau < self.hybrid_switch_tau => DampingMode::Linear,
            DampingMode::Hybrid => DampingMode::Feature,
            m => m,
        }
    }
}

/// Result of the demapper's feedback computation.
#[derive(Debug, Clone)]
pub struct Feedback {
    pub estimate: GaussianEstimate,
    /// The Gaussian division was invalid and the posterior was used instead.
    pub fallback: bool,
}

/// Smooths `fresh` against `prev` with the rule and weight in force at `(tau, s)`.
pub fn damp(
    fresh: GaussianEstimate,
    prev: Option<&GaussianEstimate>,
    sched: &DampingSchedule,
    tau: usize,
    s: usize,
) -> GaussianEstimate {
    let prev = match prev {
        Some(p) if p.variance.is_finite() => p,
        _ => return fresh,
    };
    let beta = sched.beta(tau, s);
    if beta == 0.0 {
        return fresh;
    }
    if beta == 1.0 {
        return prev.clone();
    }
    match sched.mode_at(tau) {
        DampingMode::Feature => {
            // saturated decoder feedback can carry an exactly zero variance
            let pf = (1.0 - beta) / fresh.variance.max(VARIANCE_FLOOR);
            let pp = beta / prev.variance.max(VARIANCE_FLOOR);
            let variance = 1.0 / (pf + pp);
            let mean = fresh
                .mean
                .iter()
                .zip(&prev.mean)
                .map(|(xf, xp)| (xf * pf + xp * pp) * variance)
                .collect();
            GaussianEstimate { mean, variance }
        }
        _ => {
            let variance = (1.0 - beta) * fresh.variance + beta * prev.variance;
            let mean = fresh
                .mean
                .iter()
                .zip(&prev.mean)
                .map(|(xf, xp)| xf * (1.0 - beta) + xp * beta)
                .collect();
            GaussianEstimate { mean, variance }
        }
    }
}

/// EP extrinsic feedback: Gaussian division of the posterior by the equalizer
/// message, with the posterior fallback and damping against `prev`.
pub fn ep_extrinsic_feedback(
    mu: &[Complex64],
    gamma_bar: f64,
    ext: &GaussianEstimate,
    prev: Option<&GaussianEstimate>,
    sched: &DampingSchedule,
    tau: usize,
    s: usize,
) -> Feedback {
    if !(gamma_bar > 0.0) {
        return Feedback {
            estimate: GaussianEstimate::new(mu.to_vec(), VARIANCE_FLOOR),
            fallback: true,
        };
    }
    let ve = ext.variance;
    let (fresh, fallback) = if ve.is_infinite() {
        (GaussianEstimate::new(mu.to_vec(), gamma_bar), false)
    } else if ve > gamma_bar {
        let den = ve - gamma_bar;
        let mean = mu
            .iter()
            .zip(&ext.mean)
            .map(|(m, xe)| (m * ve - xe * gamma_bar) / den)
            .collect();
        (GaussianEstimate::new(mean, ve * gamma_bar / den), false)
    } else {
        (GaussianEstimate::new(mu.to_vec(), gamma_bar), true)
    };
    Feedback {
        estimate: damp(fresh, prev, sched, tau, s),
        fallback,
    }
}

/// Extrinsic bit LLRs from the demapper posterior, minus the priors.
pub fn extrinsic_llrs(ext: &GaussianEstimate, la: &[f64], c: &Constellation) -> Result<Vec<f64>> {
    let priors = symbol_priors(la, c)?;
    let logd = posterior_log_pmf(ext, &priors, c)?;
    let q = c.bits_per_symbol();
    let m = c.size();
    let mut out = Vec::with_capacity(la.len());
    for (k, row) in logd.chunks(m).enumerate() {
        for j in 0..q {
            // adding L_j back on the bit-1 terms removes this bit's own prior
            let lj = clamp_llr(la[k * q + j]);
            let mut zero = f64::NEG_INFINITY;
            let mut one = f64::NEG_INFINITY;
            for (a, &l) in row.iter().enumerate() {
                if c.bit(a, j) == 0 {
                    zero = crate::bicm::max_star(zero, l);
                } else {
                    one = crate::bicm::max_star(one, l + lj);
                }
            }
            out.push(clamp_llr(zero - one));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    const ALL: [ConstellationKind; 5] = [
        ConstellationKind::Bpsk,
        ConstellationKind::Qpsk,
        ConstellationKind::Psk8,
        ConstellationKind::Qam16,
        ConstellationKind::Qam64,
    ];

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_mean_unit_power_bijective_labels() {
        for kind in ALL {
            let con = Constellation::new(kind);
            let m = con.size();
            let sum: Complex64 = con.points().iter().sum();
            let power = con.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / m as f64;
            assert!(sum.norm() < 1e-12, "{kind:?}");
            assert!((power - 1.0).abs() < 1e-12, "{kind:?}");
            let mut labels = con.labels().to_vec();
            labels.sort();
            assert_eq!(labels, (0..m as u32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let psk = Constellation::new(ConstellationKind::Psk8);
        for i in 0..8 {
            let d = psk.labels()[i] ^ psk.labels()[(i + 1) % 8];
            assert_eq!(d.count_ones(), 1);
        }
        for kind in [
            ConstellationKind::Qpsk,
            ConstellationKind::Qam16,
            ConstellationKind::Qam64,
        ] {
            let con = Constellation::new(kind);
            let pts = con.points();
            let step = pts
                .iter()
                .flat_map(|a| pts.iter().map(move |b| (a - b).norm()))
                .filter(|d| *d > 1e-9)
                .fold(f64::INFINITY, f64::min);
            for a in 0..con.size() {
                for b in 0..con.size() {
                    if ((pts[a] - pts[b]).norm() - step).abs() < 1e-9 {
                        assert_eq!(
                            (con.labels()[a] ^ con.labels()[b]).count_ones(),
                            1,
                            "{kind:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn mapping_conventions() {
        let bpsk = Constellation::new(ConstellationKind::Bpsk);
        assert_eq!(
            map_bits(&[0, 1], &bpsk).unwrap(),
            vec![c(1.0, 0.0), c(-1.0, 0.0)]
        );
        let qpsk = Constellation::new(ConstellationKind::Qpsk);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z = map_bits(&[0, 0], &qpsk).unwrap()[0];
        assert!((z - c(s, s)).norm() < 1e-15);
        assert!(map_bits(&[0, 0, 1], &qpsk).is_err());
    }

    #[test]
    fn hard_demap_round_trip() {
        let mut rng = RngStream::new(8, 8);
        for kind in ALL {
            let con = Constellation::new(kind);
            let bits = rng.bits(con.bits_per_symbol() * 50);
            let x = map_bits(&bits, &con).unwrap();
            assert_eq!(con.hard_demap(&x), bits, "{kind:?}");
        }
    }

    #[test]
    fn prior_examples() {
        let psk = Constellation::new(ConstellationKind::Psk8);
        let uniform = symbol_priors(&[0.0; 3], &psk).unwrap();
        for a in 0..8 {
            assert!((uniform.weight(0, a) - 0.125).abs() < 1e-15);
        }
        let bpsk = Constellation::new(ConstellationKind::Bpsk);
        let sure = symbol_priors(&[f64::INFINITY], &bpsk).unwrap();
        assert!((sure.weight(0, 0) - 1.0).abs() < 1e-15);

        // direct evaluation over the 8 labels
        let la = [2.0, -1.0, 0.5];
        let pmf = symbol_priors(&la, &psk).unwrap();
        let raw: Vec<f64> = (0..8)
            .map(|a| {
                let l = psk.labels()[a];
                let b = [(l >> 2) & 1, (l >> 1) & 1, l & 1];
                (-(b[0] as f64 * la[0] + b[1] as f64 * la[1] + b[2] as f64 * la[2])).exp()
            })
            .collect();
        let z: f64 = raw.iter().sum();
        for a in 0..8 {
            assert!((pmf.weight(0, a) - raw[a] / z).abs() < 1e-14);
        }
        let total: f64 = pmf.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_moment_examples() {
        let bpsk = Constellation::new(ConstellationKind::Bpsk);
        let flat = symbol_priors(&[0.0], &bpsk).unwrap();
        let m0 =
            demap_posterior_moments(&GaussianEstimate::new(vec![c(0.0, 0.0)], 1.0), &flat, &bpsk)
                .unwrap();
        assert!(m0.mean[0].norm() < 1e-15);
        assert!((m0.variances[0] - 1.0).abs() < 1e-15);

        let m1 =
            demap_posterior_moments(&GaussianEstimate::new(vec![c(1.0, 0.0)], 1.0), &flat, &bpsk)
                .unwrap();
        let t = 2f64.tanh();
        assert!((m1.mean[0].re - t).abs() < 1e-14);
        assert!((m1.variances[0] - (1.0 - t * t)).abs() < 1e-14);

        // infinite variance: posterior equals prior
        let qam = Constellation::new(ConstellationKind::Qam16);
        let la = [0.3, -1.2, 2.0, 0.1];
        let pr = symbol_priors(&la, &qam).unwrap();
        let (pm, pv) = prior_moments(&pr, &qam);
        let post = demap_posterior_moments(
            &GaussianEstimate::new(vec![c(5.0, -3.0)], f64::INFINITY),
            &pr,
            &qam,
        )
        .unwrap();
        assert!((post.mean[0] - pm[0]).norm() < 1e-14);
        assert!((post.variances[0] - pv[0]).abs() < 1e-14);
    }

    #[test]
    fn moment_bounds_hold() {
        let mut rng = RngStream::new(77, 1);
        for kind in ALL {
            let con = Constellation::new(kind);
            let k = 40;
            let la: Vec<f64> = (0..k * con.bits_per_symbol())
                .map(|_| 2.0 * rng.standard_normal())
                .collect();
            let pr = symbol_priors(&la, &con).unwrap();
            let ext = GaussianEstimate::new((0..k).map(|_| rng.complex_normal()).collect(), 0.3);
            let post = demap_posterior_moments(&ext, &pr, &con).unwrap();
            for (mu, g) in post.mean.iter().zip(&post.variances) {
                let worst = con
                    .points()
                    .iter()
                    .map(|p| (p - mu).norm_sqr())
                    .fold(0.0, f64::max);
                assert!(*g >= 0.0 && *g <= worst + 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_division_example() {
        let ext = GaussianEstimate::new(vec![c(0.2, 0.0)], 2.0);
        let fb = ep_extrinsic_feedback(
            &[c(0.5, 0.0)],
            1.0,
            &ext,
            None,
            &DampingSchedule::none(),
            0,
            0,
        );
        assert!((fb.estimate.mean[0].re - 0.8).abs() < 1e-15);
        assert!((fb.estimate.variance - 2.0).abs() < 1e-15);
        assert!(!fb.fallback);
    }

    #[test]
    fn division_recombines_to_posterior() {
        let mut rng = RngStream::new(4, 4);
        let mu: Vec<_> = (0..16).map(|_| rng.complex_normal()).collect();
        let ext = GaussianEstimate::new((0..16).map(|_| rng.complex_normal()).collect(), 1.7);
        let gamma = 0.4;
        let fb =
            ep_extrinsic_feedback(&mu, gamma, &ext, None, &DampingSchedule::none(), 0, 0).estimate;
        assert!((1.0 / fb.variance + 1.0 / ext.variance - 1.0 / gamma).abs() < 1e-10);
        for k in 0..16 {
            let back = (fb.mean[k] / fb.variance + ext.mean[k] / ext.variance) * gamma;
            assert!((back - mu[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn fallback_and_degenerate_paths() {
        let ext = GaussianEstimate::new(vec![c(0.2, 0.0)], 0.5);
        let fb = ep_extrinsic_feedback(
            &[c(0.5, 0.1)],
            0.7,
            &ext,
            None,
            &DampingSchedule::none(),
            0,
            0,
        );
        assert!(fb.fallback);
        assert_eq!(fb.estimate, GaussianEstimate::new(vec![c(0.5, 0.1)], 0.7));
        let fb = ep_extrinsic_feedback(
            &[c(0.5, 0.1)],
            0.0,
            &ext,
            None,
            &DampingSchedule::none(),
            0,
            0,
        );
        assert_eq!(fb.estimate.variance, VARIANCE_FLOOR);
    }

    #[test]
    fn damping_endpoints() {
        let prev = GaussianEstimate::new(vec![c(1.0, -1.0), c(0.2, 0.3)], 0.9);
        let ext = GaussianEstimate::new(vec![c(0.2, 0.0), c(-0.4, 0.1)], 2.0);
        let mu = [c(0.5, 0.0), c(0.1, 0.1)];
        for mode in [DampingMode::Linear, DampingMode::Feature] {
            let full = DampingSchedule::fixed(mode, 1.0);
            let fb = ep_extrinsic_feedback(&mu, 1.0, &ext, Some(&prev), &full, 0, 0);
            assert_eq!(fb.estimate, prev);
            let none = DampingSchedule::fixed(mode, 0.0);
            let fb = ep_extrinsic_feedback(&mu, 1.0, &ext, Some(&prev), &none, 0, 0);
            let undamped = ep_extrinsic_feedback(&mu, 1.0, &ext, None, &none, 0, 0);
            assert_eq!(fb.estimate, undamped.estimate);
            // first call ignores beta
            let first = ep_extrinsic_feedback(&mu, 1.0, &ext, None, &full, 0, 0);
            assert_eq!(first.estimate, undamped.estimate);
        }
    }

    #[test]
    fn damping_rules() {
        let prev = GaussianEstimate::new(vec![c(1.0, 0.0)], 1.0);
        let fresh = GaussianEstimate::new(vec![c(0.0, 0.0)], 0.25);
        let lin = damp(
            fresh.clone(),
            Some(&prev),
            &DampingSchedule::fixed(DampingMode::Linear, 0.5),
            0,
            0,
        );
        assert!((lin.variance - 0.625).abs() < 1e-15);
        assert!((lin.mean[0].re - 0.5).abs() < 1e-15);
        let feat = damp(
            fresh,
            Some(&prev),
            &DampingSchedule::fixed(DampingMode::Feature, 0.5),
            0,
            0,
        );
        // precisions 2 + 0.5 = 2.5
        assert!((feat.variance - 0.4).abs() < 1e-15);
        assert!((feat.mean[0].re - 0.5 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn feature_damping_with_zero_variance_stays_finite() {
        let prev = GaussianEstimate::new(vec![c(1.0, 0.0)], 0.0);
        let fresh = GaussianEstimate::new(vec![c(-1.0, 0.0)], 0.0);
        let out = damp(
            fresh,
            Some(&prev),
            &DampingSchedule::fixed(DampingMode::Feature, 0.3),
            0,
            1,
        );
        assert!(out.variance.is_finite() && out.mean[0].re.is_finite());
        assert!((out.mean[0].re - 0.3 * 1.0 - -0.7).abs() < 1e-9);
    }

    #[test]
    fn damping_schedules() {
        let s = DampingSchedule::geometric(DampingMode::Feature, 0.7, 0.9);
        assert!((s.beta(1, 2) - 0.7 * 0.9f64.powi(3)).abs() < 1e-15);
        let capped =
            DampingSchedule::geometric(DampingMode::Linear, 0.7, 0.7).with_bounds(0.0, 0.5);
        assert_eq!(capped.beta(0, 0), 0.5);
        assert!((capped.beta(0, 2) - 0.7f64.powi(3)).abs() < 1e-15);
        let floored =
            DampingSchedule::geometric(DampingMode::Linear, 0.5, 0.8).with_bounds(0.3, 1.0);
        assert_eq!(floored.beta(5, 5), 0.3);
        let mut hybrid = DampingSchedule::geometric(DampingMode::Hybrid, 0.85, 0.85);
        assert_eq!(hybrid.mode_at(0), DampingMode::Linear);
        assert_eq!(hybrid.mode_at(1), DampingMode::Feature);
        assert!((hybrid.beta(2, 0) - 0.85f64.powi(3)).abs() < 1e-15);
        hybrid.hybrid_restart_exponent = true;
        assert!((hybrid.beta(2, 0) - 0.85f64.powi(2)).abs() < 1e-15);
        assert!(DampingSchedule::geometric(DampingMode::Linear, 1.2, 0.9)
            .validate()
            .is_err());
        assert!(DampingSchedule::geometric(DampingMode::Linear, 0.5, 0.0)
            .validate()
            .is_err());
    }

    #[test]
    fn llr_examples() {
        let bpsk = Constellation::new(ConstellationKind::Bpsk);
        for y in [-0.7, 0.0, 0.3, 1.1] {
            let le = extrinsic_llrs(&GaussianEstimate::new(vec![c(y, 0.0)], 1.0), &[0.0], &bpsk)
                .unwrap();
            // ln(exp(-|1-y|^2)/exp(-|1+y|^2)) = 4y
            assert!((le[0] - 4.0 * y).abs() < 1e-12, "{y}");
        }
        for kind in ALL {
            let con = Constellation::new(kind);
            let q = con.bits_per_symbol();
            let le = extrinsic_llrs(
                &GaussianEstimate::new(vec![c(0.0, 0.0)], 0.7),
                &vec![0.0; q],
                &con,
            )
            .unwrap();
            // at the origin only the sign bits of QAM carry no information
            let sign_bits: Vec<usize> = match kind {
                ConstellationKind::Qam16 | ConstellationKind::Qam64 => vec![0, q / 2],
                _ => (0..q).collect(),
            };
            assert!(sign_bits.iter().all(|&j| le[j].abs() < 1e-12), "{kind:?}");
            let none = extrinsic_llrs(
                &GaussianEstimate::new(vec![c(0.4, -0.2)], f64::INFINITY),
                &vec![1.5; q],
                &con,
            )
            .unwrap();
            assert!(none.iter().all(|l| l.abs() < 1e-12), "{kind:?}");
        }
    }

    #[test]
    fn gray_qpsk_bits_are_separable() {
        let qpsk = Constellation::new(ConstellationKind::Qpsk);
        let a = extrinsic_llrs(
            &GaussianEstimate::new(vec![c(0.3, -0.9)], 0.5),
            &[0.0, 0.0],
            &qpsk,
        )
        .unwrap();
        let b = extrinsic_llrs(
            &GaussianEstimate::new(vec![c(0.3, 0.4)], 0.5),
            &[0.0, 0.0],
            &qpsk,
        )
        .unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12);
        assert!((a[1] - b[1]).abs() > 1.0);
        // closed form for bit 0: 4 Re(x) / (sqrt(2) v)
        assert!((a[0] - 4.0 * 0.3 / (2f64.sqrt() * 0.5)).abs() < 1e-12);
    }
}
