//! Recursive systematic convolutional coding, bit interleaving and
//! log-MAP BCJR decoding.
//!
//! Generator polynomials are octal with the most significant bit holding the
//! `D^0` coefficient. A code written `1,5/7` is systematic with parity
//! `5/7` (feedforward 5, feedback 7); a pair `17,13` is the recursive
//! systematic form of the feedforward code, i.e. parity `13/17`.
//!
//! Coded bits are emitted interleaved as `[s_0, p_0, s_1, p_1, ...]`; when the
//! trellis is terminated, `memory` tail steps follow the information bits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, LLR_CLAMP};

/// Rate-1/2 RSC code together with the information block length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSpec {
    pub feedback: u32,
    pub feedforward: u32,
    pub memory: usize,
    pub terminated: bool,
    pub info_len: usize,
}

impl CodeSpec {
    pub fn new(feedback: u32, feedforward: u32, terminated: bool, info_len: usize) -> Result<Self> {
        if feedback == 0 || feedforward == 0 {
            return Err(Error::InvalidCode("polynomials must be nonzero".into()));
        }
        if feedback.is_multiple_of(2) {
            return Err(Error::InvalidCode(format!(
                "feedback polynomial {feedback:o} must be odd"
            )));
        }
        let bits = |p: u32| 32 - p.leading_zeros() as usize;
        let memory = bits(feedback).max(bits(feedforward)) - 1;
        if memory == 0 {
            return Err(Error::InvalidCode("code must have memory".into()));
        }
        if (feedback >> memory) & 1 == 0 {
            return Err(Error::InvalidCode(format!(
                "feedback polynomial {feedback:o} needs a D^0 term"
            )));
        }
        if info_len == 0 {
            return Err(Error::InvalidCode(
                "information length must be positive".into(),
            ));
        }
        Ok(Self {
            feedback,
            feedforward,
            memory,
            terminated,
            info_len,
        })
    }

    /// Parses `"1,5/7"` or `"17,13"` style octal strings.
    pub fn parse(desc: &str, terminated: bool, info_len: usize) -> Result<Self> {
        let oct = |s: &str| {
            u32::from_str_radix(s.trim(), 8)
                .map_err(|_| Error::InvalidCode(format!("`{s}` is not an octal polynomial")))
        };
        let (first, second) = desc
            .split_once(',')
            .ok_or_else(|| Error::InvalidCode(format!("expected two polynomials in `{desc}`")))?;
        let (feedback, feedforward) = match second.split_once('/') {
            Some((ff, fb)) => {
                if oct(first)? != 1 {
                    return Err(Error::InvalidCode(format!(
                        "systematic branch in `{desc}` must be 1"
                    )));
                }
                (oct(fb)?, oct(ff)?)
            }
            None => (oct(first)?, oct(second)?),
        };
        Self::new(feedback, feedforward, terminated, info_len)
    }

    /// Largest information length whose codeword fits `coded_len` bits.
    pub fn for_coded_len(desc: &str, terminated: bool, coded_len: usize) -> Result<Self> {
        let probe = Self::parse(desc, terminated, 1)?;
        let tail = if terminated { probe.memory } else { 0 };
        if !coded_len.is_multiple_of(2) || coded_len / 2 <= tail {
            return Err(Error::InvalidCode(format!(
                "codeword length {coded_len} cannot hold a rate-1/2 codeword"
            )));
        }
        Self::new(
            probe.feedback,
            probe.feedforward,
            terminated,
            coded_len / 2 - tail,
        )
    }

    pub fn trellis_len(&self) -> usize {
        self.info_len + if self.terminated { self.memory } else { 0 }
    }

    pub fn coded_len(&self) -> usize {
        2 * self.trellis_len()
    }

    pub fn rate(&self) -> f64 {
        self.info_len as f64 / self.coded_len() as f64
    }

    pub fn num_states(&self) -> usize {
        1 << self.memory
    }

    fn coef(&self, poly: u32, i: usize) -> u32 {
        (poly >> (self.memory - i)) & 1
    }

    /// Feedback sum over the register (excluding the current input).
    fn feedback_bit(&self, state: usize) -> u32 {
        (1..=self.memory)
            .map(|i| self.coef(self.feedback, i) & ((state >> (i - 1)) as u32 & 1))
            .fold(0, |a, b| a ^ b)
    }

    /// Returns `(next_state, parity)` for register `state` and input bit `u`.
    fn step(&self, state: usize, u: u32) -> (usize, u32) {
        let a = u ^ self.feedback_bit(state);
        let mut parity = self.coef(self.feedforward, 0) & a;
        for i in 1..=self.memory {
            parity ^= self.coef(self.feedforward, i) & ((state >> (i - 1)) as u32 & 1);
        }
        let next = ((state << 1) | a as usize) & (self.num_states() - 1);
        (next, parity)
    }
}

/// Encodes `info_bits` into `[s_0, p_0, s_1, p_1, ...]` (plus tail if terminated).
pub fn rsc_encode(info_bits: &[u8], spec: &CodeSpec) -> Result<Vec<u8>> {
    if info_bits.len() != spec.info_len {
        return Err(Error::LengthMismatch {
            expected: spec.info_len,
            actual: info_bits.len(),
        });
    }
    let mut out = Vec::with_capacity(spec.coded_len());
    let mut state = 0usize;
    for &b in info_bits {
        let u = (b & 1) as u32;
        let (next, p) = spec.step(state, u);
        out.push(u as u8);
        out.push(p as u8);
        state = next;
    }
    if spec.terminated {
        for _ in 0..spec.memory {
            let u = spec.feedback_bit(state);
            let (next, p) = spec.step(state, u);
            out.push(u as u8);
            out.push(p as u8);
            state = next;
        }
        debug_assert_eq!(state, 0);
    }
    Ok(out)
}

/// Seeded uniformly random permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
    seed: u64,
}

impl Interleaver {
    /// Fisher-Yates shuffle of `0..len` seeded by `seed`.
    pub fn random(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { perm, seed }
    }

    pub fn identity(len: usize) -> Self {
        Self {
            perm: (0..len).collect(),
            seed: 0,
        }
    }

    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::InvalidPermutation(format!(
                    "index {p} repeated or out of range"
                )));
            }
            seen[p] = true;
        }
        Ok(Self { perm, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// `out[i] = block[perm[i]]`, or the inverse mapping.
    pub fn interleave<T: Copy>(&self, block: &[T], inverse: bool) -> Result<Vec<T>> {
        if block.len() != self.perm.len() {
            return Err(Error::LengthMismatch {
                expected: self.perm.len(),
                actual: block.len(),
            });
        }
        if inverse {
            let mut out = block.to_vec();
            for (i, &p) in self.perm.iter().enumerate() {
                out[p] = block[i];
            }
            Ok(out)
        } else {
            Ok(self.perm.iter().map(|&p| block[p]).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlrKind {
    APriori,
    Extrinsic,
    Posterior,
}

/// Natural-log LLRs, `L > 0` meaning bit 0 is more likely.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrBlock {
    pub values: Vec<f64>,
    pub kind: LlrKind,
}

impl LlrBlock {
    pub fn new(values: Vec<f64>, kind: LlrKind) -> Self {
        Self {
            values: values.into_iter().map(clamp_llr).collect(),
            kind,
        }
    }
}

pub fn clamp_llr(l: f64) -> f64 {
    if l.is_nan() {
        0.0
    } else {
        l.clamp(-LLR_CLAMP, LLR_CLAMP)
    }
}

/// Jacobian logarithm `ln(e^a + e^b)`.
#[inline]
pub fn max_star(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// Output of one SISO decoder pass.
#[derive(Debug, Clone)]
pub struct SisoOutput {
    /// Extrinsic LLRs on the coded bits.
    pub extrinsic: LlrBlock,
    /// A-posteriori LLRs on the coded bits (`a priori + extrinsic`).
    pub posterior_coded: LlrBlock,
    pub posterior_info: LlrBlock,
    pub info_hard: Vec<u8>,
}

/// Log-MAP forward-backward decoding on the RSC trellis.
pub fn bcjr_siso_decode(la_coded: &[f64], spec: &CodeSpec) -> Result<SisoOutput> {
    if la_coded.len() != spec.coded_len() {
        return Err(Error::LengthMismatch {
            expected: spec.coded_len(),
            actual: la_coded.len(),
        });
    }
    let la: Vec<f64> = la_coded.iter().map(|&l| clamp_llr(l)).collect();
    let ns = spec.num_states();
    let steps = spec.trellis_len();

    // transitions[state][u] = (next, parity)
    let transitions: Vec<[(usize, u32); 2]> = (0..ns)
        .map(|s| [spec.step(s, 0), spec.step(s, 1)])
        .collect();
    let allowed = |t: usize, s: usize, u: u32| t < spec.info_len || spec.feedback_bit(s) == u;
    // log P(c) = -c * L up to a per-bit constant
    let metric = |t: usize, u: u32, p: u32| -(u as f64) * la[2 * t] - (p as f64) * la[2 * t + 1];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; (steps + 1) * ns];
    alpha[0] = 0.0;
    for t in 0..steps {
        let (cur, next) = alpha.split_at_mut((t + 1) * ns);
        let cur = &cur[t * ns..];
        let next = &mut next[..ns];
        for s in 0..ns {
            if cur[s] == ninf {
                continue;
            }
            for u in 0..2u32 {
                if !allowed(t, s, u) {
                    continue;
                }
                let (n, p) = transitions[s][u as usize];
                next[n] = max_star(next[n], cur[s] + metric(t, u, p));
            }
        }
        let m = next.iter().cloned().fold(ninf, f64::max);
        next.iter_mut().for_each(|a| *a -= m);
    }

    let mut beta = vec![ninf; (steps + 1) * ns];
    if spec.terminated {
        beta[steps * ns] = 0.0;
    } else {
        beta[steps * ns..].iter_mut().for_each(|b| *b = 0.0);
    }
    for t in (0..steps).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * ns);
        let cur = &mut cur[t * ns..];
        for s in 0..ns {
            let mut acc = ninf;
            for u in 0..2u32 {
                if !allowed(t, s, u) {
                    continue;
                }
                let (n, p) = transitions[s][u as usize];
                acc = max_star(acc, next[n] + metric(t, u, p));
            }
            cur[s] = acc;
        }
        let m = cur.iter().cloned().fold(ninf, f64::max);
        cur.iter_mut().for_each(|b| *b -= m);
    }

    let mut extrinsic = vec![0.0; spec.coded_len()];
    for t in 0..steps {
        // extrinsic on bit j excludes bit j's own channel metric
        let mut sys = [ninf; 2];
        let mut par = [ninf; 2];
        for s in 0..ns {
            let a = alpha[t * ns + s];
            if a == ninf {
                continue;
            }
            for u in 0..2u32 {
                if !allowed(t, s, u) {
                    continue;
                }
                let (n, p) = transitions[s][u as usize];
                let b = beta[(t + 1) * ns + n];
                let ms = -(u as f64) * la[2 * t];
                let mp = -(p as f64) * la[2 * t + 1];
                sys[u as usize] = max_star(sys[u as usize], a + b + mp);
                par[p as usize] = max_star(par[p as usize], a + b + ms);
            }
        }
        extrinsic[2 * t] = clamp_llr(sys[0] - sys[1]);
        extrinsic[2 * t + 1] = clamp_llr(par[0] - par[1]);
    }

    let posterior: Vec<f64> = la.iter().zip(&extrinsic).map(|(a, e)| a + e).collect();
    let post_info: Vec<f64> = (0..spec.info_len).map(|t| posterior[2 * t]).collect();
    let info_hard = post_info.iter().map(|&l| u8::from(l < 0.0)).collect();
    Ok(SisoOutput {
        extrinsic: LlrBlock::new(extrinsic, LlrKind::Extrinsic),
        posterior_coded: LlrBlock {
            values: posterior,
            kind: LlrKind::Posterior,
        },
        posterior_info: LlrBlock {
            values: post_info,
            kind: LlrKind::Posterior,
        },
        info_hard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn code(desc: &str, terminated: bool, kb: usize) -> CodeSpec {
        CodeSpec::parse(desc, terminated, kb).unwrap()
    }

    /// Exhaustive MAP over every codeword: returns extrinsic coded-bit LLRs.
    pub(crate) fn brute_force_extrinsic(la: &[f64], spec: &CodeSpec) -> Vec<f64> {
        let kb = spec.info_len;
        let n = spec.coded_len();
        let mut num = vec![f64::NEG_INFINITY; n];
        let mut den = vec![f64::NEG_INFINITY; n];
        for word in 0u32..(1 << kb) {
            let info: Vec<u8> = (0..kb).map(|i| ((word >> i) & 1) as u8).collect();
            let cw = rsc_encode(&info, spec).unwrap();
            let logp: f64 = cw.iter().zip(la).map(|(&c, &l)| -(c as f64) * l).sum();
            for j in 0..n {
                let target = if cw[j] == 0 { &mut num } else { &mut den };
                let lp = logp + (cw[j] as f64) * la[j];
                target[j] = max_star(target[j], lp);
            }
        }
        num.iter().zip(&den).map(|(a, b)| a - b).collect()
    }

    #[test]
    fn parses_both_notations() {
        let a = code("1,5/7", true, 10);
        assert_eq!((a.feedback, a.feedforward, a.memory), (0o7, 0o5, 2));
        assert_eq!(a.coded_len(), 24);
        let b = code("17,13", false, 10);
        assert_eq!((b.feedback, b.feedforward, b.memory), (0o17, 0o13, 3));
        assert_eq!(b.coded_len(), 20);
        assert!(CodeSpec::parse("1,5/6", true, 4).is_err());
        assert!(CodeSpec::parse("15", true, 4).is_err());
        assert!(CodeSpec::parse("2,5/7", true, 4).is_err());
        let c = CodeSpec::for_coded_len("1,5/7", true, 768).unwrap();
        assert_eq!(c.info_len, 382);
        assert_eq!(c.coded_len(), 768);
    }

    #[test]
    fn zero_input_zero_codeword() {
        let spec = code("1,5/7", true, 16);
        assert!(rsc_encode(&[0; 16], &spec).unwrap().iter().all(|&b| b == 0));
        assert!(rsc_encode(&[0; 15], &spec).is_err());
    }

    #[test]
    fn impulse_response_of_5_over_7() {
        // a_t = u_t ^ a_{t-1} ^ a_{t-2};  p_t = a_t ^ a_{t-2}
        let kb = 12;
        let spec = code("1,5/7", false, kb);
        let mut info = vec![0u8; kb];
        info[0] = 1;
        let cw = rsc_encode(&info, &spec).unwrap();
        let mut a = vec![0u8; kb + 2];
        let mut expected = Vec::new();
        for t in 0..kb {
            let at = info[t] ^ a[t + 1] ^ a[t];
            a[t + 2] = at;
            expected.push(at ^ a[t]);
        }
        let parity: Vec<u8> = cw.chunks(2).map(|c| c[1]).collect();
        let sys: Vec<u8> = cw.chunks(2).map(|c| c[0]).collect();
        assert_eq!(parity, expected);
        assert_eq!(sys, info);
        // 1/(1+D+D^2)*(1+D^2) is periodic with period 3 after the transient
        assert_eq!(&parity[..7], &[1, 1, 1, 0, 1, 1, 0]);
    }

    #[test]
    fn terminated_encoder_returns_to_zero() {
        let spec = code("17,13", true, 20);
        let mut rng = RngStream::new(5, 0);
        let info = rng.bits(20);
        let cw = rsc_encode(&info, &spec).unwrap();
        assert_eq!(cw.len(), 46);
    }

    #[test]
    fn interleaver_examples() {
        let pi = Interleaver::from_permutation(vec![2, 0, 1]).unwrap();
        let out = pi.interleave(&['a', 'b', 'c'], false).unwrap();
        assert_eq!(out, vec!['c', 'a', 'b']);
        assert_eq!(pi.interleave(&out, true).unwrap(), vec!['a', 'b', 'c']);
        let id = Interleaver::identity(4);
        assert_eq!(
            id.interleave(&[1, 2, 3, 4], false).unwrap(),
            vec![1, 2, 3, 4]
        );
        assert!(Interleaver::from_permutation(vec![0, 0]).is_err());
        assert!(pi.interleave(&[1, 2], false).is_err());
    }

    proptest! {
        #[test]
        fn interleaver_is_bijective(len in 1usize..500, seed in any::<u64>()) {
            let pi = Interleaver::random(len, seed);
            prop_assert!(Interleaver::from_permutation(pi.permutation().to_vec()).is_ok());
            let block: Vec<u32> = (0..len as u32).map(|v| v * 7 + 1).collect();
            let there = pi.interleave(&block, false).unwrap();
            prop_assert_eq!(pi.interleave(&there, true).unwrap(), block);
        }
    }

    #[test]
    fn noiseless_decoding_recovers_info() {
        for (desc, term) in [("1,5/7", true), ("1,5/7", false), ("17,13", true)] {
            let spec = code(desc, term, 64);
            let info = RngStream::new(11, 0).bits(64);
            let cw = rsc_encode(&info, &spec).unwrap();
            let la: Vec<f64> = cw
                .iter()
                .map(|&b| if b == 0 { 20.0 } else { -20.0 })
                .collect();
            let out = bcjr_siso_decode(&la, &spec).unwrap();
            assert_eq!(out.info_hard, info, "{desc} {term}");
        }
    }

    #[test]
    fn zero_priors_zero_extrinsic() {
        for term in [true, false] {
            let spec = code("1,5/7", term, 8);
            let out = bcjr_siso_decode(&vec![0.0; spec.coded_len()], &spec).unwrap();
            let oracle = brute_force_extrinsic(&vec![0.0; spec.coded_len()], &spec);
            for (a, b) in out.extrinsic.values.iter().zip(&oracle) {
                assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_exhaustive_map() {
        let mut rng = RngStream::new(2024, 3);
        for (desc, term, kb) in [
            ("1,5/7", true, 8),
            ("1,5/7", false, 8),
            ("17,13", true, 6),
            ("17,13", false, 10),
        ] {
            let spec = code(desc, term, kb);
            for _ in 0..10 {
                let la: Vec<f64> = (0..spec.coded_len())
                    .map(|_| 3.0 * rng.standard_normal())
                    .collect();
                let out = bcjr_siso_decode(&la, &spec).unwrap();
                let oracle = brute_force_extrinsic(&la, &spec);
                for (a, b) in out.extrinsic.values.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-8, "{desc} {term}: {a} vs {b}");
                }
                for ((p, a), e) in out
                    .posterior_coded
                    .values
                    .iter()
                    .zip(&la)
                    .zip(&out.extrinsic.values)
                {
                    assert!((p - (a + e)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn length_checked() {
        let spec = code("1,5/7", true, 8);
        assert!(bcjr_siso_decode(&[0.0; 5], &spec).is_err());
    }
}
