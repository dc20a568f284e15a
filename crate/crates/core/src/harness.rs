//! Monte-Carlo experiment engine: TOML scenario files, seeded block
//! simulation with early stopping, EXIT sweeps and CSV/JSON emission.
//!
//! Every random quantity of block `b` comes from its own [`RngStream`], so
//! results do not depend on how blocks are spread over worker threads.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{achievable_rate, measure_receiver_exit, ExitCurve, ExitScenario};
use crate::bicm::{rsc_encode, CodeSpec, Interleaver};
use crate::channel::{
    apply_channel, apply_channel_time_varying, apply_mimo_channel, make_channel, make_time_varying,
    mismatch_channel, noise_variance, ChannelProfile, CsiMismatchSpec, MimoChannelRealization,
};
use crate::fde::{run_receiver, run_streams, FeedbackMode, ReceiverConfig, Schedule, StreamSpec};
use crate::mapping::{map_bits, Constellation, ConstellationKind, DampingSchedule};
use crate::mimo::MimoEqualizer;
use crate::numerics::RngStream;
use crate::overlap::{run_overlap_receiver, OverlapSpec};
use crate::{Error, Result};

/// Blocks simulated between two evaluations of the stop rule.
const BATCH: usize = 32;

const PURPOSE_DATA: u64 = 0;
const PURPOSE_CHANNEL: u64 = 1;
const PURPOSE_NOISE: u64 = 2;
const PURPOSE_CSI: u64 = 3;

/// At most this many transmit antennas fit the stream-id layout.
const MAX_ANTENNAS: usize = 16;

fn block_stream(seed: u64, block: usize, antenna: usize, purpose: u64) -> RngStream {
    RngStream::new(
        seed,
        ((block as u64) << 8) | ((antenna as u64) << 4) | purpose,
    )
}

fn interleaver_seed(seed: u64, antenna: usize) -> u64 {
    seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(antenna as u64 + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ScFde,
    Overlap,
    Mimo,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    /// Octal polynomials, `"1,5/7"` or `"17,13"`.
    pub polys: String,
    #[serde(default = "yes")]
    pub terminated: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSection {
    pub mode: FeedbackMode,
    /// Same `S` in every turbo iteration. Mutually exclusive with `s_per_tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_per_tau: Option<Vec<usize>>,
    #[serde(default)]
    pub turbo_iterations: usize,
    #[serde(default = "DampingSchedule::none")]
    pub damping: DampingSchedule,
}

impl ReceiverSection {
    pub fn to_config(&self) -> Result<ReceiverConfig> {
        let s_per_tau = match (&self.self_iterations, &self.s_per_tau) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "receiver.s_per_tau",
                    "give either self_iterations or s_per_tau, not both",
                ))
            }
            (Some(s), None) => vec![*s; self.turbo_iterations + 1],
            (None, Some(v)) => v.clone(),
            (None, None) => vec![0; self.turbo_iterations + 1],
        };
        let cfg = ReceiverConfig {
            feedback_mode: self.mode,
            s_per_tau,
            turbo_iterations: self.turbo_iterations,
            damping: self.damping,
        };
        cfg.validate().map_err(|e| prefix_key(e, "receiver"))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimoSection {
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub schedule: Schedule,
    /// Rotate every tap of every link by an independent uniform phase, so
    /// that a static preset gives full-rank per-bin channel matrices.
    #[serde(default = "yes")]
    pub random_link_phase: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub ebn0_db: Vec<f64>,
    pub max_blocks: usize,
    #[serde(default = "default_min_errors")]
    pub min_block_errors: usize,
}

fn default_min_errors() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitSection {
    pub ebn0_db: Vec<f64>,
    pub ia_grid: Vec<f64>,
    pub blocks: usize,
    /// One receiver curve per entry.
    pub self_iterations: Vec<usize>,
    /// Rate used in the Eb/N0 conversion; defaults to the configured code's rate, else 1/2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_rate: Option<f64>,
}

/// One experiment as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Symbols per block (per antenna for MIMO).
    pub block_len: usize,
    pub constellation: ConstellationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<CodeConfig>,
    pub channel: ChannelProfile,
    pub receiver: ReceiverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<OverlapSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mimo: Option<MimoSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csi: Option<CsiMismatchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit: Option<ExitSection>,
}

fn prefix_key(e: Error, section: &str) -> Error {
    match e {
        Error::Config { key, reason } if !key.starts_with(section) => {
            Error::config(format!("{section}.{key}"), reason)
        }
        other => other,
    }
}

fn deserialize_table<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let key = e.path().to_string();
        let key = if key == "." {
            "<root>".to_string()
        } else {
            key
        };
        Error::config(key, e.into_inner().to_string())
    })
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::config("<file>", e.to_string().trim_end().to_string()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = deserialize_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_len == 0 {
            return Err(Error::config("block_len", "must be positive"));
        }
        if self.channel.paths() > self.block_len {
            return Err(Error::config(
                "channel",
                format!(
                    "{} taps exceed block_len {}",
                    self.channel.paths(),
                    self.block_len
                ),
            ));
        }
        if let Some(code) = &self.code {
            self.code_spec()
                .map_err(|e| Error::config("code.polys", e.to_string()))?;
            let _ = code;
        }
        self.receiver.to_config()?;
        self.receiver
            .damping
            .validate()
            .map_err(|e| prefix_key(e, "receiver"))?;

        let need = |present: bool, key: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::config(
                    key,
                    format!("section required for kind {:?}", self.kind),
                ))
            }
        };
        let forbid = |present: bool, key: &str| {
            if present {
                Err(Error::config(
                    key,
                    format!("not used by kind {:?}", self.kind),
                ))
            } else {
                Ok(())
            }
        };
        match self.kind {
            ScenarioKind::ScFde => {
                forbid(self.overlap.is_some(), "overlap")?;
                forbid(self.mimo.is_some(), "mimo")?;
            }
            ScenarioKind::Overlap => {
                need(self.overlap.is_some(), "overlap")?;
                forbid(self.mimo.is_some(), "mimo")?;
                forbid(self.csi.is_some(), "csi")?;
                let o = self.overlap.as_ref().unwrap();
                o.validate().map_err(|e| prefix_key(e, "overlap"))?;
                if o.n < self.channel.paths() {
                    return Err(Error::config(
                        "overlap.n",
                        "sub-block shorter than the channel",
                    ));
                }
            }
            ScenarioKind::Mimo => {
                need(self.mimo.is_some(), "mimo")?;
                forbid(self.overlap.is_some(), "overlap")?;
                forbid(self.csi.is_some(), "csi")?;
                let m = self.mimo.as_ref().unwrap();
                if m.tx_antennas == 0 || m.tx_antennas > MAX_ANTENNAS {
                    return Err(Error::config(
                        "mimo.tx_antennas",
                        format!("must lie in 1..={MAX_ANTENNAS}"),
                    ));
                }
                if m.rx_antennas == 0 {
                    return Err(Error::config("mimo.rx_antennas", "must be positive"));
                }
            }
            ScenarioKind::Exit => {
                need(self.exit.is_some(), "exit")?;
                forbid(self.overlap.is_some(), "overlap")?;
                forbid(self.mimo.is_some(), "mimo")?;
                forbid(self.csi.is_some(), "csi")?;
                let e = self.exit.as_ref().unwrap();
                if e.ebn0_db.is_empty() {
                    return Err(Error::config("exit.ebn0_db", "must not be empty"));
                }
                if e.ia_grid.len() < 2 || e.ia_grid.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::config(
                        "exit.ia_grid",
                        "needs at least two strictly increasing points",
                    ));
                }
                if e.ia_grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::config("exit.ia_grid", "points must lie in [0, 1]"));
                }
                if e.blocks == 0 {
                    return Err(Error::config("exit.blocks", "must be at least 1"));
                }
                if e.self_iterations.is_empty() {
                    return Err(Error::config("exit.self_iterations", "must not be empty"));
                }
                if let Some(r) = e.code_rate {
                    if !(r > 0.0 && r <= 1.0) {
                        return Err(Error::config("exit.code_rate", "must lie in (0, 1]"));
                    }
                }
            }
        }
        if let Some(csi) = &self.csi {
            if csi.enabled && csi.pilots < self.channel.paths() {
                return Err(Error::config(
                    "csi.pilots",
                    "fewer pilots than channel taps",
                ));
            }
        }
        if self.kind != ScenarioKind::Exit {
            let sim = self
                .sim
                .as_ref()
                .ok_or_else(|| Error::config("sim", "section required for simulation runs"))?;
            if sim.ebn0_db.is_empty() {
                return Err(Error::config("sim.ebn0_db", "must not be empty"));
            }
            if sim.ebn0_db.iter().any(|v| v.is_nan()) {
                return Err(Error::config("sim.ebn0_db", "NaN is not an Eb/N0"));
            }
            if sim.max_blocks == 0 {
                return Err(Error::config("sim.max_blocks", "must be at least 1"));
            }
            if sim.min_block_errors == 0 {
                return Err(Error::config("sim.min_block_errors", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn code_spec(&self) -> Result<Option<CodeSpec>> {
        let q = Constellation::new(self.constellation).bits_per_symbol();
        self.code
            .as_ref()
            .map(|c| CodeSpec::for_coded_len(&c.polys, c.terminated, self.block_len * q))
            .transpose()
    }

    /// Information bits per stream and block.
    pub fn info_len(&self) -> Result<usize> {
        let q = Constellation::new(self.constellation).bits_per_symbol();
        Ok(self.code_spec()?.map_or(self.block_len * q, |c| c.info_len))
    }

    pub fn streams(&self) -> usize {
        self.mimo.map_or(1, |m| m.tx_antennas)
    }
}

/// Statistics at one Eb/N0 point and turbo iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(deserialize_with = "lenient_f64")]
    pub snr_db: f64,
    pub tau: usize,
    pub s: usize,
    pub ber: f64,
    pub bler: f64,
    /// Codewords simulated (transmissions times streams).
    pub blocks_run: u64,
    pub bit_errors: u64,
    pub block_errors: u64,
    pub wall_seconds: f64,
}

impl ResultRow {
    /// Equality ignoring the wall-clock time.
    pub fn same_statistics(&self, other: &Self) -> bool {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        } == Self {
            wall_seconds: 0.0,
            ..other.clone()
        }
    }
}

/// One point of a receiver EXIT curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRow {
    #[serde(deserialize_with = "lenient_f64")]
    pub snr_db: f64,
    #[serde(rename = "I_A")]
    pub i_a: f64,
    #[serde(rename = "I_E")]
    pub i_e: f64,
    #[serde(rename = "S")]
    pub s: usize,
    pub mode: String,
}

/// A result row tagged with the swept parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: String,
    #[serde(flatten)]
    pub row: ResultRow,
}

/// Accepts numbers or the strings `inf`, `-inf`, `nan`.
fn lenient_f64<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) => s.parse::<f64>().map_err(serde::de::Error::custom),
    }
}

/// Per-block error outcome at every turbo iteration.
#[derive(Debug, Clone)]
struct BlockOutcome {
    /// `(bit_errors, block_errors)` per tau.
    per_tau: Vec<(u64, u64)>,
}

fn count_errors(tx: &[u8], rx: &[u8]) -> u64 {
    tx.iter().zip(rx).filter(|(a, b)| a != b).count() as u64
}

struct Prepared {
    cfg: ExperimentConfig,
    receiver: ReceiverConfig,
    constellation: Constellation,
    code: Option<CodeSpec>,
    interleavers: Vec<Interleaver>,
    info_len: usize,
    rate: f64,
    last_tau: usize,
}

impl Prepared {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let constellation = Constellation::new(cfg.constellation);
        let code = cfg.code_spec()?;
        let nbits = cfg.block_len * constellation.bits_per_symbol();
        let interleavers = (0..cfg.streams())
            .map(|t| Interleaver::random(nbits, interleaver_seed(cfg.seed, t)))
            .collect();
        let receiver = cfg.receiver.to_config()?;
        Ok(Self {
            info_len: cfg.info_len()?,
            rate: code.as_ref().map_or(1.0, CodeSpec::rate),
            last_tau: if code.is_some() {
                receiver.turbo_iterations
            } else {
                0
            },
            cfg: cfg.clone(),
            receiver,
            constellation,
            code,
            interleavers,
        })
    }

    fn transmit(&self, block: usize, antenna: usize) -> Result<(Vec<u8>, Vec<crate::Complex64>)> {
        let info = block_stream(self.cfg.seed, block, antenna, PURPOSE_DATA).bits(self.info_len);
        let coded = match &self.code {
            Some(c) => rsc_encode(&info, c)?,
            None => info.clone(),
        };
        let x = map_bits(
            &self.interleavers[antenna].interleave(&coded, false)?,
            &self.constellation,
        )?;
        Ok((info, x))
    }

    fn outcome(&self, info: &[&[u8]], hard_per_tau: &[&[Vec<u8>]]) -> BlockOutcome {
        let per_tau = (0..=self.last_tau)
            .map(|tau| {
                info.iter()
                    .zip(hard_per_tau)
                    .fold((0, 0), |(be, ble), (tx, hard)| {
                        let e = count_errors(tx, &hard[tau]);
                        (be + e, ble + u64::from(e > 0))
                    })
            })
            .collect();
        BlockOutcome { per_tau }
    }

    fn simulate_block(&self, noise_var: f64, block: usize) -> Result<BlockOutcome> {
        let seed = self.cfg.seed;
        let k = self.cfg.block_len;
        match self.cfg.kind {
            ScenarioKind::ScFde => {
                let (info, x) = self.transmit(block, 0)?;
                let ch = make_channel(
                    &self.cfg.channel,
                    k,
                    noise_var,
                    &mut block_stream(seed, block, 0, PURPOSE_CHANNEL),
                )?;
                let y = apply_channel(&x, &ch, &mut block_stream(seed, block, 0, PURPOSE_NOISE))?;
                let known = match &self.cfg.csi {
                    Some(csi) if csi.enabled => {
                        mismatch_channel(&ch, csi, &mut block_stream(seed, block, 0, PURPOSE_CSI))?
                    }
                    _ => ch,
                };
                let out = run_receiver(
                    &y,
                    &known,
                    &self.constellation,
                    self.code.as_ref(),
                    &self.interleavers[0],
                    &self.receiver,
                )?;
                Ok(self.outcome(&[&info], &[&out.info_hard_per_tau]))
            }
            ScenarioKind::Overlap => {
                let spec = self.cfg.overlap.as_ref().expect("validated");
                let (info, x) = self.transmit(block, 0)?;
                let tv = make_time_varying(
                    &self.cfg.channel,
                    k,
                    noise_var,
                    &mut block_stream(seed, block, 0, PURPOSE_CHANNEL),
                )?;
                let y = apply_channel_time_varying(
                    &x,
                    &tv,
                    &mut block_stream(seed, block, 0, PURPOSE_NOISE),
                )?;
                let out = run_overlap_receiver(
                    &y,
                    k,
                    &tv,
                    spec,
                    &self.constellation,
                    self.code.as_ref(),
                    &self.interleavers[0],
                    &self.receiver,
                )?;
                Ok(self.outcome(&[&info], &[&out.info_hard_per_tau]))
            }
            ScenarioKind::Mimo => {
                let m = self.cfg.mimo.expect("validated");
                let tx = (0..m.tx_antennas)
                    .map(|t| self.transmit(block, t))
                    .collect::<Result<Vec<_>>>()?;
                let mut rng = block_stream(seed, block, 0, PURPOSE_CHANNEL);
                let ch = if m.random_link_phase {
                    MimoChannelRealization::from_profile_random_phase(
                        &self.cfg.channel,
                        m.tx_antennas,
                        m.rx_antennas,
                        k,
                        noise_var,
                        &mut rng,
                    )?
                } else {
                    MimoChannelRealization::from_profile(
                        &self.cfg.channel,
                        m.tx_antennas,
                        m.rx_antennas,
                        k,
                        noise_var,
                        &mut rng,
                    )?
                };
                let x: Vec<_> = tx.iter().map(|(_, x)| x.clone()).collect();
                let y =
                    apply_mimo_channel(&x, &ch, &mut block_stream(seed, block, 0, PURPOSE_NOISE))?;
                let specs: Vec<StreamSpec<'_>> = self
                    .interleavers
                    .iter()
                    .map(|pi| StreamSpec {
                        constellation: &self.constellation,
                        code: self.code.as_ref(),
                        interleaver: pi,
                        mapped_bits: None,
                    })
                    .collect();
                let mut eq = MimoEqualizer::new(&y, &ch)?;
                let outs = run_streams(&mut eq, &specs, &self.receiver, m.schedule)?;
                let info: Vec<&[u8]> = tx.iter().map(|(i, _)| i.as_slice()).collect();
                let hard: Vec<&[Vec<u8>]> = outs
                    .iter()
                    .map(|o| o.info_hard_per_tau.as_slice())
                    .collect();
                Ok(self.outcome(&info, &hard))
            }
            ScenarioKind::Exit => unreachable!("EXIT scenarios are run by run_exit"),
        }
    }

    fn run_point(&self, ebn0_db: f64) -> Result<Vec<ResultRow>> {
        let sim = self.cfg.sim.as_ref().expect("validated");
        let start = Instant::now();
        let q = self.constellation.bits_per_symbol();
        let noise_var = noise_variance(ebn0_db, q, self.rate);
        let ntau = self.last_tau + 1;
        let mut bit_errors = vec![0u64; ntau];
        let mut block_errors = vec![0u64; ntau];
        let mut run = 0usize;
        'outer: while run < sim.max_blocks {
            let end = (run + BATCH).min(sim.max_blocks);
            let outcomes = (run..end)
                .into_par_iter()
                .map(|b| self.simulate_block(noise_var, b))
                .collect::<Result<Vec<_>>>()?;
            for o in outcomes {
                for (tau, &(be, ble)) in o.per_tau.iter().enumerate() {
                    bit_errors[tau] += be;
                    block_errors[tau] += ble;
                }
                run += 1;
                if block_errors[self.last_tau] >= sim.min_block_errors as u64 {
                    break 'outer;
                }
            }
        }
        let wall = start.elapsed().as_secs_f64();
        let codewords = (run * self.cfg.streams()) as u64;
        Ok((0..ntau)
            .map(|tau| ResultRow {
                snr_db: ebn0_db,
                tau,
                s: self.receiver.self_iterations(tau),
                ber: bit_errors[tau] as f64 / (codewords * self.info_len as u64) as f64,
                bler: block_errors[tau] as f64 / codewords as f64,
                blocks_run: codewords,
                bit_errors: bit_errors[tau],
                block_errors: block_errors[tau],
                wall_seconds: wall,
            })
            .collect())
    }
}

/// Runs a BER/BLER simulation on the current rayon pool. One row per
/// `(Eb/N0, tau)`; the stop rule looks at block errors after the last turbo
/// iteration and is evaluated in block order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    if cfg.kind == ScenarioKind::Exit {
        return Err(Error::config("kind", "use run_exit for EXIT scenarios"));
    }
    let prepared = Prepared::new(cfg)?;
    let sim = cfg.sim.as_ref().expect("validated");
    let mut rows = Vec::new();
    for &snr in &sim.ebn0_db {
        rows.extend(prepared.run_point(snr)?);
    }
    Ok(rows)
}

/// Receiver EXIT curves, one per `(Eb/N0, S)` pair.
pub fn run_exit(cfg: &ExperimentConfig) -> Result<Vec<(f64, usize, ExitCurve)>> {
    if cfg.kind != ScenarioKind::Exit {
        return Err(Error::config("kind", "run_exit needs kind = \"exit\""));
    }
    cfg.validate()?;
    let ex = cfg.exit.as_ref().expect("validated");
    let code_rate = match ex.code_rate {
        Some(r) => r,
        None => cfg.code_spec()?.map_or(0.5, |c| c.rate()),
    };
    let mut out = Vec::new();
    for &snr in &ex.ebn0_db {
        for &s in &ex.self_iterations {
            let receiver = ReceiverConfig::uniform(cfg.receiver.mode, s, 0, cfg.receiver.damping);
            let effective_s = receiver.self_iterations(0);
            let sc = ExitScenario {
                profile: cfg.channel.clone(),
                constellation: cfg.constellation,
                block_len: cfg.block_len,
                receiver,
                code_rate,
                seed: cfg.seed,
                tag: format!("{}-S{}", mode_name(cfg.receiver.mode), effective_s),
            };
            out.push((
                snr,
                effective_s,
                measure_receiver_exit(&sc, &ex.ia_grid, snr, ex.blocks)?,
            ));
        }
    }
    Ok(out)
}

fn mode_name(m: FeedbackMode) -> &'static str {
    match m {
        FeedbackMode::Ep => "ep",
        FeedbackMode::Ext => "ext",
        FeedbackMode::App => "app",
    }
}

/// Flattens EXIT curves into plot-ready rows.
pub fn exit_rows(mode: FeedbackMode, curves: &[(f64, usize, ExitCurve)]) -> Vec<ExitRow> {
    curves
        .iter()
        .flat_map(|(snr, s, curve)| {
            curve.points.iter().map(move |p| ExitRow {
                snr_db: *snr,
                i_a: p.i_a,
                i_e: p.i_e,
                s: *s,
                mode: mode_name(mode).to_string(),
            })
        })
        .collect()
}

/// Area-theorem rate of each curve, when its grid spans `I_A` from 0 to 1.
pub fn exit_rates(
    cfg: &ExperimentConfig,
    curves: &[(f64, usize, ExitCurve)],
) -> Vec<(f64, usize, Option<f64>)> {
    let q = Constellation::new(cfg.constellation).bits_per_symbol();
    curves
        .iter()
        .map(|(snr, s, c)| (*snr, *s, achievable_rate(c, q).ok()))
        .collect()
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}

/// Sets `dotted.key` in a parsed config table. `value` is read as a TOML
/// value, falling back to a plain string.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::config(key, "empty key"))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

/// Runs the experiment once per value of `key`.
pub fn run_sweep(base: &toml::Table, key: &str, values: &[String]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for v in values {
        let mut table = base.clone();
        set_dotted(&mut table, key, v)?;
        let cfg = ExperimentConfig::from_table(table)?;
        rows.extend(run_experiment(&cfg)?.into_iter().map(|row| SweepRow {
            sweep_value: v.clone(),
            row,
        }));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::config(
                "format",
                format!("unknown format `{s}` (csv or json)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
}

impl Metadata {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Self {
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

/// A row type with a fixed column order.
pub trait Record {
    const COLUMNS: &'static [&'static str];
    fn cells(&self) -> Vec<Cell>;
}

impl Record for ResultRow {
    const COLUMNS: &'static [&'static str] = &[
        "snr_db",
        "tau",
        "s",
        "ber",
        "bler",
        "blocks_run",
        "bit_errors",
        "block_errors",
        "wall_seconds",
    ];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Float(self.snr_db),
            Cell::Int(self.tau as u64),
            Cell::Int(self.s as u64),
            Cell::Float(self.ber),
            Cell::Float(self.bler),
            Cell::Int(self.blocks_run),
            Cell::Int(self.bit_errors),
            Cell::Int(self.block_errors),
            Cell::Float(self.wall_seconds),
        ]
    }
}

impl Record for ExitRow {
    const COLUMNS: &'static [&'static str] = &["snr_db", "I_A", "I_E", "S", "mode"];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Float(self.snr_db),
            Cell::Float(self.i_a),
            Cell::Float(self.i_e),
            Cell::Int(self.s as u64),
            Cell::Text(self.mode.clone()),
        ]
    }
}

impl Record for SweepRow {
    const COLUMNS: &'static [&'static str] = &[
        "sweep_value",
        "snr_db",
        "tau",
        "s",
        "ber",
        "bler",
        "blocks_run",
        "bit_errors",
        "block_errors",
        "wall_seconds",
    ];

    fn cells(&self) -> Vec<Cell> {
        let mut c = vec![Cell::Text(self.sweep_value.clone())];
        c.extend(self.row.cells());
        c
    }
}

/// `v` with 6 significant digits, trailing zeros removed.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{v:.5e}");
        let (mant, e) = s.split_once('e').expect("exponent form");
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{e}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cell_json(c: &Cell) -> serde_json::Value {
    match c {
        Cell::Int(v) => serde_json::Value::from(*v),
        Cell::Float(v) if v.is_finite() => serde_json::Value::from(
            format_sig6(*v)
                .parse::<f64>()
                .expect("formatted float parses"),
        ),
        Cell::Float(v) => serde_json::Value::String(format_sig6(*v)),
        Cell::Text(s) => serde_json::Value::String(s.clone()),
    }
}

/// Writes rows as CSV (metadata as `#` comment lines, then header and rows)
/// or as a JSON object `{metadata, rows}`.
pub fn write_results<R: Record>(
    rows: &[R],
    format: OutputFormat,
    meta: &Metadata,
    out: &mut dyn Write,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("rows", "nothing to emit"));
    }
    match format {
        OutputFormat::Csv => {
            writeln!(out, "# config_sha256: {}", meta.config_sha256)?;
            writeln!(out, "# seed: {}", meta.seed)?;
            writeln!(out, "# version: {}", meta.version)?;
            writeln!(out, "{}", R::COLUMNS.join(","))?;
            for r in rows {
                let line: Vec<String> = r
                    .cells()
                    .iter()
                    .map(|c| match c {
                        Cell::Int(v) => v.to_string(),
                        Cell::Float(v) => format_sig6(*v),
                        Cell::Text(s) => csv_field(s),
                    })
                    .collect();
                writeln!(out, "{}", line.join(","))?;
            }
        }
        OutputFormat::Json => {
            let rows: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    let obj = R::COLUMNS
                        .iter()
                        .zip(r.cells())
                        .map(|(k, c)| (k.to_string(), cell_json(&c)))
                        .collect::<serde_json::Map<_, _>>();
                    serde_json::Value::Object(obj)
                })
                .collect();
            let doc = serde_json::json!({ "metadata": meta, "rows": rows });
            serde_json::to_writer_pretty(&mut *out, &doc).map_err(|e| Error::Io(e.into()))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

/// [`write_results`] into a file.
pub fn emit_results<R: Record>(
    rows: &[R],
    format: OutputFormat,
    meta: &Metadata,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_results(rows, format, meta, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Parses a JSON results document.
pub fn read_results_json<R: DeserializeOwned>(text: &str) -> Result<(Metadata, Vec<R>)> {
    #[derive(Deserialize)]
    struct Doc<R> {
        metadata: Metadata,
        rows: Vec<R>,
    }
    let doc: Doc<R> =
        serde_json::from_str(text).map_err(|e| Error::config("<json>", e.to_string()))?;
    Ok((doc.metadata, doc.rows))
}
