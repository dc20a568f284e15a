//! Python bindings for the `epfde` receiver library.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use epfde::bicm::{self, CodeSpec as CoreCode, Interleaver as CoreInterleaver};
use epfde::channel::{self, ChannelProfile, ChannelRealization};
use epfde::fde::{self, FeedbackMode, ReceiverConfig};
use epfde::harness::{self, Cell, ExperimentConfig, Record};
use epfde::mapping::{self, DampingMode, DampingSchedule};
use epfde::numerics::RngStream;
use epfde::{analysis, Complex64};

// Vec<u8> would cross over as `bytes`; bit lists should be lists of ints.
fn bit_list(bits: Vec<u8>) -> Vec<u32> {
    bits.into_iter().map(u32::from).collect()
}

fn err(e: epfde::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Gray-labelled unit-power constellation.
#[pyclass(frozen)]
struct Constellation(mapping::Constellation);

#[pymethods]
impl Constellation {
    #[new]
    fn new(kind: &str) -> PyResult<Self> {
        Ok(Self(mapping::Constellation::new(
            kind.parse().map_err(err)?,
        )))
    }

    #[getter]
    fn bits_per_symbol(&self) -> usize {
        self.0.bits_per_symbol()
    }

    #[getter]
    fn points(&self) -> Vec<Complex64> {
        self.0.points().to_vec()
    }

    fn map_bits(&self, bits: Vec<u8>) -> PyResult<Vec<Complex64>> {
        mapping::map_bits(&bits, &self.0).map_err(err)
    }

    fn hard_demap(&self, symbols: Vec<Complex64>) -> Vec<u32> {
        bit_list(self.0.hard_demap(&symbols))
    }

    fn __repr__(&self) -> String {
        format!("Constellation({:?})", self.0.kind())
    }
}

/// Rate-1/2 recursive systematic convolutional code.
#[pyclass(frozen)]
struct Code(CoreCode);

#[pymethods]
impl Code {
    #[new]
    #[pyo3(signature = (polys, info_len, terminated = true))]
    fn new(polys: &str, info_len: usize, terminated: bool) -> PyResult<Self> {
        Ok(Self(
            CoreCode::parse(polys, terminated, info_len).map_err(err)?,
        ))
    }

    #[getter]
    fn info_len(&self) -> usize {
        self.0.info_len
    }

    #[getter]
    fn coded_len(&self) -> usize {
        self.0.coded_len()
    }

    #[getter]
    fn rate(&self) -> f64 {
        self.0.rate()
    }

    fn encode(&self, info: Vec<u8>) -> PyResult<Vec<u32>> {
        bicm::rsc_encode(&info, &self.0).map(bit_list).map_err(err)
    }

    /// Log-MAP decoding of a-priori coded-bit LLRs. Returns
    /// `(coded_extrinsic, info_hard)`.
    fn decode(&self, la: Vec<f64>) -> PyResult<(Vec<f64>, Vec<u32>)> {
        let out = bicm::bcjr_siso_decode(&la, &self.0).map_err(err)?;
        Ok((out.extrinsic.values, bit_list(out.info_hard)))
    }
}

#[pyclass(frozen)]
struct Interleaver(CoreInterleaver);

#[pymethods]
impl Interleaver {
    #[new]
    fn new(length: usize, seed: u64) -> Self {
        Self(CoreInterleaver::random(length, seed))
    }

    #[getter]
    fn permutation(&self) -> Vec<usize> {
        self.0.permutation().to_vec()
    }

    #[pyo3(signature = (bits, inverse = false))]
    fn interleave(&self, bits: Vec<f64>, inverse: bool) -> PyResult<Vec<f64>> {
        self.0.interleave(&bits, inverse).map_err(err)
    }
}

/// Static block channel with cyclic-prefix (circulant) convolution.
#[pyclass(frozen)]
struct Channel(ChannelRealization);

#[pymethods]
impl Channel {
    #[new]
    fn new(taps: Vec<Complex64>, block_len: usize, noise_var: f64) -> PyResult<Self> {
        Ok(Self(
            ChannelRealization::new(taps, block_len, noise_var).map_err(err)?,
        ))
    }

    /// Draw a realization of a named preset (`proakis_b`, `proakis_c`, `equ16`, ...).
    #[staticmethod]
    #[pyo3(signature = (name, block_len, noise_var, seed = 0))]
    fn preset(name: &str, block_len: usize, noise_var: f64, seed: u64) -> PyResult<Self> {
        let profile: ChannelProfile = name.parse().map_err(err)?;
        let mut rng = RngStream::new(seed, 0);
        Ok(Self(
            channel::make_channel(&profile, block_len, noise_var, &mut rng).map_err(err)?,
        ))
    }

    #[getter]
    fn taps(&self) -> Vec<Complex64> {
        self.0.taps.clone()
    }

    #[getter]
    fn freq_response(&self) -> Vec<Complex64> {
        self.0.freq_response.clone()
    }

    #[getter]
    fn noise_var(&self) -> f64 {
        self.0.noise_var()
    }

    #[pyo3(signature = (x, seed = 0))]
    fn apply(&self, x: Vec<Complex64>, seed: u64) -> PyResult<Vec<Complex64>> {
        channel::apply_channel(&x, &self.0, &mut RngStream::new(seed, 1)).map_err(err)
    }
}

#[pyfunction]
fn noise_variance(ebn0_db: f64, bits_per_symbol: usize, code_rate: f64) -> f64 {
    channel::noise_variance(ebn0_db, bits_per_symbol, code_rate)
}

/// Turbo-equalize one received block; returns the decoded information bits
/// after each turbo iteration.
#[pyfunction]
#[pyo3(signature = (y, channel, constellation, code, interleaver, mode = "ep", self_iterations = 1, turbo_iterations = 0, damping = None))]
#[allow(clippy::too_many_arguments)]
fn run_receiver(
    y: Vec<Complex64>,
    channel: &Channel,
    constellation: &Constellation,
    code: Option<&Code>,
    interleaver: &Interleaver,
    mode: &str,
    self_iterations: usize,
    turbo_iterations: usize,
    damping: Option<f64>,
) -> PyResult<Vec<Vec<u32>>> {
    let mode: FeedbackMode = mode.parse().map_err(err)?;
    let damping = damping.map_or_else(DampingSchedule::none, |b| {
        DampingSchedule::fixed(DampingMode::Feature, b)
    });
    let cfg = ReceiverConfig::uniform(mode, self_iterations, turbo_iterations, damping);
    let out = fde::run_receiver(
        &y,
        &channel.0,
        &constellation.0,
        code.map(|c| &c.0),
        &interleaver.0,
        &cfg,
    )
    .map_err(err)?;
    Ok(out.info_hard_per_tau.into_iter().map(bit_list).collect())
}

fn records<'py, R: Record>(py: Python<'py>, rows: &[R]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rows.iter()
        .map(|row| {
            let d = PyDict::new(py);
            for (key, cell) in R::COLUMNS.iter().zip(row.cells()) {
                match cell {
                    Cell::Int(v) => d.set_item(key, v)?,
                    Cell::Float(v) => d.set_item(key, v)?,
                    Cell::Text(v) => d.set_item(key, v)?,
                }
            }
            Ok(d)
        })
        .collect()
}

fn parse_config(toml_text: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_toml(toml_text).map_err(err)
}

/// Run a BER/BLER experiment described by a TOML string; one dict per (Eb/N0, tau).
#[pyfunction]
#[pyo3(signature = (toml_text, workers = 0))]
fn run_experiment<'py>(
    py: Python<'py>,
    toml_text: &str,
    workers: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = parse_config(toml_text)?;
    let rows = py
        .detach(|| harness::with_workers(workers, || harness::run_experiment(&cfg)))
        .map_err(err)?
        .map_err(err)?;
    records(py, &rows)
}

/// Measure EXIT curves for a `kind = "exit"` TOML string; one dict per point.
#[pyfunction]
#[pyo3(signature = (toml_text, workers = 0))]
fn run_exit<'py>(
    py: Python<'py>,
    toml_text: &str,
    workers: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = parse_config(toml_text)?;
    let curves = py
        .detach(|| harness::with_workers(workers, || harness::run_exit(&cfg)))
        .map_err(err)?
        .map_err(err)?;
    records(py, &harness::exit_rows(cfg.receiver.mode, &curves))
}

#[pyfunction]
fn j_function(sigma: f64) -> f64 {
    analysis::j_function(sigma)
}

#[pyfunction]
fn j_inverse(i: f64) -> f64 {
    analysis::j_inverse(i)
}

#[pymodule]
pub fn pyepfde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Constellation>()?;
    m.add_class::<Code>()?;
    m.add_class::<Interleaver>()?;
    m.add_class::<Channel>()?;
    m.add_function(wrap_pyfunction!(noise_variance, m)?)?;
    m.add_function(wrap_pyfunction!(run_receiver, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_exit, m)?)?;
    m.add_function(wrap_pyfunction!(j_function, m)?)?;
    m.add_function(wrap_pyfunction!(j_inverse, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
