//! Python bindings for `spectr_core`.
//!
//! Distributions cross the boundary as lists of floats and tokens as ints.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use spectr_core::bench::sweep::{run_sweep, SweepConfig, SweepFamily};
use spectr_core::bench::verify::{verify_sequence, verify_token, SequenceVerifyConfig, TokenVerifyConfig};
use spectr_core::coupling::{self, DEFAULT_GAMMA_DELTA};
use spectr_core::decode::{self, Drafting, SelectionMethod, SpectrConfig};
use spectr_core::lm::{self, CostModel, ToyLmSpec};
use spectr_core::{prob, Error, ProbVector, TokenId};

create_exception!(spectr, SizeLimitError, PyException);

/// `(draft_tuple, output_token, mass)`.
type PlanEntry = (Vec<u32>, u32, f64);
/// `(param, k, method, alpha)`; alpha is `None` over the size cap.
type SweepEntry = (f64, usize, String, Option<f64>);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::SizeLimit { .. } => SizeLimitError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn dist(v: Vec<f64>) -> PyResult<ProbVector> {
    ProbVector::new(v).map_err(to_py)
}

fn tokens(v: &[u32]) -> Vec<TokenId> {
    v.iter().copied().map(TokenId).collect()
}

fn ids(v: &[TokenId]) -> Vec<u32> {
    v.iter().map(|t| t.0).collect()
}

/// Counter-based random stream; equal seeds give equal draws.
#[pyclass(name = "RngStream", module = "spectr")]
struct PyRngStream(prob::RngStream);

#[pymethods]
impl PyRngStream {
    #[new]
    fn new(seed: u64) -> Self {
        Self(prob::RngStream::new(seed))
    }

    fn substream(&self, id: u64) -> Self {
        Self(self.0.substream(id))
    }

    fn next_f64(&mut self) -> f64 {
        self.0.next_f64()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn sample(&mut self, p: Vec<f64>) -> PyResult<u32> {
        Ok(prob::sample(&dist(p)?, &mut self.0).0)
    }
}

/// Large toy model with a perturbed draft model.
#[pyclass(name = "ModelPair", module = "spectr", frozen)]
struct PyModelPair(lm::ModelPair);

#[pymethods]
impl PyModelPair {
    #[new]
    #[pyo3(signature = (vocab_size, order, seed, eps, allow_zeros = false))]
    fn new(vocab_size: usize, order: usize, seed: u64, eps: f64, allow_zeros: bool) -> PyResult<Self> {
        lm::ModelPair::from_spec(&ToyLmSpec {
            vocab_size,
            order,
            seed,
            eps,
            allow_zeros,
        })
        .map(Self)
        .map_err(to_py)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.0.big.vocab_size()
    }

    fn big_next_dist(&self, context: Vec<u32>) -> PyResult<Vec<f64>> {
        Ok(self.0.big.next_dist(&tokens(&context)).map_err(to_py)?.probs().to_vec())
    }

    fn small_next_dist(&self, context: Vec<u32>) -> PyResult<Vec<f64>> {
        Ok(self.0.small.next_dist(&tokens(&context)).map_err(to_py)?.probs().to_vec())
    }

    /// Mean total variation over the fixed probe contexts for `probe_seed`.
    #[pyo3(signature = (probe_seed = 0))]
    fn mean_tv(&self, probe_seed: u64) -> PyResult<f64> {
        let probes = lm::probe_contexts(self.0.big.vocab_size(), self.0.big.order(), probe_seed);
        self.0.mean_tv(&probes).map_err(to_py)
    }
}

#[pyclass(name = "DecodeTrace", module = "spectr", frozen)]
struct PyDecodeTrace(decode::DecodeTrace);

#[pymethods]
impl PyDecodeTrace {
    #[getter]
    fn algorithm(&self) -> String {
        self.0.algorithm.clone()
    }

    #[getter]
    fn tokens(&self) -> Vec<u32> {
        ids(&self.0.emitted_tokens)
    }

    #[getter]
    fn serial_big_calls(&self) -> usize {
        self.0.serial_big_calls
    }

    /// `(drafts_used, draft_length, accepted, extra_token)` per iteration.
    #[getter]
    fn per_iteration(&self) -> Vec<(usize, usize, usize, bool)> {
        self.0
            .per_iteration
            .iter()
            .map(|r| (r.drafts_used, r.draft_length, r.accepted, r.extra_token))
            .collect()
    }

    fn block_efficiency(&self) -> PyResult<f64> {
        decode::block_efficiency(&self.0).map_err(to_py)
    }

    #[pyo3(signature = (big_call_cost = 1.0, small_call_cost = 0.0, overhead_per_iter = 0.0))]
    fn simulated_speedup(&self, big_call_cost: f64, small_call_cost: f64, overhead_per_iter: f64) -> PyResult<f64> {
        let cost = CostModel::new(big_call_cost, small_call_cost, overhead_per_iter).map_err(to_py)?;
        decode::simulated_speedup(&self.0, &cost).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.0.to_json(&CostModel::default())
    }

    fn __len__(&self) -> usize {
        self.0.emitted_tokens.len()
    }
}

#[pyfunction]
fn overlap(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    prob::overlap(&dist(p)?, &dist(q)?).map_err(to_py)
}

#[pyfunction]
fn tv_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    prob::tv_distance(&dist(p)?, &dist(q)?).map_err(to_py)
}

#[pyfunction]
fn residual_maximal(p: Vec<f64>, q: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(prob::residual_maximal(&dist(p)?, &dist(q)?).map_err(to_py)?.probs().to_vec())
}

/// Returns `(token, accepted)`.
#[pyfunction]
fn maximal_coupling_select(p: Vec<f64>, q: Vec<f64>, draft: u32, rng: &mut PyRngStream) -> PyResult<(u32, bool)> {
    let (t, accepted) = coupling::maximal_coupling_select(&dist(p)?, &dist(q)?, TokenId(draft), &mut rng.0).map_err(to_py)?;
    Ok((t.0, accepted))
}

#[pyfunction]
#[pyo3(signature = (p, q, k, delta = DEFAULT_GAMMA_DELTA))]
fn kseq_gamma_star(p: Vec<f64>, q: Vec<f64>, k: usize, delta: f64) -> PyResult<f64> {
    coupling::kseq_gamma_star(&dist(p)?, &dist(q)?, k, delta).map_err(to_py)
}

/// Returns `(beta, p_acc, residual)`; the residual is `None` when acceptance is certain.
#[pyfunction]
fn kseq_params(p: Vec<f64>, q: Vec<f64>, k: usize, gamma: f64) -> PyResult<(f64, f64, Option<Vec<f64>>)> {
    let params = coupling::kseq_params(&dist(p)?, &dist(q)?, k, gamma).map_err(to_py)?;
    Ok((params.beta, params.p_acc, params.residual.map(|r| r.probs().to_vec())))
}

/// Returns `(token, accepted_index)`.
#[pyfunction]
fn kseq_select(
    p: Vec<f64>,
    q: Vec<f64>,
    drafts: Vec<u32>,
    gamma: f64,
    rng: &mut PyRngStream,
) -> PyResult<(u32, Option<usize>)> {
    let s = coupling::kseq_select(&dist(p)?, &dist(q)?, &tokens(&drafts), gamma, &mut rng.0).map_err(to_py)?;
    Ok((s.token.0, s.accepted_index))
}

#[pyfunction]
fn kseq_output_marginal(p: Vec<f64>, q: Vec<f64>, k: usize, gamma: f64) -> PyResult<Vec<f64>> {
    Ok(coupling::kseq_output_marginal(&dist(p)?, &dist(q)?, k, gamma)
        .map_err(to_py)?
        .probs()
        .to_vec())
}

#[pyfunction]
fn kseq_acceptance(p: Vec<f64>, q: Vec<f64>, k: usize, gamma: f64) -> PyResult<f64> {
    coupling::kseq_acceptance(&dist(p)?, &dist(q)?, k, gamma).map_err(to_py)
}

/// Returns `(alpha, plan)` with plan rows `(draft_tuple, output_token, mass)` of positive mass.
#[pyfunction]
fn otm_lp_solve(p: Vec<f64>, q: Vec<f64>, k: usize) -> PyResult<(f64, Vec<PlanEntry>)> {
    let (plan, alpha) = coupling::otm_lp_solve(&dist(p)?, &dist(q)?, k).map_err(to_py)?;
    let rows = plan
        .rows
        .iter()
        .flat_map(|row| {
            row.masses
                .iter()
                .enumerate()
                .filter(|(_, m)| **m > 0.0)
                .map(|(y, m)| (ids(&row.tuple), y as u32, *m))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok((alpha, rows))
}

/// Returns `(bound, witness_subset)`.
#[pyfunction]
fn alpha_upper_bound(p: Vec<f64>, q: Vec<f64>, k: usize) -> PyResult<(f64, Vec<u32>)> {
    let (bound, witness) = coupling::alpha_upper_bound(&dist(p)?, &dist(q)?, k).map_err(to_py)?;
    Ok((bound, ids(&witness)))
}

#[pyfunction]
fn alpha_bernoulli_closed_form(p_head: f64, q_head: f64, k: usize) -> PyResult<f64> {
    coupling::alpha_bernoulli_closed_form(p_head, q_head, k).map_err(to_py)
}

#[pyfunction]
fn alpha_uniform_closed_form(d: usize, r: f64, k: usize) -> PyResult<f64> {
    coupling::alpha_uniform_closed_form(d, r, k).map_err(to_py)
}

fn spectr_config(drafts: usize, length: usize, method: &str, tree: Option<Vec<usize>>) -> PyResult<SpectrConfig> {
    let method: SelectionMethod = method.parse().map_err(to_py)?;
    Ok(match tree {
        Some(factors) => SpectrConfig {
            drafting: Drafting::Tree { factors },
            method,
        },
        None => SpectrConfig::iid(drafts, length, method),
    })
}

/// Decodes `total_tokens` tokens. `tree`, when given, replaces i.i.d. drafting
/// with a prefix tree of those expansion factors.
#[pyfunction]
#[pyo3(signature = (pair, prompt, total_tokens, drafts = 1, length = 4, method = "maximal", tree = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn spectr_decode(
    py: Python<'_>,
    pair: &PyModelPair,
    prompt: Vec<u32>,
    total_tokens: usize,
    drafts: usize,
    length: usize,
    method: &str,
    tree: Option<Vec<usize>>,
    seed: u64,
) -> PyResult<PyDecodeTrace> {
    let config = spectr_config(drafts, length, method, tree)?;
    let prompt = tokens(&prompt);
    py.detach(|| {
        decode::spectr_decode(
            &pair.0.big,
            &pair.0.small,
            &prompt,
            total_tokens,
            &config,
            &prob::RngStream::new(seed),
        )
    })
    .map(PyDecodeTrace)
    .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pair, prompt, total_tokens, seed = 0))]
fn baseline_decode(pair: &PyModelPair, prompt: Vec<u32>, total_tokens: usize, seed: u64) -> PyResult<PyDecodeTrace> {
    decode::baseline_decode(&pair.0.big, &tokens(&prompt), total_tokens, &prob::RngStream::new(seed))
        .map(PyDecodeTrace)
        .map_err(to_py)
}

/// Rows `(param, k, method, alpha)`; alpha is `None` where the LP exceeded its cap.
#[pyfunction]
#[pyo3(signature = (family, base, params, k_max, with_lp = false))]
fn sweep(
    py: Python<'_>,
    family: &str,
    base: f64,
    params: Vec<f64>,
    k_max: usize,
    with_lp: bool,
) -> PyResult<Vec<SweepEntry>> {
    let family = match family {
        "bernoulli" => SweepFamily::Bernoulli { p_head: base, b: params },
        "uniform" => SweepFamily::Uniform {
            d: base as usize,
            r: params,
        },
        other => return Err(PyValueError::new_err(format!("unknown family {other:?}"))),
    };
    let cfg = SweepConfig {
        with_lp,
        ..SweepConfig::new(family, k_max)
    };
    let rows = py.detach(|| run_sweep(&cfg)).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.param, r.k, r.method.to_string(), r.alpha))
        .collect())
}

/// Runs the default token- and sequence-scope checks; returns `(passed, max_error)` per scope.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn verify(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, bool, f64)>> {
    py.detach(|| {
        let token = verify_token(&TokenVerifyConfig {
            seed,
            ..Default::default()
        })?;
        let sequence = verify_sequence(&SequenceVerifyConfig {
            seed,
            ..Default::default()
        })?;
        Ok([token, sequence]
            .into_iter()
            .map(|r| (r.scope.to_string(), r.passed(), r.max_error()))
            .collect())
    })
    .map_err(to_py)
}

#[pymodule]
fn spectr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SizeLimitError", m.py().get_type::<SizeLimitError>())?;
    m.add_class::<PyRngStream>()?;
    m.add_class::<PyModelPair>()?;
    m.add_class::<PyDecodeTrace>()?;
    m.add_function(wrap_pyfunction!(overlap, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(residual_maximal, m)?)?;
    m.add_function(wrap_pyfunction!(maximal_coupling_select, m)?)?;
    m.add_function(wrap_pyfunction!(kseq_gamma_star, m)?)?;
    m.add_function(wrap_pyfunction!(kseq_params, m)?)?;
    m.add_function(wrap_pyfunction!(kseq_select, m)?)?;
    m.add_function(wrap_pyfunction!(kseq_output_marginal, m)?)?;
    m.add_function(wrap_pyfunction!(kseq_acceptance, m)?)?;
    m.add_function(wrap_pyfunction!(otm_lp_solve, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_bernoulli_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_uniform_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(spectr_decode, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_decode, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
