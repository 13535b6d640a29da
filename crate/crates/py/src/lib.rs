//! Python bindings. Configurations and results cross the boundary as JSON
//! text; the `gridmc` Python package wraps them into dicts.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use gridmc::experiment::{execute, payload_json, version_string, write_outputs, ExperimentConfig};
use gridmc::gridmodel::{generate_radial_feeder, AreaPartition, FeederSpec};
use gridmc::linflow::{build_linear_model, truncate_model, truncation_error as trunc_err};
use gridmc::simnet::Schedule;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn version() -> String {
    version_string()
}

#[pyfunction]
#[pyo3(signature = (seed = 1))]
fn default_config(seed: u64) -> PyResult<String> {
    serde_json::to_string(&ExperimentConfig::desk_scale(seed)).map_err(value_error)
}

/// Run the experiment described by `config_json` and return the results
/// payload as JSON. The GIL is released while the solver runs.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir = None, schedule_seed = None))]
fn run_experiment(py: Python<'_>, config_json: &str, out_dir: Option<PathBuf>, schedule_seed: Option<u64>) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(value_error)?;
    let schedule = schedule_seed.map_or(Schedule::InOrder, |seed| Schedule::Permuted { seed });
    py.detach(|| {
        let res = execute(&cfg, schedule)?;
        if let Some(dir) = &out_dir {
            write_outputs(dir, &res)?;
        }
        payload_json(&res.payload)
    })
    .map_err(value_error)
}

/// ‖N − Ñ‖_F/‖N‖_F for a synthetic feeder split into `areas` contiguous areas.
#[pyfunction]
#[pyo3(signature = (n_buses, seed, areas))]
fn truncation_error(n_buses: usize, seed: u64, areas: usize) -> PyResult<f64> {
    let f = generate_radial_feeder(&FeederSpec::new(n_buses, seed).with_time_steps(1)).map_err(value_error)?;
    let model = build_linear_model(&f.network, 1).map_err(value_error)?;
    let part = if areas == 1 {
        AreaPartition::single(f.network.n_phases())
    } else {
        AreaPartition::contiguous(&f.network, areas)
    }
    .map_err(value_error)?;
    let truncated = truncate_model(&model, &part).map_err(value_error)?;
    trunc_err(&model, truncated.linear()).map_err(value_error)
}

/// Singular values of a real matrix given as a list of rows, nonincreasing.
#[pyfunction]
fn singular_values(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let x = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    Ok(gridmc::datamatrix::sv_spectrum(&x))
}

/// (mean, half-width) of the Student-t 95% interval.
#[pyfunction]
fn confidence_interval(samples: Vec<f64>) -> PyResult<(f64, f64)> {
    let ci = gridmc::metrics::confidence_interval(&samples).map_err(value_error)?;
    Ok((ci.mean, ci.half_width))
}

#[pymodule]
fn _gridmc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(truncation_error, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_interval, m)?)?;
    Ok(())
}
