//! Python bindings: scene generation, the scripted expert and the evaluation
//! statistics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gentle_reach::eval::z_test_or_equal;
use gentle_reach::expert::{Expert, ExpertConfig};
use gentle_reach::rollout::{derive_seed, rollout, RolloutOptions};
use gentle_reach::scene::{count_configurations, generate, occupancy, ShelfSpec};
use gentle_reach::sensors::tactile::TactileImage;
use gentle_reach::sim::{SimParams, WorldState};
use gentle_reach::teleop::TeleopCommandMsg;
use gentle_reach::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidConfig(_) | Error::InvalidSchematic(_) | Error::Parse(_) | Error::ProtocolViolation(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Scene schematic of `seed` as TOML text.
#[pyfunction]
fn generate_scene(seed: u64) -> PyResult<String> {
    Ok(generate(seed, &ShelfSpec::default()).map_err(py_err)?.to_text())
}

/// (obstacle count, occupancy fraction, grid drawing) of the scene of `seed`.
#[pyfunction]
fn scene_summary(seed: u64) -> PyResult<(usize, f64, String)> {
    let spec = ShelfSpec::default();
    let s = generate(seed, &spec).map_err(py_err)?;
    Ok((s.obstacle_count(), occupancy(&s, &spec), s.to_string()))
}

/// Number of discrete shelf configurations, as a decimal string.
#[pyfunction]
fn configuration_count() -> String {
    count_configurations(&ShelfSpec::default()).to_string()
}

/// Pooled two-proportion z statistic and two-sided p-value.
#[pyfunction]
fn z_test(successes_a: u64, n_a: u64, successes_b: u64, n_b: u64) -> PyResult<(f64, f64)> {
    let r = z_test_or_equal(successes_a, n_a, successes_b, n_b).map_err(py_err)?;
    Ok((r.z, r.p))
}

/// Tactile image of a grid with no force, 20x5 RGB bytes.
#[pyfunction]
fn zero_force_tactile() -> Vec<u8> {
    TactileImage::zero_force().data.to_vec()
}

/// Validates a client-to-server teleop message and returns its JSON text.
#[pyfunction]
fn parse_teleop_command(text: &str) -> PyResult<String> {
    let msg = TeleopCommandMsg::from_text(text).map_err(py_err)?;
    Ok(msg.to_text())
}

/// Runs the scripted expert on the scene of `seed`.
#[pyfunction]
#[pyo3(signature = (seed, rehearse = true))]
fn run_expert<'py>(py: Python<'py>, seed: u64, rehearse: bool) -> PyResult<Bound<'py, PyDict>> {
    let spec = ShelfSpec::default();
    let schematic = generate(seed, &spec).map_err(py_err)?;
    let mut world = WorldState::from_schematic(&schematic, spec, SimParams::default()).map_err(py_err)?;
    let opts = RolloutOptions {
        sensor_seed: derive_seed(seed, 1, 0),
        ..RolloutOptions::default()
    };
    let config = ExpertConfig {
        rehearsals: if rehearse { ExpertConfig::default().rehearsals } else { 0 },
        ..ExpertConfig::default()
    };
    let (mut expert, _) = Expert::rehearse(config, &world, &opts).map_err(py_err)?;
    let r = rollout(&mut world, &mut expert, &opts).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("verdict", r.outcome.verdict.name())?;
    out.set_item("elapsed", r.outcome.elapsed)?;
    out.set_item("acquired_target", r.outcome.acquired_target)?;
    out.set_item("strategy", format!("{:?}", expert.strategy))?;
    out.set_item("ticks", r.trace.len())?;
    out.set_item("max_net_force", r.trace.iter().map(|s| s.f_net).fold(0.0, f64::max))?;
    Ok(out)
}

#[pymodule]
fn gentle_reach_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(scene_summary, m)?)?;
    m.add_function(wrap_pyfunction!(configuration_count, m)?)?;
    m.add_function(wrap_pyfunction!(z_test, m)?)?;
    m.add_function(wrap_pyfunction!(zero_force_tactile, m)?)?;
    m.add_function(wrap_pyfunction!(parse_teleop_command, m)?)?;
    m.add_function(wrap_pyfunction!(run_expert, m)?)?;
    Ok(())
}
