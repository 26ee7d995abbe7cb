//! Python bindings for the simulator.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use slotsim::nalgebra::Vector3;
use slotsim::gateway::wire::{encode, snapshot};
use slotsim::geometry::Pose2;
use slotsim::planner;
use slotsim::projection::{ar_frame_to_image, back_project, world_to_ar_frame, CameraConfig, CameraModel};
use slotsim::trace::{read_trace, write_trace};
use slotsim::vehicle::PedalInput;
use slotsim::{controller, Mode, SimError};

fn py_err(e: SimError) -> PyErr {
    match e {
        SimError::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Scenario configuration. Build from TOML text or a file.
type PoseTuple = (u32, f64, f64, f64, f64);

#[pyclass(name = "ScenarioConfig", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: slotsim::ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (toml_text = None))]
    fn new(toml_text: Option<&str>) -> PyResult<Self> {
        let inner = match toml_text {
            Some(t) => slotsim::ScenarioConfig::from_toml_str(t).map_err(py_err)?,
            None => slotsim::ScenarioConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: slotsim::ScenarioConfig::load(&path).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.mode = mode.parse::<Mode>().map_err(py_err)?;
        Ok(())
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[setter]
    fn set_duration(&mut self, d: f64) {
        self.inner.duration = d;
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[setter]
    fn set_dt(&mut self, dt: f64) {
        self.inner.dt = dt;
    }

    #[getter]
    fn record_trace(&self) -> bool {
        self.inner.record_trace
    }

    #[setter]
    fn set_record_trace(&mut self, on: bool) {
        self.inner.record_trace = on;
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioConfig(name={:?}, mode={}, seed={}, duration={})",
            self.inner.name,
            self.inner.mode.as_str(),
            self.inner.seed,
            self.inner.duration
        )
    }
}

type Row = (f64, u32, usize, f64, f64, f64, u32, f64, f64);

/// Trace rows and summary of a finished run.
#[pyclass(name = "RunResult")]
struct PyRunResult {
    inner: slotsim::RunOutput,
}

#[pymethods]
impl PyRunResult {
    /// Summary as a JSON string.
    fn summary_json(&self) -> String {
        utf8(encode(&self.inner.summary))
    }

    /// Rows as tuples in trace column order.
    fn trace(&self) -> Vec<Row> {
        self.inner
            .trace
            .iter()
            .map(|r| (r.t, r.vehicle_id, r.intersection_id, r.r, r.v, r.a, r.slot, r.d_arrival, r.fuel_rate))
            .collect()
    }

    #[staticmethod]
    fn columns() -> Vec<&'static str> {
        slotsim::trace::TRACE_COLUMNS.to_vec()
    }

    fn write_trace(&self, path: PathBuf) -> PyResult<()> {
        write_trace(&path, &self.inner.trace).map_err(py_err)
    }

    /// Ego pedal inputs as `(tick, throttle, brake)`.
    fn input_log(&self) -> Vec<(u64, f64, f64)> {
        self.inner.input_log.iter().map(|(k, p)| (*k, p.throttle, p.brake)).collect()
    }

    #[getter]
    fn ego_travel_time(&self) -> Option<f64> {
        self.inner.summary.ego.as_ref().and_then(|e| e.travel_time)
    }

    #[getter]
    fn ego_fuel(&self) -> Option<f64> {
        self.inner.summary.ego.as_ref().map(|e| e.fuel)
    }

    #[getter]
    fn ego_stops(&self) -> Option<u32> {
        self.inner.summary.ego.as_ref().map(|e| e.stops)
    }

    #[getter]
    fn spawned(&self) -> u64 {
        self.inner.summary.spawned
    }

    #[getter]
    fn exited(&self) -> u64 {
        self.inner.summary.exited
    }

    #[getter]
    fn co_occupancy(&self) -> u64 {
        self.inner.summary.audit.co_occupancy
    }

    /// `(t, vehicle, intersection, slot, references)` per reservation.
    fn reservations(&self) -> Vec<(f64, u32, usize, u32, Vec<u32>)> {
        self.inner
            .summary
            .reservations
            .iter()
            .map(|e| (e.t, e.vehicle, e.intersection, e.slot, e.references.clone()))
            .collect()
    }
}

fn utf8(bytes: Vec<u8>) -> String {
    String::from_utf8(bytes).expect("json is utf-8")
}

/// Step-by-step simulation.
#[pyclass(name = "Engine", unsendable)]
struct PyEngine {
    inner: Option<slotsim::Engine>,
}

impl PyEngine {
    fn get(&self) -> PyResult<&slotsim::Engine> {
        self.inner.as_ref().ok_or_else(|| PyValueError::new_err("engine already finished"))
    }

    fn get_mut(&mut self) -> PyResult<&mut slotsim::Engine> {
        self.inner.as_mut().ok_or_else(|| PyValueError::new_err("engine already finished"))
    }
}

#[pymethods]
impl PyEngine {
    #[new]
    fn new(config: PyScenario) -> PyResult<Self> {
        Ok(Self {
            inner: Some(slotsim::Engine::new(config.inner).map_err(py_err)?),
        })
    }

    /// Advances up to `n` ticks; returns how many were run.
    #[pyo3(signature = (n = 1))]
    fn step(&mut self, n: u64) -> PyResult<u64> {
        let e = self.get_mut()?;
        let mut k = 0;
        while k < n && !e.is_finished() {
            e.step();
            k += 1;
        }
        Ok(k)
    }

    fn set_ego_input(&mut self, throttle: f64, brake: f64) -> PyResult<()> {
        self.get_mut()?.set_ego_input(PedalInput { throttle, brake });
        Ok(())
    }

    #[getter]
    fn tick(&self) -> PyResult<u64> {
        Ok(self.get()?.tick())
    }

    #[getter]
    fn time(&self) -> PyResult<f64> {
        Ok(self.get()?.time())
    }

    fn is_finished(&self) -> PyResult<bool> {
        Ok(self.get()?.is_finished())
    }

    /// `(id, x, y, heading, v)` for every vehicle in the network.
    fn poses(&self) -> PyResult<Vec<PoseTuple>> {
        Ok(self.get()?.poses().into_iter().map(|p| (p.id, p.x, p.y, p.heading, p.v)).collect())
    }

    /// `(ref_id, r_s, l_s, color)` for the ego's current slots.
    fn ego_slots(&self) -> PyResult<Vec<(u32, f64, f64, &'static str)>> {
        Ok(self
            .get()?
            .ego_slots()
            .iter()
            .map(|s| (s.ref_vehicle.0, s.r_s, s.l_s, s.availability.color()))
            .collect())
    }

    /// Wire snapshot of the current state as JSON.
    fn snapshot_json(&self) -> PyResult<String> {
        Ok(utf8(encode(&snapshot(self.get()?, &CameraConfig::default()))))
    }

    /// Runs to the end and returns the result; the engine is consumed.
    fn finish(&mut self) -> PyResult<PyRunResult> {
        let e = self.inner.take().ok_or_else(|| PyValueError::new_err("engine already finished"))?;
        Ok(PyRunResult { inner: e.run_to_end() })
    }
}

/// Pinhole camera for a driver at a planar pose.
#[pyclass(name = "Camera")]
struct PyCamera {
    inner: CameraModel,
}

#[pymethods]
impl PyCamera {
    #[new]
    #[pyo3(signature = (x, y, heading, config_path = None))]
    fn new(x: f64, y: f64, heading: f64, config_path: Option<PathBuf>) -> PyResult<Self> {
        let cfg = match config_path {
            Some(p) => CameraConfig::load(&p).map_err(py_err)?,
            None => CameraConfig::default(),
        };
        let pose = Pose2 {
            pos: slotsim::geometry::Vec2::new(x, y),
            heading,
        };
        Ok(Self {
            inner: CameraModel::from_pose(&cfg, &pose).map_err(py_err)?,
        })
    }

    /// Pixel of a world point, or `None` behind the near plane.
    fn project(&self, x: f64, y: f64, z: f64) -> Option<(f64, f64)> {
        let a = world_to_ar_frame(&Vector3::new(x, y, z), &self.inner);
        ar_frame_to_image(&a, &self.inner).ok()
    }

    /// Camera-frame point at depth `depth` seen at pixel `(u, v)`.
    fn back_project(&self, u: f64, v: f64, depth: f64) -> (f64, f64, f64) {
        let p = back_project(u, v, depth, &self.inner);
        (p.x, p.y, p.z)
    }
}

#[pyfunction]
fn run(config: PyScenario) -> PyResult<PyRunResult> {
    Ok(PyRunResult {
        inner: slotsim::run(config.inner).map_err(py_err)?,
    })
}

/// Headless run with `(tick, throttle, brake)` ego inputs.
#[pyfunction]
fn run_with_inputs(config: PyScenario, inputs: Vec<(u64, f64, f64)>) -> PyResult<PyRunResult> {
    let inputs: Vec<_> = inputs
        .into_iter()
        .map(|(k, throttle, brake)| (k, PedalInput { throttle, brake }))
        .collect();
    Ok(PyRunResult {
        inner: slotsim::run_with_inputs(config.inner, &inputs).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (v, a, d, v_limit = 15.0, v_floor = 0.5))]
fn estimate_eta(v: f64, a: f64, d: f64, v_limit: f64, v_floor: f64) -> PyResult<f64> {
    planner::estimate_eta(v, a, d, v_limit, v_floor).map_err(py_err)
}

/// One controller update; returns the unclamped target speed.
#[pyfunction]
#[pyo3(signature = (r_i, v_i, r_slot, v_j, tau, k = 0.45, gamma = 1.0, t_h = 1.2, dt = 0.05))]
#[allow(clippy::too_many_arguments)]
fn target_speed(r_i: f64, v_i: f64, r_slot: f64, v_j: f64, tau: f64, k: f64, gamma: f64, t_h: f64, dt: f64) -> f64 {
    let params = controller::ControllerParams {
        alpha: 1.0,
        gains: controller::Gains { k, gamma },
        t_h,
        dt,
    };
    let leader = controller::LeaderSample { r_slot, v: v_j, tau };
    controller::target_speed(r_i, v_i, &leader, &params, f64::INFINITY).raw
}

/// Trace file rows as tuples in column order.
#[pyfunction]
fn load_trace(path: PathBuf) -> PyResult<Vec<Row>> {
    Ok(read_trace(&path)
        .map_err(py_err)?
        .into_iter()
        .map(|r| (r.t, r.vehicle_id, r.intersection_id, r.r, r.v, r.a, r.slot, r.d_arrival, r.fuel_rate))
        .collect())
}

#[pymodule]
fn slotsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyEngine>()?;
    m.add_class::<PyCamera>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_with_inputs, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_eta, m)?)?;
    m.add_function(wrap_pyfunction!(target_speed, m)?)?;
    m.add_function(wrap_pyfunction!(load_trace, m)?)?;
    Ok(())
}
