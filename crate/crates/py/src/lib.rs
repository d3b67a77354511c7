//! Python bindings for the freehand-ultrasound trajectory pipeline: dataset
//! generation, training, checkpoint loading, plain and adapted inference,
//! evaluation, and a few numeric building blocks (selective scan, pose
//! geometry) for cross-checking from Python.

use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fima_core::config::{AdaptConfig, Config};
use fima_core::model::{Model, ModelKind};
use fima_core::pipeline::{
    self, evaluate as evaluate_dirs, load_checkpoint, CkptMeta, EvalReport, MetricSet,
};
use fima_core::pose::{
    compose_trajectory, corner_cloud, drift_metrics, hausdorff, mea, params_to_transform,
    transform_to_params, FrameGeometry, PoseParams,
};
use fima_core::ssm;
use fima_core::synth::{load_scan_inference, make_dataset};
use fima_core::tensor::params::ParamStore;

fn to_py_err(e: fima_core::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows_to_params(rows: Vec<[f64; 6]>) -> Vec<PoseParams> {
    rows.iter().map(PoseParams::from_row).collect()
}

fn params_to_rows(params: &[PoseParams]) -> Vec<[f64; 6]> {
    params.iter().map(|p| p.to_row()).collect()
}

/// Generate a synthetic phantom dataset under `out_dir` as described by the
/// `[data]` section of the config file. Returns the generated scan paths
/// relative to `out_dir` (e.g. "train/scan_0000").
#[pyfunction]
#[pyo3(signature = (config_path, out_dir, seed = 0, force = false))]
fn generate_dataset(config_path: &str, out_dir: &str, seed: u64, force: bool) -> PyResult<Vec<String>> {
    let cfg = Config::from_file(Path::new(config_path)).map_err(to_py_err)?;
    let entries = make_dataset(&cfg.data, seed, Path::new(out_dir), force).map_err(to_py_err)?;
    Ok(entries.into_iter().map(|e| e.path).collect())
}

/// Train a model ("fused" or "image_only") on a generated dataset and write
/// checkpoint, metadata, and a per-epoch CSV log. Returns a summary dict.
#[pyfunction]
#[pyo3(signature = (config_path, data_dir, ckpt_out, kind = "fused", seed = None))]
fn train(
    py: Python<'_>,
    config_path: &str,
    data_dir: &str,
    ckpt_out: &str,
    kind: &str,
    seed: Option<u64>,
) -> PyResult<Py<PyDict>> {
    let cfg = Config::from_file(Path::new(config_path)).map_err(to_py_err)?;
    let kind = ModelKind::parse(kind).map_err(to_py_err)?;
    let seed = seed.unwrap_or(cfg.train.seed);
    let out = pipeline::train(&cfg, kind, Path::new(data_dir), Path::new(ckpt_out), seed)
        .map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("best_epoch", out.best_epoch)?;
    d.set_item("best_val", out.best_val)?;
    d.set_item("epochs_run", out.epochs_run)?;
    d.set_item("checkpoint", out.ckpt.display().to_string())?;
    d.set_item("log", out.log.display().to_string())?;
    Ok(d.into())
}

/// Evaluate predicted trajectory CSVs against ground-truth scan directories.
/// Returns a dict with per-metric means/stds, the scan count, skip notes, and
/// the full plain-text report.
#[pyfunction]
fn evaluate(py: Python<'_>, pred_dir: &str, gt_dir: &str) -> PyResult<Py<PyDict>> {
    let report = evaluate_dirs(Path::new(pred_dir), Path::new(gt_dir)).map_err(to_py_err)?;
    report_to_dict(py, &report)
}

fn metric_dict(py: Python<'_>, m: &MetricSet) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("fdr", m.fdr)?;
    d.set_item("adr", m.adr)?;
    d.set_item("md", m.md)?;
    d.set_item("sd", m.sd)?;
    d.set_item("hd", m.hd)?;
    d.set_item("mea", m.mea)?;
    Ok(d.into())
}

fn report_to_dict(py: Python<'_>, report: &EvalReport) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scans", report.scans.len())?;
    d.set_item("mean", metric_dict(py, &report.mean)?)?;
    d.set_item("std", metric_dict(py, &report.std)?)?;
    d.set_item("skipped", report.skipped.clone())?;
    let per_scan = PyDict::new(py);
    for s in &report.scans {
        per_scan.set_item(&s.id, metric_dict(py, &s.metrics)?)?;
    }
    d.set_item("per_scan", per_scan)?;
    d.set_item("text", pipeline::report_text(report))?;
    Ok(d.into())
}

/// A trained model restored from a checkpoint, ready for plain or adapted
/// inference on scan directories.
#[pyclass]
struct Reconstructor {
    model: Model,
    store: ParamStore,
    meta: CkptMeta,
    ckpt: PathBuf,
}

#[pymethods]
impl Reconstructor {
    /// Load a checkpoint written by `train`.
    #[staticmethod]
    fn load(ckpt: &str) -> PyResult<Self> {
        let path = PathBuf::from(ckpt);
        let (model, store, meta) = load_checkpoint(&path).map_err(to_py_err)?;
        Ok(Reconstructor { model, store, meta, ckpt: path })
    }

    /// "fused" or "image_only".
    #[getter]
    fn kind(&self) -> &'static str {
        self.model.kind.as_str()
    }

    /// Number of trainable parameter values.
    #[getter]
    fn parameter_count(&self) -> usize {
        self.store.total_values()
    }

    /// Predict the 6-DOF transition parameters for one scan directory
    /// (frames.bin + meta + sensor streams; ground truth not required).
    /// Returns an (n-1) x 6 list of [tx, ty, tz, rx, ry, rz] rows.
    fn infer(&self, scan_dir: &str) -> PyResult<Vec<[f64; 6]>> {
        let scan = load_scan_inference(Path::new(scan_dir)).map_err(to_py_err)?;
        let params = pipeline::infer_params(&self.model, &self.store, &scan).map_err(to_py_err)?;
        Ok(params_to_rows(&params))
    }

    /// Label-free test-time adaptation on one scan, then inference with the
    /// adapted weights (the loaded weights are untouched). Returns
    /// (rows, objective_trace).
    #[pyo3(signature = (scan_dir, iterations = None, lr = None, tau = None))]
    fn adapt_infer(
        &self,
        scan_dir: &str,
        iterations: Option<usize>,
        lr: Option<f64>,
        tau: Option<f64>,
    ) -> PyResult<(Vec<[f64; 6]>, Vec<f64>)> {
        let scan = load_scan_inference(Path::new(scan_dir)).map_err(to_py_err)?;
        let mut acfg = AdaptConfig::default();
        if let Some(it) = iterations {
            acfg.iterations = it;
        }
        if let Some(lr) = lr {
            acfg.lr = lr;
        }
        if let Some(tau) = tau {
            acfg.tau = tau;
        }
        let out = pipeline::adapt_and_infer(
            &self.model,
            &self.store,
            &scan,
            &acfg,
            self.meta.align_l2_normalize,
        )
        .map_err(to_py_err)?;
        Ok((params_to_rows(&out.params), out.losses))
    }

    fn __repr__(&self) -> String {
        format!(
            "Reconstructor(kind={}, params={}, ckpt={})",
            self.model.kind.as_str(),
            self.store.total_values(),
            self.ckpt.display()
        )
    }
}

/// Write per-transition parameter rows as a trajectory CSV in the format the
/// evaluator reads (frame index, relative parameters, composed absolute
/// pose per row, identity first frame).
#[pyfunction]
fn write_trajectory(path: &str, rows: Vec<[f64; 6]>) -> PyResult<()> {
    fima_core::pose::write_trajectory_csv(Path::new(path), &rows_to_params(rows)).map_err(to_py_err)
}

/// Read a trajectory CSV back into its per-transition parameter rows.
#[pyfunction]
fn read_trajectory(path: &str) -> PyResult<Vec<[f64; 6]>> {
    let params = fima_core::pose::read_trajectory_csv(Path::new(path)).map_err(to_py_err)?;
    Ok(params_to_rows(&params))
}

/// Sequential selective-scan reference kernel. `x` and `delta` are [l, c]
/// row-major, `b` and `c_in` are [l, s], `a` is [c, s], `d` is [c]; returns
/// the [l, c] output row-major.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn selective_scan(
    x: Vec<f64>,
    delta: Vec<f64>,
    b: Vec<f64>,
    c_in: Vec<f64>,
    a: Vec<f64>,
    d: Vec<f64>,
    l: usize,
    c: usize,
    s: usize,
) -> PyResult<Vec<f64>> {
    ssm::scan_sequential(&x, &delta, &b, &c_in, &a, &d, l, c, s).map_err(to_py_err)
}

/// Round-trip one [tx, ty, tz, rx, ry, rz] row through its 4x4 rigid
/// transform and back; `gimbal` reports whether the decomposition hit the
/// +-90 degree singularity.
#[pyfunction]
fn pose_roundtrip(py: Python<'_>, row: [f64; 6]) -> PyResult<Py<PyDict>> {
    let p = PoseParams::from_row(&row);
    let out = transform_to_params(&params_to_transform(&p));
    let d = PyDict::new(py);
    d.set_item("row", out.params.to_row())?;
    d.set_item("gimbal", out.gimbal)?;
    Ok(d.into())
}

/// Trajectory quality metrics between an estimated and a ground-truth
/// sequence of per-transition parameter rows, for frames of `h` x `w` pixels
/// with `sx`/`sy` mm pixel spacing: final/average drift rates (percent),
/// maximum and sum drift (mm), frame-corner Hausdorff distance (mm), and
/// mean absolute angle error (degrees).
#[pyfunction]
fn trajectory_metrics(
    py: Python<'_>,
    est: Vec<[f64; 6]>,
    gt: Vec<[f64; 6]>,
    h: usize,
    w: usize,
    sx: f64,
    sy: f64,
) -> PyResult<Py<PyDict>> {
    let est = rows_to_params(est);
    let gt = rows_to_params(gt);
    let geo = FrameGeometry::new(h, w, sx, sy).map_err(to_py_err)?;
    let est_traj = compose_trajectory(&est);
    let gt_traj = compose_trajectory(&gt);
    let dm = drift_metrics(&est_traj, &gt_traj).map_err(to_py_err)?;
    let hd = hausdorff(&corner_cloud(&est_traj, &geo), &corner_cloud(&gt_traj, &geo))
        .map_err(to_py_err)?;
    let angle = mea(&est, &gt).map_err(to_py_err)?;
    metric_dict(
        py,
        &MetricSet { fdr: dm.fdr, adr: dm.adr, md: dm.md, sd: dm.sd, hd, mea: angle },
    )
}

#[pymodule]
fn fima_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(write_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(read_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(selective_scan, m)?)?;
    m.add_function(wrap_pyfunction!(pose_roundtrip, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory_metrics, m)?)?;
    m.add_class::<Reconstructor>()?;
    Ok(())
}
