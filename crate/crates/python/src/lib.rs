//! Python bindings. The `#[pyfunction]`s are thin wrappers over the plain
//! functions below, which carry the logic and are tested without an
//! interpreter.

use std::path::Path;

use groundloc::dataset::{Dataset, DatasetSpec};
use groundloc::evaluation::RecordBundle;
use groundloc::imaging::load_image;
use groundloc::prediction::{self, PredictionInputs};
use groundloc::{Error, ParameterConfig, TextureKind};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config_from(config_toml: Option<&str>) -> groundloc::Result<ParameterConfig> {
    let cfg = match config_toml {
        Some(t) => ParameterConfig::from_toml(t)?,
        None => ParameterConfig::identity_default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn predict(expected_v: f64, expected_fq: f64, expected_o: f64, inlier_means: &[f64]) -> groundloc::Result<f64> {
    let inputs = PredictionInputs::new(expected_v, expected_fq, expected_o, inlier_means)?;
    Ok(prediction::predict_success_rate(&inputs))
}

pub fn simulate(
    expected_v: f64,
    expected_fq: f64,
    expected_o: f64,
    inlier_means: &[f64],
    trials: usize,
    seed: u64,
) -> groundloc::Result<f64> {
    let inputs = PredictionInputs::new(expected_v, expected_fq, expected_o, inlier_means)?;
    Ok(prediction::simulate_success_rate(
        &inputs,
        trials,
        seed,
        prediction::OutlierSampling::IndependentCells,
    ))
}

pub fn generate(out_dir: &Path, world_size: Option<usize>, num_queries: Option<usize>, texture: Option<&str>, seed: Option<u64>) -> groundloc::Result<usize> {
    let mut spec = DatasetSpec::default();
    if let Some(w) = world_size {
        spec.world.width = w;
        spec.world.height = w;
    }
    if let Some(n) = num_queries {
        spec.num_queries = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(t) = texture {
        spec.world.kind = match t {
            "speckle" => TextureKind::Speckle,
            "crack" => TextureKind::Crack,
            "blob" => TextureKind::Blob,
            other => return Err(Error::InvalidParameter(format!("unknown texture {other:?}"))),
        };
    }
    let ds = Dataset::generate(&spec)?;
    ds.save(out_dir)?;
    Ok(ds.references.len())
}

pub fn build(dataset_dir: &Path, map_path: &Path, config_toml: Option<&str>) -> groundloc::Result<usize> {
    let cfg = config_from(config_toml)?;
    let ds = Dataset::load(dataset_dir)?;
    let map = groundloc::build_map(&ds.references, &cfg)?;
    groundloc::save_map(&map, map_path)?;
    Ok(map.num_features())
}

pub fn locate(map_path: &Path, image_path: &Path, config_toml: Option<&str>) -> groundloc::Result<Option<(f64, f64, f64)>> {
    let cfg = config_from(config_toml)?;
    let map = groundloc::load_map(map_path, Some(&cfg))?;
    let img = load_image(image_path)?;
    let r = groundloc::localize(&img, &map, &cfg, None)?;
    Ok(r.estimated_pose.map(|p| (p.x, p.y, p.theta)))
}

pub fn predict_bundle(bundle_json: &str) -> groundloc::Result<f64> {
    let bundle = RecordBundle::from_json(bundle_json)?;
    Ok(prediction::predict_success_rate(&bundle.model_inputs()?))
}

/// Success probability of the voting model.
#[pyfunction]
#[pyo3(signature = (expected_v, expected_fq, expected_o, inlier_means))]
fn predict_success_rate(expected_v: f64, expected_fq: f64, expected_o: f64, inlier_means: Vec<f64>) -> PyResult<f64> {
    predict(expected_v, expected_fq, expected_o, &inlier_means).map_err(to_py)
}

/// Direct simulation of the voting process with independent cell counts.
#[pyfunction]
#[pyo3(signature = (expected_v, expected_fq, expected_o, inlier_means, trials = 100_000, seed = 0))]
fn monte_carlo_success_rate(
    expected_v: f64,
    expected_fq: f64,
    expected_o: f64,
    inlier_means: Vec<f64>,
    trials: usize,
    seed: u64,
) -> PyResult<f64> {
    simulate(expected_v, expected_fq, expected_o, &inlier_means, trials, seed).map_err(to_py)
}

#[pyfunction]
fn binomial_pmf(i: i64, p: f64, n: i64) -> PyResult<f64> {
    prediction::binomial_pmf(i, p, n).map_err(to_py)
}

/// Writes a synthetic dataset and returns the number of reference images.
#[pyfunction]
#[pyo3(signature = (out_dir, world_size = None, num_queries = None, texture = None, seed = None))]
fn generate_dataset(
    out_dir: &str,
    world_size: Option<usize>,
    num_queries: Option<usize>,
    texture: Option<&str>,
    seed: Option<u64>,
) -> PyResult<usize> {
    generate(Path::new(out_dir), world_size, num_queries, texture, seed).map_err(to_py)
}

/// Builds and saves a map; returns its feature count.
#[pyfunction]
#[pyo3(signature = (dataset_dir, map_path, config_toml = None))]
fn build_map(dataset_dir: &str, map_path: &str, config_toml: Option<&str>) -> PyResult<usize> {
    build(Path::new(dataset_dir), Path::new(map_path), config_toml).map_err(to_py)
}

/// Estimated `(x, y, theta)` of a query image, or `None`.
#[pyfunction]
#[pyo3(signature = (map_path, image_path, config_toml = None))]
fn localize(map_path: &str, image_path: &str, config_toml: Option<&str>) -> PyResult<Option<(f64, f64, f64)>> {
    locate(Path::new(map_path), Path::new(image_path), config_toml).map_err(to_py)
}

/// Prediction from a record bundle written by `groundloc eval-local`.
#[pyfunction]
fn predict_from_records(bundle_json: &str) -> PyResult<f64> {
    predict_bundle(bundle_json).map_err(to_py)
}

/// Default parameter config as TOML.
#[pyfunction]
#[pyo3(signature = (variant = "identity"))]
fn default_config(variant: &str) -> PyResult<String> {
    match variant {
        "identity" => Ok(ParameterConfig::identity_default().to_toml()),
        "nearest" => Ok(ParameterConfig::nearest_default().to_toml()),
        other => Err(PyValueError::new_err(format!("unknown variant {other:?}"))),
    }
}

#[pymodule]
#[pyo3(name = "groundloc")]
fn groundloc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(predict_success_rate, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_success_rate, m)?)?;
    m.add_function(wrap_pyfunction!(binomial_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(build_map, m)?)?;
    m.add_function(wrap_pyfunction!(localize, m)?)?;
    m.add_function(wrap_pyfunction!(predict_from_records, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
