//! Python module `gbe`: worlds, datasets, training and evaluation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use gbe_core::dataset::{generate_dataset, Dataset, DatasetConfig, Split};
use gbe_core::eval::{evaluate, summarize, Agent};
use gbe_core::geometry::{self, Camera, PixelPoint};
use gbe_core::graph::dijkstra;
use gbe_core::learning::{train, RolloutConfig, TrainConfig, TrainSet};
use gbe_core::metrics::Summary;
use gbe_core::nn::ParamStore;
use gbe_core::policy::GbeModel;
use gbe_core::worldgen::{generate_world, World, WorldConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: gbe_core::Error) -> PyErr {
    match e {
        gbe_core::Error::Config(_) | gbe_core::Error::Json(_) | gbe_core::Error::Granularity(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn split(name: &str) -> PyResult<Split> {
    name.parse().map_err(err)
}

fn summary_dict(s: &Summary) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("episodes", s.episodes as f64),
        ("ne", s.ne),
        ("osr", s.osr),
        ("sr", s.sr),
        ("spl", s.spl),
        ("sfpl", s.sfpl),
        ("sfpl_splstyle", s.sfpl_splstyle),
    ])
}

/// A generated house: nodes, edges, regions and objects.
#[pyclass(name = "World", module = "gbe", frozen)]
struct PyWorld {
    inner: World,
}

#[pymethods]
impl PyWorld {
    #[staticmethod]
    #[pyo3(signature = (seed, nodes = 40, objects = 8, regions = 6))]
    fn generate(seed: u64, nodes: usize, objects: usize, regions: usize) -> PyResult<Self> {
        let cfg = WorldConfig {
            nodes,
            objects,
            regions: regions.min(nodes),
            ..WorldConfig::default()
        };
        Ok(Self {
            inner: generate_world(seed, &cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(s).map_err(json_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn id(&self) -> u64 {
        self.inner.id
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_objects(&self) -> usize {
        self.inner.objects.len()
    }

    fn neighbors(&self, node: usize) -> PyResult<Vec<(usize, f64)>> {
        if node >= self.inner.num_nodes() {
            return Err(PyValueError::new_err(format!("unknown node {node}")));
        }
        Ok(self.inner.neighbors(node).to_vec())
    }

    /// Geodesic distances from `source` to every node.
    fn distances_from(&self, source: usize) -> PyResult<Vec<f64>> {
        if source >= self.inner.num_nodes() {
            return Err(PyValueError::new_err(format!("unknown node {source}")));
        }
        Ok(dijkstra(self.inner.adjacency(), source).0)
    }

    fn __repr__(&self) -> String {
        format!(
            "World(id={}, nodes={}, objects={})",
            self.inner.id,
            self.inner.num_nodes(),
            self.inner.objects.len()
        )
    }
}

/// Houses plus the train and validation episode splits.
#[pyclass(name = "Dataset", module = "gbe", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from a JSON config (all fields optional).
    #[staticmethod]
    #[pyo3(signature = (config_json = None))]
    fn generate(config_json: Option<&str>) -> PyResult<Self> {
        let cfg: DatasetConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => DatasetConfig::default(),
        };
        Ok(Self {
            inner: generate_dataset(&cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Dataset::load(&dir).map_err(err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        self.inner.save(&dir).map_err(err)
    }

    fn split_sizes(&self) -> BTreeMap<&'static str, usize> {
        Split::ALL.iter().map(|s| (s.name(), self.inner.split(*s).len())).collect()
    }

    fn world_ids(&self) -> Vec<u64> {
        self.inner.worlds.ids()
    }

    fn world(&self, id: u64) -> PyResult<PyWorld> {
        Ok(PyWorld {
            inner: self.inner.worlds.get(id).map_err(err)?.world.clone(),
        })
    }

    /// Scores a scripted agent (`"random"` or `"teacher"`) on a split.
    #[pyo3(signature = (split_name, agent = "random", seed = 0))]
    fn baseline(&self, split_name: &str, agent: &str, seed: u64) -> PyResult<BTreeMap<&'static str, f64>> {
        let agent = match agent {
            "random" => Agent::Random,
            "teacher" => Agent::Teacher,
            other => return Err(PyValueError::new_err(format!("unknown agent {other:?}"))),
        };
        let s = split(split_name)?;
        let out = evaluate(None, &self.inner.worlds, self.inner.split(s), agent, &RolloutConfig::default(), seed)
            .map_err(err)?;
        Ok(summary_dict(&summarize(&out)))
    }
}

/// A trained policy and its parameters.
#[pyclass(name = "Policy", module = "gbe", frozen)]
struct PyPolicy {
    model: GbeModel,
    store: ParamStore,
    config: TrainConfig,
    curve: Vec<(usize, f64, f64)>,
}

#[pymethods]
impl PyPolicy {
    /// Trains on the dataset's training split. `config_json` holds any
    /// training settings; missing fields take their defaults.
    #[staticmethod]
    #[pyo3(signature = (dataset, config_json = None))]
    fn train(py: Python<'_>, dataset: &PyDataset, config_json: Option<&str>) -> PyResult<Self> {
        let mut cfg: TrainConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => TrainConfig::default(),
        };
        cfg.model.feature_dim = dataset.inner.config.world.feature_dim;
        let data = &dataset.inner;
        let out = py
            .detach(|| {
                train(
                    &cfg,
                    TrainSet {
                        worlds: &data.worlds,
                        episodes: data.split(Split::Train),
                        eval: &[],
                    },
                )
            })
            .map_err(err)?;
        Ok(Self {
            curve: out.curve.iter().map(|r| (r.iteration, r.l_nav, r.l_loc)).collect(),
            model: out.model,
            store: out.store,
            config: cfg,
        })
    }

    /// `(iteration, L_nav, L_loc)` per optimizer step.
    #[getter]
    fn curve(&self) -> Vec<(usize, f64, f64)> {
        self.curve.clone()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn evaluate(&self, dataset: &PyDataset, split_name: &str) -> PyResult<BTreeMap<&'static str, f64>> {
        let s = split(split_name)?;
        let out = evaluate(
            Some((&self.model, &self.store)),
            &dataset.inner.worlds,
            dataset.inner.split(s),
            Agent::Greedy,
            &self.config.rollout_config(),
            self.config.seed,
        )
        .map_err(err)?;
        Ok(summary_dict(&summarize(&out)))
    }

    fn checkpoint_json(&self) -> PyResult<String> {
        self.store.to_checkpoint().to_json().map_err(err)
    }
}

/// Heading and elevation (radians) of a pixel relative to the camera axis.
#[pyfunction]
#[pyo3(signature = (x, y, width, height, fov_h, fov_v))]
fn pixel_to_polar(x: f64, y: f64, width: f64, height: f64, fov_h: f64, fov_v: f64) -> PyResult<(f64, f64)> {
    let p = geometry::pixel_to_polar(PixelPoint::new(x, y), &Camera::new(width, height, fov_h, fov_v)).map_err(err)?;
    Ok((p.heading, p.elevation))
}

#[pyfunction]
fn wrap_angle(a: f64) -> f64 {
    geometry::wrap_angle(a)
}

#[pymodule]
fn gbe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWorld>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(pixel_to_polar, m)?)?;
    m.add_function(wrap_pyfunction!(wrap_angle, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
