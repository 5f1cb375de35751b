//! Python bindings: ratings, CF and MF recommenders, metrics and snapshots.

use std::collections::HashSet;
use std::io::BufReader;

use explore_core::catalog::read_catalog;
use explore_core::cf::{self, CfConfig};
use explore_core::coldstart::{parse_seed_csv, SeedProfile};
use explore_core::ingest::{self, PlayEvent, RatingConfig};
use explore_core::metrics::{self, ApNormalizer, SplitSpec, SplitStrategy};
use explore_core::mf::{self, MfConfig, MfRanking};
use explore_core::selector::{self, AttributeRange, CuratedPlaylist, MoodFilter, PlaylistName, PlaylistRequest, Source};
use explore_core::snapshot::{self, Algorithm, SnapshotConfig};
use explore_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(explore, ExploreError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::UnknownUser(_) | Error::UnknownSong(_) => PyKeyError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::InvalidConfig(_) | Error::InvalidRange { .. } | Error::LengthMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => ExploreError::new_err(e.to_string()),
    }
}

fn json_value<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| ExploreError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn cf_config(k: usize, min_overlap: usize, keep_negative: bool, significance_cap: Option<usize>) -> CfConfig {
    CfConfig {
        k,
        min_overlap,
        keep_negative,
        significance_cap,
    }
}

/// Sparse user × song rating matrix.
#[pyclass(module = "explore", frozen, skip_from_py_object)]
#[derive(Clone)]
struct RatingMatrix {
    inner: explore_core::RatingMatrix,
}

impl RatingMatrix {
    fn user(&self, user_id: &str) -> PyResult<usize> {
        self.inner
            .user_index(user_id)
            .ok_or_else(|| to_py(Error::UnknownUser(user_id.into())))
    }

    fn song(&self, song_id: &str) -> PyResult<usize> {
        self.inner
            .song_index(song_id)
            .ok_or_else(|| to_py(Error::UnknownSong(song_id.into())))
    }
}

#[pymethods]
impl RatingMatrix {
    /// Builds a matrix from `(user_id, song_id, rating)` tuples.
    #[staticmethod]
    fn from_triplets(triplets: Vec<(String, String, f32)>) -> PyResult<Self> {
        Ok(RatingMatrix {
            inner: explore_core::RatingMatrix::from_triplets(triplets).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(RatingMatrix {
            inner: explore_core::matrix::read_matrix(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        explore_core::matrix::write_matrix(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_songs(&self) -> usize {
        self.inner.n_songs()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    fn users(&self) -> Vec<String> {
        self.inner.users().to_vec()
    }

    fn songs(&self) -> Vec<String> {
        self.inner.songs().to_vec()
    }

    fn rating(&self, user_id: &str, song_id: &str) -> PyResult<Option<f32>> {
        Ok(self.inner.rating(self.user(user_id)?, self.song(song_id)?))
    }

    /// `{song_id: rating}` for one user.
    fn row(&self, user_id: &str) -> PyResult<Vec<(String, f32)>> {
        let u = self.user(user_id)?;
        Ok(self
            .inner
            .row(u)
            .iter()
            .map(|&(s, r)| (self.inner.song_id(s as usize).to_string(), r))
            .collect())
    }

    fn user_mean(&self, user_id: &str) -> PyResult<f64> {
        Ok(self.inner.user_mean(self.user(user_id)?))
    }

    fn __len__(&self) -> usize {
        self.inner.nnz()
    }

    fn __repr__(&self) -> String {
        format!(
            "RatingMatrix(users={}, songs={}, ratings={})",
            self.inner.n_users(),
            self.inner.n_songs(),
            self.inner.nnz()
        )
    }
}

/// Ratings from `(user_id, unix_timestamp, song_id)` plays. Returns the
/// matrix and the ids of users dropped for having no informative plays.
#[pyfunction]
#[pyo3(signature = (events, window_months=24))]
fn build_ratings(events: Vec<(String, i64, String)>, window_months: u32) -> PyResult<(RatingMatrix, Vec<String>)> {
    let events: Vec<PlayEvent> = events
        .into_iter()
        .map(|(user_id, timestamp, song_id)| PlayEvent {
            user_id,
            song_id,
            timestamp,
        })
        .collect();
    let config = RatingConfig {
        window_months,
        ..RatingConfig::default()
    };
    let scaled = ingest::build_ratings(&events, &config).map_err(to_py)?;
    Ok((RatingMatrix { inner: scaled.matrix }, scaled.dropped_users))
}

/// Same as `build_ratings`, reading a tab-separated play log.
#[pyfunction]
#[pyo3(signature = (path, window_months=24, strict=false))]
fn build_ratings_from_file(path: &str, window_months: u32, strict: bool) -> PyResult<(RatingMatrix, Vec<String>)> {
    let file = std::fs::File::open(path).map_err(|e| to_py(e.into()))?;
    let parsed = ingest::parse_events(BufReader::new(file), strict).map_err(to_py)?;
    let config = RatingConfig {
        window_months,
        ..RatingConfig::default()
    };
    let scaled = ingest::build_ratings(&parsed.events, &config).map_err(to_py)?;
    Ok((RatingMatrix { inner: scaled.matrix }, scaled.dropped_users))
}

/// Pearson correlation of paired ratings; `None` when either side is constant.
#[pyfunction]
#[pyo3(signature = (a, b, min_overlap=3))]
fn pearson(a: Vec<f64>, b: Vec<f64>, min_overlap: usize) -> PyResult<Option<f64>> {
    if a.len() != b.len() {
        return Err(to_py(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        }));
    }
    cf::pearson(&a, &b, min_overlap).map_err(to_py)
}

/// Nearest users as dicts with `user_id`, `similarity`, `weight`, `co_rated`.
#[pyfunction]
#[pyo3(signature = (matrix, user_id, k=30, min_overlap=3, keep_negative=true, significance_cap=Some(50)))]
fn neighbors<'py>(
    py: Python<'py>,
    matrix: &RatingMatrix,
    user_id: &str,
    k: usize,
    min_overlap: usize,
    keep_negative: bool,
    significance_cap: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let config = cf_config(k, min_overlap, keep_negative, significance_cap);
    let set = cf::neighbors(&matrix.inner, matrix.user(user_id)?, k, &config).map_err(to_py)?;
    set.neighbors
        .iter()
        .map(|n| {
            let d = PyDict::new(py);
            d.set_item("user_id", matrix.inner.user_id(n.user))?;
            d.set_item("similarity", n.similarity)?;
            d.set_item("weight", n.weight)?;
            d.set_item("co_rated", n.co_rated)?;
            Ok(d)
        })
        .collect()
}

/// Unrated songs ranked by neighbor-predicted rating, as `(song_id, score)`.
#[pyfunction]
#[pyo3(signature = (matrix, user_id, n=10, k=30, min_overlap=3, keep_negative=true, significance_cap=Some(50)))]
fn recommend_cf(
    matrix: &RatingMatrix,
    user_id: &str,
    n: usize,
    k: usize,
    min_overlap: usize,
    keep_negative: bool,
    significance_cap: Option<usize>,
) -> PyResult<Vec<(String, f64)>> {
    let config = cf_config(k, min_overlap, keep_negative, significance_cap);
    let recs = cf::recommend_cf(&matrix.inner, matrix.user(user_id)?, n, true, &config).map_err(to_py)?;
    Ok(recs
        .into_iter()
        .map(|r| (matrix.inner.song_id(r.song).to_string(), r.score))
        .collect())
}

/// Latent factor model trained by SGD.
#[pyclass(module = "explore", frozen)]
struct FactorModel {
    model: mf::FactorModel,
    matrix: RatingMatrix,
}

#[pymethods]
impl FactorModel {
    #[staticmethod]
    #[pyo3(signature = (matrix, dims=32, epochs=50, learning_rate=0.005, regularization=0.02, seed=42))]
    fn train(
        matrix: &RatingMatrix,
        dims: usize,
        epochs: usize,
        learning_rate: f64,
        regularization: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let config = MfConfig {
            dims,
            epochs,
            learning_rate,
            regularization,
            seed,
            ..MfConfig::default()
        };
        Ok(FactorModel {
            model: mf::train_mf(&matrix.inner, &config).map_err(to_py)?,
            matrix: matrix.clone(),
        })
    }

    #[getter]
    fn dims(&self) -> usize {
        self.model.dims
    }

    /// Train RMSE after each epoch.
    #[getter]
    fn training_log(&self) -> Vec<f64> {
        self.model.training_log.clone()
    }

    fn user_factors(&self, user_id: &str) -> PyResult<Vec<f64>> {
        Ok(self.model.user_vector(self.matrix.user(user_id)?).to_vec())
    }

    fn song_factors(&self, song_id: &str) -> PyResult<Vec<f64>> {
        Ok(self.model.item_vector(self.matrix.song(song_id)?).to_vec())
    }

    fn predict(&self, user_id: &str, song_id: &str) -> PyResult<f64> {
        self.model
            .predict(self.matrix.user(user_id)?, self.matrix.song(song_id)?)
            .map_err(to_py)
    }

    /// Unrated songs as `(song_id, score)`; `ranking` is "cosine" or "rating".
    #[pyo3(signature = (user_id, n=10, ranking="cosine"))]
    fn recommend(&self, user_id: &str, n: usize, ranking: &str) -> PyResult<Vec<(String, f64)>> {
        let ranking = match ranking {
            "cosine" => MfRanking::Cosine,
            "rating" => MfRanking::PredictedRating,
            other => return Err(PyValueError::new_err(format!("unknown ranking `{other}`"))),
        };
        let m = &self.matrix.inner;
        let recs = mf::recommend_mf(&self.model, m, self.matrix.user(user_id)?, n, true, ranking).map_err(to_py)?;
        Ok(recs.into_iter().map(|r| (m.song_id(r.song).to_string(), r.score)).collect())
    }
}

#[pyfunction]
fn rmse(predicted: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    metrics::rmse(&predicted, &actual).map_err(to_py)
}

/// AP@k; `normalizer` is "relevant_in_top_k" (default) or "min_relevant_k".
#[pyfunction]
#[pyo3(signature = (ranked, relevant, k, normalizer="relevant_in_top_k"))]
fn average_precision_at_k(ranked: Vec<String>, relevant: HashSet<String>, k: usize, normalizer: &str) -> PyResult<f64> {
    let normalizer = match normalizer {
        "relevant_in_top_k" => ApNormalizer::RelevantInTopK,
        "min_relevant_k" => ApNormalizer::MinRelevantK,
        other => return Err(PyValueError::new_err(format!("unknown normalizer `{other}`"))),
    };
    Ok(metrics::average_precision_at_k_with(&ranked, &relevant, k, normalizer))
}

#[pyfunction]
fn ndcg_at_k(gains: Vec<f64>, k: usize) -> PyResult<f64> {
    metrics::ndcg_at_k(&gains, k).map_err(to_py)
}

/// Split, train and score; returns the evaluation report as a dict.
#[pyfunction]
#[pyo3(signature = (matrix, algorithm="cf", split="stratified", k=3, seed=42, train_fraction=0.8, threshold=3.5, dims=32, epochs=50))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    matrix: &RatingMatrix,
    algorithm: &str,
    split: &str,
    k: usize,
    seed: u64,
    train_fraction: f64,
    threshold: f64,
    dims: usize,
    epochs: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let algorithm: Algorithm = algorithm.parse().map_err(to_py)?;
    let strategy: SplitStrategy = split.parse().map_err(to_py)?;
    let spec = SplitSpec {
        strategy,
        train_fraction,
        seed,
    };
    let mf_config = MfConfig {
        dims,
        epochs,
        seed,
        ..MfConfig::default()
    };
    let report = py
        .detach(|| metrics::evaluate(algorithm, &matrix.inner, &spec, k, threshold, &CfConfig::default(), &mf_config))
        .map_err(to_py)?;
    json_value(py, &report)
}

/// Trained, immutable serving state.
#[pyclass(module = "explore", frozen)]
struct Snapshot {
    inner: snapshot::ModelSnapshot,
}

fn mood_filter(ranges: Option<Vec<(String, (f64, f64))>>) -> PyResult<MoodFilter> {
    let mut filter = MoodFilter::default();
    for (name, (lo, hi)) in ranges.unwrap_or_default() {
        let slot = filter
            .range_mut(&name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown attribute `{name}`")))?;
        *slot = Some(AttributeRange { lo, hi });
    }
    filter.validate().map_err(to_py)?;
    Ok(filter)
}

#[pymethods]
impl Snapshot {
    /// Trains every component. Playlists are catalog-format CSV paths.
    #[staticmethod]
    #[pyo3(signature = (matrix, catalog_path, playlist_2022=None, playlist_all_time=None, mf=true, dims=32, epochs=50, seed=42, serving="cf"))]
    #[allow(clippy::too_many_arguments)]
    fn build(
        py: Python<'_>,
        matrix: &RatingMatrix,
        catalog_path: &str,
        playlist_2022: Option<&str>,
        playlist_all_time: Option<&str>,
        mf: bool,
        dims: usize,
        epochs: usize,
        seed: u64,
        serving: &str,
    ) -> PyResult<Self> {
        let catalog = read_catalog(catalog_path).map_err(to_py)?;
        let mut playlists = Vec::new();
        for (name, path) in [
            (PlaylistName::BestOf2022, playlist_2022),
            (PlaylistName::BestOfAllTime, playlist_all_time),
        ] {
            if let Some(p) = path {
                let file = std::fs::File::open(p).map_err(|e| to_py(e.into()))?;
                playlists.push(CuratedPlaylist::from_csv(name, file).map_err(to_py)?);
            }
        }
        let config = SnapshotConfig {
            mf: mf.then(|| MfConfig {
                dims,
                epochs,
                seed,
                ..MfConfig::default()
            }),
            serving: serving.parse().map_err(to_py)?,
            ..SnapshotConfig::default()
        };
        let m = matrix.inner.clone();
        let inner = py
            .detach(|| snapshot::ModelSnapshot::build(m, catalog, playlists, config))
            .map_err(to_py)?;
        Ok(Snapshot { inner })
    }

    /// Loads a snapshot file; `config_hash` refuses snapshots built differently.
    #[staticmethod]
    #[pyo3(signature = (path, config_hash=None))]
    fn load(path: &str, config_hash: Option<&str>) -> PyResult<Self> {
        Ok(Snapshot {
            inner: snapshot::load_snapshot(path, config_hash).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        snapshot::save_snapshot(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.meta.config_hash.clone()
    }

    #[getter]
    fn matrix(&self) -> RatingMatrix {
        RatingMatrix {
            inner: self.inner.matrix.clone(),
        }
    }

    /// Playlist as a dict. `ranges` maps attribute names to `(lo, hi)`.
    #[pyo3(signature = (user_id, k=10, source="nostalgic", algorithm=None, ranges=None))]
    fn recommend<'py>(
        &self,
        py: Python<'py>,
        user_id: &str,
        k: usize,
        source: &str,
        algorithm: Option<&str>,
        ranges: Option<Vec<(String, (f64, f64))>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let request = PlaylistRequest {
            source: source.parse::<Source>().map_err(to_py)?,
            filter: mood_filter(ranges)?,
            n: k,
            algorithm: algorithm.map(str::parse).transpose().map_err(to_py)?,
        };
        let playlist = selector::assemble(&self.inner, user_id, &request).map_err(to_py)?;
        json_value(py, &playlist)
    }

    #[pyo3(signature = (user_id, song_id, algorithm=None))]
    fn explain<'py>(
        &self,
        py: Python<'py>,
        user_id: &str,
        song_id: &str,
        algorithm: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let algorithm = match algorithm {
            Some(a) => a.parse().map_err(to_py)?,
            None => self.inner.config.serving,
        };
        let payload = self.inner.explain(user_id, song_id, algorithm).map_err(to_py)?;
        json_value(py, &payload)
    }

    /// Onboards a listener from seed CSV text; returns the new snapshot and
    /// the synthetic user id.
    fn cold_start(&self, seed_csv: &str, user_id: &str) -> PyResult<(Snapshot, String)> {
        let profile = SeedProfile {
            external_user_id: user_id.to_string(),
            seeds: parse_seed_csv(seed_csv.as_bytes()).map_err(to_py)?,
        };
        let (next, id) = self.inner.with_cold_start(&profile).map_err(to_py)?;
        Ok((Snapshot { inner: next }, id))
    }
}

#[pymodule]
fn explore(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ExploreError", m.py().get_type::<ExploreError>())?;
    m.add_class::<RatingMatrix>()?;
    m.add_class::<FactorModel>()?;
    m.add_class::<Snapshot>()?;
    m.add_function(wrap_pyfunction!(build_ratings, m)?)?;
    m.add_function(wrap_pyfunction!(build_ratings_from_file, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(neighbors, m)?)?;
    m.add_function(wrap_pyfunction!(recommend_cf, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
