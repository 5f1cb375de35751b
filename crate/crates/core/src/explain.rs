//! Explanations for recommendations.
//!
//! Two kinds are produced. Feature explanations map the latent dimension
//! that contributed most to a user-song affinity back onto interpretable
//! song attributes through per-dimension ridge regressions. Neighbor
//! explanations list the similar users behind a collaborative-filtering
//! pick, together with a node/edge graph for visualisation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ATTRIBUTE_NAMES};
use crate::cf::NeighborSet;
use crate::error::{Error, Result};
use crate::matrix::RatingMatrix;
use crate::mf::FactorModel;

pub const DEFAULT_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMapper {
    /// Coefficients on standardized attributes, aligned with `attribute_names`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub fit_r2: f64,
}

/// Per-latent-dimension linear predictors from song attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMapper {
    pub attribute_names: Vec<String>,
    /// Positions of the retained attributes in the full feature vector.
    pub attribute_columns: Vec<usize>,
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    pub ridge: f64,
    pub dimensions: Vec<DimensionMapper>,
}

/// A fitted mapper plus the columns that had to be dropped.
#[derive(Debug, Clone)]
pub struct FittedMapper {
    pub mapper: LatentMapper,
    pub dropped: Vec<String>,
}

impl LatentMapper {
    /// Fits one ridge regression per latent dimension.
    ///
    /// `factors[i]` is song `i`'s latent vector and `features[i]` its
    /// attribute vector in [`ATTRIBUTE_NAMES`] order. Constant columns are
    /// dropped; if every column is constant the fit fails.
    pub fn fit(factors: &[&[f64]], features: &[[f64; 5]], ridge: f64) -> Result<FittedMapper> {
        assert_eq!(factors.len(), features.len(), "one feature row per factor row");
        let n = features.len();
        let n_attr = ATTRIBUTE_NAMES.len();
        if n < n_attr + 1 {
            return Err(Error::TooFewSongs {
                required: n_attr + 1,
                found: n,
            });
        }
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge penalty must be non-negative".into()));
        }
        let dims = factors.first().map_or(0, |f| f.len());

        let mut columns = Vec::new();
        let mut means = Vec::new();
        let mut stddevs = Vec::new();
        let mut dropped = Vec::new();
        for c in 0..n_attr {
            let mean = features.iter().map(|f| f[c]).sum::<f64>() / n as f64;
            let var = features.iter().map(|f| (f[c] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if sd <= 1e-12 * mean.abs().max(1.0) {
                log::warn!("attribute `{}` is constant; dropped", ATTRIBUTE_NAMES[c]);
                dropped.push(ATTRIBUTE_NAMES[c].to_string());
                continue;
            }
            columns.push(c);
            means.push(mean);
            stddevs.push(sd);
        }
        if columns.is_empty() {
            return Err(Error::DegenerateDesign { columns: dropped });
        }

        let p = columns.len();
        let x = DMatrix::from_fn(n, p, |i, k| (features[i][columns[k]] - means[k]) / stddevs[k]);
        let mut gram = x.transpose() * &x;
        for k in 0..p {
            gram[(k, k)] += ridge;
        }
        let solver = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateDesign {
                columns: columns.iter().map(|&c| ATTRIBUTE_NAMES[c].to_string()).collect(),
            })?;

        let dimensions = (0..dims)
            .map(|j| {
                let y = DVector::from_fn(n, |i, _| factors[i][j]);
                let y_mean = y.mean();
                let centered = y.add_scalar(-y_mean);
                let beta = solver.solve(&(x.transpose() * &centered));
                let resid = &centered - &x * &beta;
                let ss_res = resid.norm_squared();
                let ss_tot = centered.norm_squared();
                let fit_r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
                DimensionMapper {
                    coefficients: beta.iter().copied().collect(),
                    intercept: y_mean,
                    fit_r2,
                }
            })
            .collect();

        Ok(FittedMapper {
            mapper: LatentMapper {
                attribute_names: columns.iter().map(|&c| ATTRIBUTE_NAMES[c].to_string()).collect(),
                attribute_columns: columns,
                means,
                stddevs,
                ridge,
                dimensions,
            },
            dropped,
        })
    }

    /// Coefficients and intercept expressed in the attributes' original units.
    pub fn raw_coefficients(&self, dimension: usize) -> (Vec<f64>, f64) {
        let dm = &self.dimensions[dimension];
        let coefs: Vec<f64> = dm
            .coefficients
            .iter()
            .zip(&self.stddevs)
            .map(|(b, sd)| b / sd)
            .collect();
        let intercept = dm.intercept
            - coefs
                .iter()
                .zip(&self.means)
                .map(|(c, m)| c * m)
                .sum::<f64>();
        (coefs, intercept)
    }

    /// Predicted latent value for a feature vector.
    pub fn predict(&self, dimension: usize, features: &[f64; 5]) -> f64 {
        let dm = &self.dimensions[dimension];
        dm.intercept
            + self
                .attribute_columns
                .iter()
                .enumerate()
                .map(|(k, &c)| dm.coefficients[k] * (features[c] - self.means[k]) / self.stddevs[k])
                .sum::<f64>()
    }

    /// Attributes of one dimension ordered by absolute importance.
    pub fn ranked_attributes(&self, dimension: usize) -> Vec<AttributeImportance> {
        let mut out: Vec<AttributeImportance> = self
            .attribute_names
            .iter()
            .zip(&self.dimensions[dimension].coefficients)
            .map(|(name, &importance)| AttributeImportance {
                attribute: name.clone(),
                importance,
            })
            .collect();
        out.sort_by(|a, b| b.importance.abs().total_cmp(&a.importance.abs()));
        out
    }
}

/// Fits mappers for every song of `matrix` that has catalog attributes.
pub fn fit_latent_mappers(
    model: &FactorModel,
    matrix: &RatingMatrix,
    catalog: &Catalog,
    ridge: f64,
) -> Result<FittedMapper> {
    let mut factors = Vec::new();
    let mut features = Vec::new();
    let mut missing = 0usize;
    for s in 0..model.n_songs.min(matrix.n_songs()) {
        match catalog.get(matrix.song_id(s)) {
            Some(attrs) => {
                factors.push(model.item_vector(s));
                features.push(attrs.features());
            }
            None => missing += 1,
        }
    }
    if missing > 0 {
        log::warn!("{missing} factored songs have no catalog attributes; left out of the mapper fit");
    }
    LatentMapper::fit(&factors, &features, ridge)
}

/// Latent dimension with the largest elementwise product `p_u[d]·q_i[d]`.
/// Ties go to the lowest dimension.
pub fn top_latent_dimension(model: &FactorModel, user: usize, song: usize) -> Result<(usize, f64)> {
    if user >= model.n_users {
        return Err(Error::UnknownUser(format!("#{user}")));
    }
    if song >= model.n_songs {
        return Err(Error::UnknownSong(format!("#{song}")));
    }
    let p = model.user_vector(user);
    let q = model.item_vector(song);
    let mut best = (0, p[0] * q[0]);
    for d in 1..model.dims {
        let c = p[d] * q[d];
        if c > best.1 {
            best = (d, c);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeImportance {
    pub attribute: String,
    /// Standardized regression coefficient; sign kept.
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborContribution {
    pub user_id: String,
    pub similarity: f64,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Explanation {
    Neighbor {
        song_id: String,
        neighbors: Vec<NeighborContribution>,
    },
    Feature {
        song_id: String,
        latent_dimension: usize,
        contribution: f64,
        fit_r2: f64,
        attributes: Vec<AttributeImportance>,
    },
}

/// Explains an MF pick through the attributes driving its top latent dimension.
pub fn explain_recommendation_feature(
    model: &FactorModel,
    mapper: &LatentMapper,
    matrix: &RatingMatrix,
    user: usize,
    song: usize,
    top_m: usize,
) -> Result<Explanation> {
    let (dim, contribution) = top_latent_dimension(model, user, song)?;
    if dim >= mapper.dimensions.len() {
        return Err(Error::InvalidConfig(format!(
            "mapper covers {} dimensions, model has {}",
            mapper.dimensions.len(),
            model.dims
        )));
    }
    let mut attributes = mapper.ranked_attributes(dim);
    attributes.truncate(top_m.max(1));
    Ok(Explanation::Feature {
        song_id: matrix.song_id(song).to_string(),
        latent_dimension: dim,
        contribution,
        fit_r2: mapper.dimensions[dim].fit_r2,
        attributes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: String,
    pub dst: String,
    pub weight: f64,
    pub kind: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl NeighborGraph {
    /// True when every edge endpoint is a listed node.
    pub fn is_consistent(&self) -> bool {
        let ids: std::collections::HashSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        self.edges
            .iter()
            .all(|e| ids.contains(e.src.as_str()) && ids.contains(e.dst.as_str()))
    }
}

pub fn user_node_id(user_id: &str) -> String {
    format!("user:{user_id}")
}

pub fn song_node_id(song_id: &str) -> String {
    format!("song:{song_id}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborExplanation {
    /// One `NEIGHBOR` explanation per recommended song, in input order.
    pub explanations: Vec<Explanation>,
    pub graph: NeighborGraph,
}

/// Builds the user-neighbor-song graph behind a set of CF recommendations.
///
/// Nodes are the target user, every neighbor, and every recommended song.
/// Edges join the target to each neighbor (weight = similarity) and each
/// neighbor to the recommended songs it rated (weight = its rating).
pub fn neighbor_graph(
    matrix: &RatingMatrix,
    neighbors: &NeighborSet,
    songs: &[usize],
    catalog: Option<&Catalog>,
) -> Result<NeighborExplanation> {
    if neighbors.neighbors.is_empty() {
        return Err(Error::EmptyNeighborhood(matrix.user_id(neighbors.user).to_string()));
    }
    let target = matrix.user_id(neighbors.user);
    let target_id = user_node_id(target);
    let mut graph = NeighborGraph::default();
    graph.nodes.push(GraphNode {
        id: target_id.clone(),
        kind: "target".into(),
        label: target.to_string(),
    });
    for nb in &neighbors.neighbors {
        let uid = matrix.user_id(nb.user);
        graph.nodes.push(GraphNode {
            id: user_node_id(uid),
            kind: "neighbor".into(),
            label: uid.to_string(),
        });
        graph.edges.push(GraphEdge {
            src: target_id.clone(),
            dst: user_node_id(uid),
            weight: nb.similarity,
            kind: "similarity".into(),
        });
    }
    let mut explanations = Vec::with_capacity(songs.len());
    for &s in songs {
        let sid = matrix.song_id(s);
        let label = catalog
            .and_then(|c| c.get(sid))
            .map_or_else(|| sid.to_string(), |a| a.title.clone());
        graph.nodes.push(GraphNode {
            id: song_node_id(sid),
            kind: "song".into(),
            label,
        });
        let mut contributions = Vec::new();
        for nb in &neighbors.neighbors {
            if let Some(r) = matrix.rating(nb.user, s) {
                let uid = matrix.user_id(nb.user);
                graph.edges.push(GraphEdge {
                    src: user_node_id(uid),
                    dst: song_node_id(sid),
                    weight: r as f64,
                    kind: "rating".into(),
                });
                contributions.push(NeighborContribution {
                    user_id: uid.to_string(),
                    similarity: nb.similarity,
                    rating: r as f64,
                });
            }
        }
        explanations.push(Explanation::Neighbor {
            song_id: sid.to_string(),
            neighbors: contributions,
        });
    }
    Ok(NeighborExplanation {
        explanations,
        graph,
    })
}
