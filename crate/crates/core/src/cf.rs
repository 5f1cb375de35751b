//! User-user collaborative filtering.
//!
//! Similarity is the Pearson correlation over co-rated songs, optionally
//! shrunk by `min(co_rated, cap) / cap`. Predictions are mean-centered:
//!
//! ```text
//! r̂(i, j) = mean_i + Σ_u w(i, u) · (r(u, j) − mean_u) / Σ_u |w(i, u)|
//! ```
//!
//! over the neighbors `u` of `i` that rated `j`, clamped to `[1, 5]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{RatingMatrix, MAX_RATING, MIN_RATING};
use crate::ranking::{top_n, ScoredSong};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfConfig {
    /// Neighbors kept per user.
    pub k: usize,
    /// Co-rated songs required before a similarity is defined.
    pub min_overlap: usize,
    pub keep_negative: bool,
    /// Overlap at which significance weighting stops shrinking; `None` disables it.
    pub significance_cap: Option<usize>,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig {
            k: 30,
            min_overlap: 3,
            keep_negative: true,
            significance_cap: Some(50),
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.min_overlap < 2 {
            return Err(Error::InvalidConfig("min_overlap must be at least 2".into()));
        }
        if self.significance_cap == Some(0) {
            return Err(Error::InvalidConfig("significance_cap must be positive".into()));
        }
        Ok(())
    }

    fn shrink(&self, co_rated: usize) -> f64 {
        match self.significance_cap {
            Some(cap) => co_rated.min(cap) as f64 / cap as f64,
            None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub user: usize,
    /// Pearson correlation over co-rated songs.
    pub similarity: f64,
    /// Similarity after significance weighting; used for ranking and prediction.
    pub weight: f64,
    pub co_rated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub user: usize,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedRating {
    pub user: usize,
    pub song: usize,
    /// Clamped to `[1, 5]`.
    pub value: f64,
    pub unclamped: f64,
    pub support: usize,
}

/// Pearson correlation of two equally long rating vectors.
///
/// `Ok(None)` when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64], min_overlap: usize) -> Result<Option<f64>> {
    assert_eq!(a.len(), b.len(), "pearson needs paired vectors");
    if a.len() < min_overlap.max(2) {
        return Err(Error::InsufficientOverlap {
            found: a.len(),
            required: min_overlap,
        });
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0)))
}

/// Ratings of both users on the songs they have in common.
pub fn co_rated(matrix: &RatingMatrix, a: usize, b: usize) -> (Vec<f64>, Vec<f64>) {
    let (ra, rb) = (matrix.row(a), matrix.row(b));
    let (mut i, mut j) = (0, 0);
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    while i < ra.len() && j < rb.len() {
        match ra[i].0.cmp(&rb[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                xa.push(ra[i].1 as f64);
                xb.push(rb[j].1 as f64);
                i += 1;
                j += 1;
            }
        }
    }
    (xa, xb)
}

fn candidate(matrix: &RatingMatrix, user: usize, other: usize, config: &CfConfig) -> Option<Neighbor> {
    let (a, b) = co_rated(matrix, user, other);
    if a.len() < config.min_overlap {
        return None;
    }
    let sim = pearson(&a, &b, config.min_overlap).ok()??;
    if sim == 0.0 || (sim < 0.0 && !config.keep_negative) {
        return None;
    }
    Some(Neighbor {
        user: other,
        similarity: sim,
        weight: sim * config.shrink(a.len()),
        co_rated: a.len(),
    })
}

/// The `k` users most similar to `user` by absolute weight, ties by index.
pub fn neighbors(
    matrix: &RatingMatrix,
    user: usize,
    k: usize,
    config: &CfConfig,
) -> Result<NeighborSet> {
    if user >= matrix.n_users() {
        return Err(Error::UnknownUser(format!("#{user}")));
    }
    let mut found: Vec<Neighbor> = (0..matrix.n_users())
        .into_par_iter()
        .filter(|&v| v != user)
        .filter_map(|v| candidate(matrix, user, v, config))
        .collect();
    if found.is_empty() {
        return Err(Error::EmptyNeighborhood(matrix.user_id(user).to_string()));
    }
    found.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then(a.user.cmp(&b.user))
    });
    found.truncate(k);
    Ok(NeighborSet {
        user,
        neighbors: found,
    })
}

/// Mean-centered weighted prediction of `user`'s rating for `song`.
pub fn predict_rating(
    matrix: &RatingMatrix,
    user: usize,
    song: usize,
    neighbors: &NeighborSet,
) -> Result<PredictedRating> {
    let (mut num, mut den, mut support) = (0.0, 0.0, 0usize);
    for nb in &neighbors.neighbors {
        if let Some(r) = matrix.rating(nb.user, song) {
            num += nb.weight * (r as f64 - matrix.user_mean(nb.user));
            den += nb.weight.abs();
            support += 1;
        }
    }
    if support == 0 || den == 0.0 {
        return Err(Error::NoRatingSupport {
            user: matrix.user_id(user).to_string(),
            song: matrix.song_id(song).to_string(),
        });
    }
    let unclamped = matrix.user_mean(user) + num / den;
    Ok(PredictedRating {
        user,
        song,
        value: unclamped.clamp(MIN_RATING as f64, MAX_RATING as f64),
        unclamped,
        support,
    })
}

/// Ranks every song with neighbor support by predicted rating.
pub fn recommend_with_neighbors(
    matrix: &RatingMatrix,
    neighbors: &NeighborSet,
    n: usize,
    exclude_rated: bool,
) -> Vec<ScoredSong> {
    let user = neighbors.user;
    let mut candidates: Vec<usize> = neighbors
        .neighbors
        .iter()
        .flat_map(|nb| matrix.row(nb.user).iter().map(|&(s, _)| s as usize))
        .collect();
    candidates.sort_unstable();
    candidates.dedup();
    let scored = candidates
        .into_iter()
        .filter(|&s| !exclude_rated || matrix.rating(user, s).is_none())
        .filter_map(|s| predict_rating(matrix, user, s, neighbors).ok())
        .map(|p| ScoredSong {
            song: p.song,
            score: p.value,
        })
        .collect();
    top_n(scored, n)
}

pub fn recommend_cf(
    matrix: &RatingMatrix,
    user: usize,
    n: usize,
    exclude_rated: bool,
    config: &CfConfig,
) -> Result<Vec<ScoredSong>> {
    let nbrs = neighbors(matrix, user, config.k, config)?;
    Ok(recommend_with_neighbors(matrix, &nbrs, n, exclude_rated))
}

/// Neighbor sets for every user, computed up front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex {
    sets: Vec<Option<NeighborSet>>,
}

impl NeighborIndex {
    pub fn build(matrix: &RatingMatrix, config: &CfConfig) -> Self {
        let sets = (0..matrix.n_users())
            .into_par_iter()
            .map(|u| neighbors(matrix, u, config.k, config).ok())
            .collect();
        NeighborIndex { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// `None` when the user has no qualifying neighbor.
    pub fn get(&self, user: usize) -> Option<&NeighborSet> {
        self.sets.get(user).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn matrix(rows: &[(&str, &[(&str, f32)])]) -> RatingMatrix {
        RatingMatrix::from_triplets(
            rows.iter()
                .flat_map(|(u, r)| r.iter().map(move |(s, x)| (*u, *s, *x))),
        )
        .unwrap()
    }

    #[test]
    fn pearson_extremes() {
        let p = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], 3).unwrap().unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
        let p = pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], 3).unwrap().unwrap();
        assert_abs_diff_eq!(p, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_hand_value() {
        // centered (1,-1,0)·(2/3,-7/3,5/3) = 3; norms √2 and √(26/3)
        let expect = 3.0 / (2f64.sqrt() * (26.0f64 / 3.0).sqrt());
        let p = pearson(&[5.0, 3.0, 4.0], &[4.0, 1.0, 5.0], 3).unwrap().unwrap();
        assert_abs_diff_eq!(p, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 0.7206, epsilon = 1e-4);
    }

    #[test]
    fn pearson_undefined_and_short() {
        assert_eq!(pearson(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0], 3).unwrap(), None);
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0], 3),
            Err(Error::InsufficientOverlap { found: 2, required: 3 })
        ));
    }

    #[test]
    fn identical_rows_make_perfect_neighbors() {
        let row: &[(&str, f32)] = &[("a", 1.0), ("b", 3.0), ("c", 5.0)];
        let m = matrix(&[("u1", row), ("u2", row)]);
        let set = neighbors(&m, 0, 30, &CfConfig::default()).unwrap();
        assert_eq!(set.neighbors.len(), 1);
        assert_eq!(set.neighbors[0].user, 1);
        assert_abs_diff_eq!(set.neighbors[0].similarity, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(set.neighbors[0].weight, 3.0 / 50.0, epsilon = 1e-12);
    }

    #[test]
    fn isolated_user_has_empty_neighborhood() {
        let m = matrix(&[
            ("u1", &[("a", 1.0), ("b", 3.0), ("c", 5.0)]),
            ("u2", &[("d", 1.0), ("e", 3.0), ("f", 5.0)]),
        ]);
        assert!(matches!(
            neighbors(&m, 0, 5, &CfConfig::default()),
            Err(Error::EmptyNeighborhood(u)) if u == "u1"
        ));
        assert!(matches!(
            neighbors(&m, 9, 5, &CfConfig::default()),
            Err(Error::UnknownUser(_))
        ));
    }

    #[test]
    fn negative_neighbors_can_be_dropped() {
        let m = matrix(&[
            ("u1", &[("a", 1.0), ("b", 3.0), ("c", 5.0)]),
            ("u2", &[("a", 5.0), ("b", 3.0), ("c", 1.0)]),
        ]);
        let keep = neighbors(&m, 0, 5, &CfConfig::default()).unwrap();
        assert!(keep.neighbors[0].similarity < 0.0);
        let cfg = CfConfig {
            keep_negative: false,
            ..CfConfig::default()
        };
        assert!(neighbors(&m, 0, 5, &cfg).is_err());
    }

    fn hand_set(user: usize, nbrs: &[(usize, f64)]) -> NeighborSet {
        NeighborSet {
            user,
            neighbors: nbrs
                .iter()
                .map(|&(u, w)| Neighbor {
                    user: u,
                    similarity: w,
                    weight: w,
                    co_rated: 3,
                })
                .collect(),
        }
    }

    #[test]
    fn prediction_hand_value() {
        // target mean 3; n1 rates x=5 with mean 4; n2 rates x=2 with mean 3
        let m = matrix(&[
            ("t", &[("a", 2.0), ("b", 4.0)]),
            ("n1", &[("x", 5.0), ("a", 3.0)]),
            ("n2", &[("x", 2.0), ("a", 4.0)]),
        ]);
        let x = m.song_index("x").unwrap();
        let p = predict_rating(&m, 0, x, &hand_set(0, &[(1, 0.8), (2, 0.4)])).unwrap();
        assert_abs_diff_eq!(p.value, 3.0 + (0.8 - 0.4) / 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(p.value, 3.3333, epsilon = 1e-4);
        assert_eq!(p.support, 2);
    }

    #[test]
    fn zero_deviation_neighbor_returns_own_mean() {
        let m = matrix(&[
            ("t", &[("a", 2.0), ("b", 5.0)]),
            ("n", &[("x", 3.0), ("a", 3.0)]),
        ]);
        let x = m.song_index("x").unwrap();
        let p = predict_rating(&m, 0, x, &hand_set(0, &[(1, 0.6)])).unwrap();
        assert_abs_diff_eq!(p.value, 3.5, epsilon = 1e-12);
    }

    #[test]
    fn prediction_is_clamped() {
        let m = matrix(&[
            ("t", &[("a", 5.0), ("b", 4.2)]),
            ("n", &[("x", 5.0), ("a", 1.0), ("b", 1.0)]),
        ]);
        let x = m.song_index("x").unwrap();
        let p = predict_rating(&m, 0, x, &hand_set(0, &[(1, 0.9)])).unwrap();
        assert_abs_diff_eq!(p.unclamped, 4.6 + (5.0 - 7.0 / 3.0), epsilon = 1e-6);
        assert_eq!(p.value, 5.0);
    }

    #[test]
    fn no_support_is_an_error() {
        let m = matrix(&[("t", &[("a", 2.0)]), ("n", &[("b", 3.0)])]);
        assert!(matches!(
            predict_rating(&m, 0, 0, &hand_set(0, &[(1, 0.5)])),
            Err(Error::NoRatingSupport { .. })
        ));
    }

    fn small() -> RatingMatrix {
        matrix(&[
            ("u1", &[("a", 5.0), ("b", 3.0), ("c", 4.0), ("d", 1.0)]),
            ("u2", &[("a", 4.0), ("b", 1.0), ("c", 5.0), ("e", 4.0), ("f", 2.0)]),
            ("u3", &[("a", 1.0), ("b", 5.0), ("c", 2.0), ("e", 1.0), ("g", 5.0)]),
        ])
    }

    #[test]
    fn recommend_excludes_rated_by_default_flag() {
        let m = small();
        let cfg = CfConfig::default();
        let recs = recommend_cf(&m, 0, 10, true, &cfg).unwrap();
        let ids: Vec<&str> = recs.iter().map(|r| m.song_id(r.song)).collect();
        assert!(!ids.contains(&"a"));
        assert_eq!(ids.len(), 3);
        let all = recommend_cf(&m, 0, 10, false, &cfg).unwrap();
        assert!(all.iter().any(|r| m.song_id(r.song) == "a"));
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(recommend_cf(&m, 0, 1, true, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn index_matches_direct_search() {
        let m = small();
        let cfg = CfConfig::default();
        let idx = NeighborIndex::build(&m, &cfg);
        for u in 0..m.n_users() {
            assert_eq!(idx.get(u), neighbors(&m, u, cfg.k, &cfg).ok().as_ref());
        }
    }
}
