//! Evaluation: train/test splits, RMSE and top-K ranking metrics.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf::{self, CfConfig, NeighborIndex};
use crate::error::{Error, Result};
use crate::matrix::RatingMatrix;
use crate::mf::{self, FactorModel, MfConfig};
use crate::snapshot::Algorithm;

pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Each user's ratings are split separately.
    Stratified,
    /// All entries are shuffled together.
    Random,
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stratified" => Ok(SplitStrategy::Stratified),
            "random" | "global" => Ok(SplitStrategy::Random),
            _ => Err(Error::InvalidConfig(format!(
                "unknown split `{s}` (expected stratified or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            strategy: SplitStrategy::Stratified,
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

fn train_count(fraction: f64, n: usize) -> usize {
    // guard against 0.8 * n landing a hair above an integer
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Splits observed entries into train and test matrices over the same
/// user and song tables. Synthetic (cold-start) users are left out of both.
///
/// Stratified: each user keeps `⌈fraction·n_u⌉` random ratings for training,
/// so a user with a single rating is train-only. Random: `⌈fraction·nnz⌉`
/// entries drawn over the whole matrix.
pub fn split(matrix: &RatingMatrix, spec: &SplitSpec) -> Result<(RatingMatrix, RatingMatrix)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidConfig("train_fraction must lie in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_users = matrix.n_users();
    let mut train: Vec<Vec<(u32, f32)>> = vec![Vec::new(); n_users];
    let mut test: Vec<Vec<(u32, f32)>> = vec![Vec::new(); n_users];
    match spec.strategy {
        SplitStrategy::Stratified => {
            for u in 0..n_users {
                if matrix.is_synthetic(u) {
                    continue;
                }
                let mut row = matrix.row(u).to_vec();
                row.shuffle(&mut rng);
                let cut = train_count(spec.train_fraction, row.len());
                test[u] = row.split_off(cut);
                train[u] = row;
            }
        }
        SplitStrategy::Random => {
            let mut all: Vec<(usize, u32, f32)> = matrix
                .entries()
                .filter(|&(u, _, _)| !matrix.is_synthetic(u))
                .map(|(u, s, r)| (u, s as u32, r))
                .collect();
            all.shuffle(&mut rng);
            let cut = train_count(spec.train_fraction, all.len());
            for (i, (u, s, r)) in all.into_iter().enumerate() {
                if i < cut {
                    train[u].push((s, r));
                } else {
                    test[u].push((s, r));
                }
            }
        }
    }
    for row in train.iter_mut().chain(test.iter_mut()) {
        row.sort_by_key(|&(s, _)| s);
    }
    let test = matrix.with_rows(test)?;
    if test.nnz() == 0 {
        return Err(Error::EmptyTest);
    }
    Ok((matrix.with_rows(train)?, test))
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyMetricInput);
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// How average precision is normalised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApNormalizer {
    /// Relevant items found in the top K.
    #[default]
    RelevantInTopK,
    /// `min(|relevant|, K)`.
    MinRelevantK,
}

/// AP@K normalised by the number of relevant items found in the top K.
pub fn average_precision_at_k<T: Eq + std::hash::Hash>(ranked: &[T], relevant: &HashSet<T>, k: usize) -> f64 {
    average_precision_at_k_with(ranked, relevant, k, ApNormalizer::RelevantInTopK)
}

pub fn average_precision_at_k_with<T: Eq + std::hash::Hash>(
    ranked: &[T],
    relevant: &HashSet<T>,
    k: usize,
    normalizer: ApNormalizer,
) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    let denom = match normalizer {
        ApNormalizer::RelevantInTopK => hits,
        ApNormalizer::MinRelevantK => relevant.len().min(k),
    };
    if denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}

/// Mean AP@K over users, each given as `(ranking, relevant set)`.
pub fn map_at_k<T: Eq + std::hash::Hash>(users: &[(Vec<T>, HashSet<T>)], k: usize) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::NoUsers);
    }
    Ok(users
        .iter()
        .map(|(ranked, rel)| average_precision_at_k(ranked, rel, k))
        .sum::<f64>()
        / users.len() as f64)
}

/// `Σ_{i≤k} g_i / log2(i + 1)`.
pub fn dcg_at_k(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of the ranking over DCG of the same gains sorted descending; 0 when
/// the ideal DCG is 0.
pub fn ndcg_at_k(gains: &[f64], k: usize) -> Result<f64> {
    if let Some((position, &gain)) = gains.iter().enumerate().find(|(_, g)| g.is_nan() || **g < 0.0) {
        return Err(Error::NegativeGain { position, gain });
    }
    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_at_k(gains, k) / idcg)
}

/// Something that can score (user, song) pairs of a training matrix.
pub trait Scorer: Sync {
    fn name(&self) -> String;

    /// Predicted rating, `None` when the model has nothing to say.
    fn predict(&self, user: usize, song: usize) -> Option<f64>;

    /// Scores for each candidate; `None` marks an unscored candidate.
    fn score_candidates(&self, user: usize, candidates: &[usize]) -> Vec<Option<f64>> {
        candidates.iter().map(|&s| self.predict(user, s)).collect()
    }
}

/// User-user CF over a training matrix with neighbors computed up front.
pub struct CfScorer<'a> {
    pub matrix: &'a RatingMatrix,
    pub index: NeighborIndex,
}

impl<'a> CfScorer<'a> {
    pub fn new(matrix: &'a RatingMatrix, config: &CfConfig) -> Self {
        CfScorer {
            matrix,
            index: NeighborIndex::build(matrix, config),
        }
    }
}

impl Scorer for CfScorer<'_> {
    fn name(&self) -> String {
        "cf".into()
    }

    fn predict(&self, user: usize, song: usize) -> Option<f64> {
        let nbrs = self.index.get(user)?;
        cf::predict_rating(self.matrix, user, song, nbrs).ok().map(|p| p.value)
    }

    fn score_candidates(&self, user: usize, candidates: &[usize]) -> Vec<Option<f64>> {
        let Some(nbrs) = self.index.get(user) else {
            return vec![None; candidates.len()];
        };
        let scored: HashMap<usize, f64> = cf::recommend_with_neighbors(self.matrix, nbrs, usize::MAX, false)
            .into_iter()
            .map(|r| (r.song, r.score))
            .collect();
        candidates.iter().map(|s| scored.get(s).copied()).collect()
    }
}

pub struct MfScorer<'a> {
    pub model: &'a FactorModel,
}

impl Scorer for MfScorer<'_> {
    fn name(&self) -> String {
        "mf".into()
    }

    fn predict(&self, user: usize, song: usize) -> Option<f64> {
        self.model.predict(user, song).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub user_id: String,
    pub n_test: usize,
    pub n_relevant: usize,
    /// `None` when the user has no relevant test song.
    pub average_precision: Option<f64>,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub algorithm: String,
    pub split: SplitStrategy,
    pub seed: u64,
    pub train_fraction: f64,
    pub k: usize,
    pub relevance_threshold: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub rmse: f64,
    /// Share of test ratings the model could predict; the rest used the
    /// user's training mean.
    pub prediction_coverage: f64,
    pub map_at_k: f64,
    pub mean_ndcg: f64,
    pub users_ranked: usize,
    pub users_without_relevant: usize,
    pub per_user: Vec<UserReport>,
}

impl EvaluationReport {
    /// Aligned two-column summary.
    pub fn to_table(&self) -> String {
        let rows = [
            ("algorithm", self.algorithm.clone()),
            ("split", format!("{:?}", self.split).to_lowercase()),
            ("seed", self.seed.to_string()),
            ("train ratings", self.n_train.to_string()),
            ("test ratings", self.n_test.to_string()),
            ("RMSE", format!("{:.4}", self.rmse)),
            ("prediction coverage", format!("{:.4}", self.prediction_coverage)),
            (&*format!("MAP@{}", self.k), format!("{:.4}", self.map_at_k)),
            (&*format!("mean NDCG@{}", self.k), format!("{:.4}", self.mean_ndcg)),
            ("users ranked", self.users_ranked.to_string()),
            ("users without relevant", self.users_without_relevant.to_string()),
        ]
        .map(|(a, b)| (a.to_string(), b));
        let width = rows.iter().map(|(a, _)| a.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (name, value) in rows {
            let _ = writeln!(out, "{name:<width$}  {value:>10}");
        }
        out
    }
}

/// Candidate songs for `user`: everything not rated in training, ordered
/// by score (unscored last), ties by ascending index.
pub fn rank_candidates(scorer: &dyn Scorer, train: &RatingMatrix, user: usize) -> Vec<usize> {
    let candidates: Vec<usize> = (0..train.n_songs())
        .filter(|&s| train.rating(user, s).is_none())
        .collect();
    let scores = scorer.score_candidates(user, &candidates);
    let mut order: Vec<(usize, Option<f64>)> = candidates.into_iter().zip(scores).collect();
    order.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.0.cmp(&b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    order.into_iter().map(|(s, _)| s).collect()
}

/// Per-user (predicted, actual, counted) triples and the ranking report.
type UserOutcome = (Vec<(f64, f64, bool)>, Option<UserReport>);

/// Scores a model trained on `train` against `test`.
///
/// RMSE covers every test rating (falling back to the user's training mean
/// where the model abstains). Ranking metrics rank all songs a user did not
/// rate in training; test ratings at or above `threshold` are relevant for
/// MAP and test ratings are NDCG gains. Users without test ratings are
/// skipped, and users without relevant test songs are left out of MAP.
pub fn evaluate_with(
    scorer: &dyn Scorer,
    train: &RatingMatrix,
    test: &RatingMatrix,
    spec: &SplitSpec,
    k: usize,
    threshold: f64,
) -> Result<EvaluationReport> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let global = train.global_mean();
    let per_user: Vec<UserOutcome> = (0..test.n_users())
        .into_par_iter()
        .map(|u| {
            let row = test.row(u);
            if row.is_empty() {
                return (Vec::new(), None);
            }
            let fallback = if train.row(u).is_empty() { global } else { train.user_mean(u) };
            let preds: Vec<(f64, f64, bool)> = row
                .iter()
                .map(|&(s, r)| match scorer.predict(u, s as usize) {
                    Some(p) => (p, r as f64, true),
                    None => (fallback, r as f64, false),
                })
                .collect();
            let ranking = rank_candidates(scorer, train, u);
            let relevant: HashSet<usize> = row
                .iter()
                .filter(|&&(_, r)| r as f64 >= threshold)
                .map(|&(s, _)| s as usize)
                .collect();
            let ap = (!relevant.is_empty()).then(|| average_precision_at_k(&ranking, &relevant, k));
            let gains: Vec<f64> = ranking
                .iter()
                .map(|&s| test.rating(u, s).map_or(0.0, |r| r as f64))
                .collect();
            let ndcg = ndcg_at_k(&gains, k).expect("ratings are positive");
            let report = UserReport {
                user_id: test.user_id(u).to_string(),
                n_test: row.len(),
                n_relevant: relevant.len(),
                average_precision: ap,
                ndcg,
            };
            (preds, Some(report))
        })
        .collect();

    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    let mut covered = 0usize;
    let mut reports = Vec::new();
    for (preds, report) in per_user {
        for (p, a, model) in preds {
            predicted.push(p);
            actual.push(a);
            covered += model as usize;
        }
        reports.extend(report);
    }
    if predicted.is_empty() {
        return Err(Error::EmptyTest);
    }
    let aps: Vec<f64> = reports.iter().filter_map(|r| r.average_precision).collect();
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    let mean_ndcg = reports.iter().map(|r| r.ndcg).sum::<f64>() / reports.len() as f64;
    Ok(EvaluationReport {
        algorithm: scorer.name(),
        split: spec.strategy,
        seed: spec.seed,
        train_fraction: spec.train_fraction,
        k,
        relevance_threshold: threshold,
        n_train: train.nnz(),
        n_test: test.nnz(),
        rmse: rmse(&predicted, &actual)?,
        prediction_coverage: covered as f64 / predicted.len() as f64,
        map_at_k: map,
        mean_ndcg,
        users_ranked: reports.len(),
        users_without_relevant: reports.len() - aps.len(),
        per_user: reports,
    })
}

/// Splits, trains the chosen model on the train side and evaluates it.
pub fn evaluate(
    algorithm: Algorithm,
    matrix: &RatingMatrix,
    spec: &SplitSpec,
    k: usize,
    threshold: f64,
    cf_config: &CfConfig,
    mf_config: &MfConfig,
) -> Result<EvaluationReport> {
    let (train, test) = split(matrix, spec)?;
    match algorithm {
        Algorithm::Cf => {
            cf_config.validate()?;
            let scorer = CfScorer::new(&train, cf_config);
            evaluate_with(&scorer, &train, &test, spec, k, threshold)
        }
        Algorithm::Mf => {
            let model = mf::train_mf(&train, mf_config)?;
            evaluate_with(&MfScorer { model: &model }, &train, &test, spec, k, threshold)
        }
    }
}
