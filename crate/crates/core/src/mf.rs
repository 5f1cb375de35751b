//! Latent factor model trained by stochastic gradient descent on observed
//! ratings only.
//!
//! The objective is
//!
//! ```text
//! Σ_(u,i) observed  (r_ui − μ − p_u·q_i)² + λ (‖p_u‖² + ‖q_i‖²)
//! ```
//!
//! with `μ` the global mean. Updates visit observations in row-major order,
//! so a fixed seed gives bit-identical factors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{RatingMatrix, MAX_RATING, MIN_RATING};
use crate::ranking::{top_n, ScoredSong};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfConfig {
    pub dims: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    /// Factors start uniform in `(-init_scale, init_scale)`.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            dims: 32,
            epochs: 50,
            learning_rate: 0.005,
            regularization: 0.02,
            init_scale: 0.05,
            seed: 42,
        }
    }
}

impl MfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("dims and epochs must be positive".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("init_scale", self.init_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return Err(Error::InvalidConfig("regularization must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub dims: usize,
    pub n_users: usize,
    pub n_songs: usize,
    /// Row-major `n_users × dims`.
    pub user_factors: Vec<f64>,
    /// Row-major `n_songs × dims`.
    pub item_factors: Vec<f64>,
    pub global_mean: f64,
    /// Train RMSE after each epoch.
    pub training_log: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MfRanking {
    #[default]
    Cosine,
    PredictedRating,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of two vectors; `None` if either has zero length.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

impl FactorModel {
    /// Model with every factor zero.
    pub fn zeros(n_users: usize, n_songs: usize, dims: usize, global_mean: f64) -> Self {
        FactorModel {
            dims,
            n_users,
            n_songs,
            user_factors: vec![0.0; n_users * dims],
            item_factors: vec![0.0; n_songs * dims],
            global_mean,
            training_log: Vec::new(),
        }
    }

    pub fn user_vector(&self, user: usize) -> &[f64] {
        &self.user_factors[user * self.dims..(user + 1) * self.dims]
    }

    pub fn item_vector(&self, song: usize) -> &[f64] {
        &self.item_factors[song * self.dims..(song + 1) * self.dims]
    }

    pub fn user_vector_mut(&mut self, user: usize) -> &mut [f64] {
        &mut self.user_factors[user * self.dims..(user + 1) * self.dims]
    }

    pub fn item_vector_mut(&mut self, song: usize) -> &mut [f64] {
        &mut self.item_factors[song * self.dims..(song + 1) * self.dims]
    }

    fn check(&self, user: usize, song: usize) -> Result<()> {
        if user >= self.n_users {
            return Err(Error::UnknownUser(format!("#{user}")));
        }
        if song >= self.n_songs {
            return Err(Error::UnknownSong(format!("#{song}")));
        }
        Ok(())
    }

    /// `μ + p_u·q_i` without clamping.
    pub fn predict_unclamped(&self, user: usize, song: usize) -> f64 {
        self.global_mean + dot(self.user_vector(user), self.item_vector(song))
    }

    pub fn predict(&self, user: usize, song: usize) -> Result<f64> {
        self.check(user, song)?;
        Ok(self
            .predict_unclamped(user, song)
            .clamp(MIN_RATING as f64, MAX_RATING as f64))
    }

    /// Cosine between the user and item vectors; `Ok(None)` if either is zero.
    pub fn user_song_cosine(&self, user: usize, song: usize) -> Result<Option<f64>> {
        self.check(user, song)?;
        Ok(cosine(self.user_vector(user), self.item_vector(song)))
    }

    /// Appends a user whose factors minimise the regularized loss over
    /// `row` with the item factors held fixed.
    pub fn fold_in_user(&mut self, row: &[(u32, f32)], regularization: f64) -> Result<()> {
        let p = self.solve_user_factors(row, regularization)?;
        self.user_factors.extend(p);
        self.n_users += 1;
        Ok(())
    }

    /// Ridge least-squares user vector for `row` against the current item factors.
    pub fn solve_user_factors(&self, row: &[(u32, f32)], regularization: f64) -> Result<Vec<f64>> {
        let d = self.dims;
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for &(s, r) in row {
            let s = s as usize;
            if s >= self.n_songs {
                return Err(Error::UnknownSong(format!("#{s}")));
            }
            let q = DVector::from_column_slice(self.item_vector(s));
            gram += &q * q.transpose();
            rhs += &q * (r as f64 - self.global_mean);
        }
        let ridge = regularization * row.len() as f64;
        for i in 0..d {
            gram[(i, i)] += ridge.max(1e-9);
        }
        let p = gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidConfig("singular fold-in system".into()))?;
        Ok(p.iter().copied().collect())
    }
}

/// Root mean squared error of unclamped predictions over observed entries.
pub fn train_rmse(matrix: &RatingMatrix, model: &FactorModel) -> f64 {
    let nnz = matrix.nnz();
    if nnz == 0 {
        return 0.0;
    }
    let sse: f64 = matrix
        .entries()
        .map(|(u, s, r)| {
            let e = r as f64 - model.predict_unclamped(u, s);
            e * e
        })
        .sum();
    (sse / nnz as f64).sqrt()
}

pub fn train_mf(matrix: &RatingMatrix, config: &MfConfig) -> Result<FactorModel> {
    config.validate()?;
    if matrix.nnz() == 0 {
        return Err(Error::InvalidConfig("cannot train on an empty matrix".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dims;
    let mut model = FactorModel::zeros(matrix.n_users(), matrix.n_songs(), d, matrix.global_mean());
    let scale = config.init_scale;
    for x in model
        .user_factors
        .iter_mut()
        .chain(model.item_factors.iter_mut())
    {
        *x = rng.random_range(-scale..scale);
    }

    let (lr, reg) = (config.learning_rate, config.regularization);
    let observations: Vec<(usize, usize, f64)> =
        matrix.entries().map(|(u, s, r)| (u, s, r as f64)).collect();
    for epoch in 0..config.epochs {
        for &(u, s, r) in &observations {
            let err = r - model.predict_unclamped(u, s);
            let (pu, qi) = split_factors(&mut model, u, s);
            for f in 0..d {
                let (p, q) = (pu[f], qi[f]);
                pu[f] += lr * (err * q - reg * p);
                qi[f] += lr * (err * p - reg * q);
            }
        }
        let rmse = train_rmse(matrix, &model);
        log::debug!("epoch {epoch}: train RMSE {rmse:.6}");
        if !rmse.is_finite() {
            return Err(Error::DivergenceDetected { epoch, rmse });
        }
        model.training_log.push(rmse);
    }
    Ok(model)
}

fn split_factors(model: &mut FactorModel, user: usize, song: usize) -> (&mut [f64], &mut [f64]) {
    let d = model.dims;
    (
        &mut model.user_factors[user * d..(user + 1) * d],
        &mut model.item_factors[song * d..(song + 1) * d],
    )
}

/// Value of the regularized training objective.
pub fn objective(matrix: &RatingMatrix, model: &FactorModel, regularization: f64) -> f64 {
    matrix
        .entries()
        .map(|(u, s, r)| {
            let e = r as f64 - model.predict_unclamped(u, s);
            let (p, q) = (model.user_vector(u), model.item_vector(s));
            e * e + regularization * (dot(p, p) + dot(q, q))
        })
        .sum()
}

/// Full-batch gradient of [`objective`] as `(d/dP, d/dQ)`, row-major like the factors.
pub fn objective_gradient(
    matrix: &RatingMatrix,
    model: &FactorModel,
    regularization: f64,
) -> (Vec<f64>, Vec<f64>) {
    let d = model.dims;
    let mut gp = vec![0.0; model.user_factors.len()];
    let mut gq = vec![0.0; model.item_factors.len()];
    for (u, s, r) in matrix.entries() {
        let e = r as f64 - model.predict_unclamped(u, s);
        let (p, q) = (model.user_vector(u), model.item_vector(s));
        for f in 0..d {
            gp[u * d + f] += -2.0 * e * q[f] + 2.0 * regularization * p[f];
            gq[s * d + f] += -2.0 * e * p[f] + 2.0 * regularization * q[f];
        }
    }
    (gp, gq)
}

/// Ranks songs for `user` by cosine (falling back to predicted rating when
/// the user vector is zero) or by predicted rating. Songs whose item vector
/// is zero have no cosine and are left out of a cosine ranking.
pub fn recommend_mf(
    model: &FactorModel,
    matrix: &RatingMatrix,
    user: usize,
    n: usize,
    exclude_rated: bool,
    ranking: MfRanking,
) -> Result<Vec<ScoredSong>> {
    if user >= model.n_users {
        return Err(Error::UnknownUser(format!("#{user}")));
    }
    let by_cosine = ranking == MfRanking::Cosine && norm(model.user_vector(user)) > 0.0;
    let scored = (0..model.n_songs)
        .filter(|&s| !exclude_rated || user >= matrix.n_users() || matrix.rating(user, s).is_none())
        .filter_map(|s| {
            let score = if by_cosine {
                cosine(model.user_vector(user), model.item_vector(s))?
            } else {
                model
                    .predict_unclamped(user, s)
                    .clamp(MIN_RATING as f64, MAX_RATING as f64)
            };
            Some(ScoredSong { song: s, score })
        })
        .collect();
    Ok(top_n(scored, n))
}
