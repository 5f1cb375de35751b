//! Listening-log ingestion and implicit rating construction.
//!
//! A user's affinity for a song is the recency-weighted sum, over calendar
//! months, of monthly play count times an inverse "listener frequency" for
//! that song in that month:
//!
//! ```text
//! raw(u, s) = Σ_m  w(k_m) · TF(u, s, m) · max(0, ln(N / (1 + df(s, m))))
//! ```
//!
//! where `k_m` counts months back from the latest month and `w(k) = (W - k) / W`
//! inside a `W`-month window. Raw scores are then min-max scaled per user
//! onto `[1, 5]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{DateTime, Datelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RatingMatrix;

pub const DEFAULT_WINDOW_MONTHS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlayEvent {
    pub user_id: String,
    pub song_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MonthIndex {
    pub year: i32,
    pub month: u32,
}

impl MonthIndex {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidConfig(format!("month {month} outside 1..=12")));
        }
        Ok(MonthIndex { year, month })
    }

    /// Whole months from `self` forward to `later` (negative if `later` is earlier).
    pub fn months_until(self, later: MonthIndex) -> i64 {
        (later.year as i64 - self.year as i64) * 12 + (later.month as i64 - self.month as i64)
    }
}

impl fmt::Display for MonthIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthIndex {
    type Err = Error;

    /// Parses `YYYY-MM`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("expected YYYY-MM, got `{s}`"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        MonthIndex::new(year, month)
    }
}

/// Events parsed from a log along with the lines that were skipped.
#[derive(Debug, Default)]
pub struct ParsedEvents {
    pub events: Vec<PlayEvent>,
    pub warnings: Vec<Error>,
}

/// Parses a tab-separated `user_id, unix_timestamp, song_id[, extra…]` log.
///
/// Blank lines and `#` comments are skipped. Malformed lines are collected
/// as warnings unless `strict` is set, in which case the first one is
/// returned as the error.
pub fn parse_events(input: impl BufRead, strict: bool) -> Result<ParsedEvents> {
    let mut out = ParsedEvents::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_line(trimmed) {
            Ok(ev) => out.events.push(ev),
            Err(reason) => {
                let err = Error::MalformedLine { line: lineno, reason };
                if strict {
                    return Err(err);
                }
                log::warn!("{err}");
                out.warnings.push(err);
            }
        }
    }
    if out.events.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

fn parse_line(line: &str) -> std::result::Result<PlayEvent, String> {
    let mut cols = line.split('\t');
    let (Some(user), Some(ts), Some(song)) = (cols.next(), cols.next(), cols.next()) else {
        return Err("expected at least 3 tab-separated columns".into());
    };
    let timestamp: i64 = ts
        .trim()
        .parse()
        .map_err(|_| format!("timestamp `{ts}` is not an integer"))?;
    if timestamp <= 0 {
        return Err(format!("timestamp {timestamp} must be positive"));
    }
    let (user, song) = (user.trim(), song.trim());
    if user.is_empty() || song.is_empty() {
        return Err("empty user or song id".into());
    }
    Ok(PlayEvent {
        user_id: user.to_string(),
        song_id: song.to_string(),
        timestamp,
    })
}

/// UTC calendar month containing a Unix timestamp.
pub fn month_of(timestamp: i64) -> MonthIndex {
    let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp within chrono's range");
    MonthIndex {
        year: dt.year(),
        month: dt.month(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TfKey {
    pub user_id: String,
    pub song_id: String,
    pub month: MonthIndex,
}

/// Play counts per (user, song, month).
pub fn monthly_tf(events: &[PlayEvent]) -> BTreeMap<TfKey, u32> {
    let mut tf = BTreeMap::new();
    for ev in events {
        *tf.entry(TfKey {
            user_id: ev.user_id.clone(),
            song_id: ev.song_id.clone(),
            month: month_of(ev.timestamp),
        })
        .or_insert(0) += 1;
    }
    tf
}

/// `ln(n_users / (1 + df))`, unclamped.
pub fn idf(n_users: usize, df: usize) -> f64 {
    (n_users as f64 / (1.0 + df as f64)).ln()
}

/// Linear decay `(window - k) / window`, zero outside the window.
pub fn recency_weight(months_before_latest: u32, window: u32) -> f64 {
    if months_before_latest >= window {
        0.0
    } else {
        (window - months_before_latest) as f64 / window as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionScore {
    pub user_id: String,
    pub song_id: String,
    pub raw_score: f64,
}

/// Recency-weighted TF×IDF per (user, song), sorted by user then song.
///
/// Only pairs with at least one play inside the window are emitted. Pairs
/// whose in-window plays all carry zero IDF are emitted with score 0.
pub fn build_raw_scores(
    tf: &BTreeMap<TfKey, u32>,
    n_users: usize,
    latest_month: MonthIndex,
    window: u32,
) -> Result<Vec<InteractionScore>> {
    let mut df: HashMap<(&str, MonthIndex), usize> = HashMap::new();
    for key in tf.keys() {
        *df.entry((key.song_id.as_str(), key.month)).or_insert(0) += 1;
    }

    let mut scores: Vec<InteractionScore> = Vec::new();
    let mut current: Option<(&str, &str, f64, bool)> = None;
    for (key, &count) in tf {
        let back = key.month.months_until(latest_month);
        if back < 0 {
            return Err(Error::InvalidConfig(format!(
                "month {} is after the latest month {latest_month}",
                key.month
            )));
        }
        let in_window = back < window as i64;
        let contribution = if in_window {
            let w = recency_weight(back as u32, window);
            let idf = idf(n_users, df[&(key.song_id.as_str(), key.month)]).max(0.0);
            w * count as f64 * idf
        } else {
            0.0
        };
        match &mut current {
            Some((u, s, total, any)) if *u == key.user_id && *s == key.song_id => {
                *total += contribution;
                *any |= in_window;
            }
            _ => {
                if let Some((u, s, total, true)) = current.take() {
                    scores.push(score(u, s, total));
                }
                current = Some((&key.user_id, &key.song_id, contribution, in_window));
            }
        }
    }
    if let Some((u, s, total, true)) = current {
        scores.push(score(u, s, total));
    }
    Ok(scores)
}

fn score(user: &str, song: &str, raw: f64) -> InteractionScore {
    InteractionScore {
        user_id: user.to_string(),
        song_id: song.to_string(),
        raw_score: raw,
    }
}

/// Per-user min-max scaling of raw scores onto `[1, 5]`.
#[derive(Debug)]
pub struct ScaledRatings {
    pub matrix: RatingMatrix,
    /// Users whose raw scores were all zero.
    pub dropped_users: Vec<String>,
}

/// Maps each user's raw scores linearly onto `[1, 5]`; a user whose scores
/// are all equal gets 3.0 everywhere. Users and songs are ordered by id.
pub fn scale_to_ratings(scores: &[InteractionScore]) -> Result<ScaledRatings> {
    let mut by_user: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for sc in scores {
        if !(sc.raw_score.is_finite() && sc.raw_score >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "raw score {} for ({}, {}) is not a non-negative number",
                sc.raw_score, sc.user_id, sc.song_id
            )));
        }
        by_user
            .entry(&sc.user_id)
            .or_default()
            .push((&sc.song_id, sc.raw_score));
    }

    let mut dropped_users = Vec::new();
    by_user.retain(|&u, row| {
        let keep = row.iter().any(|&(_, x)| x > 0.0);
        if !keep {
            log::warn!("user `{u}` has no positive interaction score; dropped");
            dropped_users.push(u.to_string());
        }
        keep
    });

    let songs: Vec<String> = by_user
        .values()
        .flatten()
        .map(|&(s, _)| s)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    let song_index: HashMap<&str, u32> = songs
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();

    let users: Vec<String> = by_user.keys().map(|u| u.to_string()).collect();
    let rows: Vec<Vec<(u32, f32)>> = by_user
        .par_iter()
        .map(|(_, row)| {
            let (lo, hi) = row
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, x)| {
                    (lo.min(x), hi.max(x))
                });
            let mut out: Vec<(u32, f32)> = row
                .iter()
                .map(|&(s, x)| {
                    let r = if hi > lo { 1.0 + 4.0 * (x - lo) / (hi - lo) } else { 3.0 };
                    (song_index[s], (r as f32).clamp(1.0, 5.0))
                })
                .collect();
            out.sort_by_key(|&(s, _)| s);
            out.dedup_by_key(|&mut (s, _)| s);
            out
        })
        .collect();

    Ok(ScaledRatings {
        matrix: RatingMatrix::from_rows(users, songs, rows)?,
        dropped_users,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingConfig {
    pub window_months: u32,
    /// Events before this month are ignored.
    pub first_month: Option<MonthIndex>,
    /// Events after this month are ignored; also the recency anchor when set.
    pub last_month: Option<MonthIndex>,
}

impl Default for RatingConfig {
    fn default() -> Self {
        RatingConfig {
            window_months: DEFAULT_WINDOW_MONTHS,
            first_month: None,
            last_month: None,
        }
    }
}

/// Full pipeline from parsed events to a scaled rating matrix.
pub fn build_ratings(events: &[PlayEvent], config: &RatingConfig) -> Result<ScaledRatings> {
    if config.window_months == 0 {
        return Err(Error::InvalidConfig("window_months must be at least 1".into()));
    }
    let in_range: Vec<PlayEvent> = events
        .iter()
        .filter(|ev| {
            let m = month_of(ev.timestamp);
            config.first_month.is_none_or(|f| m >= f) && config.last_month.is_none_or(|l| m <= l)
        })
        .cloned()
        .collect();
    if in_range.is_empty() {
        return Err(Error::EmptyInput);
    }
    let tf = monthly_tf(&in_range);
    let n_users = tf.keys().map(|k| k.user_id.as_str()).collect::<BTreeSet<_>>().len();
    let latest = config
        .last_month
        .unwrap_or_else(|| tf.keys().map(|k| k.month).max().expect("non-empty"));
    let scores = build_raw_scores(&tf, n_users, latest, config.window_months)?;
    scale_to_ratings(&scores)
}
