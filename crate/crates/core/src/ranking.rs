use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSong {
    pub song: usize,
    pub score: f64,
}

/// Descending score, ties broken by ascending song index.
pub fn by_score_desc(a: &ScoredSong, b: &ScoredSong) -> Ordering {
    b.score.total_cmp(&a.score).then(a.song.cmp(&b.song))
}

/// Sorts by [`by_score_desc`] and keeps the first `n`.
pub fn top_n(mut scored: Vec<ScoredSong>, n: usize) -> Vec<ScoredSong> {
    scored.sort_by(by_score_desc);
    scored.truncate(n);
    scored
}
