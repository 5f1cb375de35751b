//! Onboarding users who are not in the training corpus.
//!
//! Seed songs give a genre affinity; each genre contributes its most
//! listened-to corpus songs, rated `1 + 4·weight(g)/max_weight`. The row
//! is appended to the rating matrix as a synthetic user.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, SongAttributes};
use crate::error::{Error, Result};
use crate::matrix::{RatingMatrix, MAX_RATING, SYNTHETIC_PREFIX};

pub const DEFAULT_REPRESENTATIVES: usize = 10;
pub const UNKNOWN_GENRE: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSong {
    pub attributes: SongAttributes,
    /// Set when the seed is known to be a corpus song.
    pub in_corpus_song_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedProfile {
    pub external_user_id: String,
    pub seeds: Vec<SeedSong>,
}

#[derive(Deserialize)]
struct SeedRow {
    #[serde(flatten)]
    attributes: SongAttributes,
    #[serde(default)]
    in_corpus_song_id: Option<String>,
}

/// Parses a seed file: catalog columns plus optional `in_corpus_song_id`.
pub fn parse_seed_csv(reader: impl Read) -> Result<Vec<SeedSong>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in crate::catalog::CATALOG_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::InvalidCatalog {
                row: 0,
                reason: format!("missing column `{col}`"),
            });
        }
    }
    let mut seeds = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let parsed: SeedRow = rec.deserialize(Some(&headers)).map_err(|e| Error::InvalidCatalog {
            row,
            reason: e.to_string(),
        })?;
        let attributes = parsed
            .attributes
            .normalized()
            .map_err(|reason| Error::InvalidCatalog { row, reason })?;
        seeds.push(SeedSong {
            attributes,
            in_corpus_song_id: parsed.in_corpus_song_id.filter(|s| !s.is_empty()),
        });
    }
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    Ok(seeds)
}

/// Genre → share of seed songs; shares sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreAffinity(pub BTreeMap<String, f64>);

impl GenreAffinity {
    pub fn max_weight(&self) -> f64 {
        self.0.values().copied().fold(0.0, f64::max)
    }
}

fn genre_label(genre: &str) -> &str {
    let g = genre.trim();
    if g.is_empty() {
        UNKNOWN_GENRE
    } else {
        g
    }
}

pub fn genre_affinity(profile: &SeedProfile) -> Result<GenreAffinity> {
    if profile.seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for seed in &profile.seeds {
        *counts
            .entry(genre_label(&seed.attributes.genre).to_string())
            .or_insert(0) += 1;
    }
    let total = profile.seeds.len() as f64;
    Ok(GenreAffinity(
        counts
            .into_iter()
            .map(|(g, c)| (g, c as f64 / total))
            .collect(),
    ))
}

/// The `m` corpus songs of `genre` with the most listeners; ties go to the
/// song closest to the genre's attribute centroid, then to the lower index.
pub fn representative_songs(
    matrix: &RatingMatrix,
    catalog: &Catalog,
    genre: &str,
    m: usize,
) -> Vec<String> {
    let max_duration = catalog.max_duration();
    let members: Vec<(usize, [f64; 5])> = (0..matrix.n_songs())
        .filter_map(|s| {
            let attrs = catalog.get(matrix.song_id(s))?;
            (genre_label(&attrs.genre) == genre).then(|| (s, attrs.content_vector(max_duration)))
        })
        .collect();
    if members.is_empty() {
        log::warn!("genre `{genre}` has no corpus songs");
        return Vec::new();
    }
    let mut centroid = [0.0; 5];
    for (_, v) in &members {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += x / members.len() as f64;
        }
    }
    let listeners = matrix.listener_counts();
    let mut ranked: Vec<(usize, usize, f64)> = members
        .iter()
        .map(|(s, v)| {
            let dist = v
                .iter()
                .zip(&centroid)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            (*s, listeners[*s], dist)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(m)
        .map(|(s, _, _)| matrix.song_id(s).to_string())
        .collect()
}

/// Pseudo-ratings for a new user.
///
/// Representatives of genre `g` get `1 + 4·weight(g)/max_weight`; seeds
/// that are corpus songs get 5.0 directly.
pub fn synthesize_user_row(
    affinity: &GenreAffinity,
    representatives: &BTreeMap<String, Vec<String>>,
    matrix: &RatingMatrix,
    in_corpus: &[String],
) -> Result<Vec<(u32, f32)>> {
    let max_w = affinity.max_weight();
    let mut row: BTreeMap<u32, f32> = BTreeMap::new();
    for (genre, songs) in representatives {
        let Some(&w) = affinity.0.get(genre) else { continue };
        if max_w <= 0.0 {
            continue;
        }
        let rating = (1.0 + 4.0 * (w / max_w)) as f32;
        for sid in songs {
            if let Some(s) = matrix.song_index(sid) {
                let slot = row.entry(s as u32).or_insert(rating);
                *slot = slot.max(rating);
            }
        }
    }
    for sid in in_corpus {
        if let Some(s) = matrix.song_index(sid) {
            row.insert(s as u32, MAX_RATING);
        }
    }
    if row.is_empty() {
        return Err(Error::NoRepresentatives);
    }
    Ok(row.into_iter().map(|(s, r)| (s, r.clamp(1.0, 5.0))).collect())
}

#[derive(Debug, Clone)]
pub struct Onboarded {
    pub matrix: RatingMatrix,
    pub user: usize,
    pub user_id: String,
    pub affinity: GenreAffinity,
}

pub fn synthetic_user_id(external_id: &str) -> String {
    format!("{SYNTHETIC_PREFIX}{external_id}")
}

/// Runs the whole cold-start pipeline and returns the extended matrix.
pub fn onboard(
    matrix: &RatingMatrix,
    catalog: &Catalog,
    profile: &SeedProfile,
    per_genre: usize,
) -> Result<Onboarded> {
    let affinity = genre_affinity(profile)?;
    let representatives: BTreeMap<String, Vec<String>> = affinity
        .0
        .keys()
        .map(|g| (g.clone(), representative_songs(matrix, catalog, g, per_genre)))
        .collect();
    let in_corpus: Vec<String> = profile
        .seeds
        .iter()
        .filter_map(|s| s.in_corpus_song_id.clone())
        .collect();
    let row = synthesize_user_row(&affinity, &representatives, matrix, &in_corpus)?;
    let user_id = synthetic_user_id(&profile.external_user_id);
    let matrix = matrix.with_user(&user_id, row)?;
    let user = matrix.user_index(&user_id).expect("user just inserted");
    Ok(Onboarded {
        matrix,
        user,
        user_id,
        affinity,
    })
}
