//! Song catalog with interpretable audio attributes.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the interpretable attributes, in feature-vector order.
pub const ATTRIBUTE_NAMES: [&str; 5] = [
    "danceability",
    "energy",
    "instrumentalness",
    "liveness",
    "duration_minutes",
];

pub const CATALOG_HEADER: [&str; 9] = [
    "song_id",
    "title",
    "artist",
    "genre",
    "danceability",
    "energy",
    "instrumentalness",
    "liveness",
    "duration_minutes",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongAttributes {
    pub song_id: String,
    pub title: String,
    pub artist: String,
    pub genre: String,
    pub danceability: f64,
    pub energy: f64,
    pub instrumentalness: f64,
    pub liveness: f64,
    pub duration_minutes: f64,
}

impl SongAttributes {
    /// Attribute values in [`ATTRIBUTE_NAMES`] order, duration in minutes.
    pub fn features(&self) -> [f64; 5] {
        [
            self.danceability,
            self.energy,
            self.instrumentalness,
            self.liveness,
            self.duration_minutes,
        ]
    }

    /// Feature vector with duration divided by `max_duration`.
    pub fn content_vector(&self, max_duration: f64) -> [f64; 5] {
        let mut v = self.features();
        v[4] = if max_duration > 0.0 { v[4] / max_duration } else { 0.0 };
        v
    }

    /// Clamps unit-interval features and checks the remaining invariants.
    pub fn normalized(mut self) -> std::result::Result<Self, String> {
        if self.song_id.trim().is_empty() {
            return Err("empty song_id".into());
        }
        for (name, v) in [
            ("danceability", &mut self.danceability),
            ("energy", &mut self.energy),
            ("instrumentalness", &mut self.instrumentalness),
            ("liveness", &mut self.liveness),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} is not a finite number"));
            }
            *v = v.clamp(0.0, 1.0);
        }
        if !(self.duration_minutes.is_finite() && self.duration_minutes > 0.0) {
            return Err(format!(
                "duration_minutes must be positive, got {}",
                self.duration_minutes
            ));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<SongAttributes>", into = "Vec<SongAttributes>")]
pub struct Catalog {
    songs: Vec<SongAttributes>,
    lookup: HashMap<String, usize>,
}

impl From<Vec<SongAttributes>> for Catalog {
    fn from(songs: Vec<SongAttributes>) -> Self {
        let lookup = songs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.song_id.clone(), i))
            .collect();
        Catalog { songs, lookup }
    }
}

impl From<Catalog> for Vec<SongAttributes> {
    fn from(c: Catalog) -> Self {
        c.songs
    }
}

impl Catalog {
    /// Builds a catalog, rejecting duplicate ids.
    pub fn new(songs: Vec<SongAttributes>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (row, s) in songs.iter().enumerate() {
            if seen.insert(s.song_id.as_str(), row).is_some() {
                return Err(Error::InvalidCatalog {
                    row: row + 1,
                    reason: format!("duplicate song_id `{}`", s.song_id),
                });
            }
        }
        Ok(songs.into())
    }

    pub fn get(&self, song_id: &str) -> Option<&SongAttributes> {
        self.lookup.get(song_id).map(|&i| &self.songs[i])
    }

    pub fn songs(&self) -> &[SongAttributes] {
        &self.songs
    }

    pub fn len(&self) -> usize {
        self.songs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.songs.is_empty()
    }

    pub fn max_duration(&self) -> f64 {
        self.songs
            .iter()
            .map(|s| s.duration_minutes)
            .fold(0.0, f64::max)
    }
}

/// Parses catalog CSV with the [`CATALOG_HEADER`] columns.
pub fn parse_catalog(reader: impl Read) -> Result<Catalog> {
    Catalog::new(parse_song_rows(reader)?)
}

pub fn read_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    parse_catalog(std::fs::File::open(path)?)
}

pub(crate) fn parse_song_rows(reader: impl Read) -> Result<Vec<SongAttributes>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(rdr.headers()?)?;
    let mut songs = Vec::new();
    for (i, rec) in rdr.deserialize::<SongAttributes>().enumerate() {
        let row = i + 1;
        let song = rec.map_err(|e| Error::InvalidCatalog {
            row,
            reason: e.to_string(),
        })?;
        songs.push(
            song.normalized()
                .map_err(|reason| Error::InvalidCatalog { row, reason })?,
        );
    }
    Ok(songs)
}

fn check_header(header: &csv::StringRecord) -> Result<()> {
    for col in CATALOG_HEADER {
        if !header.iter().any(|h| h == col) {
            return Err(Error::InvalidCatalog {
                row: 0,
                reason: format!("missing column `{col}`"),
            });
        }
    }
    Ok(())
}
