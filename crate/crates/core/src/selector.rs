//! Final playlist assembly: source toggle, crosswalk onto curated lists,
//! and mood-range filtering.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::SongAttributes;
use crate::error::{Error, Result};
use crate::mf::cosine;
use crate::snapshot::{Algorithm, ModelSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// In-corpus recommendations.
    Nostalgic,
    BestOf2022,
    BestOfAllTime,
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "nostalgic" | "feeling_nostalgic" => Ok(Source::Nostalgic),
            "best_of_2022" => Ok(Source::BestOf2022),
            "best_of_all_time" | "best_of_all_times" => Ok(Source::BestOfAllTime),
            _ => Err(Error::InvalidConfig(format!(
                "unknown source `{s}` (expected nostalgic, best_of_2022 or best_of_all_time)"
            ))),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Nostalgic => "nostalgic",
            Source::BestOf2022 => "best_of_2022",
            Source::BestOfAllTime => "best_of_all_time",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlaylistName {
    BestOf2022,
    BestOfAllTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedPlaylist {
    pub name: PlaylistName,
    pub songs: Vec<SongAttributes>,
}

impl CuratedPlaylist {
    pub fn new(name: PlaylistName, songs: Vec<SongAttributes>) -> Result<Self> {
        if songs.is_empty() {
            return Err(Error::InvalidConfig(format!("curated playlist {name:?} is empty")));
        }
        let mut seen = HashSet::new();
        for s in &songs {
            if !seen.insert(s.song_id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "curated playlist {name:?} repeats song `{}`",
                    s.song_id
                )));
            }
        }
        Ok(CuratedPlaylist { name, songs })
    }

    pub fn from_csv(name: PlaylistName, reader: impl std::io::Read) -> Result<Self> {
        Self::new(name, crate::catalog::parse_song_rows(reader)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeRange {
    pub lo: f64,
    pub hi: f64,
}

impl AttributeRange {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Distance from `x` to the nearest bound, 0 inside.
    pub fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }

    /// Parses `lo,hi`.
    pub fn parse(attribute: &str, text: &str) -> Result<Self> {
        let bad = |reason: String| Error::InvalidRange {
            attribute: attribute.to_string(),
            reason,
        };
        let (lo, hi) = text
            .split_once(',')
            .ok_or_else(|| bad(format!("expected `lo,hi`, got `{text}`")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("`{s}` is not a number")))
        };
        Ok(AttributeRange {
            lo: parse(lo)?,
            hi: parse(hi)?,
        })
    }
}

/// Optional inclusive range per attribute.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoodFilter {
    pub danceability: Option<AttributeRange>,
    pub energy: Option<AttributeRange>,
    pub instrumentalness: Option<AttributeRange>,
    pub liveness: Option<AttributeRange>,
    pub duration_minutes: Option<AttributeRange>,
}

impl MoodFilter {
    pub fn ranges(&self) -> [(&'static str, Option<AttributeRange>); 5] {
        [
            ("danceability", self.danceability),
            ("energy", self.energy),
            ("instrumentalness", self.instrumentalness),
            ("liveness", self.liveness),
            ("duration_minutes", self.duration_minutes),
        ]
    }

    pub fn range_mut(&mut self, attribute: &str) -> Option<&mut Option<AttributeRange>> {
        match attribute {
            "danceability" => Some(&mut self.danceability),
            "energy" => Some(&mut self.energy),
            "instrumentalness" => Some(&mut self.instrumentalness),
            "liveness" => Some(&mut self.liveness),
            "duration_minutes" => Some(&mut self.duration_minutes),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, range) in self.ranges() {
            let Some(r) = range else { continue };
            let bad = |reason: &str| {
                Err(Error::InvalidRange {
                    attribute: name.to_string(),
                    reason: reason.to_string(),
                })
            };
            if r.lo > r.hi {
                return bad("lo must not exceed hi");
            }
            if name == "duration_minutes" {
                if r.lo < 0.0 {
                    return bad("duration bounds must be non-negative");
                }
            } else if r.lo < 0.0 || r.hi > 1.0 {
                return bad("bounds must lie within [0, 1]");
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.ranges().iter().all(|(_, r)| r.is_none())
    }

    pub fn passes(&self, song: &SongAttributes) -> bool {
        self.distance(song) == 0.0
    }

    /// Sum over set ranges of the distance to the nearest bound.
    pub fn distance(&self, song: &SongAttributes) -> f64 {
        self.ranges()
            .iter()
            .zip(song.features())
            .filter_map(|((_, r), x)| r.map(|r| r.distance(x)))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntrySource {
    Corpus,
    Crosswalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaylistEntry {
    pub rank: usize,
    #[serde(flatten)]
    pub song: SongAttributes,
    pub score: f64,
    pub source: EntrySource,
    /// Corpus song a crosswalk entry was mapped from.
    pub provenance: Option<String>,
    /// Content cosine between a crosswalk entry and its provenance.
    pub similarity: Option<f64>,
    /// Entry did not satisfy the mood filter and was used to fill the list.
    pub relaxed: bool,
    /// API path that explains this entry.
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedPlaylist {
    pub entries: Vec<PlaylistEntry>,
    pub warnings: Vec<String>,
}

impl RankedPlaylist {
    fn renumber(&mut self) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.rank = i + 1;
        }
    }

    pub fn song_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.song.song_id.as_str()).collect()
    }
}

/// Corpus recommendation with its catalog attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRec {
    pub song: SongAttributes,
    pub score: f64,
}

pub fn corpus_playlist(recs: &[CorpusRec]) -> RankedPlaylist {
    let mut out = RankedPlaylist {
        entries: recs
            .iter()
            .map(|r| PlaylistEntry {
                rank: 0,
                song: r.song.clone(),
                score: r.score,
                source: EntrySource::Corpus,
                provenance: None,
                similarity: None,
                relaxed: false,
                explanation: None,
            })
            .collect(),
        warnings: Vec::new(),
    };
    out.renumber();
    out
}

/// Cosine of two songs' content vectors, duration scaled by `max_duration`.
pub fn content_cosine(a: &SongAttributes, b: &SongAttributes, max_duration: f64) -> Option<f64> {
    cosine(&a.content_vector(max_duration), &b.content_vector(max_duration))
}

/// Greedy mapping of corpus recommendations onto a curated playlist.
///
/// Walks `recs` in rank order; each takes the most content-similar curated
/// song not yet used (ties to the earlier playlist position). Stops after
/// `n` entries or when either list runs out.
pub fn crosswalk(
    recs: &[CorpusRec],
    playlist: &CuratedPlaylist,
    n: usize,
    max_duration: f64,
) -> RankedPlaylist {
    let mut out = RankedPlaylist::default();
    if n > playlist.songs.len() {
        out.warnings.push(format!(
            "requested {n} songs but the curated playlist has only {}",
            playlist.songs.len()
        ));
    }
    let mut used = vec![false; playlist.songs.len()];
    for rec in recs {
        if out.entries.len() >= n {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, cand) in playlist.songs.iter().enumerate() {
            if used[i] {
                continue;
            }
            let sim = content_cosine(&rec.song, cand, max_duration).unwrap_or(f64::NEG_INFINITY);
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        let Some((i, sim)) = best else { break };
        used[i] = true;
        out.entries.push(PlaylistEntry {
            rank: 0,
            song: playlist.songs[i].clone(),
            score: rec.score,
            source: EntrySource::Crosswalk,
            provenance: Some(rec.song.song_id.clone()),
            similarity: sim.is_finite().then_some(sim),
            relaxed: false,
            explanation: None,
        });
    }
    out.renumber();
    out
}

/// Keeps entries that satisfy every set range, in order. If fewer than `n`
/// pass, the remaining slots go to the closest failing entries (smallest
/// summed distance to the bounds, ties in input order), marked relaxed.
pub fn mood_filter(playlist: RankedPlaylist, filter: &MoodFilter, n: usize) -> RankedPlaylist {
    let RankedPlaylist { entries, warnings } = playlist;
    let (mut passing, mut failing): (Vec<_>, Vec<_>) = (Vec::new(), Vec::new());
    for e in entries {
        let d = filter.distance(&e.song);
        if d == 0.0 {
            passing.push(e);
        } else {
            failing.push((d, e));
        }
    }
    passing.truncate(n);
    if passing.len() < n {
        failing.sort_by(|a, b| a.0.total_cmp(&b.0));
        let fill = n - passing.len();
        passing.extend(failing.into_iter().take(fill).map(|(_, mut e)| {
            e.relaxed = true;
            e
        }));
    }
    let mut out = RankedPlaylist {
        entries: passing,
        warnings,
    };
    out.renumber();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaylistRequest {
    pub source: Source,
    pub filter: MoodFilter,
    pub n: usize,
    pub algorithm: Option<Algorithm>,
}

impl Default for PlaylistRequest {
    fn default() -> Self {
        PlaylistRequest {
            source: Source::Nostalgic,
            filter: MoodFilter::default(),
            n: 10,
            algorithm: None,
        }
    }
}

fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub fn explanation_path(user_id: &str, song_id: &str, algorithm: Algorithm) -> String {
    format!(
        "/v1/users/{}/explanation?song={}&algorithm={}",
        encode_component(user_id),
        encode_component(song_id),
        algorithm
    )
}

/// Builds the playlist a user sees for one request.
pub fn assemble(snapshot: &ModelSnapshot, user_id: &str, request: &PlaylistRequest) -> Result<RankedPlaylist> {
    if request.n == 0 {
        return Err(Error::InvalidConfig("playlist length must be at least 1".into()));
    }
    request.filter.validate()?;
    let algorithm = request.algorithm.unwrap_or(snapshot.config.serving);
    let scored = snapshot.recommend_corpus(user_id, usize::MAX, algorithm)?;

    let catalog = &snapshot.catalog;
    let mut missing = 0usize;
    let recs: Vec<CorpusRec> = scored
        .iter()
        .filter_map(|r| {
            let sid = snapshot.matrix.song_id(r.song);
            let song = catalog.get(sid).cloned();
            if song.is_none() {
                missing += 1;
            }
            Some(CorpusRec { song: song?, score: r.score })
        })
        .collect();

    let mut playlist = match request.source {
        Source::Nostalgic => corpus_playlist(&recs),
        Source::BestOf2022 | Source::BestOfAllTime => {
            let name = if request.source == Source::BestOf2022 {
                PlaylistName::BestOf2022
            } else {
                PlaylistName::BestOfAllTime
            };
            let curated = snapshot
                .playlist(name)
                .ok_or(Error::MissingComponent("curated playlist for the requested source"))?;
            let mut p = crosswalk(&recs, curated, curated.songs.len(), snapshot.max_duration());
            if request.n > curated.songs.len() {
                p.warnings.push(format!(
                    "requested {} songs but the curated playlist has only {}",
                    request.n,
                    curated.songs.len()
                ));
            }
            p
        }
    };
    if missing > 0 {
        playlist
            .warnings
            .push(format!("{missing} recommended songs have no catalog entry and were skipped"));
    }
    let mut playlist = mood_filter(playlist, &request.filter, request.n);
    for e in &mut playlist.entries {
        let explained = e.provenance.as_deref().unwrap_or(&e.song.song_id);
        e.explanation = Some(explanation_path(user_id, explained, algorithm));
    }
    Ok(playlist)
}
