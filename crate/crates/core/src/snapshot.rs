//! Immutable trained state served to every request, and its persistence.
//!
//! Snapshot files are `"XPLS"`, a little-endian `u16` format version, then
//! the snapshot as JSON.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::Catalog;
use crate::cf::{self, CfConfig, NeighborIndex, NeighborSet};
use crate::coldstart::{self, SeedProfile, DEFAULT_REPRESENTATIVES};
use crate::error::{Error, Result};
use crate::explain::{self, Explanation, LatentMapper, NeighborGraph, DEFAULT_RIDGE};
use crate::matrix::RatingMatrix;
use crate::mf::{self, FactorModel, MfConfig, MfRanking};
use crate::ranking::ScoredSong;
use crate::selector::{CuratedPlaylist, PlaylistName};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"XPLS";
pub const SNAPSHOT_FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Cf,
    Mf,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Cf => "cf",
            Algorithm::Mf => "mf",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cf" => Ok(Algorithm::Cf),
            "mf" => Ok(Algorithm::Mf),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm `{s}` (expected cf or mf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotConfig {
    pub cf: CfConfig,
    /// `None` skips matrix factorization.
    pub mf: Option<MfConfig>,
    pub mf_ranking: MfRanking,
    pub ridge: f64,
    pub serving: Algorithm,
    pub precompute_neighbors: bool,
    pub representatives_per_genre: usize,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        SnapshotConfig {
            cf: CfConfig::default(),
            mf: Some(MfConfig::default()),
            mf_ranking: MfRanking::Cosine,
            ridge: DEFAULT_RIDGE,
            serving: Algorithm::Cf,
            precompute_neighbors: true,
            representatives_per_genre: DEFAULT_REPRESENTATIVES,
        }
    }
}

impl SnapshotConfig {
    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMetadata {
    pub format_version: u16,
    pub created_unix: i64,
    pub config_hash: String,
    pub synthetic_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub config: SnapshotConfig,
    pub matrix: RatingMatrix,
    pub neighbor_index: Option<NeighborIndex>,
    pub factors: Option<FactorModel>,
    pub mapper: Option<LatentMapper>,
    pub catalog: Catalog,
    pub playlists: Vec<CuratedPlaylist>,
    pub meta: BuildMetadata,
}

/// Explanation for one recommended song.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationPayload {
    pub user_id: String,
    pub song_id: String,
    pub algorithm: Algorithm,
    pub explanation: Explanation,
    pub graph: Option<NeighborGraph>,
}

fn now_unix() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

impl ModelSnapshot {
    /// Trains every configured component over `matrix`.
    pub fn build(
        matrix: RatingMatrix,
        catalog: Catalog,
        playlists: Vec<CuratedPlaylist>,
        config: SnapshotConfig,
    ) -> Result<Self> {
        config.cf.validate()?;
        if config.serving == Algorithm::Mf && config.mf.is_none() {
            return Err(Error::InvalidConfig("MF serving requires an MF configuration".into()));
        }
        let factors = match &config.mf {
            Some(mf_config) => Some(mf::train_mf(&matrix, mf_config)?),
            None => None,
        };
        let mapper = factors.as_ref().and_then(|model| {
            match explain::fit_latent_mappers(model, &matrix, &catalog, config.ridge) {
                Ok(fitted) => Some(fitted.mapper),
                Err(e) => {
                    log::warn!("feature explanations disabled: {e}");
                    None
                }
            }
        });
        let neighbor_index = config
            .precompute_neighbors
            .then(|| NeighborIndex::build(&matrix, &config.cf));
        let meta = BuildMetadata {
            format_version: SNAPSHOT_FORMAT_VERSION,
            created_unix: now_unix(),
            config_hash: config.hash(),
            synthetic_users: (0..matrix.n_users()).filter(|&u| matrix.is_synthetic(u)).count(),
        };
        Ok(ModelSnapshot {
            config,
            matrix,
            neighbor_index,
            factors,
            mapper,
            catalog,
            playlists,
            meta,
        })
    }

    pub fn playlist(&self, name: PlaylistName) -> Option<&CuratedPlaylist> {
        self.playlists.iter().find(|p| p.name == name)
    }

    /// Longest duration across the catalog and curated playlists.
    pub fn max_duration(&self) -> f64 {
        self.playlists
            .iter()
            .flat_map(|p| &p.songs)
            .map(|s| s.duration_minutes)
            .fold(self.catalog.max_duration(), f64::max)
    }

    pub fn user(&self, user_id: &str) -> Result<usize> {
        self.matrix
            .user_index(user_id)
            .ok_or_else(|| Error::UnknownUser(user_id.to_string()))
    }

    pub fn song(&self, song_id: &str) -> Result<usize> {
        self.matrix
            .song_index(song_id)
            .ok_or_else(|| Error::UnknownSong(song_id.to_string()))
    }

    pub fn neighbors_of(&self, user: usize) -> Result<NeighborSet> {
        match &self.neighbor_index {
            Some(index) => index
                .get(user)
                .cloned()
                .ok_or_else(|| Error::EmptyNeighborhood(self.matrix.user_id(user).to_string())),
            None => cf::neighbors(&self.matrix, user, self.config.cf.k, &self.config.cf),
        }
    }

    fn factors(&self) -> Result<&FactorModel> {
        self.factors
            .as_ref()
            .ok_or(Error::MissingComponent("matrix factorization model"))
    }

    /// Unrated corpus songs ranked for `user_id`.
    pub fn recommend_corpus(&self, user_id: &str, n: usize, algorithm: Algorithm) -> Result<Vec<ScoredSong>> {
        let user = self.user(user_id)?;
        match algorithm {
            Algorithm::Cf => {
                let nbrs = self.neighbors_of(user)?;
                Ok(cf::recommend_with_neighbors(&self.matrix, &nbrs, n, true))
            }
            Algorithm::Mf => mf::recommend_mf(
                self.factors()?,
                &self.matrix,
                user,
                n,
                true,
                self.config.mf_ranking,
            ),
        }
    }

    pub fn explain(&self, user_id: &str, song_id: &str, algorithm: Algorithm) -> Result<ExplanationPayload> {
        let user = self.user(user_id)?;
        let song = self.song(song_id)?;
        let (explanation, graph) = match algorithm {
            Algorithm::Cf => {
                let nbrs = self.neighbors_of(user)?;
                let mut out = explain::neighbor_graph(&self.matrix, &nbrs, &[song], Some(&self.catalog))?;
                (out.explanations.remove(0), Some(out.graph))
            }
            Algorithm::Mf => {
                let mapper = self
                    .mapper
                    .as_ref()
                    .ok_or(Error::MissingComponent("latent attribute mapper"))?;
                let e = explain::explain_recommendation_feature(self.factors()?, mapper, &self.matrix, user, song, 3)?;
                (e, None)
            }
        };
        Ok(ExplanationPayload {
            user_id: user_id.to_string(),
            song_id: song_id.to_string(),
            algorithm,
            explanation,
            graph,
        })
    }

    /// New snapshot with a synthetic user built from seed songs. The
    /// neighbor index is rebuilt; MF item factors stay fixed and the new
    /// user's factors are solved against them.
    pub fn with_cold_start(&self, profile: &SeedProfile) -> Result<(ModelSnapshot, String)> {
        let onboarded = coldstart::onboard(
            &self.matrix,
            &self.catalog,
            profile,
            self.config.representatives_per_genre,
        )?;
        let mut next = self.clone();
        next.matrix = onboarded.matrix;
        if let Some(model) = &mut next.factors {
            let reg = self.config.mf.as_ref().map_or(0.0, |c| c.regularization);
            let p = model.solve_user_factors(next.matrix.row(onboarded.user), reg)?;
            if onboarded.user < model.n_users {
                model.user_vector_mut(onboarded.user).copy_from_slice(&p);
            } else {
                model.user_factors.extend(p);
                model.n_users += 1;
            }
        }
        if next.config.precompute_neighbors {
            next.neighbor_index = Some(NeighborIndex::build(&next.matrix, &next.config.cf));
        }
        next.meta.created_unix = now_unix();
        next.meta.synthetic_users = (0..next.matrix.n_users())
            .filter(|&u| next.matrix.is_synthetic(u))
            .count();
        Ok((next, onboarded.user_id))
    }

    fn check_consistency(&self) -> Result<()> {
        let corrupt = |what: &str| Err(Error::CorruptFile(format!("inconsistent snapshot: {what}")));
        if let Some(f) = &self.factors {
            if f.n_users != self.matrix.n_users()
                || f.n_songs != self.matrix.n_songs()
                || f.user_factors.len() != f.n_users * f.dims
                || f.item_factors.len() != f.n_songs * f.dims
            {
                return corrupt("factor shapes do not match the rating matrix");
            }
        }
        if let Some(idx) = &self.neighbor_index {
            if idx.len() != self.matrix.n_users() {
                return corrupt("neighbor index size does not match the rating matrix");
            }
        }
        if let (Some(m), Some(f)) = (&self.mapper, &self.factors) {
            if m.dimensions.len() != f.dims {
                return corrupt("mapper dimensions do not match the factor model");
            }
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_FORMAT_VERSION.to_le_bytes())?;
        serde_json::to_writer(&mut *w, self)?;
        Ok(())
    }

    /// Reads a snapshot; with `expected_hash` set, a different config hash is refused.
    pub fn read_from(r: &mut impl Read, expected_hash: Option<&str>) -> Result<Self> {
        let mut header = [0u8; 6];
        r.read_exact(&mut header).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::CorruptFile("snapshot header truncated".into()),
            _ => Error::Io(e),
        })?;
        if &header[..4] != SNAPSHOT_MAGIC {
            return Err(Error::VersionMismatch {
                expected: format!("XPLS v{SNAPSHOT_FORMAT_VERSION}"),
                found: format!("magic {:?}", String::from_utf8_lossy(&header[..4])),
            });
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != SNAPSHOT_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: format!("XPLS v{SNAPSHOT_FORMAT_VERSION}"),
                found: format!("XPLS v{version}"),
            });
        }
        let snapshot: ModelSnapshot =
            serde_json::from_reader(r).map_err(|e| Error::CorruptFile(e.to_string()))?;
        snapshot.check_consistency()?;
        if let Some(expected) = expected_hash {
            if snapshot.meta.config_hash != expected {
                return Err(Error::ConfigHashMismatch {
                    expected: expected.to_string(),
                    found: snapshot.meta.config_hash.clone(),
                });
            }
        }
        Ok(snapshot)
    }
}

pub fn save_snapshot(snapshot: &ModelSnapshot, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    snapshot.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_snapshot(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<ModelSnapshot> {
    let mut r = BufReader::new(File::open(path)?);
    ModelSnapshot::read_from(&mut r, expected_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::SongAttributes;

    fn fixture() -> ModelSnapshot {
        let genres = ["rock", "jazz"];
        let mut triplets = Vec::new();
        for u in 0..6 {
            for s in 0..8 {
                if (u + s) % 3 != 0 {
                    let r = 1.0 + ((u * 7 + s * 3) % 5) as f32;
                    triplets.push((format!("u{u}"), format!("s{s}"), r));
                }
            }
        }
        let matrix = RatingMatrix::from_triplets(triplets).unwrap();
        let catalog = Catalog::new(
            (0..8)
                .map(|s| SongAttributes {
                    song_id: format!("s{s}"),
                    title: format!("Song {s}"),
                    artist: "A".into(),
                    genre: genres[s % 2].into(),
                    danceability: (s as f64 * 0.13) % 1.0,
                    energy: (s as f64 * 0.29) % 1.0,
                    instrumentalness: (s as f64 * 0.07) % 1.0,
                    liveness: (s as f64 * 0.41) % 1.0,
                    duration_minutes: 2.0 + s as f64 * 0.5,
                })
                .collect(),
        )
        .unwrap();
        let config = SnapshotConfig {
            mf: Some(MfConfig { dims: 3, epochs: 30, ..MfConfig::default() }),
            ..SnapshotConfig::default()
        };
        ModelSnapshot::build(matrix, catalog, Vec::new(), config).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let snap = fixture();
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        let back = ModelSnapshot::read_from(&mut buf.as_slice(), None).unwrap();
        assert_eq!(snap, back);
        for u in snap.matrix.users() {
            for alg in [Algorithm::Cf, Algorithm::Mf] {
                assert_eq!(
                    snap.recommend_corpus(u, 10, alg).ok(),
                    back.recommend_corpus(u, 10, alg).ok()
                );
            }
        }
    }

    #[test]
    fn older_version_names_both_versions() {
        let mut buf = Vec::new();
        fixture().write_to(&mut buf).unwrap();
        buf[4..6].copy_from_slice(&0u16.to_le_bytes());
        let err = ModelSnapshot::read_from(&mut buf.as_slice(), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("v1") && msg.contains("v0"), "{msg}");
    }

    #[test]
    fn strict_hash_check() {
        let snap = fixture();
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        assert!(ModelSnapshot::read_from(&mut buf.as_slice(), Some(&snap.config.hash())).is_ok());
        assert!(matches!(
            ModelSnapshot::read_from(&mut buf.as_slice(), Some("deadbeef")),
            Err(Error::ConfigHashMismatch { .. })
        ));
    }

    #[test]
    fn truncated_snapshot_is_corrupt() {
        let mut buf = Vec::new();
        fixture().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(matches!(
            ModelSnapshot::read_from(&mut buf.as_slice(), None),
            Err(Error::CorruptFile(_))
        ));
    }

    #[test]
    fn explanations_by_algorithm() {
        let snap = fixture();
        let recs = snap.recommend_corpus("u1", 3, Algorithm::Cf).unwrap();
        let sid = snap.matrix.song_id(recs[0].song).to_string();
        let cf = snap.explain("u1", &sid, Algorithm::Cf).unwrap();
        assert!(cf.graph.as_ref().unwrap().nodes.len() >= 2);
        assert!(matches!(cf.explanation, Explanation::Neighbor { .. }));
        let mf = snap.explain("u1", &sid, Algorithm::Mf).unwrap();
        match mf.explanation {
            Explanation::Feature { attributes, .. } => assert!(!attributes.is_empty()),
            other => panic!("{other:?}"),
        }
        assert!(matches!(snap.explain("nobody", &sid, Algorithm::Cf), Err(Error::UnknownUser(_))));
    }

    #[test]
    fn config_hash_is_stable() {
        assert_eq!(SnapshotConfig::default().hash(), SnapshotConfig::default().hash());
        let other = SnapshotConfig { precompute_neighbors: false, ..SnapshotConfig::default() };
        assert_ne!(SnapshotConfig::default().hash(), other.hash());
    }
}
