//! Service settings from `EXPLORE_*` environment variables, optionally
//! overridden by a TOML file.

use std::path::{Path, PathBuf};

use explore_core::selector::{CuratedPlaylist, PlaylistName};
use explore_core::snapshot::{self, ModelSnapshot, SnapshotConfig};
use explore_core::{catalog, matrix};
use serde::Deserialize;

use crate::error::StartupError;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_HOST: &str = "127.0.0.1";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Snapshot to load. When it does not exist yet and `matrix` is set,
    /// a snapshot is trained and written here.
    pub snapshot: Option<PathBuf>,
    pub host: Option<String>,
    pub port: Option<u16>,
    pub catalog: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub playlist_2022: Option<PathBuf>,
    pub playlist_all_time: Option<PathBuf>,
    /// Refuse snapshots built with a different configuration.
    pub config_hash: Option<String>,
}

impl ServiceConfig {
    pub fn from_env() -> Self {
        Self::from_vars(|k| std::env::var(k).ok())
    }

    pub fn from_vars(get: impl Fn(&str) -> Option<String>) -> Self {
        let path = |k: &str| get(k).filter(|v| !v.is_empty()).map(PathBuf::from);
        ServiceConfig {
            snapshot: path("EXPLORE_SNAPSHOT"),
            host: get("EXPLORE_HOST"),
            port: get("EXPLORE_PORT").and_then(|p| p.parse().ok()),
            catalog: path("EXPLORE_CATALOG"),
            matrix: path("EXPLORE_MATRIX"),
            playlist_2022: path("EXPLORE_PLAYLIST_2022"),
            playlist_all_time: path("EXPLORE_PLAYLIST_ALL_TIME"),
            config_hash: get("EXPLORE_CONFIG_HASH"),
        }
    }

    pub fn parse_toml(text: &str) -> Result<Self, StartupError> {
        toml::from_str(text).map_err(|e| StartupError::Config(e.to_string()))
    }

    /// Fields set in `other` win.
    pub fn overridden_by(self, other: ServiceConfig) -> Self {
        ServiceConfig {
            snapshot: other.snapshot.or(self.snapshot),
            host: other.host.or(self.host),
            port: other.port.or(self.port),
            catalog: other.catalog.or(self.catalog),
            matrix: other.matrix.or(self.matrix),
            playlist_2022: other.playlist_2022.or(self.playlist_2022),
            playlist_all_time: other.playlist_all_time.or(self.playlist_all_time),
            config_hash: other.config_hash.or(self.config_hash),
        }
    }

    /// Environment, then the file at `path` on top.
    pub fn load(path: Option<&Path>) -> Result<Self, StartupError> {
        let env = Self::from_env();
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| StartupError::Config(format!("{}: {e}", p.display())))?;
                Ok(env.overridden_by(Self::parse_toml(&text)?))
            }
            None => Ok(env),
        }
    }

    pub fn address(&self) -> String {
        format!(
            "{}:{}",
            self.host.as_deref().unwrap_or(DEFAULT_HOST),
            self.port.unwrap_or(DEFAULT_PORT)
        )
    }

    fn playlists(&self) -> Result<Vec<CuratedPlaylist>, StartupError> {
        let mut out = Vec::new();
        for (name, path) in [
            (PlaylistName::BestOf2022, &self.playlist_2022),
            (PlaylistName::BestOfAllTime, &self.playlist_all_time),
        ] {
            if let Some(p) = path {
                let file = std::fs::File::open(p).map_err(|e| StartupError::Config(format!("{}: {e}", p.display())))?;
                out.push(CuratedPlaylist::from_csv(name, file)?);
            }
        }
        Ok(out)
    }

    /// Loads the configured snapshot, or trains one from the matrix and
    /// catalog. Playlist paths replace the snapshot's curated playlists.
    pub fn open_snapshot(&self) -> Result<ModelSnapshot, StartupError> {
        let playlists = self.playlists()?;
        let existing = self.snapshot.as_ref().filter(|p| p.exists());
        let mut snap = match (existing, &self.matrix) {
            (Some(path), _) => {
                log::info!("loading snapshot {}", path.display());
                snapshot::load_snapshot(path, self.config_hash.as_deref())?
            }
            (None, Some(matrix_path)) => {
                let catalog_path = self
                    .catalog
                    .as_ref()
                    .ok_or_else(|| StartupError::Config("training a snapshot needs a catalog".into()))?;
                log::info!("training snapshot from {}", matrix_path.display());
                let m = matrix::read_matrix(matrix_path)?;
                let c = catalog::read_catalog(catalog_path)?;
                let snap = ModelSnapshot::build(m, c, playlists.clone(), SnapshotConfig::default())?;
                if let Some(out) = &self.snapshot {
                    snapshot::save_snapshot(&snap, out)?;
                    log::info!("wrote snapshot {}", out.display());
                }
                snap
            }
            (None, None) => {
                return Err(StartupError::Config(
                    "set EXPLORE_SNAPSHOT to an existing snapshot, or EXPLORE_MATRIX and EXPLORE_CATALOG".into(),
                ))
            }
        };
        for p in playlists {
            snap.playlists.retain(|q| q.name != p.name);
            snap.playlists.push(p);
        }
        Ok(snap)
    }
}
