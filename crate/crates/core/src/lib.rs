//! Explainable song recommendation engine.
//!
//! Listening logs become implicit 1-5 ratings ([`ingest`]); user-user
//! collaborative filtering ([`cf`]) and a latent factor model ([`mf`])
//! rank songs; [`explain`] ties picks back to neighbors and audio
//! attributes; [`selector`] turns rankings into mood-filtered playlists;
//! [`metrics`] evaluates it all.

pub mod catalog;
pub mod cf;
pub mod coldstart;
pub mod error;
pub mod explain;
pub mod ingest;
pub mod matrix;
pub mod metrics;
pub mod mf;
pub mod ranking;
pub mod selector;
pub mod snapshot;

pub use catalog::{Catalog, SongAttributes};
pub use error::{Error, Result};
pub use matrix::RatingMatrix;
pub use ranking::ScoredSong;
pub use snapshot::{Algorithm, ModelSnapshot};
