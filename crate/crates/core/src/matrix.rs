//! Sparse user×song rating matrix and its on-disk format.
//!
//! Rows are stored per user, sorted by song index, with `f32` ratings in
//! `[1, 5]`. The binary file layout is:
//!
//! ```text
//! "XPLM"  u16 version
//! u32 n_users  u32 n_songs  u64 nnz
//! n_users × (u32 len, UTF-8 bytes)      user ids
//! n_songs × (u32 len, UTF-8 bytes)      song ids
//! n_users × (u32 row_len, row_len × (u32 song, f32 rating))
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"XPLM";
pub const MATRIX_FORMAT_VERSION: u16 = 1;

pub const MIN_RATING: f32 = 1.0;
pub const MAX_RATING: f32 = 5.0;

/// Users whose id starts with this prefix were synthesized by cold start.
pub const SYNTHETIC_PREFIX: &str = "~cold:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawMatrix {
    users: Vec<String>,
    songs: Vec<String>,
    rows: Vec<Vec<(u32, f32)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct RatingMatrix {
    users: Vec<String>,
    songs: Vec<String>,
    rows: Vec<Vec<(u32, f32)>>,
    user_means: Vec<f64>,
    user_lookup: HashMap<String, usize>,
    song_lookup: HashMap<String, usize>,
}

impl PartialEq for RatingMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.users == other.users
            && self.songs == other.songs
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
            })
    }
}

impl TryFrom<RawMatrix> for RatingMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        RatingMatrix::from_rows(raw.users, raw.songs, raw.rows)
    }
}

impl From<RatingMatrix> for RawMatrix {
    fn from(m: RatingMatrix) -> Self {
        RawMatrix {
            users: m.users,
            songs: m.songs,
            rows: m.rows,
        }
    }
}

fn build_lookup(ids: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut lookup = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if id.is_empty() {
            return Err(Error::CorruptFile(format!("empty {what} id at index {i}")));
        }
        if lookup.insert(id.clone(), i).is_some() {
            return Err(Error::CorruptFile(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(lookup)
}

fn row_mean(row: &[(u32, f32)]) -> f64 {
    if row.is_empty() {
        return 0.0;
    }
    row.iter().map(|&(_, r)| r as f64).sum::<f64>() / row.len() as f64
}

impl RatingMatrix {
    /// Builds a matrix from per-user rows, checking every structural invariant.
    pub fn from_rows(
        users: Vec<String>,
        songs: Vec<String>,
        rows: Vec<Vec<(u32, f32)>>,
    ) -> Result<Self> {
        if rows.len() != users.len() {
            return Err(Error::CorruptFile(format!(
                "{} rows for {} users",
                rows.len(),
                users.len()
            )));
        }
        let user_lookup = build_lookup(&users, "user")?;
        let song_lookup = build_lookup(&songs, "song")?;
        for (u, row) in rows.iter().enumerate() {
            let mut prev: Option<u32> = None;
            for &(s, r) in row {
                if s as usize >= songs.len() {
                    return Err(Error::CorruptFile(format!(
                        "song index {s} out of range in row of `{}`",
                        users[u]
                    )));
                }
                if prev.is_some_and(|p| p >= s) {
                    return Err(Error::CorruptFile(format!(
                        "row of `{}` is unsorted or has a duplicate song",
                        users[u]
                    )));
                }
                if !(MIN_RATING..=MAX_RATING).contains(&r) {
                    return Err(Error::CorruptFile(format!(
                        "rating {r} outside [1, 5] in row of `{}`",
                        users[u]
                    )));
                }
                prev = Some(s);
            }
        }
        let user_means = rows.iter().map(|r| row_mean(r)).collect();
        Ok(RatingMatrix {
            users,
            songs,
            rows,
            user_means,
            user_lookup,
            song_lookup,
        })
    }

    /// Builds a matrix from `(user, song, rating)` triplets. Users and songs
    /// are indexed in order of first appearance.
    pub fn from_triplets<U, S>(triplets: impl IntoIterator<Item = (U, S, f32)>) -> Result<Self>
    where
        U: AsRef<str>,
        S: AsRef<str>,
    {
        let mut users = Vec::new();
        let mut songs = Vec::new();
        let mut user_lookup: HashMap<String, usize> = HashMap::new();
        let mut song_lookup: HashMap<String, usize> = HashMap::new();
        let mut rows: Vec<Vec<(u32, f32)>> = Vec::new();
        for (u, s, r) in triplets {
            let u = u.as_ref();
            let s = s.as_ref();
            let ui = *user_lookup.entry(u.to_string()).or_insert_with(|| {
                users.push(u.to_string());
                rows.push(Vec::new());
                users.len() - 1
            });
            let si = *song_lookup.entry(s.to_string()).or_insert_with(|| {
                songs.push(s.to_string());
                songs.len() - 1
            });
            rows[ui].push((si as u32, r));
        }
        for row in &mut rows {
            row.sort_by_key(|&(s, _)| s);
        }
        Self::from_rows(users, songs, rows)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_songs(&self) -> usize {
        self.songs.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn songs(&self) -> &[String] {
        &self.songs
    }

    pub fn user_id(&self, user: usize) -> &str {
        &self.users[user]
    }

    pub fn song_id(&self, song: usize) -> &str {
        &self.songs[song]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_lookup.get(id).copied()
    }

    pub fn song_index(&self, id: &str) -> Option<usize> {
        self.song_lookup.get(id).copied()
    }

    /// The user's ratings sorted by song index.
    pub fn row(&self, user: usize) -> &[(u32, f32)] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<(u32, f32)>] {
        &self.rows
    }

    pub fn rating(&self, user: usize, song: usize) -> Option<f32> {
        let row = &self.rows[user];
        row.binary_search_by_key(&(song as u32), |&(s, _)| s)
            .ok()
            .map(|i| row[i].1)
    }

    /// Mean of the user's stored ratings; 0 for an empty row.
    pub fn user_mean(&self, user: usize) -> f64 {
        self.user_means[user]
    }

    pub fn user_means(&self) -> &[f64] {
        &self.user_means
    }

    pub fn global_mean(&self) -> f64 {
        let nnz = self.nnz();
        if nnz == 0 {
            return 0.0;
        }
        self.rows
            .iter()
            .flatten()
            .map(|&(_, r)| r as f64)
            .sum::<f64>()
            / nnz as f64
    }

    /// Number of users with a stored rating for each song.
    pub fn listener_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.songs.len()];
        for &(s, _) in self.rows.iter().flatten() {
            counts[s as usize] += 1;
        }
        counts
    }

    /// Observed entries as `(user, song, rating)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(s, r)| (u, s as usize, r)))
    }

    pub fn is_synthetic(&self, user: usize) -> bool {
        self.users[user].starts_with(SYNTHETIC_PREFIX)
    }

    /// Returns a copy with the same user and song tables but different rows.
    pub fn with_rows(&self, rows: Vec<Vec<(u32, f32)>>) -> Result<Self> {
        Self::from_rows(self.users.clone(), self.songs.clone(), rows)
    }

    /// Returns a copy with one more user appended, or that user's row
    /// replaced when the id is already present.
    pub fn with_user(&self, id: &str, mut row: Vec<(u32, f32)>) -> Result<Self> {
        row.sort_by_key(|&(s, _)| s);
        let mut users = self.users.clone();
        let mut rows = self.rows.clone();
        match self.user_index(id) {
            Some(u) => rows[u] = row,
            None => {
                users.push(id.to_string());
                rows.push(row);
            }
        }
        Self::from_rows(users, self.songs.clone(), rows)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MATRIX_MAGIC)?;
        w.write_all(&MATRIX_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.users.len() as u32).to_le_bytes())?;
        w.write_all(&(self.songs.len() as u32).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        for id in self.users.iter().chain(&self.songs) {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for row in &self.rows {
            w.write_all(&(row.len() as u32).to_le_bytes())?;
            for &(s, r) in row {
                w.write_all(&s.to_le_bytes())?;
                w.write_all(&r.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MATRIX_MAGIC {
            return Err(Error::VersionMismatch {
                expected: format!("XPLM v{MATRIX_FORMAT_VERSION}"),
                found: format!("magic {:?}", String::from_utf8_lossy(&magic)),
            });
        }
        let version = read_u16(r)?;
        if version != MATRIX_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: format!("XPLM v{MATRIX_FORMAT_VERSION}"),
                found: format!("XPLM v{version}"),
            });
        }
        let n_users = read_u32(r)? as usize;
        let n_songs = read_u32(r)? as usize;
        let nnz = read_u64(r)?;
        let users = (0..n_users).map(|_| read_id(r)).collect::<Result<Vec<_>>>()?;
        let songs = (0..n_songs).map(|_| read_id(r)).collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::with_capacity(n_users);
        let mut seen = 0u64;
        for _ in 0..n_users {
            let len = read_u32(r)? as usize;
            seen += len as u64;
            if seen > nnz {
                return Err(Error::CorruptFile("more entries than the header declares".into()));
            }
            let mut row = Vec::with_capacity(len);
            for _ in 0..len {
                let s = read_u32(r)?;
                let rating = f32::from_le_bytes(read_array(r)?);
                row.push((s, rating));
            }
            rows.push(row);
        }
        if seen != nnz {
            return Err(Error::CorruptFile(format!(
                "header declares {nnz} entries, found {seen}"
            )));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::CorruptFile("trailing bytes after matrix".into()));
        }
        Self::from_rows(users, songs, rows)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::CorruptFile(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, "body")?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_id(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len.min(1 << 20)];
    if len > buf.len() {
        return Err(Error::CorruptFile(format!("id length {len} is implausible")));
    }
    read_exact(r, &mut buf, "id table")?;
    String::from_utf8(buf).map_err(|_| Error::CorruptFile("id is not valid UTF-8".into()))
}

pub fn write_matrix(matrix: &RatingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    matrix.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<RatingMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    RatingMatrix::read_from(&mut r)
}
