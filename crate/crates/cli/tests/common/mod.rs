#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Days since 1970-01-01 for a proleptic Gregorian date.
pub fn days_from_civil(year: i64, month: i64, day: i64) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (month + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

pub fn timestamp(year: i64, month: i64, day: i64, hour: i64) -> i64 {
    days_from_civil(year, month, day) * 86_400 + hour * 3_600
}

pub const GENRES: [&str; 4] = ["rock", "jazz", "pop", "folk"];

pub const CATALOG_HEADER: &str =
    "song_id,title,artist,genre,danceability,energy,instrumentalness,liveness,duration_minutes";

pub struct Corpus {
    pub events: PathBuf,
    pub catalog: PathBuf,
    pub playlist_2022: PathBuf,
    pub playlist_all_time: PathBuf,
    pub seeds: PathBuf,
}

fn song_row(out: &mut String, id: &str, genre: usize, rng: &mut ChaCha8Rng) {
    let g = genre as f64;
    let _ = writeln!(
        out,
        "{id},Title {id},Artist {},{},{:.3},{:.3},{:.3},{:.3},{:.2}",
        genre + 1,
        GENRES[genre],
        0.2 * g + rng.random_range(0.0..0.2),
        0.8 - 0.15 * g + rng.random_range(0.0..0.15),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..0.5),
        2.5 + g + rng.random_range(0.0..1.0),
    );
}

/// Play log, catalog, curated playlists and a seed file for a small
/// listening community: 40 listeners in four taste groups, 48 songs in four
/// genres, two years of plays.
pub fn write_corpus(dir: &Path, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_songs = 48;
    let mut catalog = format!("{CATALOG_HEADER}\n");
    for s in 0..n_songs {
        song_row(&mut catalog, &format!("s{s:02}"), s % 4, &mut rng);
    }
    let mut events = String::from("# user\ttimestamp\tsong\n");
    for u in 0..40 {
        let taste = u % 4;
        for month in 0..24 {
            let (year, m) = (2021 + month / 12, 1 + month % 12);
            let plays = rng.random_range(3..9);
            for _ in 0..plays {
                let genre = if rng.random_bool(0.8) { taste } else { rng.random_range(0..4) };
                let song = genre + 4 * rng.random_range(0..n_songs / 4);
                let repeats = rng.random_range(1..4);
                for _ in 0..repeats {
                    let ts = timestamp(year, m, rng.random_range(1..29), rng.random_range(0..24));
                    let _ = writeln!(events, "user{u:02}\t{ts}\ts{song:02}");
                }
            }
        }
    }
    events.push_str("this line is malformed\n");

    let mut best_2022 = format!("{CATALOG_HEADER}\n");
    for i in 0..8 {
        song_row(&mut best_2022, &format!("b22-{i}"), i % 4, &mut rng);
    }
    let mut best_all = format!("{CATALOG_HEADER}\n");
    for i in 0..12 {
        song_row(&mut best_all, &format!("all-{i}"), (i + 1) % 4, &mut rng);
    }
    let mut seeds = format!("{CATALOG_HEADER},in_corpus_song_id\n");
    for i in 0..5 {
        let mut row = String::new();
        song_row(&mut row, &format!("new-{i}"), if i < 3 { 1 } else { 2 }, &mut rng);
        let in_corpus = if i == 0 { "s01" } else { "" };
        let _ = writeln!(seeds, "{},{in_corpus}", row.trim_end());
    }

    let corpus = Corpus {
        events: dir.join("events.tsv"),
        catalog: dir.join("catalog.csv"),
        playlist_2022: dir.join("best_2022.csv"),
        playlist_all_time: dir.join("best_all_time.csv"),
        seeds: dir.join("seeds.csv"),
    };
    std::fs::write(&corpus.events, events).unwrap();
    std::fs::write(&corpus.catalog, catalog).unwrap();
    std::fs::write(&corpus.playlist_2022, best_2022).unwrap();
    std::fs::write(&corpus.playlist_all_time, best_all).unwrap();
    std::fs::write(&corpus.seeds, seeds).unwrap();
    corpus
}
