//! `explore`: build ratings from play logs, train, evaluate, recommend and serve.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use explore_core::catalog::read_catalog;
use explore_core::cf::CfConfig;
use explore_core::coldstart::{parse_seed_csv, SeedProfile};
use explore_core::ingest::{build_ratings, parse_events, MonthIndex, RatingConfig};
use explore_core::matrix::{read_matrix, write_matrix};
use explore_core::metrics::{self, SplitSpec, SplitStrategy, DEFAULT_RELEVANCE_THRESHOLD};
use explore_core::mf::{MfConfig, MfRanking};
use explore_core::selector::{self, AttributeRange, CuratedPlaylist, MoodFilter, PlaylistName, PlaylistRequest, RankedPlaylist, Source};
use explore_core::snapshot::{load_snapshot, save_snapshot, Algorithm, ModelSnapshot, SnapshotConfig};
use explore_service::{AppState, ServiceConfig};

const DEFAULT_SEED: u64 = 42;

/// Explainable song recommendations from listening histories.
#[derive(Debug, Parser)]
#[command(name = "explore", version)]
struct Cli {
    /// Root seed for every random choice (splits, factor initialisation).
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,

    /// More log output; repeat for debug and trace.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a play log into a rating matrix (XPLM file).
    ///
    /// Events are tab-separated lines `user_id<TAB>unix_timestamp<TAB>song_id`;
    /// blank lines and lines starting with `#` are ignored.
    BuildRatings(BuildRatingsArgs),
    /// Train CF neighbors, MF factors and attribute mappers into a snapshot.
    Train(TrainArgs),
    /// Split a rating matrix, train on one side and report RMSE, MAP@K and NDCG@K.
    Evaluate(EvaluateArgs),
    /// Print a user's playlist from a snapshot.
    Recommend(RecommendArgs),
    /// Onboard a new listener from a seed CSV and print their first playlist.
    Coldstart(ColdstartArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct BuildRatingsArgs {
    /// Play log (TSV: user_id, unix_timestamp, song_id).
    #[arg(long)]
    events: PathBuf,
    /// Catalog CSV; when given, songs without a catalog row are reported.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Output rating matrix (XPLM binary).
    #[arg(long)]
    out: PathBuf,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Recency window in months.
    #[arg(long, default_value_t = 24)]
    window: u32,
    /// Ignore events before this month (YYYY-MM).
    #[arg(long, value_parser = parse_month)]
    from: Option<MonthIndex>,
    /// Ignore events after this month (YYYY-MM); also the recency anchor.
    #[arg(long, value_parser = parse_month)]
    to: Option<MonthIndex>,
}

#[derive(Debug, Args)]
struct CfArgs {
    /// Neighbors kept per user.
    #[arg(long, default_value_t = 30)]
    neighbors: usize,
    /// Minimum co-rated songs for two users to be compared.
    #[arg(long, default_value_t = 3)]
    min_overlap: usize,
    /// Drop negatively correlated neighbors.
    #[arg(long)]
    positive_only: bool,
    /// Co-rated count at which similarities stop being shrunk; 0 disables shrinkage.
    #[arg(long, default_value_t = 50)]
    significance_cap: usize,
}

impl CfArgs {
    fn config(&self) -> CfConfig {
        CfConfig {
            k: self.neighbors,
            min_overlap: self.min_overlap,
            keep_negative: !self.positive_only,
            significance_cap: (self.significance_cap > 0).then_some(self.significance_cap),
        }
    }
}

#[derive(Debug, Args)]
struct MfArgs {
    /// Latent dimensions.
    #[arg(long, default_value_t = 32)]
    dims: usize,
    /// SGD passes over the training ratings.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// SGD step size.
    #[arg(long, default_value_t = 0.005)]
    learning_rate: f64,
    /// L2 penalty on factors.
    #[arg(long, default_value_t = 0.02)]
    regularization: f64,
}

impl MfArgs {
    fn config(&self, seed: u64) -> MfConfig {
        MfConfig {
            dims: self.dims,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            regularization: self.regularization,
            seed,
            ..MfConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Cf,
    Mf,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Cf => Algorithm::Cf,
            AlgorithmArg::Mf => Algorithm::Mf,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RankingArg {
    /// Cosine between user and song factors.
    Cosine,
    /// Predicted rating.
    Rating,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Rating matrix from build-ratings.
    #[arg(long)]
    matrix: PathBuf,
    /// Catalog CSV: song_id,title,artist,genre,danceability,energy,instrumentalness,liveness,duration_minutes.
    #[arg(long)]
    catalog: PathBuf,
    /// Curated "best of 2022" playlist, catalog CSV columns.
    #[arg(long)]
    playlist_2022: Option<PathBuf>,
    /// Curated "best of all time" playlist, catalog CSV columns.
    #[arg(long)]
    playlist_all_time: Option<PathBuf>,
    /// Output snapshot file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cf: CfArgs,
    #[command(flatten)]
    mf: MfArgs,
    /// Skip matrix factorization (CF only).
    #[arg(long)]
    no_mf: bool,
    /// Compute neighbors per request instead of at build time.
    #[arg(long)]
    no_neighbor_index: bool,
    /// Default algorithm for requests that do not name one.
    #[arg(long, value_enum, default_value = "cf")]
    serve_with: AlgorithmArg,
    /// How MF ranks unrated songs.
    #[arg(long, value_enum, default_value = "cosine")]
    mf_ranking: RankingArg,
    /// Ridge penalty for the latent-to-attribute regressions.
    #[arg(long, default_value_t = explore_core::explain::DEFAULT_RIDGE)]
    ridge: f64,
    /// Representative songs drawn per seed genre during cold start.
    #[arg(long, default_value_t = explore_core::coldstart::DEFAULT_REPRESENTATIVES)]
    representatives: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    /// Hold out part of every user's ratings.
    Stratified,
    /// Hold out entries drawn across the whole matrix.
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Rating matrix from build-ratings.
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, value_enum, default_value = "stratified")]
    split: SplitArg,
    /// Share of ratings kept for training.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Cut-off for MAP@K and NDCG@K.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value = "cf")]
    algorithm: AlgorithmArg,
    /// Test ratings at or above this count as relevant.
    #[arg(long, default_value_t = DEFAULT_RELEVANCE_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cf: CfArgs,
    #[command(flatten)]
    mf: MfArgs,
}

#[derive(Debug, Args)]
struct PlaylistArgs {
    /// Playlist length.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// nostalgic (corpus), best_of_2022 or best_of_all_time (curated crosswalk).
    #[arg(long, default_value = "nostalgic")]
    source: Source,
    /// Algorithm; defaults to the snapshot's serving algorithm.
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    /// Danceability range `lo,hi` in [0, 1].
    #[arg(long, value_name = "LO,HI")]
    danceability: Option<String>,
    /// Energy range `lo,hi` in [0, 1].
    #[arg(long, value_name = "LO,HI")]
    energy: Option<String>,
    /// Instrumentalness range `lo,hi` in [0, 1].
    #[arg(long, value_name = "LO,HI")]
    instrumentalness: Option<String>,
    /// Liveness range `lo,hi` in [0, 1].
    #[arg(long, value_name = "LO,HI")]
    liveness: Option<String>,
    /// Duration range `lo,hi` in minutes.
    #[arg(long, value_name = "LO,HI")]
    duration: Option<String>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
}

impl PlaylistArgs {
    fn request(&self) -> anyhow::Result<PlaylistRequest> {
        let mut filter = MoodFilter::default();
        for (name, text) in [
            ("danceability", &self.danceability),
            ("energy", &self.energy),
            ("instrumentalness", &self.instrumentalness),
            ("liveness", &self.liveness),
            ("duration_minutes", &self.duration),
        ] {
            if let Some(t) = text {
                *filter.range_mut(name).expect("known attribute") = Some(AttributeRange::parse(name, t)?);
            }
        }
        filter.validate()?;
        Ok(PlaylistRequest {
            source: self.source,
            filter,
            n: self.k,
            algorithm: self.algorithm.map(Into::into),
        })
    }
}

#[derive(Debug, Args)]
struct RecommendArgs {
    /// Snapshot from `train`.
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    user: String,
    #[command(flatten)]
    playlist: PlaylistArgs,
}

#[derive(Debug, Args)]
struct ColdstartArgs {
    /// Snapshot from `train`.
    #[arg(long)]
    snapshot: PathBuf,
    /// Seed CSV: catalog columns plus optional in_corpus_song_id.
    #[arg(long)]
    seeds: PathBuf,
    /// External id of the new listener.
    #[arg(long)]
    user_id: String,
    /// Save the snapshot including the new listener here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    playlist: PlaylistArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// TOML file whose keys override EXPLORE_* variables
    /// (snapshot, host, port, catalog, matrix, playlist_2022, playlist_all_time, config_hash).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Snapshot to serve; overrides the environment and config file.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
}

fn parse_month(s: &str) -> Result<MonthIndex, String> {
    s.parse().map_err(|e: explore_core::Error| e.to_string())
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn build_ratings_cmd(args: &BuildRatingsArgs) -> anyhow::Result<()> {
    let parsed = parse_events(BufReader::new(open(&args.events)?), args.strict)
        .with_context(|| format!("reading {}", args.events.display()))?;
    for w in &parsed.warnings {
        log::warn!("skipped {w}");
    }
    let config = RatingConfig {
        window_months: args.window,
        first_month: args.from,
        last_month: args.to,
    };
    let scaled = build_ratings(&parsed.events, &config)?;
    if !scaled.dropped_users.is_empty() {
        log::warn!("{} users had no informative plays and were dropped", scaled.dropped_users.len());
    }
    let m = &scaled.matrix;
    if let Some(path) = &args.catalog {
        let catalog = read_catalog(path).with_context(|| format!("reading {}", path.display()))?;
        let missing = m.songs().iter().filter(|s| catalog.get(s).is_none()).count();
        if missing > 0 {
            log::warn!("{missing} of {} rated songs have no catalog row", m.n_songs());
        }
    }
    write_matrix(m, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "{} events, {} skipped lines -> {} users x {} songs, {} ratings",
        parsed.events.len(),
        parsed.warnings.len(),
        m.n_users(),
        m.n_songs(),
        m.nnz()
    );
    Ok(())
}

fn read_playlist(name: PlaylistName, path: &Path) -> anyhow::Result<CuratedPlaylist> {
    CuratedPlaylist::from_csv(name, open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn train_cmd(args: &TrainArgs, seed: u64) -> anyhow::Result<()> {
    let matrix = read_matrix(&args.matrix).with_context(|| format!("reading {}", args.matrix.display()))?;
    let catalog = read_catalog(&args.catalog).with_context(|| format!("reading {}", args.catalog.display()))?;
    let mut playlists = Vec::new();
    if let Some(p) = &args.playlist_2022 {
        playlists.push(read_playlist(PlaylistName::BestOf2022, p)?);
    }
    if let Some(p) = &args.playlist_all_time {
        playlists.push(read_playlist(PlaylistName::BestOfAllTime, p)?);
    }
    let config = SnapshotConfig {
        cf: args.cf.config(),
        mf: (!args.no_mf).then(|| args.mf.config(seed)),
        mf_ranking: match args.mf_ranking {
            RankingArg::Cosine => MfRanking::Cosine,
            RankingArg::Rating => MfRanking::PredictedRating,
        },
        ridge: args.ridge,
        serving: args.serve_with.into(),
        precompute_neighbors: !args.no_neighbor_index,
        representatives_per_genre: args.representatives,
    };
    let snapshot = ModelSnapshot::build(matrix, catalog, playlists, config)?;
    if let Some(f) = &snapshot.factors {
        if let Some(last) = f.training_log.last() {
            eprintln!("MF train RMSE after {} epochs: {last:.4}", f.training_log.len());
        }
    }
    save_snapshot(&snapshot, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("snapshot {} (config {})", args.out.display(), snapshot.meta.config_hash);
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs, seed: u64) -> anyhow::Result<()> {
    let matrix = read_matrix(&args.matrix).with_context(|| format!("reading {}", args.matrix.display()))?;
    let spec = SplitSpec {
        strategy: match args.split {
            SplitArg::Stratified => SplitStrategy::Stratified,
            SplitArg::Random => SplitStrategy::Random,
        },
        train_fraction: args.train_fraction,
        seed,
    };
    let report = metrics::evaluate(
        args.algorithm.into(),
        &matrix,
        &spec,
        args.k,
        args.threshold,
        &args.cf.config(),
        &args.mf.config(seed),
    )?;
    let text = match args.format {
        FormatArg::Json => serde_json::to_string_pretty(&report)? + "\n",
        FormatArg::Table => report.to_table(),
    };
    emit(args.out.as_deref(), &text)
}

fn playlist_table(p: &RankedPlaylist) -> String {
    let mut out = format!("{:>4}  {:<32}  {:<24}  {:>7}  {}\n", "rank", "title", "artist", "score", "note");
    for e in &p.entries {
        let note = match (&e.provenance, e.relaxed) {
            (Some(from), true) => format!("via {from}, outside filter"),
            (Some(from), false) => format!("via {from}"),
            (None, true) => "outside filter".into(),
            (None, false) => String::new(),
        };
        out += &format!(
            "{:>4}  {:<32}  {:<24}  {:>7.3}  {}\n",
            e.rank, e.song.title, e.song.artist, e.score, note
        );
    }
    for w in &p.warnings {
        out += &format!("warning: {w}\n");
    }
    out
}

fn render_playlist(p: &RankedPlaylist, format: FormatArg) -> anyhow::Result<String> {
    Ok(match format {
        FormatArg::Json => serde_json::to_string_pretty(p)? + "\n",
        FormatArg::Table => playlist_table(p),
    })
}

fn recommend_cmd(args: &RecommendArgs) -> anyhow::Result<()> {
    let request = args.playlist.request()?;
    let snapshot = load_snapshot(&args.snapshot, None).with_context(|| format!("reading {}", args.snapshot.display()))?;
    let playlist = selector::assemble(&snapshot, &args.user, &request)?;
    emit(None, &render_playlist(&playlist, args.playlist.format)?)
}

fn coldstart_cmd(args: &ColdstartArgs) -> anyhow::Result<()> {
    let request = args.playlist.request()?;
    let snapshot = load_snapshot(&args.snapshot, None).with_context(|| format!("reading {}", args.snapshot.display()))?;
    let seeds = parse_seed_csv(open(&args.seeds)?).with_context(|| format!("reading {}", args.seeds.display()))?;
    let profile = SeedProfile {
        external_user_id: args.user_id.clone(),
        seeds,
    };
    let (next, user_id) = snapshot.with_cold_start(&profile)?;
    let playlist = selector::assemble(&next, &user_id, &request)?;
    if let Some(out) = &args.out {
        save_snapshot(&next, out).with_context(|| format!("writing {}", out.display()))?;
    }
    eprintln!("new listener: {user_id}");
    emit(None, &render_playlist(&playlist, args.playlist.format)?)
}

fn serve_cmd(args: &ServeArgs) -> anyhow::Result<()> {
    let mut config = ServiceConfig::load(args.config.as_deref())?;
    if args.snapshot.is_some() {
        config.snapshot = args.snapshot.clone();
    }
    if args.host.is_some() {
        config.host = args.host.clone();
    }
    if args.port.is_some() {
        config.port = args.port;
    }
    let snapshot = config.open_snapshot()?;
    let state = Arc::new(AppState::new(Some(snapshot)));
    let address = config.address();
    tokio::runtime::Runtime::new()?.block_on(explore_service::serve(state, &address))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::BuildRatings(a) => build_ratings_cmd(a),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Evaluate(a) => {
            if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
                bail!("--train-fraction must lie strictly between 0 and 1");
            }
            evaluate_cmd(a, cli.seed)
        }
        Command::Recommend(a) => recommend_cmd(a),
        Command::Coldstart(a) => coldstart_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        (false, 2) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    eprintln!("seed: {}", cli.seed);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
