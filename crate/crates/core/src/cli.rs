//! Command-line front end. Every subcommand is a thin adapter over the
//! library: parse flags, load inputs, call one operation, write JSON.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_gif, label_segments_with_threshold, parse_timestamps, HashTrack, DEFAULT_OVERLAP_THRESHOLD};
use crate::eval::{evaluate, upper_bound, RankedVideo, DEFAULT_ALPHA};
use crate::io::{load_dataset, read_features, read_meta, save_dataset, write_jsonl_to};
use crate::loss::LossKind;
use crate::phash::{format_hash_dump, parse_hash_dump, phash, read_pgm};
use crate::rng::Rng;
use crate::shotseg::{default_min_len, default_penalty, segment_sequence, spans_from_boundaries, FrameSequence};
use crate::synth::synth_dataset;
use crate::trainer::{sample_pairs, train, Ranker, TrainConfig};
use crate::types::GifSpan;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const SYNTH_INFO_FILE: &str = "synth_info.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Parser)]
#[command(name = "v2g", version, about = "Rank video segments by GIF suitability")]
pub struct Cli {
    /// Maximum number of worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Perceptual hashes of a directory of PGM frames.
    Hash(HashArgs),
    /// Align a GIF hash track to its source video.
    Align(AlignArgs),
    /// Shot segmentation of a per-frame feature file.
    Segment(SegmentArgs),
    /// Attach aligned GIFs to video metadata and label segments.
    Label(LabelArgs),
    /// Sample training pairs.
    Pairs(PairsArgs),
    /// Train a ranking ensemble.
    Train(TrainArgs),
    /// Score the segments of one feature file.
    Score(ScoreArgs),
    /// Evaluate a model (or the creator agreement bound) on a dataset.
    Eval(EvalArgs),
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct HashArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// `HASHES:TIMESTAMPS` file pair.
#[derive(Clone, Debug)]
pub struct TrackFiles {
    pub hashes: PathBuf,
    pub timestamps: PathBuf,
}

fn parse_track(s: &str) -> Result<TrackFiles, String> {
    let (h, t) = s
        .rsplit_once(':')
        .ok_or_else(|| "expected HASHES:TIMESTAMPS".to_string())?;
    if h.is_empty() || t.is_empty() {
        return Err("expected HASHES:TIMESTAMPS".into());
    }
    Ok(TrackFiles {
        hashes: h.into(),
        timestamps: t.into(),
    })
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long, value_parser = parse_track)]
    pub gif: TrackFiles,
    #[arg(long, value_parser = parse_track)]
    pub video: TrackFiles,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(0..=64))]
    pub max_dist: u32,
    /// Video id recorded in the output, needed by `label`.
    #[arg(long)]
    pub video_id: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub popularity: f64,
    #[arg(long)]
    pub creator: Option<String>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub frame_period: f64,
    /// Per-boundary penalty (default: estimated from frame-to-frame noise).
    #[arg(long)]
    pub penalty: Option<f64>,
    /// Minimum segment length in frames (default: one second).
    #[arg(long)]
    pub min_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub alignments: PathBuf,
    #[arg(long, default_value_t = DEFAULT_OVERLAP_THRESHOLD)]
    pub threshold: f64,
    /// Write the labeled metadata here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub video_agnostic: bool,
    #[arg(long, default_value = "huber")]
    pub loss: LossKind,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "huber")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.001)]
    pub wd: f64,
    #[arg(long, default_value_t = 5)]
    pub ensemble: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub context: bool,
    #[arg(long)]
    pub video_agnostic: bool,
    /// Draw a fresh pair set every epoch.
    #[arg(long)]
    pub resample_pairs: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Metadata file holding the video, for models trained with context.
    #[arg(long, requires = "video")]
    pub meta: Option<PathBuf>,
    #[arg(long, requires = "meta")]
    pub video: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "upper_bound")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Also write per-video metrics as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Score each GIF against the GIFs of other creators instead of a model.
    #[arg(long, conflicts_with = "model")]
    pub upper_bound: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub videos: usize,
    #[arg(long, default_value_t = 20)]
    pub segs: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub outliers: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// One aligned GIF, as written by `align` and read by `label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    pub video_start: f64,
    pub video_end: f64,
    #[serde(default)]
    pub mean_bit_distance: f64,
    #[serde(default)]
    pub matched_fraction: f64,
    #[serde(default)]
    pub popularity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creator_id: Option<String>,
}

#[derive(Serialize)]
struct PairLine<'a> {
    video: &'a str,
    pos: usize,
    neg_video: &'a str,
    neg: usize,
    delta: f64,
}

type CmdResult = Result<(), String>;

fn data_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(data_err)?;
    writeln!(out, "{text}").map_err(data_err)
}

fn read_text(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Parse `args` (including the program name) and run the command, writing
/// machine-readable output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DATA;
        }
    };
    // commands run inside the pool and buffer their output
    let mut buf = Vec::new();
    let result = pool.install(|| dispatch(cli.command, &mut buf));
    if let Err(e) = out.write_all(&buf).and_then(|_| out.flush()) {
        eprintln!("error: {e}");
        return EXIT_DATA;
    }
    match result {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> CmdResult {
    match command {
        Command::Hash(a) => cmd_hash(a, out),
        Command::Align(a) => cmd_align(a, out),
        Command::Segment(a) => cmd_segment(a, out),
        Command::Label(a) => cmd_label(a, out),
        Command::Pairs(a) => cmd_pairs(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Score(a) => cmd_score(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

fn cmd_hash(a: HashArgs, out: &mut dyn Write) -> CmdResult {
    let mut frames: Vec<PathBuf> = fs::read_dir(&a.frames)
        .map_err(|e| format!("{}: {e}", a.frames.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    frames.sort_by(|x, y| x.file_name().cmp(&y.file_name()));
    if frames.is_empty() {
        return Err(format!("{}: no .pgm frames", a.frames.display()));
    }
    let hashes = frames
        .par_iter()
        .map(|p| read_pgm(p).map(|f| phash(&f)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(data_err)?;
    fs::write(&a.out, format_hash_dump(&hashes)).map_err(|e| format!("{}: {e}", a.out.display()))?;
    info!("hashed {} frames", hashes.len());
    write_json(out, &serde_json::json!({ "frames": hashes.len(), "out": a.out }))
}

fn load_track(files: &TrackFiles) -> Result<HashTrack, String> {
    let hashes = parse_hash_dump(&read_text(&files.hashes)?).map_err(|e| format!("{}: {e}", files.hashes.display()))?;
    let ts = parse_timestamps(&read_text(&files.timestamps)?).map_err(|e| format!("{}: {e}", files.timestamps.display()))?;
    HashTrack::new(hashes, ts).map_err(data_err)
}

fn cmd_align(a: AlignArgs, out: &mut dyn Write) -> CmdResult {
    let gif = load_track(&a.gif)?;
    let video = load_track(&a.video)?;
    let al = align_gif(&gif, &video, a.max_dist).map_err(data_err)?;
    let record = AlignmentRecord {
        video_id: a.video_id,
        video_start: al.video_start,
        video_end: al.video_end,
        mean_bit_distance: al.mean_bit_distance,
        matched_fraction: al.matched_fraction,
        popularity: a.popularity,
        creator_id: a.creator,
    };
    let line = serde_json::to_string(&record).map_err(data_err)?;
    writeln!(out, "{line}").map_err(data_err)
}

fn cmd_segment(a: SegmentArgs, out: &mut dyn Write) -> CmdResult {
    let m = read_features(&a.features).map_err(data_err)?;
    let values = m.values().iter().map(|&v| v as f64).collect();
    let seq = FrameSequence::new(m.num_segments(), m.dim(), values, a.frame_period).map_err(data_err)?;
    let penalty = a.penalty.unwrap_or_else(|| default_penalty(&seq));
    let min_len = a.min_len.unwrap_or_else(|| default_min_len(a.frame_period));
    let result = segment_sequence(&seq, penalty, min_len).map_err(data_err)?;
    let segments = spans_from_boundaries(&result, a.frame_period).map_err(data_err)?;
    write_json(
        out,
        &serde_json::json!({
            "boundaries": result.boundaries,
            "cost": result.cost,
            "penalty": penalty,
            "min_len": min_len,
            "segments": segments,
        }),
    )
}

fn cmd_label(a: LabelArgs, out: &mut dyn Write) -> CmdResult {
    let mut videos = read_meta(&a.meta).map_err(data_err)?;
    let alignments: Vec<AlignmentRecord> = crate::io::read_jsonl(&a.alignments).map_err(data_err)?;
    for (i, al) in alignments.iter().enumerate() {
        let id = al
            .video_id
            .as_deref()
            .ok_or_else(|| format!("{}: alignment {} has no video_id", a.alignments.display(), i + 1))?;
        let video = videos
            .iter_mut()
            .find(|v| v.id == id)
            .ok_or_else(|| format!("alignment for unknown video {id}"))?;
        let start = al.video_start.max(0.0);
        let end = al.video_end.min(video.duration);
        if end <= start {
            warn!("alignment {} lies outside video {id}; dropped", i + 1);
            continue;
        }
        let mut gif = GifSpan::new(start, end, al.popularity).map_err(data_err)?;
        gif.creator_id = al.creator_id.clone();
        video.gifs.push(gif);
    }
    for video in &mut videos {
        let spans: Vec<(f64, f64)> = video.gifs.iter().map(|g| (g.start, g.end)).collect();
        video.labels = Some(label_segments_with_threshold(video, &spans, a.threshold));
    }
    match a.out {
        Some(path) => crate::io::write_jsonl(&videos, &path).map_err(data_err),
        None => write_jsonl_to(&videos, &mut &mut *out).map_err(data_err),
    }
}

fn cmd_pairs(a: PairsArgs, out: &mut dyn Write) -> CmdResult {
    let data = load_dataset(&a.data).map_err(data_err)?;
    let videos: Vec<_> = data.into_iter().map(|(v, _)| v).collect();
    let pairs = sample_pairs(&videos, a.k, a.loss, &mut Rng::new(a.seed), a.video_agnostic).map_err(data_err)?;
    for p in &pairs.pairs {
        let line = PairLine {
            video: &videos[p.pos_video].id,
            pos: p.pos_segment,
            neg_video: &videos[p.neg_video].id,
            neg: p.neg_segment,
            delta: p.delta,
        };
        writeln!(out, "{}", serde_json::to_string(&line).map_err(data_err)?).map_err(data_err)?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> CmdResult {
    let data = load_dataset(&a.data).map_err(data_err)?;
    let config = TrainConfig {
        loss: a.loss,
        batch_pairs: a.batch,
        momentum: a.momentum,
        weight_decay: a.wd,
        lr0: a.lr,
        epochs: a.epochs,
        negatives_per_video: a.k,
        ensemble_size: a.ensemble,
        seed: a.seed,
        video_agnostic: a.video_agnostic,
        resample_pairs: a.resample_pairs,
        use_context: a.context,
        ..TrainConfig::default()
    };
    info!("training {} member(s) on {} videos", config.ensemble_size, data.len());
    let (ranker, log) = train(&data, &config).map_err(data_err)?;
    ranker.save(&a.out).map_err(data_err)?;
    crate::io::write_jsonl(&log, a.out.join(TRAIN_LOG_FILE)).map_err(data_err)?;
    let final_loss: Vec<f64> = log
        .iter()
        .filter(|e| e.epoch + 1 == config.epochs)
        .map(|e| e.mean_loss)
        .collect();
    write_json(
        out,
        &serde_json::json!({
            "model": a.out,
            "members": config.ensemble_size,
            "input_dim": ranker.input_dim(),
            "pair_count": log.first().map(|e| e.pair_count),
            "final_mean_loss": final_loss,
        }),
    )
}

fn cmd_score(a: ScoreArgs, out: &mut dyn Write) -> CmdResult {
    let ranker = Ranker::load(&a.model).map_err(data_err)?;
    let features = read_features(&a.features).map_err(data_err)?;
    let scores = match (a.meta, a.video) {
        (Some(meta), Some(id)) => {
            let videos = read_meta(&meta).map_err(data_err)?;
            let video = videos
                .iter()
                .find(|v| v.id == id)
                .ok_or_else(|| format!("{}: no video {id}", meta.display()))?;
            ranker.score_video(video, &features)
        }
        _ => ranker.score_features(&features),
    }
    .map_err(data_err)?;
    write_json(out, &serde_json::json!({ "scores": scores }))
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> CmdResult {
    let data = load_dataset(&a.data).map_err(data_err)?;
    let report = if a.upper_bound {
        let videos: Vec<_> = data.into_iter().map(|(v, _)| v).collect();
        upper_bound(&videos, a.alpha).map_err(data_err)?
    } else {
        let model = a.model.as_ref().expect("clap enforces --model");
        let ranker = Ranker::load(model).map_err(data_err)?;
        let ranked = data
            .par_iter()
            .map(|(v, f)| {
                let scores = ranker.score_video(v, f).map_err(data_err)?;
                RankedVideo::new(v.clone(), scores).map_err(data_err)
            })
            .collect::<Result<Vec<_>, String>>()?;
        evaluate(&ranked, a.alpha).map_err(data_err)?
    };
    for w in &report.warnings {
        warn!("skipped: {w}");
    }
    if let Some(path) = &a.csv {
        let file = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        report
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    write_json(out, &report)
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> CmdResult {
    if a.videos == 0 || a.segs == 0 || a.dim == 0 {
        return Err("--videos, --segs and --dim must be at least 1".into());
    }
    if !(0.0..1.0).contains(&a.outliers) || a.noise.is_nan() || a.noise < 0.0 {
        return Err("--outliers must lie in [0, 1) and --noise must be non-negative".into());
    }
    let s = synth_dataset(a.videos, a.segs, a.dim, a.noise, a.outliers, a.seed);
    save_dataset(&s.data, &a.out).map_err(data_err)?;
    let info_path = a.out.join(SYNTH_INFO_FILE);
    let text = serde_json::to_string_pretty(&s.info).map_err(data_err)?;
    fs::write(&info_path, text + "\n").map_err(|e| format!("{}: {e}", info_path.display()))?;
    write_json(
        out,
        &serde_json::json!({
            "out": a.out,
            "videos": s.data.len(),
            "permuted_count": s.info.permuted_count,
        }),
    )
}
