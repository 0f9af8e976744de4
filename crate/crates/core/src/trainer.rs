//! Pair sampling and the optimization loop: mini-batch SGD with Nesterov
//! momentum, L2 weight decay on weights, a step learning-rate schedule and
//! independently initialized ensemble members.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::Dataset;
use crate::loss::{LossKind, PairScores, DEFAULT_DELTA};
use crate::ranknet::{
    build_context_vector, context_dim, zeros_like, Ensemble, Layer, Mode, NetConfig, NetError, RankNetModel, Real,
};
use crate::rng::Rng;
use crate::types::{FeatureMatrix, Label, VideoRecord};

pub const RANKER_FILE: &str = "ranker.json";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset has no labeled positive/negative segments")]
    NoLabeledSegments,
    #[error("video {video}: expected {expected} feature dims, got {got}")]
    DimMismatch { video: String, expected: usize, got: usize },
    #[error("video {video}: {rows} feature rows for {segments} segments")]
    SegmentMismatch { video: String, rows: usize, segments: usize },
    #[error("video {0}: context features requested but the video has no context metadata")]
    MissingContext(String),
    #[error("non-finite training loss in member {member}, epoch {epoch}")]
    NonFiniteLoss { member: usize, epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_pairs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr0: f64,
    pub lr_drop_every: usize,
    pub lr_drop_factor: f64,
    pub epochs: usize,
    pub negatives_per_video: usize,
    pub ensemble_size: usize,
    pub seed: u64,
    pub video_agnostic: bool,
    /// Draw a fresh pair set every epoch instead of once up front.
    pub resample_pairs: bool,
    /// Append the context vector to every segment's features.
    pub use_context: bool,
    pub hidden: Vec<usize>,
    pub dropout_input: f64,
    pub dropout_hidden1: f64,
    pub include_biases: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetConfig::new(1);
        Self {
            loss: LossKind::RankHuberFixed { delta: DEFAULT_DELTA },
            batch_pairs: 50,
            momentum: 0.9,
            weight_decay: 0.001,
            lr0: 0.001,
            lr_drop_every: 10,
            lr_drop_factor: 0.1,
            epochs: 25,
            negatives_per_video: 4,
            ensemble_size: 5,
            seed: 0,
            video_agnostic: false,
            resample_pairs: false,
            use_context: false,
            hidden: net.hidden,
            dropout_input: net.dropout_input,
            dropout_hidden1: net.dropout_hidden1,
            include_biases: net.include_biases,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be finite and non-negative");
        }
        if self.negatives_per_video == 0 || self.epochs == 0 || self.batch_pairs == 0 || self.ensemble_size == 0 {
            return bad("k, epochs, batch size and ensemble size must be at least 1");
        }
        if self.lr_drop_every == 0 || !(self.lr_drop_factor > 0.0) {
            return bad("learning-rate drop interval and factor must be positive");
        }
        self.net_config(1).validate()?;
        Ok(())
    }

    pub fn net_config(&self, input_dim: usize) -> NetConfig {
        NetConfig {
            input_dim,
            hidden: self.hidden.clone(),
            dropout_input: self.dropout_input,
            dropout_hidden1: self.dropout_hidden1,
            include_biases: self.include_biases,
        }
    }
}

/// `lr0 * factor^floor(epoch / drop_every)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.lr_drop_factor.powi((epoch / config.lr_drop_every) as i32)
}

/// A positive segment that should outscore a negative one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankPair {
    pub pos_video: usize,
    pub pos_segment: usize,
    pub neg_video: usize,
    pub neg_segment: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<RankPair>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn labeled(video: &VideoRecord, want: Label) -> Vec<usize> {
    video
        .labels
        .iter()
        .flatten()
        .enumerate()
        .filter(|(_, &l)| l == want)
        .map(|(i, _)| i)
        .collect()
}

/// Popularity of the most popular GIF overlapping a segment, 0 if none does.
pub fn segment_popularity(video: &VideoRecord, segment: usize) -> f64 {
    let span = &video.segments[segment];
    video
        .gifs
        .iter()
        .filter(|g| span.overlap(g.start, g.end) > 0.0)
        .map(|g| g.popularity)
        .fold(0.0, f64::max)
}

/// Per video, `min(k, #negatives)` negatives drawn without replacement and
/// paired with every positive. Video-agnostic sampling draws the same number
/// of negatives uniformly from the negatives of all videos instead.
pub fn sample_pairs(
    videos: &[VideoRecord],
    k: usize,
    loss: LossKind,
    rng: &mut Rng,
    video_agnostic: bool,
) -> Result<PairSet, TrainError> {
    let positives: Vec<Vec<usize>> = videos.iter().map(|v| labeled(v, Label::Positive)).collect();
    let negatives: Vec<Vec<usize>> = videos.iter().map(|v| labeled(v, Label::Negative)).collect();
    let pool: Vec<(usize, usize)> = negatives
        .iter()
        .enumerate()
        .flat_map(|(v, segs)| segs.iter().map(move |&s| (v, s)))
        .collect();
    if pool.is_empty() || positives.iter().all(Vec::is_empty) {
        return Err(TrainError::NoLabeledSegments);
    }
    let mut pairs = Vec::new();
    for (v, video) in videos.iter().enumerate() {
        let count = k.min(negatives[v].len());
        if positives[v].is_empty() || count == 0 {
            continue;
        }
        let drawn: Vec<(usize, usize)> = if video_agnostic {
            rng.sample_indices(pool.len(), count.min(pool.len()))
                .into_iter()
                .map(|i| pool[i])
                .collect()
        } else {
            rng.sample_indices(negatives[v].len(), count)
                .into_iter()
                .map(|i| (v, negatives[v][i]))
                .collect()
        };
        for &p in &positives[v] {
            let delta = loss
                .pair_delta(segment_popularity(video, p))
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            for &(nv, ns) in &drawn {
                pairs.push(RankPair {
                    pos_video: v,
                    pos_segment: p,
                    neg_video: nv,
                    neg_segment: ns,
                    delta,
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(TrainError::NoLabeledSegments);
    }
    Ok(PairSet { pairs })
}

/// Nesterov momentum on one flat parameter slice:
/// `g' = grad + decay * p; v = mu v - lr g'; p += mu v - lr g'`.
pub fn nesterov_update<F: Real>(params: &mut [F], velocity: &mut [F], grad: &[F], lr: F, momentum: F, decay: F) {
    assert!(params.len() == velocity.len() && params.len() == grad.len(), "shape mismatch");
    for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        let g = g + decay * *p;
        *v = momentum * *v - lr * g;
        *p = *p + momentum * *v - lr * g;
    }
}

/// One update of every layer. Weight decay `2 * weight_decay * w` applies to
/// weights only.
pub fn nesterov_step<F: Real>(
    params: &mut [Layer<F>],
    velocity: &mut [Layer<F>],
    grad: &[Layer<F>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let lr = F::from_f64(lr).unwrap();
    let mu = F::from_f64(momentum).unwrap();
    let decay = F::from_f64(2.0 * weight_decay).unwrap();
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        step_array(&mut p.weights, &mut v.weights, &g.weights, lr, mu, decay);
        if let (Some(pb), Some(vb), Some(gb)) = (p.bias.as_mut(), v.bias.as_mut(), g.bias.as_ref()) {
            Zip::from(pb).and(vb).and(gb).for_each(|p, v, &g| {
                *v = mu * *v - lr * g;
                *p = *p + mu * *v - lr * g;
            });
        }
    }
}

fn step_array<F: Real>(p: &mut Array2<F>, v: &mut Array2<F>, g: &Array2<F>, lr: F, mu: F, decay: F) {
    Zip::from(p).and(v).and(g).for_each(|p, v, &g| {
        let g = g + decay * *p;
        *v = mu * *v - lr * g;
        *p = *p + mu * *v - lr * g;
    });
}

/// Per-dimension standardization with statistics from the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &Array2<f32>) -> Self {
        let n = rows.nrows() as f64;
        let dim = rows.ncols();
        let mut mean = vec![0.0f64; dim];
        for row in rows.rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; dim];
        for row in rows.rows() {
            for ((s, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = x as f64 - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, rows: &mut Array2<f32>) {
        for mut row in rows.rows_mut() {
            for ((x, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = ((*x as f64 - m) / s) as f32;
            }
        }
    }
}

/// Network inputs for one video: features, optionally followed by the
/// context vector, one row per segment.
pub fn build_inputs(video: &VideoRecord, features: &FeatureMatrix, use_context: bool) -> Result<Array2<f32>, TrainError> {
    if features.num_segments() != video.num_segments() {
        return Err(TrainError::SegmentMismatch {
            video: video.id.clone(),
            rows: features.num_segments(),
            segments: video.num_segments(),
        });
    }
    let base = Array2::from_shape_vec((features.num_segments(), features.dim()), features.values().to_vec())
        .expect("feature matrix shape");
    if !use_context {
        return Ok(base);
    }
    let meta = video
        .context
        .as_ref()
        .ok_or_else(|| TrainError::MissingContext(video.id.clone()))?;
    let extra = context_dim(meta.num_categories);
    let mut out = Array2::zeros((base.nrows(), base.ncols() + extra));
    for (i, seg) in video.segments.iter().enumerate() {
        let ctx = build_context_vector(meta, seg, video, i)?;
        let mut row = out.row_mut(i);
        row.slice_mut(ndarray::s![..base.ncols()]).assign(&base.row(i));
        row.slice_mut(ndarray::s![base.ncols()..])
            .assign(&Array1::from_vec(ctx));
    }
    Ok(out)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub member: usize,
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub pair_count: usize,
}

/// A trained ensemble together with the input pipeline it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranker {
    pub loss: LossKind,
    pub use_context: bool,
    pub scaler: FeatureScaler,
    pub ensemble: Ensemble<f32>,
}

#[derive(Serialize, Deserialize)]
struct RankerHeader {
    loss: LossKind,
    use_context: bool,
    scaler: FeatureScaler,
    members: usize,
}

fn member_file(i: usize) -> String {
    format!("member_{i:03}.v2gm")
}

impl Ranker {
    pub fn input_dim(&self) -> usize {
        self.ensemble.input_dim()
    }

    /// Ensemble score of every segment of a video.
    pub fn score_video(&self, video: &VideoRecord, features: &FeatureMatrix) -> Result<Vec<f64>, TrainError> {
        let mut x = build_inputs(video, features, self.use_context)?;
        if x.ncols() != self.input_dim() {
            return Err(TrainError::DimMismatch {
                video: video.id.clone(),
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        self.scaler.apply(&mut x);
        Ok(self.ensemble.score_batch(x.view())?)
    }

    /// Scores for bare feature rows; only valid for rankers trained without
    /// context features.
    pub fn score_features(&self, features: &FeatureMatrix) -> Result<Vec<f64>, TrainError> {
        if self.use_context {
            return Err(TrainError::InvalidConfig(
                "this model needs context features; score it with video metadata".into(),
            ));
        }
        if features.dim() != self.input_dim() {
            return Err(TrainError::DimMismatch {
                video: String::new(),
                expected: self.input_dim(),
                got: features.dim(),
            });
        }
        let mut x = Array2::from_shape_vec((features.num_segments(), features.dim()), features.values().to_vec())
            .expect("feature matrix shape");
        self.scaler.apply(&mut x);
        Ok(self.ensemble.score_batch(x.view())?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), TrainError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TrainError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let header = RankerHeader {
            loss: self.loss,
            use_context: self.use_context,
            scaler: self.scaler.clone(),
            members: self.ensemble.models().len(),
        };
        let path = dir.join(RANKER_FILE);
        let json = serde_json::to_string_pretty(&header).expect("ranker header serializes");
        fs::write(&path, json + "\n").map_err(io(&path))?;
        for (i, m) in self.ensemble.models().iter().enumerate() {
            m.save(dir.join(member_file(i)))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, TrainError> {
        let dir = dir.as_ref();
        let path = dir.join(RANKER_FILE);
        let text = fs::read_to_string(&path).map_err(|source| TrainError::Io {
            path: path.clone(),
            source,
        })?;
        let header: RankerHeader = serde_json::from_str(&text).map_err(|e| TrainError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let models = (0..header.members)
            .map(|i| RankNetModel::load(dir.join(member_file(i))))
            .collect::<Result<Vec<_>, _>>()?;
        let ensemble = Ensemble::new(models)?;
        if header.scaler.dim() != ensemble.input_dim() || header.scaler.std.len() != header.scaler.dim() {
            return Err(TrainError::Format {
                path,
                message: "scaler dimension disagrees with the models".into(),
            });
        }
        Ok(Self {
            loss: header.loss,
            use_context: header.use_context,
            scaler: header.scaler,
            ensemble,
        })
    }
}

/// Standardized inputs of every segment, stacked video after video.
struct TrainingRows {
    rows: Array2<f32>,
    offsets: Vec<usize>,
}

impl TrainingRows {
    fn row_of(&self, video: usize, segment: usize) -> usize {
        self.offsets[video] + segment
    }
}

fn stack_inputs(dataset: &Dataset, use_context: bool) -> Result<Array2<f32>, TrainError> {
    let mut blocks = Vec::with_capacity(dataset.len());
    for (video, features) in dataset {
        blocks.push(build_inputs(video, features, use_context)?);
    }
    let dim = blocks[0].ncols();
    for ((video, _), b) in dataset.iter().zip(&blocks) {
        if b.ncols() != dim {
            return Err(TrainError::DimMismatch {
                video: video.id.clone(),
                expected: dim,
                got: b.ncols(),
            });
        }
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"))
}

/// Train an ensemble on a labeled dataset. Returns the ranker and one log
/// entry per member and epoch.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(Ranker, Vec<EpochLog>), TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::NoLabeledSegments);
    }
    let mut rows = stack_inputs(dataset, config.use_context)?;
    let scaler = FeatureScaler::fit(&rows);
    scaler.apply(&mut rows);
    let mut offsets = Vec::with_capacity(dataset.len());
    let mut acc = 0;
    for (video, _) in dataset {
        offsets.push(acc);
        acc += video.num_segments();
    }
    let data = TrainingRows { rows, offsets };
    let videos: Vec<VideoRecord> = dataset.iter().map(|(v, _)| v.clone()).collect();

    let root = Rng::new(config.seed);
    let pairs = sample_pairs(
        &videos,
        config.negatives_per_video,
        config.loss,
        &mut root.split(0),
        config.video_agnostic,
    )?;
    let results = (0..config.ensemble_size)
        .into_par_iter()
        .map(|m| train_member(&data, &videos, &pairs, config, m, root.split(1 + m as u64)))
        .collect::<Vec<_>>();
    let mut models = Vec::with_capacity(results.len());
    let mut log = Vec::new();
    for r in results {
        let (model, entries) = r?;
        models.push(model);
        log.extend(entries);
    }
    let ranker = Ranker {
        loss: config.loss,
        use_context: config.use_context,
        scaler,
        ensemble: Ensemble::new(models)?,
    };
    Ok((ranker, log))
}

fn train_member(
    data: &TrainingRows,
    videos: &[VideoRecord],
    initial_pairs: &PairSet,
    config: &TrainConfig,
    member: usize,
    rng: Rng,
) -> Result<(RankNetModel<f32>, Vec<EpochLog>), TrainError> {
    let mut model = RankNetModel::<f32>::init(config.net_config(data.rows.ncols()), &mut rng.split(0))?;
    let mut order_rng = rng.split(1);
    let mut dropout_rng = rng.split(2);
    let mut resample_rng = rng.split(3);
    let mut velocity = zeros_like(model.layers());
    let mut pairs = initial_pairs.clone();
    let mut log = Vec::with_capacity(config.epochs);
    let dim = data.rows.ncols();

    for epoch in 0..config.epochs {
        if config.resample_pairs && epoch > 0 {
            pairs = sample_pairs(
                videos,
                config.negatives_per_video,
                config.loss,
                &mut resample_rng,
                config.video_agnostic,
            )?;
        }
        let lr = lr_at(epoch, config);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order_rng.shuffle(&mut order);
        let mut total = 0.0f64;
        for batch in order.chunks(config.batch_pairs) {
            let b = batch.len();
            let mut x = Array2::<f32>::zeros((2 * b, dim));
            for (i, &pi) in batch.iter().enumerate() {
                let p = &pairs.pairs[pi];
                x.row_mut(i).assign(&data.rows.row(data.row_of(p.pos_video, p.pos_segment)));
                x.row_mut(b + i)
                    .assign(&data.rows.row(data.row_of(p.neg_video, p.neg_segment)));
            }
            let (scores, cache) = model.forward_batch(x.view(), Mode::Train(&mut dropout_rng))?;
            let mut d_scores = Array1::<f32>::zeros(2 * b);
            let mut batch_loss = 0.0f64;
            for (i, &pi) in batch.iter().enumerate() {
                let ps = PairScores::new(scores[i] as f64, scores[b + i] as f64, pairs.pairs[pi].delta);
                let lg = config.loss.pair_loss(ps);
                batch_loss += lg.loss;
                // the batch loss is the mean over its pairs
                d_scores[i] = (lg.d_pos / b as f64) as f32;
                d_scores[b + i] = (lg.d_neg / b as f64) as f32;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { member, epoch });
            }
            total += batch_loss;
            let grad = model.backward(&cache, d_scores.view())?;
            nesterov_step(
                model.layers_mut(),
                &mut velocity,
                &grad,
                lr,
                config.momentum,
                config.weight_decay,
            );
        }
        let mean_loss = total / pairs.len() as f64;
        if !mean_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { member, epoch });
        }
        log.push(EpochLog {
            member,
            epoch,
            lr,
            mean_loss,
            pair_count: pairs.len(),
        });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{GifSpan, SegmentSpan};

    fn video(id: &str, labels: &[Label]) -> VideoRecord {
        VideoRecord {
            id: id.into(),
            duration: labels.len() as f64,
            segments: (0..labels.len())
                .map(|i| SegmentSpan::new(i as f64, i as f64 + 1.0).unwrap())
                .collect(),
            gifs: vec![],
            labels: Some(labels.to_vec()),
            context: None,
        }
    }

    fn with_counts(id: &str, pos: usize, neg: usize) -> VideoRecord {
        let mut l = vec![Label::Positive; pos];
        l.extend(vec![Label::Negative; neg]);
        video(id, &l)
    }

    const HUBER: LossKind = LossKind::RankHuberFixed { delta: 1.5 };

    #[test]
    fn pair_counts() {
        let mut rng = Rng::new(1);
        let v = vec![with_counts("a", 2, 10), with_counts("b", 1, 2), with_counts("c", 0, 5)];
        let ps = sample_pairs(&v, 4, HUBER, &mut rng, false).unwrap();
        let count = |vi| ps.pairs.iter().filter(|p| p.pos_video == vi).count();
        assert_eq!((count(0), count(1), count(2)), (8, 2, 0));
    }

    #[test]
    fn negatives_drawn_without_replacement() {
        let mut rng = Rng::new(2);
        let v = vec![with_counts("a", 1, 10)];
        let ps = sample_pairs(&v, 4, HUBER, &mut rng, false).unwrap();
        let mut negs: Vec<_> = ps.pairs.iter().map(|p| p.neg_segment).collect();
        negs.sort();
        negs.dedup();
        assert_eq!(negs.len(), 4);
        assert!(negs.iter().all(|&n| n >= 1));
    }

    #[test]
    fn video_specific_never_crosses_videos() {
        let mut rng = Rng::new(3);
        let v: Vec<_> = (0..30).map(|i| with_counts(&format!("v{i}"), 1 + i % 3, 2 + i % 7)).collect();
        for _ in 0..20 {
            let ps = sample_pairs(&v, 4, HUBER, &mut rng, false).unwrap();
            assert!(ps.pairs.iter().all(|p| p.pos_video == p.neg_video));
            assert!(ps
                .pairs
                .iter()
                .all(|p| v[p.pos_video].labels.as_ref().unwrap()[p.pos_segment] == Label::Positive
                    && v[p.neg_video].labels.as_ref().unwrap()[p.neg_segment] == Label::Negative));
        }
    }

    #[test]
    fn video_agnostic_draws_from_all_videos() {
        let mut rng = Rng::new(4);
        let v: Vec<_> = (0..20).map(|i| with_counts(&format!("v{i}"), 2, 6)).collect();
        let ps = sample_pairs(&v, 4, HUBER, &mut rng, true).unwrap();
        assert_eq!(ps.len(), 20 * 2 * 4);
        assert!(ps.pairs.iter().any(|p| p.pos_video != p.neg_video));
    }

    #[test]
    fn no_labels_is_an_error() {
        let mut rng = Rng::new(5);
        let mut v = with_counts("a", 0, 0);
        v.labels = None;
        assert!(matches!(
            sample_pairs(&[v], 4, HUBER, &mut rng, false),
            Err(TrainError::NoLabeledSegments)
        ));
        let v = with_counts("a", 0, 3);
        assert!(matches!(
            sample_pairs(&[v], 4, HUBER, &mut rng, false),
            Err(TrainError::NoLabeledSegments)
        ));
    }

    #[test]
    fn adaptive_delta_uses_gif_popularity() {
        let mut v = with_counts("a", 1, 3);
        v.gifs = vec![GifSpan::new(0.0, 1.0, 0.4).unwrap()];
        let loss = LossKind::RankHuberAdaptive { base_delta: 1.5 };
        let ps = sample_pairs(&[v.clone()], 4, loss, &mut Rng::new(1), false).unwrap();
        assert!(ps.pairs.iter().all(|p| (p.delta - 1.9).abs() < 1e-12));
        let ps = sample_pairs(&[v], 4, HUBER, &mut Rng::new(1), false).unwrap();
        assert!(ps.pairs.iter().all(|p| p.delta == 1.5));
    }

    #[test]
    fn nesterov_examples() {
        let (mut p, mut v) = ([2.0f64], [0.0f64]);
        nesterov_update(&mut p, &mut v, &[0.0], 0.1, 0.9, 0.0);
        assert_eq!((p[0], v[0]), (2.0, 0.0));

        let (mut p, mut v) = ([1.0f64], [0.0f64]);
        nesterov_update(&mut p, &mut v, &[1.0], 0.1, 0.9, 0.0);
        assert!((v[0] + 0.1).abs() < 1e-15);
        assert!((p[0] - 0.81).abs() < 1e-15);

        // zero-gradient steps afterwards shrink the displacement by 0.9 each
        let mut prev = p[0];
        let mut prev_step: Option<f64> = None;
        for _ in 0..3 {
            nesterov_update(&mut p, &mut v, &[0.0], 0.1, 0.9, 0.0);
            let step = p[0] - prev;
            if let Some(ps) = prev_step {
                assert!((step / ps - 0.9f64).abs() < 1e-12);
            }
            prev_step = Some(step);
            prev = p[0];
        }
    }

    #[test]
    fn weight_decay_skips_biases() {
        let mut layers = vec![Layer {
            weights: ndarray::array![[1.0f64, -2.0]],
            bias: Some(ndarray::array![3.0]),
        }];
        let mut vel = zeros_like(&layers);
        let grad = zeros_like(&layers);
        let mut prev = layers[0].weights.clone();
        for _ in 0..5 {
            nesterov_step(&mut layers, &mut vel, &grad, 0.01, 0.9, 0.1);
            for (a, b) in layers[0].weights.iter().zip(prev.iter()) {
                assert!(a.abs() < b.abs());
            }
            assert_eq!(layers[0].bias.as_ref().unwrap()[0], 3.0);
            prev = layers[0].weights.clone();
        }
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 0.001);
        assert_eq!(lr_at(9, &c), 0.001);
        assert!((lr_at(10, &c) - 0.0001).abs() < 1e-18);
        assert!((lr_at(24, &c) - 0.00001).abs() < 1e-18);
    }

    fn tiny_dataset() -> Dataset {
        let mut rng = Rng::new(11);
        (0..6)
            .map(|i| {
                let v = with_counts(&format!("v{i}"), 2, 6);
                let vals: Vec<f32> = (0..8 * 3)
                    .map(|j| if j / 3 < 2 { 1.0 } else { 0.0 } + rng.normal() as f32 * 0.1)
                    .collect();
                (v, FeatureMatrix::new(8, 3, vals).unwrap())
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden: vec![8, 4],
            epochs: 3,
            ensemble_size: 2,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let data = tiny_dataset();
        let config = TrainConfig { lr0: 0.0, ..small_config() };
        let (ranker, log) = train(&data, &config).unwrap();
        assert_eq!(log.len(), 6);
        let root = Rng::new(config.seed);
        for (m, model) in ranker.ensemble.models().iter().enumerate() {
            let init = RankNetModel::<f32>::init(config.net_config(3), &mut root.split(1 + m as u64).split(0)).unwrap();
            assert_eq!(model.encode(), init.encode());
        }
    }

    #[test]
    fn training_is_reproducible() {
        let data = tiny_dataset();
        let (a, la) = train(&data, &small_config()).unwrap();
        let (b, lb) = train(&data, &small_config()).unwrap();
        assert_eq!(la, lb);
        for (x, y) in a.ensemble.models().iter().zip(b.ensemble.models()) {
            assert_eq!(x.encode(), y.encode());
        }
    }

    #[test]
    fn dimension_mismatch_reported() {
        let mut data = tiny_dataset();
        data[3].1 = FeatureMatrix::new(8, 4, vec![0.0; 32]).unwrap();
        assert!(matches!(train(&data, &small_config()), Err(TrainError::DimMismatch { .. })));
    }

    #[test]
    fn divergence_is_caught() {
        let data = tiny_dataset();
        let config = TrainConfig {
            loss: LossKind::RankL2,
            lr0: 1e30,
            weight_decay: 0.0,
            epochs: 5,
            ..small_config()
        };
        assert!(matches!(train(&data, &config), Err(TrainError::NonFiniteLoss { .. })));
    }

    #[test]
    fn ranker_round_trip() {
        let data = tiny_dataset();
        let (ranker, _) = train(&data, &small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ranker.save(dir.path()).unwrap();
        let back = Ranker::load(dir.path()).unwrap();
        assert_eq!(back, ranker);
        let (v, f) = &data[0];
        assert_eq!(ranker.score_video(v, f).unwrap(), back.score_video(v, f).unwrap());
    }

    #[test]
    fn scaler_is_exact_under_power_of_two_scaling() {
        let data = tiny_dataset();
        let rows = stack_inputs(&data, false).unwrap();
        let doubled = rows.mapv(|x| 2.0 * x);
        let (mut a, mut b) = (rows.clone(), doubled.clone());
        FeatureScaler::fit(&rows).apply(&mut a);
        FeatureScaler::fit(&doubled).apply(&mut b);
        assert_eq!(a, b);
    }
}
