//! Synthetic labeled datasets with a planted linear quality direction.
//!
//! Segment features are `x = o_v + q w + z`, where `o_v` is a per-video
//! offset, `q` a per-segment quality along the hidden unit vector `w` and `z`
//! standard normal. The planted score is `w . x`; the top-scoring segments
//! of each video are positive and each becomes one GIF. Videos whose offset
//! along `w` is low carry more GIFs, so comparisons across videos are
//! confounded while comparisons within a video are not. Outlier videos get
//! their labels shuffled and low GIF popularity.

use serde::{Deserialize, Serialize};

use crate::io::Dataset;
use crate::rng::Rng;
use crate::types::{ContextMeta, FeatureMatrix, GifSpan, Label, SegmentSpan, VideoRecord, TAG_EMBEDDING_DIM};

pub const SYNTH_CATEGORIES: usize = 19;
/// Standard deviation of the per-video offset along the planted direction.
const OFFSET_SCALE: f64 = 6.0;
/// Standard deviation of each segment's quality along the planted direction.
const QUALITY_SCALE: f64 = 1.5;
/// Standard deviation of the per-video offset in all other directions.
const NUISANCE_SCALE: f64 = 0.5;
const MIN_SEGMENT_SECS: f64 = 1.0;
const MAX_SEGMENT_SECS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub num_videos: usize,
    pub segs_per_video: usize,
    pub dim: usize,
    /// Standard deviation of Gaussian noise added to the planted score
    /// before picking the top segments.
    pub noise_level: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

/// Ground truth recorded alongside a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthInfo {
    pub params: SynthParams,
    pub direction: Vec<f64>,
    pub permuted: Vec<bool>,
    pub permuted_count: usize,
    /// Planted score of every segment, video by video.
    pub planted_scores: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub data: Dataset,
    pub info: SynthInfo,
}

/// Number of GIFs for a video whose offset along the planted direction is
/// `offset`, in `1..=5`, decreasing with the offset.
fn gif_count(offset: f64, segs: usize) -> usize {
    let m = (3.0 - offset / OFFSET_SCALE * 1.5).round().clamp(1.0, 5.0) as usize;
    m.min(segs.saturating_sub(1)).max(1)
}

pub fn synth_dataset(
    num_videos: usize,
    segs_per_video: usize,
    dim: usize,
    noise_level: f64,
    outlier_fraction: f64,
    seed: u64,
) -> SynthDataset {
    assert!(num_videos >= 1 && segs_per_video >= 1 && dim >= 1, "counts must be at least 1");
    assert!(noise_level >= 0.0, "noise level must be non-negative");
    assert!((0.0..1.0).contains(&outlier_fraction), "outlier fraction must lie in [0, 1)");
    let params = SynthParams {
        num_videos,
        segs_per_video,
        dim,
        noise_level,
        outlier_fraction,
        seed,
    };
    let root = Rng::new(seed);
    let mut dir_rng = root.split(0);
    let mut direction: Vec<f64> = (0..dim).map(|_| dir_rng.normal()).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut data = Vec::with_capacity(num_videos);
    let mut permuted = Vec::with_capacity(num_videos);
    let mut planted_scores = Vec::with_capacity(num_videos);
    for v in 0..num_videos {
        let mut rng = root.split(1 + v as u64);
        let along = OFFSET_SCALE * rng.normal();
        let offset: Vec<f64> = direction
            .iter()
            .map(|&w| along * w + NUISANCE_SCALE * rng.normal())
            .collect();
        let mut values = Vec::with_capacity(segs_per_video * dim);
        let mut planted = Vec::with_capacity(segs_per_video);
        for _ in 0..segs_per_video {
            let quality = QUALITY_SCALE * rng.normal();
            let row: Vec<f64> = offset
                .iter()
                .zip(&direction)
                .map(|(&o, &w)| o + quality * w + rng.normal())
                .collect();
            // score of the stored f32 features, so the labels match them exactly
            let row32: Vec<f32> = row.iter().map(|&x| x as f32).collect();
            planted.push(row32.iter().zip(&direction).map(|(&x, &w)| x as f64 * w).sum::<f64>());
            values.extend(row32);
        }
        let noisy: Vec<f64> = planted
            .iter()
            .map(|&u| if noise_level > 0.0 { u + noise_level * rng.normal() } else { u })
            .collect();
        let mut order: Vec<usize> = (0..segs_per_video).collect();
        order.sort_by(|&a, &b| noisy[b].total_cmp(&noisy[a]).then(a.cmp(&b)));
        let m = gif_count(along, segs_per_video);
        let mut labels = vec![Label::Negative; segs_per_video];
        for &i in &order[..m] {
            labels[i] = Label::Positive;
        }
        let is_outlier = rng.bernoulli(outlier_fraction);
        if is_outlier {
            rng.shuffle(&mut labels);
        }

        let mut t = 0.0;
        let segments: Vec<SegmentSpan> = (0..segs_per_video)
            .map(|_| {
                let d = rng.uniform_range(MIN_SEGMENT_SECS, MAX_SEGMENT_SECS);
                let s = SegmentSpan::new(t, t + d).expect("positive duration");
                t += d;
                s
            })
            .collect();
        let gifs = labels
            .iter()
            .zip(&segments)
            .filter(|(&l, _)| l == Label::Positive)
            .enumerate()
            .map(|(j, (_, s))| {
                let popularity = if is_outlier {
                    rng.uniform_range(0.0, 0.5)
                } else {
                    rng.uniform_range(0.5, 1.0)
                };
                GifSpan::new(s.start(), s.end(), popularity)
                    .expect("valid gif")
                    .with_creator(format!("creator{j}"))
            })
            .collect();
        let context = ContextMeta {
            category_index: rng.below(SYNTH_CATEGORIES),
            num_categories: SYNTH_CATEGORIES,
            tag_embedding: (0..TAG_EMBEDDING_DIM).map(|_| rng.normal() as f32).collect(),
        };
        let record = VideoRecord {
            id: format!("video{v:05}"),
            duration: t,
            segments,
            gifs,
            labels: Some(labels),
            context: Some(context),
        };
        let features = FeatureMatrix::new(segs_per_video, dim, values).expect("finite synthetic features");
        data.push((record, features));
        permuted.push(is_outlier);
        planted_scores.push(planted);
    }
    let permuted_count = permuted.iter().filter(|&&p| p).count();
    SynthDataset {
        data,
        info: SynthInfo {
            params,
            direction,
            permuted,
            permuted_count,
            planted_scores,
        },
    }
}

/// Deterministic train/test split by video, `test_fraction` of the videos
/// (at least one) going to the test side.
pub fn split_dataset(data: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    Rng::new(seed).shuffle(&mut idx);
    let n_test = ((data.len() as f64 * test_fraction).round() as usize).clamp(1, data.len().saturating_sub(1).max(1));
    let mut test_idx = idx[..n_test].to_vec();
    let mut train_idx = idx[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |ids: &[usize]| ids.iter().map(|&i| data[i].clone()).collect();
    (pick(&train_idx), pick(&test_idx))
}
