//! Locate a GIF inside its source video by frame-hash matching, and turn
//! aligned GIF spans into per-segment labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phash::{hamming, PHash64};
use crate::types::{Label, VideoRecord};

pub const DEFAULT_MAX_BIT_DISTANCE: u32 = 10;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.66;
/// A GIF frame counts as matched when its best video match lies this close
/// (seconds) to the position predicted by the consensus offset.
pub const MATCH_WINDOW_SECS: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("no GIF frame matches the video within the bit-distance budget")]
    NoMatch,
    #[error("degenerate hash track: {0}")]
    DegenerateTrack(String),
}

/// Frame hashes with their timestamps (seconds, strictly increasing).
#[derive(Clone, Debug, PartialEq)]
pub struct HashTrack {
    hashes: Vec<PHash64>,
    timestamps: Vec<f64>,
}

impl HashTrack {
    pub fn new(hashes: Vec<PHash64>, timestamps: Vec<f64>) -> Result<Self, AlignError> {
        if hashes.is_empty() {
            return Err(AlignError::DegenerateTrack("empty track".into()));
        }
        if hashes.len() != timestamps.len() {
            return Err(AlignError::DegenerateTrack(format!(
                "{} hashes but {} timestamps",
                hashes.len(),
                timestamps.len()
            )));
        }
        if timestamps.iter().any(|t| !t.is_finite()) || timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AlignError::DegenerateTrack(
                "timestamps must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { hashes, timestamps })
    }

    /// Uniformly sampled track starting at `t0`.
    pub fn uniform(hashes: Vec<PHash64>, t0: f64, period: f64) -> Result<Self, AlignError> {
        let ts = (0..hashes.len()).map(|i| t0 + i as f64 * period).collect();
        Self::new(hashes, ts)
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn hashes(&self) -> &[PHash64] {
        &self.hashes
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub video_start: f64,
    pub video_end: f64,
    pub mean_bit_distance: f64,
    pub matched_fraction: f64,
}

/// Nearest video frame for each GIF frame, ties to the earliest frame.
fn best_matches(gif: &HashTrack, video: &HashTrack, max_bit_distance: u32) -> Vec<Option<(usize, u32)>> {
    gif.hashes
        .iter()
        .map(|&g| {
            video
                .hashes
                .iter()
                .enumerate()
                .map(|(j, &v)| (j, hamming(g, v)))
                .filter(|&(_, d)| d <= max_bit_distance)
                .min_by_key(|&(j, d)| (d, j))
        })
        .collect()
}

/// Align `gif` against `video`.
///
/// Every GIF frame votes for the offset `t_video - t_gif` of its nearest
/// video frame; the lower median of the votes is the alignment offset.
pub fn align_gif(gif: &HashTrack, video: &HashTrack, max_bit_distance: u32) -> Result<Alignment, AlignError> {
    if gif.is_empty() || video.is_empty() {
        return Err(AlignError::DegenerateTrack("empty track".into()));
    }
    let matches = best_matches(gif, video, max_bit_distance.min(64));
    let mut offsets: Vec<f64> = matches
        .iter()
        .zip(&gif.timestamps)
        .filter_map(|(m, &tg)| m.map(|(j, _)| video.timestamps[j] - tg))
        .collect();
    if offsets.is_empty() {
        return Err(AlignError::NoMatch);
    }
    offsets.sort_by(f64::total_cmp);
    let offset = offsets[(offsets.len() - 1) / 2];

    let mut inliers = 0usize;
    let mut dist_sum = 0u64;
    for (m, &tg) in matches.iter().zip(&gif.timestamps) {
        if let Some((j, d)) = *m {
            if (video.timestamps[j] - (tg + offset)).abs() <= MATCH_WINDOW_SECS {
                inliers += 1;
                dist_sum += d as u64;
            }
        }
    }
    if inliers == 0 {
        return Err(AlignError::NoMatch);
    }
    Ok(Alignment {
        video_start: offset + gif.timestamps[0],
        video_end: offset + gif.timestamps[gif.len() - 1],
        mean_bit_distance: dist_sum as f64 / inliers as f64,
        matched_fraction: inliers as f64 / gif.len() as f64,
    })
}

/// Label each segment against a set of GIF spans: positive when more than
/// `threshold` of the segment lies inside some span, negative when it
/// touches no span at all, ignored otherwise.
pub fn label_segments_with_threshold(video: &VideoRecord, spans: &[(f64, f64)], threshold: f64) -> Vec<Label> {
    video
        .segments
        .iter()
        .map(|seg| {
            let best = spans
                .iter()
                .map(|&(s, e)| seg.overlap(s, e))
                .fold(0.0f64, f64::max);
            if best / seg.duration() > threshold {
                Label::Positive
            } else if best == 0.0 {
                Label::Negative
            } else {
                Label::Ignored
            }
        })
        .collect()
}

pub fn label_segments(video: &VideoRecord, spans: &[(f64, f64)]) -> Vec<Label> {
    label_segments_with_threshold(video, spans, DEFAULT_OVERLAP_THRESHOLD)
}

/// Labels derived from the video's own GIF list.
pub fn labels_from_gifs(video: &VideoRecord) -> Vec<Label> {
    let spans: Vec<(f64, f64)> = video.gifs.iter().map(|g| (g.start, g.end)).collect();
    label_segments(video, &spans)
}

pub fn parse_timestamps(text: &str) -> Result<Vec<f64>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| format!("line {}: {e}", i + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::types::SegmentSpan;
    use proptest::prelude::*;

    fn random_hashes(rng: &mut Rng, n: usize) -> Vec<PHash64> {
        (0..n).map(|_| PHash64(rng.next_u64())).collect()
    }

    fn flip_bits(rng: &mut Rng, h: PHash64, count: usize) -> PHash64 {
        let bits = rng.sample_indices(64, count);
        PHash64(bits.iter().fold(h.0, |acc, &b| acc ^ (1u64 << b)))
    }

    fn video(segs: &[(f64, f64)], duration: f64) -> VideoRecord {
        VideoRecord {
            id: "v".into(),
            duration,
            segments: segs.iter().map(|&(s, e)| SegmentSpan::new(s, e).unwrap()).collect(),
            gifs: vec![],
            labels: None,
            context: None,
        }
    }

    #[test]
    fn exact_subsequence_is_recovered() {
        let mut rng = Rng::new(1);
        let period = 0.04;
        let vhash = random_hashes(&mut rng, 300);
        let video = HashTrack::uniform(vhash.clone(), 0.0, period).unwrap();
        let gif = HashTrack::uniform(vhash[100..120].to_vec(), 0.0, period).unwrap();
        let a = align_gif(&gif, &video, 10).unwrap();
        assert_eq!(a.video_start, video.timestamps()[100]);
        assert_eq!(a.video_end, video.timestamps()[119]);
        assert_eq!(a.matched_fraction, 1.0);
        assert_eq!(a.mean_bit_distance, 0.0);
    }

    #[test]
    fn flipped_bits_within_one_frame() {
        let mut rng = Rng::new(2);
        let period = 0.1;
        for _ in 0..20 {
            let vhash = random_hashes(&mut rng, 200);
            let video = HashTrack::uniform(vhash.clone(), 0.0, period).unwrap();
            let start = rng.below(180);
            let g: Vec<PHash64> = vhash[start..start + 20]
                .iter()
                .map(|&h| flip_bits(&mut rng, h, 4))
                .collect();
            let gif = HashTrack::uniform(g, 0.0, period).unwrap();
            let a = align_gif(&gif, &video, 10).unwrap();
            assert!((a.video_start - start as f64 * period).abs() <= period);
        }
    }

    #[test]
    fn unrelated_gif_has_no_match() {
        let mut rng = Rng::new(3);
        let video = HashTrack::uniform(random_hashes(&mut rng, 500), 0.0, 0.04).unwrap();
        let gif = HashTrack::uniform(random_hashes(&mut rng, 30), 0.0, 0.1).unwrap();
        assert_eq!(align_gif(&gif, &video, 4), Err(AlignError::NoMatch));
    }

    #[test]
    fn repeated_frames_do_not_move_the_median() {
        // A static scene: the first GIF frame also appears at the very start.
        let mut rng = Rng::new(4);
        let mut vhash = random_hashes(&mut rng, 100);
        vhash[0] = vhash[50];
        let video = HashTrack::uniform(vhash.clone(), 0.0, 1.0).unwrap();
        let gif = HashTrack::uniform(vhash[50..60].to_vec(), 0.0, 1.0).unwrap();
        let a = align_gif(&gif, &video, 10).unwrap();
        assert_eq!(a.video_start, 50.0);
        assert_eq!(a.matched_fraction, 0.9);
    }

    #[test]
    fn degenerate_tracks() {
        assert!(matches!(
            HashTrack::new(vec![], vec![]),
            Err(AlignError::DegenerateTrack(_))
        ));
        assert!(HashTrack::new(vec![PHash64(0); 2], vec![1.0, 1.0]).is_err());
        assert!(HashTrack::new(vec![PHash64(0); 2], vec![1.0]).is_err());
    }

    #[test]
    fn label_examples() {
        let v = video(&[(10.0, 15.0)], 30.0);
        assert_eq!(label_segments(&v, &[(8.0, 20.0)]), vec![Label::Positive]);
        let v = video(&[(0.0, 10.0)], 30.0);
        assert_eq!(label_segments(&v, &[(5.0, 10.0)]), vec![Label::Ignored]);
        assert_eq!(label_segments(&v, &[(20.0, 30.0)]), vec![Label::Negative]);
    }

    #[test]
    fn threshold_is_strict() {
        let v = video(&[(0.0, 100.0)], 100.0);
        assert_eq!(label_segments(&v, &[(0.0, 66.0)]), vec![Label::Ignored]);
        assert_eq!(label_segments(&v, &[(0.0, 66.5)]), vec![Label::Positive]);
    }

    proptest! {
        #[test]
        fn shift_equivariance(start in 0usize..150, shift in -64i32..64) {
            let mut rng = Rng::new(start as u64);
            let vhash = random_hashes(&mut rng, 200);
            let c = shift as f64 * 0.25;
            let video = HashTrack::uniform(vhash.clone(), 0.0, 0.5).unwrap();
            let shifted = HashTrack::uniform(vhash.clone(), c, 0.5).unwrap();
            let gif = HashTrack::uniform(vhash[start..start + 25].to_vec(), 0.0, 0.5).unwrap();
            let a = align_gif(&gif, &video, 10).unwrap();
            let b = align_gif(&gif, &shifted, 10).unwrap();
            prop_assert_eq!(b.video_start, a.video_start + c);
            prop_assert_eq!(b.video_end, a.video_end + c);
        }

        #[test]
        fn labels_partition_and_ignore_span_order(
            cuts in proptest::collection::vec(1u32..40, 1..8),
            spans in proptest::collection::vec((0.0f64..100.0, 0.5f64..30.0), 0..5),
        ) {
            let mut t = 0.0;
            let mut segs = vec![];
            for c in &cuts {
                segs.push((t, t + *c as f64));
                t += *c as f64;
            }
            let v = video(&segs, t + 1.0);
            let spans: Vec<(f64, f64)> = spans.iter().map(|&(s, l)| (s, s + l)).collect();
            let labels = label_segments(&v, &spans);
            prop_assert_eq!(labels.len(), segs.len());
            let mut rev = spans.clone();
            rev.reverse();
            prop_assert_eq!(labels, label_segments(&v, &rev));
        }
    }
}
