//! Ranking metrics: normalized meaningful summary duration (nMSD), average
//! precision, and the inter-annotator upper bound.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{label_segments, labels_from_gifs};
use crate::types::{GifSpan, Label, VideoRecord};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Relative slack on coverage comparisons, absorbing rounding in sums of
/// segment overlaps.
const COVERAGE_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("video {video}: segments cover less than alpha of the ground-truth GIF")]
    UnreachableRecall { video: String },
    #[error("video {0}: no positive segments")]
    NoPositives(String),
    #[error("video {0}: no ground-truth GIFs")]
    NoGifs(String),
    #[error("video {0}: GIFs from fewer than two creators")]
    InsufficientCreators(String),
    #[error("video {video}: {reason}")]
    InvalidInput { video: String, reason: String },
    #[error("no video could be scored")]
    NothingScored,
}

/// A video with one score per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedVideo {
    pub video: VideoRecord,
    pub scores: Vec<f64>,
}

impl RankedVideo {
    pub fn new(video: VideoRecord, scores: Vec<f64>) -> Result<Self, EvalError> {
        let bad = |reason: &str| EvalError::InvalidInput {
            video: video.id.clone(),
            reason: reason.into(),
        };
        if scores.len() != video.num_segments() {
            return Err(bad("score count differs from segment count"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(bad("non-finite score"));
        }
        Ok(Self { video, scores })
    }

    /// Segment indices by descending score, earlier start first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        let segs = &self.video.segments;
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then(segs[a].start().total_cmp(&segs[b].start()))
                .then(a.cmp(&b))
        });
        order
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMetric {
    pub id: String,
    pub nmsd: f64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmsd: f64,
    pub map: f64,
    pub per_video: Vec<VideoMetric>,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

impl MetricReport {
    /// CSV with one `video_id,nmsd,ap` row per scored video.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "video_id,nmsd,ap")?;
        for m in &self.per_video {
            writeln!(w, "{},{},{}", m.id, m.nmsd, m.ap)?;
        }
        Ok(())
    }
}

/// nMSD of one ground-truth GIF: the duration selected, walking down the
/// ranking until the selection covers `alpha` of the GIF, normalized to
/// `[0, 1]` between the ideal `alpha |gt|` and the whole video.
pub fn nmsd(video: &RankedVideo, gt: &GifSpan, alpha: f64) -> Result<f64, EvalError> {
    let id = &video.video.id;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EvalError::InvalidInput {
            video: id.clone(),
            reason: format!("alpha {alpha} outside (0, 1]"),
        });
    }
    let target = alpha * gt.duration();
    let total = video.video.duration;
    if total <= target {
        return Err(EvalError::InvalidInput {
            video: id.clone(),
            reason: "video is not longer than alpha times the GIF".into(),
        });
    }
    let eps = COVERAGE_EPS * gt.duration();
    let segs = &video.video.segments;
    let reachable: f64 = segs.iter().map(|s| s.overlap(gt.start, gt.end)).sum();
    if reachable < target - eps {
        return Err(EvalError::UnreachableRecall { video: id.clone() });
    }
    let mut covered = 0.0;
    let mut selected = 0.0;
    for i in video.ranking() {
        covered += segs[i].overlap(gt.start, gt.end);
        selected += segs[i].duration();
        if covered >= target - eps {
            break;
        }
    }
    Ok(((selected - target) / (total - target)).clamp(0.0, 1.0))
}

/// Mean nMSD over all GIFs of the video.
pub fn video_nmsd(video: &RankedVideo, alpha: f64) -> Result<f64, EvalError> {
    mean_nmsd(video, &video.video.gifs, alpha)
}

fn mean_nmsd(video: &RankedVideo, gifs: &[GifSpan], alpha: f64) -> Result<f64, EvalError> {
    if gifs.is_empty() {
        return Err(EvalError::NoGifs(video.video.id.clone()));
    }
    let mut sum = 0.0;
    for g in gifs {
        sum += nmsd(video, g, alpha)?;
    }
    Ok(sum / gifs.len() as f64)
}

/// Labels used for average precision: the stored labels, or labels derived
/// from the GIF spans when the record has none.
fn eval_labels(video: &VideoRecord) -> Vec<Label> {
    video.labels.clone().unwrap_or_else(|| labels_from_gifs(video))
}

fn ap_with_labels(video: &RankedVideo, labels: &[Label]) -> Result<f64, EvalError> {
    let mut hits = 0usize;
    let mut rank = 0usize;
    let mut sum = 0.0;
    for i in video.ranking() {
        match labels[i] {
            Label::Ignored => continue,
            Label::Positive => {
                rank += 1;
                hits += 1;
                sum += hits as f64 / rank as f64;
            }
            Label::Negative => rank += 1,
        }
    }
    if hits == 0 {
        return Err(EvalError::NoPositives(video.video.id.clone()));
    }
    Ok(sum / hits as f64)
}

/// Mean over positive segments of the precision at their rank. Ignored
/// segments are left out of the ranking.
pub fn average_precision(video: &RankedVideo) -> Result<f64, EvalError> {
    ap_with_labels(video, &eval_labels(&video.video))
}

fn report(mut per_video: Vec<VideoMetric>, warnings: Vec<String>) -> Result<MetricReport, EvalError> {
    if per_video.is_empty() {
        return Err(EvalError::NothingScored);
    }
    per_video.sort_by(|a, b| a.id.cmp(&b.id));
    let n = per_video.len() as f64;
    let nmsd = per_video.iter().map(|m| m.nmsd).sum::<f64>() / n;
    let map = per_video.iter().map(|m| m.ap).sum::<f64>() / n;
    Ok(MetricReport {
        nmsd,
        map,
        per_video,
        skipped: warnings.len(),
        warnings,
    })
}

/// Per-video nMSD and AP with unweighted means. Videos that cannot be scored
/// are skipped and listed in the warnings.
pub fn evaluate(ranked: &[RankedVideo], alpha: f64) -> Result<MetricReport, EvalError> {
    let mut per_video = Vec::with_capacity(ranked.len());
    let mut warnings = Vec::new();
    for rv in ranked {
        match video_nmsd(rv, alpha).and_then(|n| average_precision(rv).map(|ap| (n, ap))) {
            Ok((nmsd, ap)) => per_video.push(VideoMetric {
                id: rv.video.id.clone(),
                nmsd,
                ap,
            }),
            Err(e) => warnings.push(e.to_string()),
        }
    }
    report(per_video, warnings)
}

/// Agreement between GIF creators: each GIF in turn ranks the segments by
/// its overlap with them and is scored against the GIFs of the other
/// creators.
pub fn upper_bound(videos: &[VideoRecord], alpha: f64) -> Result<MetricReport, EvalError> {
    for v in videos {
        let creators: BTreeSet<&str> = v.gifs.iter().filter_map(|g| g.creator_id.as_deref()).collect();
        if creators.len() < 2 {
            return Err(EvalError::InsufficientCreators(v.id.clone()));
        }
    }
    let mut per_video = Vec::with_capacity(videos.len());
    let mut warnings = Vec::new();
    for v in videos {
        let (mut nmsd_sum, mut ap_sum, mut n_nmsd, mut n_ap) = (0.0, 0.0, 0usize, 0usize);
        for held in &v.gifs {
            let others: Vec<GifSpan> = v
                .gifs
                .iter()
                .filter(|g| g.creator_id.is_some() && g.creator_id != held.creator_id)
                .cloned()
                .collect();
            let scores = v
                .segments
                .iter()
                .map(|s| s.overlap(held.start, held.end) / s.duration())
                .collect();
            let rv = RankedVideo::new(v.clone(), scores)?;
            match mean_nmsd(&rv, &others, alpha) {
                Ok(x) => {
                    nmsd_sum += x;
                    n_nmsd += 1;
                }
                Err(e) => warnings.push(e.to_string()),
            }
            let spans: Vec<(f64, f64)> = others.iter().map(|g| (g.start, g.end)).collect();
            if let Ok(ap) = ap_with_labels(&rv, &label_segments(v, &spans)) {
                ap_sum += ap;
                n_ap += 1;
            }
        }
        if n_nmsd == 0 || n_ap == 0 {
            warnings.push(format!("video {}: no held-out GIF could be scored", v.id));
            continue;
        }
        per_video.push(VideoMetric {
            id: v.id.clone(),
            nmsd: nmsd_sum / n_nmsd as f64,
            ap: ap_sum / n_ap as f64,
        });
    }
    report(per_video, warnings)
}

/// Fraction of (positive, negative) segment pairs within each video that
/// the scores order correctly; ties count as errors.
pub fn pair_ordering_accuracy(ranked: &[RankedVideo]) -> f64 {
    let (mut correct, mut total) = (0usize, 0usize);
    for rv in ranked {
        let labels = eval_labels(&rv.video);
        for (p, _) in labels.iter().enumerate().filter(|(_, &l)| l == Label::Positive) {
            for (n, _) in labels.iter().enumerate().filter(|(_, &l)| l == Label::Negative) {
                total += 1;
                if rv.scores[p] > rv.scores[n] {
                    correct += 1;
                }
            }
        }
    }
    if total == 0 {
        return f64::NAN;
    }
    correct as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SegmentSpan;

    fn unit_video(n: usize, gifs: Vec<GifSpan>, labels: Option<Vec<Label>>) -> VideoRecord {
        VideoRecord {
            id: "v".into(),
            duration: n as f64,
            segments: (0..n).map(|i| SegmentSpan::new(i as f64, i as f64 + 1.0).unwrap()).collect(),
            gifs,
            labels,
            context: None,
        }
    }

    fn gif(s: f64, e: f64) -> GifSpan {
        GifSpan::new(s, e, 0.5).unwrap()
    }

    #[test]
    fn one_third_example() {
        let v = unit_video(4, vec![gif(1.0, 3.0)], None);
        let rv = RankedVideo::new(v, vec![0.9, 0.1, 0.8, 0.2]).unwrap();
        assert!((nmsd(&rv, &gif(1.0, 3.0), 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_segment_ranked_first() {
        let mut v = unit_video(10, vec![], None);
        v.segments = vec![
            SegmentSpan::new(0.0, 4.0).unwrap(),
            SegmentSpan::new(4.0, 6.0).unwrap(),
            SegmentSpan::new(6.0, 10.0).unwrap(),
        ];
        let rv = RankedVideo::new(v, vec![0.0, 1.0, 0.5]).unwrap();
        let got = nmsd(&rv, &gif(4.0, 6.0), 0.5).unwrap();
        assert!((got - 1.0 / 9.0).abs() < 1e-12);
        // finer segmentation: top segment lies inside the GIF and reaches alpha
        let v = unit_video(10, vec![], None);
        let mut scores = vec![0.0; 10];
        scores[4] = 1.0;
        let rv = RankedVideo::new(v, scores).unwrap();
        assert_eq!(nmsd(&rv, &gif(4.0, 6.0), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn gt_ranked_last_is_one() {
        let v = unit_video(5, vec![], None);
        let rv = RankedVideo::new(v, vec![5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(nmsd(&rv, &gif(4.0, 5.0), 0.5).unwrap(), 1.0);
    }

    #[test]
    fn unreachable_recall() {
        let mut v = unit_video(4, vec![], None);
        v.duration = 10.0;
        let rv = RankedVideo::new(v, vec![1.0; 4]).unwrap();
        assert!(matches!(nmsd(&rv, &gif(6.0, 8.0), 0.5), Err(EvalError::UnreachableRecall { .. })));
    }

    #[test]
    fn multiple_gifs_average() {
        let v = unit_video(4, vec![gif(1.0, 3.0), gif(3.0, 4.0)], None);
        let rv = RankedVideo::new(v, vec![0.9, 0.1, 0.8, 0.2]).unwrap();
        let a = nmsd(&rv, &gif(1.0, 3.0), 0.5).unwrap();
        let b = nmsd(&rv, &gif(3.0, 4.0), 0.5).unwrap();
        assert!((video_nmsd(&rv, 0.5).unwrap() - (a + b) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ap_examples() {
        use Label::*;
        let v = unit_video(3, vec![], Some(vec![Positive, Negative, Positive]));
        let rv = RankedVideo::new(v, vec![3.0, 2.0, 1.0]).unwrap();
        assert!((average_precision(&rv).unwrap() - 5.0 / 6.0).abs() < 1e-15);

        let v = unit_video(4, vec![], Some(vec![Negative, Positive, Positive, Negative]));
        let rv = RankedVideo::new(v, vec![0.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(average_precision(&rv).unwrap(), 1.0);

        for r in 1..=6 {
            let mut labels = vec![Negative; 6];
            labels[r - 1] = Positive;
            let v = unit_video(6, vec![], Some(labels));
            let rv = RankedVideo::new(v, (0..6).map(|i| -(i as f64)).collect()).unwrap();
            assert!((average_precision(&rv).unwrap() - 1.0 / r as f64).abs() < 1e-15);
        }

        let v = unit_video(2, vec![], Some(vec![Negative, Negative]));
        let rv = RankedVideo::new(v, vec![1.0, 0.0]).unwrap();
        assert!(matches!(average_precision(&rv), Err(EvalError::NoPositives(_))));
    }

    #[test]
    fn ties_break_by_start() {
        use Label::*;
        let v = unit_video(3, vec![], Some(vec![Negative, Positive, Negative]));
        let rv = RankedVideo::new(v, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(rv.ranking(), vec![0, 1, 2]);
        assert_eq!(average_precision(&rv).unwrap(), 0.5);
    }

    fn named(id: &str, scores: Vec<f64>) -> RankedVideo {
        let mut v = unit_video(4, vec![gif(1.0, 3.0)], None);
        v.id = id.into();
        RankedVideo::new(v, scores).unwrap()
    }

    #[test]
    fn evaluate_means_and_skips() {
        let a = named("a", vec![0.0, 1.0, 0.9, 0.0]);
        let b = named("b", vec![0.9, 0.1, 0.8, 0.2]);
        let mut c = unit_video(4, vec![gif(6.0, 8.0)], None);
        c.duration = 10.0;
        c.id = "c".into();
        let c = RankedVideo::new(c, vec![1.0; 4]).unwrap();
        let r = evaluate(&[a.clone(), b.clone(), c.clone()], 0.5).unwrap();
        assert_eq!(r.per_video.len(), 2);
        assert_eq!(r.skipped, 1);
        let na = video_nmsd(&a, 0.5).unwrap();
        let nb = video_nmsd(&b, 0.5).unwrap();
        assert!((r.nmsd - (na + nb) / 2.0).abs() < 1e-15);
        let shuffled = evaluate(&[c, b, a], 0.5).unwrap();
        assert_eq!(shuffled, r);
    }

    #[test]
    fn perfect_fine_grained_video() {
        let v = unit_video(10, vec![gif(4.0, 6.0)], None);
        let mut scores = vec![0.0; 10];
        scores[4] = 2.0;
        scores[5] = 1.0;
        let r = evaluate(&[RankedVideo::new(v, scores).unwrap()], 0.5).unwrap();
        assert_eq!((r.nmsd, r.map), (0.0, 1.0));
    }

    #[test]
    fn upper_bound_cases() {
        let g = |s, e, c: &str| gif(s, e).with_creator(c);
        let v = unit_video(10, vec![g(3.0, 5.0, "x"), g(3.0, 5.0, "y")], None);
        let r = upper_bound(&[v], 0.5).unwrap();
        assert_eq!(r.nmsd, 0.0);
        assert_eq!(r.map, 1.0);

        // disjoint spans: ranking the other GIF's segments first
        let v = unit_video(10, vec![g(1.0, 2.0, "x"), g(7.0, 8.0, "y")], None);
        let r = upper_bound(std::slice::from_ref(&v), 0.5).unwrap();
        // brute force: held-out GIF's segment first, then remaining segments by start
        let mut expected = 0.0;
        for (held, other) in [((1.0, 2.0), (7.0, 8.0)), ((7.0, 8.0), (1.0, 2.0))] {
            let mut order: Vec<usize> = (0..10).collect();
            order.sort_by_key(|&i| (i as f64 != held.0, i));
            let mut selected = 0.0;
            for i in order {
                selected += 1.0;
                if i as f64 == other.0 {
                    break;
                }
            }
            expected += (selected - 0.5) / (10.0 - 0.5) / 2.0;
        }
        assert!((r.nmsd - expected).abs() < 1e-12, "{} vs {expected}", r.nmsd);

        let v = unit_video(10, vec![g(1.0, 2.0, "x"), g(7.0, 8.0, "x")], None);
        assert!(matches!(upper_bound(&[v], 0.5), Err(EvalError::InsufficientCreators(_))));
    }

    #[test]
    fn csv_output() {
        let r = evaluate(&[named("a", vec![0.0, 1.0, 0.9, 0.0])], 0.5).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("video_id,nmsd,ap\na,"));
    }

    #[test]
    fn pair_accuracy() {
        use Label::*;
        let v = unit_video(3, vec![], Some(vec![Positive, Negative, Negative]));
        let rv = RankedVideo::new(v, vec![1.0, 2.0, 0.0]).unwrap();
        assert_eq!(pair_ordering_accuracy(&[rv]), 0.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn ranked() -> impl Strategy<Value = (RankedVideo, GifSpan)> {
            (2usize..12)
                .prop_flat_map(|n| {
                    (
                        prop::collection::vec(0.2f64..3.0, n),
                        prop::collection::vec(-5.0f64..5.0, n),
                        0usize..n,
                        0.0f64..1.0,
                    )
                })
                .prop_map(|(durs, scores, gi, frac)| {
                    let mut t = 0.0;
                    let segments: Vec<SegmentSpan> = durs
                        .iter()
                        .map(|d| {
                            let s = SegmentSpan::new(t, t + d).unwrap();
                            t += d;
                            s
                        })
                        .collect();
                    let seg = segments[gi];
                    let start = seg.start() + frac * seg.duration() * 0.5;
                    let gt = GifSpan::new(start, seg.end(), 0.5).unwrap();
                    let video = VideoRecord {
                        id: "p".into(),
                        duration: t,
                        segments,
                        gifs: vec![gt.clone()],
                        labels: None,
                        context: None,
                    };
                    (RankedVideo::new(video, scores).unwrap(), gt)
                })
        }

        proptest! {
            #[test]
            fn nmsd_in_unit_interval((rv, gt) in ranked()) {
                if rv.video.duration > 0.5 * gt.duration() {
                    let x = nmsd(&rv, &gt, 0.5).unwrap();
                    prop_assert!((0.0..=1.0).contains(&x));
                }
            }

            #[test]
            fn nmsd_monotone_invariant((rv, gt) in ranked()) {
                let base = nmsd(&rv, &gt, 0.5).unwrap();
                let mapped = RankedVideo::new(
                    rv.video.clone(),
                    rv.scores.iter().map(|s| (0.5 * s).exp() * 3.0 - 1.0).collect(),
                ).unwrap();
                prop_assert_eq!(base, nmsd(&mapped, &gt, 0.5).unwrap());
            }
        }
    }
}
