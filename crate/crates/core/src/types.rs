//! Domain types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of entries in a tag embedding.
pub const TAG_EMBEDDING_DIM: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("feature matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("feature matrix declares {expected} values but holds {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid span [{start}, {end})")]
    InvalidSpan { start: f64, end: f64 },
    #[error("popularity {0} outside [0, 1]")]
    Popularity(f64),
    #[error("video {id}: {reason}")]
    InvalidVideo { id: String, reason: String },
}

/// Per-video segment features, one row per segment, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    num_segments: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(num_segments: usize, dim: usize, values: Vec<f32>) -> Result<Self, TypeError> {
        if num_segments == 0 || dim == 0 {
            return Err(TypeError::EmptyMatrix {
                rows: num_segments,
                cols: dim,
            });
        }
        let expected = num_segments * dim;
        if values.len() != expected {
            return Err(TypeError::ShapeMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TypeError::NonFinite {
                row: i / dim,
                col: i % dim,
            });
        }
        Ok(Self {
            num_segments,
            dim,
            values,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    /// Multiply every value by `factor`, keeping the shape.
    pub fn scaled(&self, factor: f32) -> Result<Self, TypeError> {
        Self::new(
            self.num_segments,
            self.dim,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Half-open time interval `[start, end)` in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct SegmentSpan {
    start: f64,
    end: f64,
}

impl SegmentSpan {
    pub fn new(start: f64, end: f64) -> Result<Self, TypeError> {
        if !(start.is_finite() && end.is_finite() && start >= 0.0 && end > start) {
            return Err(TypeError::InvalidSpan { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Length of the intersection with `[start, end)`.
    pub fn overlap(&self, start: f64, end: f64) -> f64 {
        (self.end.min(end) - self.start.max(start)).max(0.0)
    }
}

impl TryFrom<[f64; 2]> for SegmentSpan {
    type Error = TypeError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1])
    }
}

impl From<SegmentSpan> for [f64; 2] {
    fn from(s: SegmentSpan) -> Self {
        [s.start, s.end]
    }
}

/// A user-created GIF located in its source video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GifSpan {
    pub start: f64,
    pub end: f64,
    /// Normalized view count in `[0, 1]`.
    #[serde(default)]
    pub popularity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creator_id: Option<String>,
}

impl GifSpan {
    pub fn new(start: f64, end: f64, popularity: f64) -> Result<Self, TypeError> {
        let gif = Self {
            start,
            end,
            popularity,
            creator_id: None,
        };
        gif.validate()?;
        Ok(gif)
    }

    pub fn with_creator(mut self, creator: impl Into<String>) -> Self {
        self.creator_id = Some(creator.into());
        self
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if !(self.start.is_finite() && self.end.is_finite() && self.end > self.start) {
            return Err(TypeError::InvalidSpan {
                start: self.start,
                end: self.end,
            });
        }
        if !(0.0..=1.0).contains(&self.popularity) {
            return Err(TypeError::Popularity(self.popularity));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
    #[serde(rename = "ign")]
    Ignored,
}

/// Video-level side information used by the optional context features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextMeta {
    pub category_index: usize,
    pub num_categories: usize,
    pub tag_embedding: Vec<f32>,
}

impl ContextMeta {
    pub fn validate(&self) -> Result<(), String> {
        if self.tag_embedding.len() != TAG_EMBEDDING_DIM {
            return Err(format!(
                "tag embedding has {} entries, expected {TAG_EMBEDDING_DIM}",
                self.tag_embedding.len()
            ));
        }
        if self.tag_embedding.iter().any(|v| !v.is_finite()) {
            return Err("tag embedding contains a non-finite value".into());
        }
        Ok(())
    }
}

/// One source video: its segmentation, aligned GIFs and segment labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub duration: f64,
    pub segments: Vec<SegmentSpan>,
    #[serde(default)]
    pub gifs: Vec<GifSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<Label>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextMeta>,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<(), TypeError> {
        let bad = |reason: String| TypeError::InvalidVideo {
            id: self.id.clone(),
            reason,
        };
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(bad(format!("duration {} must be positive", self.duration)));
        }
        let mut prev_end = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start() < prev_end {
                return Err(bad(format!("segment {i} overlaps or is out of order")));
            }
            if s.end() > self.duration {
                return Err(bad(format!("segment {i} ends after the video")));
            }
            prev_end = s.end();
        }
        for (i, g) in self.gifs.iter().enumerate() {
            g.validate()?;
            if g.start < 0.0 || g.end > self.duration {
                return Err(bad(format!("gif {i} lies outside [0, duration]")));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.segments.len() {
                return Err(bad(format!(
                    "{} labels for {} segments",
                    labels.len(),
                    self.segments.len()
                )));
            }
        }
        if let Some(ctx) = &self.context {
            ctx.validate().map_err(bad)?;
        }
        Ok(())
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }
}
