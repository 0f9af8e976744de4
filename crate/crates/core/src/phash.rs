//! 64-bit DCT perceptual hash of grayscale frames.
//!
//! The construction is fixed bit-for-bit:
//! 1. bilinear resize to 32x32 with pixel-center alignment,
//! 2. orthonormal 2-D type-II DCT in double precision,
//! 3. the 8x8 low-frequency block; bit `8*u + v` is set iff coefficient
//!    `(u, v)` is strictly greater than the median of the 63 AC
//!    coefficients. Slot 0 (the DC term) is always clear.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use thiserror::Error;

const RESIZE: usize = 32;
const BLOCK: usize = 8;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("{path}: bad PGM header: {reason}")]
    BadHeader { path: PathBuf, reason: String },
    #[error("{path}: truncated pixel data ({actual} of {expected} bytes)")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: unsupported maxval {maxval} (only 255 is accepted)")]
    UnsupportedMaxval { path: PathBuf, maxval: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// 8-bit grayscale frame, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayFrame {
    /// Returns `None` when a dimension is zero or the pixel count is wrong.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Option<Self> {
        (width >= 1 && height >= 1 && pixels.len() == width * height).then_some(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn map_pixels(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct PHash64(pub u64);

impl PHash64 {
    pub fn bits(self) -> u64 {
        self.0
    }
}

impl fmt::Display for PHash64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for PHash64 {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s.trim(), 16).map(PHash64)
    }
}

pub fn hamming(a: PHash64, b: PHash64) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// Bilinear resample to `dst_w x dst_h`; source coordinate of destination
/// pixel `i` is `(i + 0.5) * src / dst - 0.5`, clamped to the image.
pub fn resize_bilinear(frame: &GrayFrame, dst_w: usize, dst_h: usize) -> Vec<f64> {
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..dst)
            .map(|i| {
                let c = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = c.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, c - lo as f64)
            })
            .collect()
    };
    let xs = axis(dst_w, frame.width);
    let ys = axis(dst_h, frame.height);
    let px = |x: usize, y: usize| frame.pixels[y * frame.width + x] as f64;
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = lerp(px(x0, y0), px(x1, y0), tx);
            let bottom = lerp(px(x0, y1), px(x1, y1), tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    out
}

/// Orthonormal DCT-II basis, `basis[k][n] = a_k cos(pi (2n + 1) k / 2N)`.
fn dct_basis() -> &'static [[f64; RESIZE]; RESIZE] {
    static BASIS: OnceLock<[[f64; RESIZE]; RESIZE]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let n = RESIZE as f64;
        let mut b = [[0.0; RESIZE]; RESIZE];
        for (k, row) in b.iter_mut().enumerate() {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (i, v) in row.iter_mut().enumerate() {
                *v = scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
            }
        }
        b
    })
}

/// Low-frequency 8x8 block of the 2-D DCT of a 32x32 image, row-major.
fn dct_low_block(img: &[f64]) -> [f64; BLOCK * BLOCK] {
    debug_assert_eq!(img.len(), RESIZE * RESIZE);
    let basis = dct_basis();
    // Centering only changes the DC term in exact arithmetic; it keeps the AC
    // terms of flat images exactly zero in floating point.
    let mean = img.iter().sum::<f64>() / img.len() as f64;
    // Rows first: tmp[y][v] = sum_x img[y][x] * basis[v][x]
    let mut tmp = [[0.0; BLOCK]; RESIZE];
    for (y, row) in tmp.iter_mut().enumerate() {
        let src = &img[y * RESIZE..(y + 1) * RESIZE];
        for (v, out) in row.iter_mut().enumerate() {
            *out = src
                .iter()
                .zip(basis[v].iter())
                .map(|(p, b)| (p - mean) * b)
                .sum();
        }
    }
    let mut block = [0.0; BLOCK * BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            block[u * BLOCK + v] = (0..RESIZE).map(|y| basis[u][y] * tmp[y][v]).sum();
        }
    }
    block
}

pub fn phash(frame: &GrayFrame) -> PHash64 {
    let img = resize_bilinear(frame, RESIZE, RESIZE);
    let block = dct_low_block(&img);
    let mut ac: Vec<f64> = block[1..].to_vec();
    ac.sort_by(f64::total_cmp);
    let median = ac[ac.len() / 2];
    let bits = block
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c > median)
        .fold(0u64, |acc, (i, _)| acc | (1u64 << i));
    PHash64(bits)
}

fn is_pgm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Decode a binary (P5) 8-bit PGM image.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayFrame, PgmError> {
    let bad = |reason: &str| PgmError::BadHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("magic is not P5"));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(&b) if is_pgm_space(b) => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("number out of range"))?;
    }
    if !bytes.get(pos).copied().is_some_and(is_pgm_space) {
        return Err(bad("missing whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    if maxval != 255 {
        return Err(PgmError::UnsupportedMaxval {
            path: path.to_path_buf(),
            maxval,
        });
    }
    let expected = width as usize * height as usize;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(PgmError::TruncatedFile {
            path: path.to_path_buf(),
            expected,
            actual: data.len(),
        });
    }
    Ok(GrayFrame::new(width as usize, height as usize, data[..expected].to_vec()).expect("shape checked"))
}

pub fn encode_pgm(frame: &GrayFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayFrame, PgmError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PgmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm(frame: &GrayFrame, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, encode_pgm(frame))
}

/// One lowercase 16-digit hex hash per line.
pub fn format_hash_dump(hashes: &[PHash64]) -> String {
    hashes.iter().map(|h| format!("{h}\n")).collect()
}

pub fn parse_hash_dump(text: &str) -> Result<Vec<PHash64>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let l = l.trim();
            if l.len() != 16 {
                return Err(format!("line {}: expected 16 hex digits, got {l:?}", i + 1));
            }
            l.parse().map_err(|e| format!("line {}: {e}", i + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    /// Smooth random image: a few low-frequency cosines plus a gradient.
    pub(crate) fn natural_frame(rng: &mut Rng, w: usize, h: usize, amp: f64) -> GrayFrame {
        let waves: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.uniform_range(0.5, 4.0),
                    rng.uniform_range(0.5, 4.0),
                    rng.uniform_range(0.0, std::f64::consts::TAU),
                    rng.uniform_range(0.3, 1.0),
                )
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w.3).sum();
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
                let s: f64 = waves
                    .iter()
                    .map(|(a, b, p, m)| m * (std::f64::consts::TAU * (a * fx + b * fy) + p).cos())
                    .sum::<f64>()
                    / norm;
                px.push((amp * (0.5 + 0.5 * s)).round().clamp(0.0, 255.0) as u8);
            }
        }
        GrayFrame::new(w, h, px).unwrap()
    }

    #[test]
    fn constant_frame_hashes_to_zero() {
        let f = GrayFrame::new(40, 30, vec![128; 1200]).unwrap();
        assert_eq!(phash(&f), PHash64(0));
    }

    #[test]
    fn deterministic() {
        let mut rng = Rng::new(5);
        let f = natural_frame(&mut rng, 64, 48, 250.0);
        assert_eq!(phash(&f), phash(&f.clone()));
    }

    #[test]
    fn dc_slot_is_always_clear() {
        let mut rng = Rng::new(6);
        for _ in 0..50 {
            let f = natural_frame(&mut rng, 50, 40, 255.0);
            assert_eq!(phash(&f).0 & 1, 0);
        }
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming(PHash64(0xdead_beef), PHash64(0xdead_beef)), 0);
        assert_eq!(hamming(PHash64(u64::MAX), PHash64(0)), 64);
        assert_eq!(hamming(PHash64(0b1011), PHash64(0b0001)), 2);
    }

    #[test]
    fn resize_is_identity_at_target_size() {
        let mut rng = Rng::new(8);
        let px: Vec<u8> = (0..32 * 32).map(|_| rng.below(256) as u8).collect();
        let f = GrayFrame::new(32, 32, px.clone()).unwrap();
        let r = resize_bilinear(&f, 32, 32);
        assert!(r.iter().zip(&px).all(|(a, &b)| *a == b as f64));
    }

    #[test]
    fn dct_matches_direct_formula() {
        let mut rng = Rng::new(2);
        let img: Vec<f64> = (0..1024).map(|_| rng.uniform_range(0.0, 255.0)).collect();
        let block = dct_low_block(&img);
        let n = 32.0f64;
        let mean = img.iter().sum::<f64>() / 1024.0;
        for u in 0..8 {
            for v in 0..8 {
                let a = |k: usize| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                let mut s = 0.0;
                for y in 0..32 {
                    for x in 0..32 {
                        s += (img[y * 32 + x] - mean)
                            * (std::f64::consts::PI * (2 * y + 1) as f64 * u as f64 / 64.0).cos()
                            * (std::f64::consts::PI * (2 * x + 1) as f64 * v as f64 / 64.0).cos();
                    }
                }
                let direct = a(u) * a(v) * s;
                assert!((direct - block[u * 8 + v]).abs() < 1e-9, "({u},{v})");
            }
        }
    }

    #[test]
    fn small_pixel_noise_keeps_hash_close() {
        let mut rng = Rng::new(20_240_611);
        let mut worst = 0;
        for _ in 0..100 {
            let f = natural_frame(&mut rng, 96, 72, 230.0);
            let noisy = GrayFrame::new(
                f.width(),
                f.height(),
                f.pixels()
                    .iter()
                    .map(|&p| (p as i32 + rng.below(3) as i32 - 1).clamp(0, 255) as u8)
                    .collect(),
            )
            .unwrap();
            worst = worst.max(hamming(phash(&f), phash(&noisy)));
        }
        assert!(worst <= 6, "worst distance {worst}");
    }

    #[test]
    fn brightness_doubling_changes_few_bits() {
        let mut rng = Rng::new(77);
        let mut worst = 0;
        for _ in 0..100 {
            let f = natural_frame(&mut rng, 80, 60, 150.0);
            let doubled = f.map_pixels(|p| p.saturating_mul(2));
            worst = worst.max(hamming(phash(&f), phash(&doubled)));
        }
        assert!(worst <= 8, "worst distance {worst}");
    }

    #[test]
    fn pgm_decode() {
        let f = decode_pgm(b"P5 2 1 255 \x00\xff", Path::new("t")).unwrap();
        assert_eq!((f.width(), f.height()), (2, 1));
        assert_eq!(f.pixels(), &[0, 255]);
    }

    #[test]
    fn pgm_with_comment() {
        let f = decode_pgm(b"P5\n# made by hand\n1 2\n255\n\x05\x06", Path::new("t")).unwrap();
        assert_eq!(f.pixels(), &[5, 6]);
    }

    #[test]
    fn pgm_errors() {
        assert!(matches!(
            decode_pgm(b"P2 2 1 255 0 255", Path::new("t")),
            Err(PgmError::BadHeader { .. })
        ));
        assert!(matches!(
            decode_pgm(b"P5 2 1 65535 \x00\x00\x00\x00", Path::new("t")),
            Err(PgmError::UnsupportedMaxval { maxval: 65535, .. })
        ));
        assert!(matches!(
            decode_pgm(b"P5 2 2 255 \x00\x00", Path::new("t")),
            Err(PgmError::TruncatedFile { expected: 4, actual: 2, .. })
        ));
    }

    #[test]
    fn hash_dump_round_trip() {
        let hashes = vec![PHash64(0), PHash64(u64::MAX), PHash64(0x0123_4567_89ab_cdef)];
        let text = format_hash_dump(&hashes);
        assert_eq!(text.lines().nth(2), Some("0123456789abcdef"));
        assert_eq!(parse_hash_dump(&text).unwrap(), hashes);
        assert!(parse_hash_dump("abc\n").is_err());
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(a: u64, b: u64, c: u64) {
            let (a, b, c) = (PHash64(a), PHash64(b), PHash64(c));
            prop_assert_eq!(hamming(a, b), hamming(b, a));
            prop_assert_eq!(hamming(a, b) == 0, a == b);
            prop_assert!(hamming(a, c) <= hamming(a, b) + hamming(b, c));
        }
    }
}
