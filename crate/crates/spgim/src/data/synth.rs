//! Deterministic synthetic scenes: soft-edged geometric foregrounds and
//! simple backgrounds, with short descriptive captions. These power the
//! in-repo caption corpus, the desk-scale training fixtures, and tests,
//! keeping every workflow exercisable offline.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{AlphaMatte, ForegroundAsset, ImagePlane};

pub const PALETTE: [(&str, [f64; 3]); 6] = [
    ("red", [0.86, 0.16, 0.12]),
    ("green", [0.18, 0.72, 0.24]),
    ("blue", [0.16, 0.32, 0.85]),
    ("yellow", [0.92, 0.86, 0.18]),
    ("purple", [0.58, 0.22, 0.74]),
    ("orange", [0.95, 0.55, 0.12]),
];

pub const BG_PALETTE: [(&str, [f64; 3]); 4] = [
    ("gray", [0.45, 0.45, 0.47]),
    ("teal", [0.10, 0.45, 0.48]),
    ("brown", [0.42, 0.30, 0.18]),
    ("navy", [0.08, 0.12, 0.32]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Ring,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Ring => "ring",
        }
    }
}

fn smooth01(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft-edged alpha for a shape centered at (cy, cx). The edge transitions
/// over `edge` pixels, leaving a band of genuinely fractional values.
pub fn shape_alpha(
    h: usize,
    w: usize,
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    radius: f64,
    edge: f64,
) -> AlphaMatte {
    let mut a = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let v = match kind {
                ShapeKind::Disk => {
                    let d = (dy * dy + dx * dx).sqrt();
                    smooth01((radius - d) / edge + 0.5)
                }
                ShapeKind::Square => {
                    let d = dy.abs().max(dx.abs());
                    smooth01((radius - d) / edge + 0.5)
                }
                ShapeKind::Ring => {
                    let d = (dy * dy + dx * dx).sqrt();
                    let band = radius * 0.35;
                    smooth01((band - (d - radius).abs()) / edge + 0.5)
                }
            };
            a[[y, x]] = v;
        }
    }
    AlphaMatte(a)
}

/// A colored shape on a transparent plate, plus its caption words.
pub fn synth_foreground(seed: u64, h: usize, w: usize) -> (ForegroundAsset, String) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let kind = match rng.random_range(0..3u32) {
        0 => ShapeKind::Disk,
        1 => ShapeKind::Square,
        _ => ShapeKind::Ring,
    };
    let (color_name, rgb) = PALETTE[rng.random_range(0..PALETTE.len())];
    let cy = rng.random_range(0.30..0.70) * h as f64;
    let cx = rng.random_range(0.30..0.70) * w as f64;
    let radius = rng.random_range(0.18..0.30) * h.min(w) as f64;
    let alpha = shape_alpha(h, w, kind, cy, cx, radius, 3.5);
    let mut fg = Array3::zeros((3, h, w));
    for c in 0..3 {
        // Slight vertical shading keeps the color plane non-constant.
        for y in 0..h {
            let shade = 1.0 - 0.15 * y as f64 / h as f64;
            for x in 0..w {
                fg[[c, y, x]] = (rgb[c] * shade).clamp(0.0, 1.0);
            }
        }
    }
    let id = format!("{}-{}-{:04}", color_name, kind.name(), seed % 10_000);
    let caption = format!("a {} {}", color_name, kind.name());
    (
        ForegroundAsset {
            foreground: ImagePlane(fg),
            alpha,
            id,
        },
        caption,
    )
}

/// Several shapes on one plate: alpha is the pixelwise max, color follows
/// the locally dominant shape. Exercises multi-object foregrounds.
pub fn synth_multi_foreground(
    seed: u64,
    h: usize,
    w: usize,
    n_shapes: usize,
) -> (ForegroundAsset, String) {
    assert!(n_shapes >= 1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut kinds = Vec::new();
    let mut colors = Vec::new();
    let mut alphas = Vec::new();
    for k in 0..n_shapes {
        let kind = match rng.random_range(0..3u32) {
            0 => ShapeKind::Disk,
            1 => ShapeKind::Square,
            _ => ShapeKind::Ring,
        };
        let (color_name, rgb) = PALETTE[rng.random_range(0..PALETTE.len())];
        // centers spread along a horizontal band so objects stay distinct
        let span = 0.52 / n_shapes as f64;
        let cx_lo = 0.24 + span * k as f64;
        let cy = rng.random_range(0.34..0.66) * h as f64;
        let cx = rng.random_range(cx_lo..cx_lo + span * 0.85) * w as f64;
        let radius = rng.random_range(0.10..0.16) * h.min(w) as f64 * 2.0 / n_shapes as f64
            + 0.06 * h.min(w) as f64;
        alphas.push(shape_alpha(h, w, kind, cy, cx, radius, 3.5));
        kinds.push(kind);
        colors.push((color_name, rgb));
    }
    let mut alpha = Array2::zeros((h, w));
    let mut fg = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            let mut value: f64 = 0.0;
            for (k, a) in alphas.iter().enumerate() {
                if a.0[[y, x]] > value {
                    value = a.0[[y, x]];
                    best = k;
                }
            }
            alpha[[y, x]] = value;
            let shade = 1.0 - 0.15 * y as f64 / h as f64;
            for c in 0..3 {
                fg[[c, y, x]] = (colors[best].1[c] * shade).clamp(0.0, 1.0);
            }
        }
    }
    let names: Vec<String> = colors
        .iter()
        .zip(kinds.iter())
        .map(|((color, _), kind)| format!("a {} {}", color, kind.name()))
        .collect();
    let id = format!("multi{}-{:04}", n_shapes, seed % 10_000);
    let caption = names.join(" and ");
    (
        ForegroundAsset {
            foreground: ImagePlane(fg),
            alpha: AlphaMatte(alpha),
            id,
        },
        caption,
    )
}

/// A gently graded background plane plus its name.
pub fn synth_background(seed: u64, h: usize, w: usize) -> (ImagePlane, String) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (name, rgb) = BG_PALETTE[rng.random_range(0..BG_PALETTE.len())];
    let tilt_y = rng.random_range(-0.12..0.12);
    let tilt_x = rng.random_range(-0.12..0.12);
    let mut bg = Array3::zeros((3, h, w));
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let grade =
                    1.0 + tilt_y * (y as f64 / h as f64 - 0.5) + tilt_x * (x as f64 / w as f64 - 0.5);
                bg[[c, y, x]] = (rgb[c] * grade).clamp(0.0, 1.0);
            }
        }
    }
    let id = format!("{}-{:04}", name, seed % 10_000);
    (ImagePlane(bg), id)
}

/// A composited scene with a full caption, for the caption corpus.
pub fn synth_captioned_scene(seed: u64, h: usize, w: usize) -> (ImagePlane, String) {
    let (fg, fg_words) = synth_foreground(seed, h, w);
    let (bg, bg_id) = synth_background(seed.wrapping_add(0x9e3779b9), h, w);
    let image = super::compose(&fg, &bg).expect("synthetic composition");
    let bg_name = bg_id.split('-').next().unwrap_or("plain");
    let caption = format!("{fg_words} over a {bg_name} background");
    (image, caption)
}
