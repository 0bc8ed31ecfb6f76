//! Dataset composition: alpha blending of foregrounds over backgrounds,
//! trimap generation by thresholding plus random dilation, Gaussian saliency
//! targets, and manifest planning/writing.

mod filter;
pub mod io;
mod manifest;
pub mod synth;
#[cfg(test)]
mod tests;

pub use filter::{area_downsample, blur_reflect, gaussian_kernel};
pub use manifest::{
    plan_composition, read_caption_manifest, read_manifest, write_caption_manifest,
    write_manifest, CaptionRecord, CompositionPlan, DatasetManifest, ManifestRecord, PlannedPair,
    Split,
};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::tensor::resize_plane_bilinear;

/// H×W×3 color raster with values in [0,1], stored channel-first (3,H,W).
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane(pub Array3<f64>);

impl ImagePlane {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.dim().0 != 3 {
            return Err(Error::shape("ImagePlane", &[3], &[data.dim().0]));
        }
        Ok(ImagePlane(data))
    }

    pub fn height(&self) -> usize {
        self.0.dim().1
    }

    pub fn width(&self) -> usize {
        self.0.dim().2
    }

    pub fn solid(h: usize, w: usize, rgb: [f64; 3]) -> Self {
        let mut a = Array3::zeros((3, h, w));
        for c in 0..3 {
            a.index_axis_mut(ndarray::Axis(0), c).fill(rgb[c]);
        }
        ImagePlane(a)
    }

    /// Scale-to-cover then center crop to (h, w).
    pub fn resize_cover(&self, h: usize, w: usize) -> Result<ImagePlane> {
        let (sh, sw) = (self.height(), self.width());
        if sh == 0 || sw == 0 || h == 0 || w == 0 {
            return Err(Error::shape("resize_cover", &[h, w], &[sh, sw]));
        }
        let scale = (h as f64 / sh as f64).max(w as f64 / sw as f64);
        let rh = ((sh as f64 * scale).round() as usize).max(h);
        let rw = ((sw as f64 * scale).round() as usize).max(w);
        let mut out = Array3::zeros((3, h, w));
        let oy = (rh - h) / 2;
        let ox = (rw - w) / 2;
        for c in 0..3 {
            let plane = self.0.index_axis(ndarray::Axis(0), c).to_owned();
            let resized = resize_plane_bilinear(&plane, rh, rw);
            let crop = resized.slice(ndarray::s![oy..oy + h, ox..ox + w]).to_owned();
            out.index_axis_mut(ndarray::Axis(0), c).assign(&crop);
        }
        Ok(ImagePlane(out))
    }
}

/// H×W opacity raster in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMatte(pub Array2<f64>);

impl AlphaMatte {
    pub fn height(&self) -> usize {
        self.0.dim().0
    }

    pub fn width(&self) -> usize {
        self.0.dim().1
    }

    pub fn validate_range(&self) -> Result<()> {
        for &v in self.0.iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "alpha value {v} outside [0,1]"
                )));
            }
        }
        Ok(())
    }

    /// True when no pixel has any opacity.
    pub fn is_empty_matte(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

pub const TRIMAP_BACKGROUND: u8 = 0;
pub const TRIMAP_UNKNOWN: u8 = 128;
pub const TRIMAP_FOREGROUND: u8 = 255;

/// Three-valued prior: background 0, unknown 128, foreground 255.
#[derive(Clone, Debug, PartialEq)]
pub struct TrimapPlane {
    pub labels: Array2<u8>,
    /// Dilation radius that was actually applied.
    pub radius: usize,
    /// Set when every pixel ended up unknown.
    pub degenerate: bool,
}

/// Downsampled, Gaussian-blurred alpha used to supervise the distillation
/// branch.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyTarget {
    pub values: Array2<f64>,
    pub downsample: usize,
}

/// A cut-out object: color plane plus its ground-truth alpha.
#[derive(Clone, Debug)]
pub struct ForegroundAsset {
    pub foreground: ImagePlane,
    pub alpha: AlphaMatte,
    pub id: String,
}

impl ForegroundAsset {
    pub fn validate(&self) -> Result<()> {
        self.alpha.validate_range()?;
        let (fh, fw) = (self.foreground.height(), self.foreground.width());
        let (ah, aw) = (self.alpha.height(), self.alpha.width());
        if (fh, fw) != (ah, aw) {
            return Err(Error::shape("foreground/alpha", &[fh, fw], &[ah, aw]));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize, PartialEq, Eq)]
pub struct Provenance {
    pub foreground_id: String,
    pub background_id: String,
    pub seed: u64,
}

/// A fully materialized training sample.
#[derive(Clone, Debug)]
pub struct CompositeSample {
    pub image: ImagePlane,
    pub alpha_gt: AlphaMatte,
    pub trimap: TrimapPlane,
    pub saliency_target: SaliencyTarget,
    pub provenance: Provenance,
    pub flags: Vec<String>,
}

/// Alpha-blend a foreground over a background: `I = aF + (1-a)B` per pixel
/// and channel. The background is scaled to cover and center-cropped to the
/// foreground size first.
pub fn compose(fg: &ForegroundAsset, bg: &ImagePlane) -> Result<ImagePlane> {
    fg.validate()?;
    let (h, w) = (fg.foreground.height(), fg.foreground.width());
    let bg = bg.resize_cover(h, w)?;
    if bg.height() != h || bg.width() != w {
        return Err(Error::shape("compose background", &[h, w], &[bg.height(), bg.width()]));
    }
    let mut out = Array3::zeros((3, h, w));
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let a = fg.alpha.0[[y, x]];
                out[[c, y, x]] = a * fg.foreground.0[[c, y, x]] + (1.0 - a) * bg.0[[c, y, x]];
            }
        }
    }
    Ok(ImagePlane(out))
}

/// Downsample the ground-truth alpha and blur it with a Gaussian
/// (reflective padding) to form the distillation target.
pub fn make_saliency_target(
    alpha: &AlphaMatte,
    downsample: usize,
    blur_sigma: f64,
) -> Result<SaliencyTarget> {
    if downsample < 1 {
        return Err(Error::InvalidArgument(format!(
            "downsample factor {downsample} must be >= 1"
        )));
    }
    if blur_sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blur sigma {blur_sigma} must be > 0"
        )));
    }
    alpha.validate_range()?;
    let small = area_downsample(&alpha.0, downsample);
    let blurred = blur_reflect(&small, blur_sigma);
    debug_assert!(blurred.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)));
    let values = blurred.mapv(|v| v.clamp(0.0, 1.0));
    Ok(SaliencyTarget { values, downsample })
}

/// Threshold the alpha into background/unknown/foreground and dilate the
/// unknown band by a radius drawn uniformly from `radius_range`.
pub fn make_trimap(
    alpha: &AlphaMatte,
    threshold_lo: f64,
    threshold_hi: f64,
    radius_range: (usize, usize),
    rng_seed: u64,
) -> Result<TrimapPlane> {
    let (r_lo, r_hi) = radius_range;
    if r_lo > r_hi {
        return Err(Error::InvalidArgument(format!(
            "radius range ({r_lo}, {r_hi}) is empty"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let radius = if r_lo == r_hi {
        r_lo
    } else {
        rng.random_range(r_lo..=r_hi)
    };
    make_trimap_with_radius(alpha, threshold_lo, threshold_hi, radius)
}

/// Trimap with a fixed dilation radius. Dilation is `radius` iterations of
/// the 8-connected neighborhood, i.e. a (2r+1)-square structuring element.
pub fn make_trimap_with_radius(
    alpha: &AlphaMatte,
    threshold_lo: f64,
    threshold_hi: f64,
    radius: usize,
) -> Result<TrimapPlane> {
    if !(0.0..=1.0).contains(&threshold_lo)
        || !(0.0..=1.0).contains(&threshold_hi)
        || threshold_lo >= threshold_hi
    {
        return Err(Error::InvalidArgument(format!(
            "thresholds must satisfy 0 <= lo < hi <= 1, got lo={threshold_lo} hi={threshold_hi}"
        )));
    }
    alpha.validate_range()?;
    let (h, w) = alpha.0.dim();
    let mut unknown = Array2::<bool>::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let a = alpha.0[[y, x]];
            unknown[[y, x]] = a > threshold_lo && a < threshold_hi;
        }
    }
    let unknown = dilate_chebyshev(&unknown, radius);
    let mut labels = Array2::<u8>::zeros((h, w));
    let mut n_unknown = 0usize;
    for y in 0..h {
        for x in 0..w {
            labels[[y, x]] = if unknown[[y, x]] {
                n_unknown += 1;
                TRIMAP_UNKNOWN
            } else if alpha.0[[y, x]] <= threshold_lo {
                TRIMAP_BACKGROUND
            } else {
                TRIMAP_FOREGROUND
            };
        }
    }
    Ok(TrimapPlane {
        labels,
        radius,
        degenerate: n_unknown == h * w,
    })
}

/// Chebyshev-ball dilation of a boolean mask (separable max filter).
fn dilate_chebyshev(mask: &Array2<bool>, radius: usize) -> Array2<bool> {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let r = radius as isize;
    let mut rows = Array2::<bool>::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] {
                let lo = (x as isize - r).max(0) as usize;
                let hi = (x as isize + r).min(w as isize - 1) as usize;
                for xx in lo..=hi {
                    rows[[y, xx]] = true;
                }
            }
        }
    }
    let mut out = Array2::<bool>::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            if rows[[y, x]] {
                let lo = (y as isize - r).max(0) as usize;
                let hi = (y as isize + r).min(h as isize - 1) as usize;
                for yy in lo..=hi {
                    out[[yy, x]] = true;
                }
            }
        }
    }
    out
}

/// Parameters for materializing composite samples.
#[derive(Clone, Debug)]
pub struct CompositionParams {
    pub trimap_lo: f64,
    pub trimap_hi: f64,
    pub trimap_radius_range: (usize, usize),
    pub saliency_downsample: usize,
    pub saliency_sigma: f64,
}

impl Default for CompositionParams {
    fn default() -> Self {
        CompositionParams {
            trimap_lo: 0.0,
            trimap_hi: 1.0,
            trimap_radius_range: (1, 15),
            saliency_downsample: 16,
            saliency_sigma: 1.0,
        }
    }
}

/// Materialize one planned pair into a full sample.
pub fn compose_sample(
    fg: &ForegroundAsset,
    bg: &ImagePlane,
    bg_id: &str,
    seed: u64,
    params: &CompositionParams,
) -> Result<CompositeSample> {
    let image = compose(fg, bg)?;
    let trimap = make_trimap(
        &fg.alpha,
        params.trimap_lo,
        params.trimap_hi,
        params.trimap_radius_range,
        seed,
    )?;
    let saliency_target =
        make_saliency_target(&fg.alpha, params.saliency_downsample, params.saliency_sigma)?;
    let mut flags = Vec::new();
    if trimap.degenerate {
        flags.push("degenerate_trimap".to_string());
    }
    if fg.alpha.is_empty_matte() {
        flags.push("empty_alpha".to_string());
    }
    Ok(CompositeSample {
        image,
        alpha_gt: fg.alpha.clone(),
        trimap,
        saliency_target,
        provenance: Provenance {
            foreground_id: fg.id.clone(),
            background_id: bg_id.to_string(),
            seed,
        },
        flags,
    })
}
