//! Side-by-side comparison sheets: for each sample one grid image holding
//! the input, every method's alpha, and the first method's cutout
//! composited over a solid background.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::data::{compose, AlphaMatte, ForegroundAsset, ImagePlane};
use crate::error::Result;

pub struct ComparisonSpec {
    /// Method name -> per-image alphas keyed by image id. Order matters:
    /// columns follow it, and the first method supplies the cutout.
    pub methods: Vec<(String, BTreeMap<String, AlphaMatte>)>,
    /// Solid background color for the cutout column.
    pub cutout_rgb: [f64; 3],
}

impl Default for ComparisonSpec {
    fn default() -> Self {
        ComparisonSpec {
            methods: Vec::new(),
            cutout_rgb: [1.0, 1.0, 1.0],
        }
    }
}

/// Layout arithmetic: columns = input + one per method + cutout.
pub fn sheet_columns(n_methods: usize) -> usize {
    n_methods + 2
}

/// Build one sheet as an (3, H, W*(columns)) plane. Missing method entries
/// become blank (dark) cells.
pub fn build_sheet(
    image_id: &str,
    image: &ImagePlane,
    spec: &ComparisonSpec,
) -> (Array3<f64>, Vec<String>) {
    let (h, w) = (image.height(), image.width());
    let cols = sheet_columns(spec.methods.len());
    let mut sheet = Array3::<f64>::from_elem((3, h, w * cols), 0.08);
    let mut legend = vec!["input".to_string()];

    let mut put = |col: usize, plane: &Array3<f64>| {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    sheet[[c, y, col * w + x]] = plane[[c, y, x]];
                }
            }
        }
    };
    put(0, &image.0);

    let mut cutout: Option<Array3<f64>> = None;
    for (mi, (name, alphas)) in spec.methods.iter().enumerate() {
        match alphas.get(image_id) {
            Some(alpha) if alpha.0.dim() == (h, w) => {
                let mut gray = Array3::zeros((3, h, w));
                for c in 0..3 {
                    for y in 0..h {
                        for x in 0..w {
                            gray[[c, y, x]] = alpha.0[[y, x]];
                        }
                    }
                }
                put(mi + 1, &gray);
                legend.push(name.clone());
                if cutout.is_none() {
                    let fg = ForegroundAsset {
                        foreground: image.clone(),
                        alpha: alpha.clone(),
                        id: image_id.to_string(),
                    };
                    let bg = ImagePlane::solid(h, w, spec.cutout_rgb);
                    if let Ok(composited) = compose(&fg, &bg) {
                        cutout = Some(composited.0);
                    }
                }
            }
            _ => {
                legend.push(format!("{name} (missing)"));
            }
        }
    }
    match &cutout {
        Some(plane) => {
            put(cols - 1, plane);
            legend.push("cutout".to_string());
        }
        None => legend.push("cutout (missing)".to_string()),
    }
    (sheet, legend)
}

/// Emit one sheet PNG per image plus a JSON legend of the column order.
pub fn emit_comparison(
    images: &[(String, ImagePlane)],
    spec: &ComparisonSpec,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (id, image) in images {
        let (sheet, legend) = build_sheet(id, image, spec);
        let path = out_dir.join(format!("{id}_comparison.png"));
        crate::data::io::write_image(&path, &ImagePlane(sheet))?;
        let legend_path = out_dir.join(format!("{id}_columns.json"));
        std::fs::write(&legend_path, serde_json::to_string_pretty(&legend)?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn sheet_layout_arithmetic() {
        assert_eq!(sheet_columns(2), 4, "2 methods -> 4 columns");
        let image = ImagePlane::solid(8, 6, [0.5, 0.5, 0.5]);
        let mut m1 = BTreeMap::new();
        m1.insert("a".to_string(), AlphaMatte(Array2::from_elem((8, 6), 1.0)));
        let mut m2 = BTreeMap::new();
        m2.insert("a".to_string(), AlphaMatte(Array2::from_elem((8, 6), 0.0)));
        let spec = ComparisonSpec {
            methods: vec![("ours".into(), m1), ("baseline".into(), m2)],
            cutout_rgb: [1.0, 1.0, 1.0],
        };
        let (sheet, legend) = build_sheet("a", &image, &spec);
        assert_eq!(sheet.dim(), (3, 8, 6 * 4), "cell grid is exact");
        assert_eq!(legend.len(), 4);
        // cutout of alpha==1 over white is the input color
        assert!((sheet[[0, 4, 3 * 6 + 2]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_method_becomes_blank_cell() {
        let image = ImagePlane::solid(4, 4, [0.3, 0.3, 0.3]);
        let spec = ComparisonSpec {
            methods: vec![("ghost".into(), BTreeMap::new())],
            cutout_rgb: [1.0, 1.0, 1.0],
        };
        let (sheet, legend) = build_sheet("x", &image, &spec);
        assert_eq!(sheet.dim(), (3, 4, 12));
        assert!(legend[1].contains("missing"));
        // blank cell keeps the background fill
        assert!((sheet[[0, 0, 5]] - 0.08).abs() < 1e-12);
    }
}
