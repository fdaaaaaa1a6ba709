//! Compound-figure splitting.
//!
//! A detector proposes candidate panel boxes with confidences; the splitter
//! drops weak ones, orders the rest top-to-bottom then left-to-right, and
//! names them box_1..box_n. Anything that goes wrong degrades to "no split"
//! so the whole figure passes through unchanged.

use image::GrayImage;

use crate::error::{Error, Result};

use super::records::SubfigureBox;

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub confidence: f64,
}

pub trait SubfigureDetector {
    fn detect(&self, image: &GrayImage) -> Result<Vec<RawDetection>>;
}

/// Splits on white separator gutters: rows that are almost entirely white
/// cut the figure into horizontal bands, and within each band near-white
/// columns cut panels. Handles grids with different panel counts per band.
pub struct GutterDetector {
    /// Pixel values at or above this count as white.
    pub white_level: u8,
    /// A line is a gutter when at most this fraction of it is non-white.
    pub max_dark_fraction: f64,
    /// Panels narrower or shorter than this are discarded as noise.
    pub min_panel: u32,
}

impl Default for GutterDetector {
    fn default() -> Self {
        GutterDetector { white_level: 230, max_dark_fraction: 0.02, min_panel: 16 }
    }
}

impl GutterDetector {
    /// Maximal runs of non-gutter lines, each at least `min_panel` long.
    fn content_runs(&self, is_gutter: &[bool]) -> Vec<(u32, u32)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &g) in is_gutter.iter().enumerate() {
            match (g, start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    if i - s >= self.min_panel as usize {
                        runs.push((s as u32, (i - s) as u32));
                    }
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            if is_gutter.len() - s >= self.min_panel as usize {
                runs.push((s as u32, (is_gutter.len() - s) as u32));
            }
        }
        runs
    }
}

impl SubfigureDetector for GutterDetector {
    fn detect(&self, image: &GrayImage) -> Result<Vec<RawDetection>> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::Parameter("empty image".into()));
        }
        let row_gutter: Vec<bool> = (0..h)
            .map(|y| {
                let dark = (0..w).filter(|&x| image.get_pixel(x as u32, y as u32).0[0] < self.white_level).count();
                dark as f64 / w as f64 <= self.max_dark_fraction
            })
            .collect();

        let mut out = Vec::new();
        for (band_y, band_h) in self.content_runs(&row_gutter) {
            let col_gutter: Vec<bool> = (0..w)
                .map(|x| {
                    let dark = (band_y..band_y + band_h)
                        .filter(|&y| image.get_pixel(x as u32, y).0[0] < self.white_level)
                        .count();
                    dark as f64 / band_h as f64 <= self.max_dark_fraction
                })
                .collect();
            for (panel_x, panel_w) in self.content_runs(&col_gutter) {
                let total = (panel_w * band_h) as f64;
                let content = (panel_x..panel_x + panel_w)
                    .flat_map(|x| (band_y..band_y + band_h).map(move |y| (x, y)))
                    .filter(|&(x, y)| image.get_pixel(x, y).0[0] < 160)
                    .count() as f64;
                let dark_frac = content / total;
                // Panels with real content land well above the default
                // threshold; near-blank panels land well below it.
                let confidence =
                    if dark_frac < 0.005 { 0.2 } else { (0.6 + 4.0 * dark_frac).min(1.0) };
                out.push(RawDetection {
                    x: panel_x,
                    y: band_y,
                    width: panel_w,
                    height: band_h,
                    confidence,
                });
            }
        }
        Ok(out)
    }
}

/// Fixed-response detector for tests and offline runs.
pub struct MockDetector(pub Vec<RawDetection>);

impl SubfigureDetector for MockDetector {
    fn detect(&self, _image: &GrayImage) -> Result<Vec<RawDetection>> {
        Ok(self.0.clone())
    }
}

/// Run the detector and normalize its proposals. Returns an empty list to
/// mean "do not split": detector failure, out-of-bounds proposals, or fewer
/// than two surviving boxes all collapse to that, with the reason recorded
/// in `warnings`.
pub fn split_compound(
    image: &GrayImage,
    detector: &dyn SubfigureDetector,
    confidence_threshold: f64,
    warnings: &mut Vec<String>,
) -> Vec<SubfigureBox> {
    let raw = match detector.detect(image) {
        Ok(raw) => raw,
        Err(e) => {
            warnings.push(format!("detector failed, figure kept whole: {e}"));
            return Vec::new();
        }
    };
    for b in &raw {
        let inside = b.width > 0
            && b.height > 0
            && b.x.checked_add(b.width).is_some_and(|r| r <= image.width())
            && b.y.checked_add(b.height).is_some_and(|bt| bt <= image.height());
        if !inside || !(0.0..=1.0).contains(&b.confidence) {
            warnings.push(format!(
                "detector proposed invalid box {b:?} in {}x{} image, figure kept whole",
                image.width(),
                image.height()
            ));
            return Vec::new();
        }
    }
    let mut kept: Vec<RawDetection> =
        raw.into_iter().filter(|b| b.confidence >= confidence_threshold).collect();
    if kept.len() < 2 {
        return Vec::new();
    }
    kept.sort_by_key(|b| (b.y, b.x));
    kept.into_iter()
        .enumerate()
        .map(|(i, b)| SubfigureBox {
            box_id: format!("box_{}", i + 1),
            x: b.x,
            y: b.y,
            width: b.width,
            height: b.height,
            confidence: b.confidence,
        })
        .collect()
}
