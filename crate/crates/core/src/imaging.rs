//! Image IO and pixel utilities shared by the curation pipeline and the
//! vision encoder: PNG load/save, grayscale matrix conversion, cropping,
//! and rendering box overlays with burned-in identifiers.

use std::io::Cursor;
use std::path::Path;

use base64::Engine;
use image::{GrayImage, ImageFormat, Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)
        .map_err(|e| Error::External(format!("read {}: {e}", path.display())))?;
    Ok(img.to_luma8())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::External(format!("read {}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

pub fn save_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::External(format!("write {}: {e}", path.display())))
}

pub fn save_rgb_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::External(format!("write {}: {e}", path.display())))
}

/// PNG-encode in memory and base64 the bytes, for JSON transport.
pub fn rgb_to_png_base64(img: &RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::External(format!("png encode: {e}")))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

/// Resize (bilinear) to `size` x `size` and scale into [0, 1], laid out as
/// one row per channel, which is the shape the vision encoder consumes.
pub fn gray_to_matrix(img: &GrayImage, size: usize) -> Array2<f64> {
    let resized = image::imageops::resize(
        img,
        size as u32,
        size as u32,
        image::imageops::FilterType::Triangle,
    );
    let mut out = Array2::zeros((1, size * size));
    for (x, y, p) in resized.enumerate_pixels() {
        out[[0, y as usize * size + x as usize]] = p.0[0] as f64 / 255.0;
    }
    out
}

pub fn crop_gray(img: &GrayImage, x: u32, y: u32, width: u32, height: u32) -> Result<GrayImage> {
    if x + width > img.width() || y + height > img.height() || width == 0 || height == 0 {
        return Err(Error::Parameter(format!(
            "crop {x},{y} {width}x{height} outside {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(image::imageops::crop_imm(img, x, y, width, height).to_image())
}

const RED: Rgb<u8> = Rgb([220, 30, 30]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// 3x5 glyphs for the characters that appear in box identifiers.
fn glyph(c: char) -> Option<[u8; 5]> {
    let rows = match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'b' => [0b100, 0b100, 0b111, 0b101, 0b111],
        'o' => [0b000, 0b111, 0b101, 0b101, 0b111],
        'x' => [0b000, 0b101, 0b010, 0b101, 0b000],
        '_' => [0b000, 0b000, 0b000, 0b000, 0b111],
        _ => return None,
    };
    Some(rows)
}

fn draw_text(img: &mut RgbImage, text: &str, left: i64, top: i64, scale: i64, color: Rgb<u8>) {
    let mut cx = left;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if bits >> (2 - rx) & 1 == 1 {
                        for dy in 0..scale {
                            for dx in 0..scale {
                                let px = cx + rx as i64 * scale + dx;
                                let py = top + ry as i64 * scale + dy;
                                if px >= 0
                                    && py >= 0
                                    && (px as u32) < img.width()
                                    && (py as u32) < img.height()
                                {
                                    img.put_pixel(px as u32, py as u32, color);
                                }
                            }
                        }
                    }
                }
            }
        }
        cx += 4 * scale;
    }
}

fn draw_rect_outline(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, thick: u32) {
    let (iw, ih) = (img.width(), img.height());
    for t in 0..thick {
        for px in x..(x + w).min(iw) {
            for py in [y + t, (y + h).saturating_sub(1 + t)] {
                if py < ih {
                    img.put_pixel(px, py, RED);
                }
            }
        }
        for py in y..(y + h).min(ih) {
            for px in [x + t, (x + w).saturating_sub(1 + t)] {
                if px < iw {
                    img.put_pixel(px, py, RED);
                }
            }
        }
    }
}

/// Render the detection overlay: red outlines around each box and a filled
/// red marker at each box center carrying the identifier in white.
pub fn draw_box_overlay(base: &GrayImage, boxes: &[(String, u32, u32, u32, u32)]) -> RgbImage {
    let mut img = RgbImage::new(base.width(), base.height());
    for (x, y, p) in base.enumerate_pixels() {
        img.put_pixel(x, y, Rgb([p.0[0], p.0[0], p.0[0]]));
    }
    let scale: i64 = 2;
    for (label, x, y, w, h) in boxes {
        draw_rect_outline(&mut img, *x, *y, *w, *h, 2);
        let text_w = label.chars().count() as i64 * 4 * scale - scale;
        let text_h = 5 * scale;
        let cx = *x as i64 + *w as i64 / 2;
        let cy = *y as i64 + *h as i64 / 2;
        let pad = 2 * scale;
        let left = cx - text_w / 2;
        let top = cy - text_h / 2;
        for py in (top - pad)..(top + text_h + pad) {
            for px in (left - pad)..(left + text_w + pad) {
                if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                    img.put_pixel(px as u32, py as u32, RED);
                }
            }
        }
        draw_text(&mut img, label, left, top, scale, WHITE);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_conversion_scales_and_shapes() {
        let mut img = GrayImage::new(32, 32);
        for p in img.pixels_mut() {
            p.0[0] = 255;
        }
        img.put_pixel(0, 0, image::Luma([0]));
        let m = gray_to_matrix(&img, 16);
        assert_eq!(m.dim(), (1, 256));
        assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(m[[0, 0]] < 1.0, "dark corner survives the resize");
        assert!(m[[0, 255]] > 0.99);
    }

    #[test]
    fn crop_validates_bounds() {
        let img = GrayImage::new(10, 10);
        assert!(crop_gray(&img, 2, 2, 4, 4).is_ok());
        assert!(crop_gray(&img, 8, 8, 4, 4).is_err());
        assert!(crop_gray(&img, 0, 0, 0, 4).is_err());
    }

    #[test]
    fn overlay_burns_in_red_marker_and_label() {
        let mut base = GrayImage::new(60, 40);
        for p in base.pixels_mut() {
            p.0[0] = 200;
        }
        let boxes = vec![("box_1".to_string(), 4, 4, 50, 30)];
        let img = draw_box_overlay(&base, &boxes);
        assert_eq!(img.get_pixel(4, 4), &RED, "outline corner");
        // Center sits inside the marker: red fill or a white label stroke.
        let center = *img.get_pixel(29, 19);
        assert!(center == RED || center == WHITE, "center is {center:?}");
        assert_eq!(img.get_pixel(6, 10), &RED, "marker padding corner");
        let whites = img.pixels().filter(|p| **p == WHITE).count();
        assert!(whites > 20, "label strokes present, got {whites} white pixels");
        let grays = img.pixels().filter(|p| p.0 == [200, 200, 200]).count();
        assert!(grays > 0, "background survives outside the marker");
    }

    #[test]
    fn png_round_trip_and_base64() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = GrayImage::new(8, 8);
        img.put_pixel(3, 3, image::Luma([77]));
        let path = dir.path().join("t.png");
        save_gray_png(&img, &path).unwrap();
        let back = load_gray(&path).unwrap();
        assert_eq!(img, back);

        let rgb = draw_box_overlay(&img, &[]);
        let b64 = rgb_to_png_base64(&rgb).unwrap();
        assert!(!b64.is_empty());
        let bytes = base64::engine::general_purpose::STANDARD.decode(b64).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
