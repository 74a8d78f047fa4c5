//! Tiny PPM line plots for loss curves: one polyline per series on a shared
//! scale, no text, no dependencies. Good enough to see whether a run
//! converged without leaving the terminal's file browser.

use std::path::Path;

use crate::error::Result;
use crate::pnm::write_ppm;

pub struct Series<'a> {
    pub color: [u8; 3],
    pub values: &'a [f64],
}

const MARGIN: usize = 10;
const BACKGROUND: u8 = 18;
const FRAME: u8 = 80;

/// Draws every series into one `width` x `height` canvas. X is the sample
/// index scaled to the frame, y spans [min(0, data)..max(data)] over all
/// finite values across series, so curves share a scale and zero is visible.
pub fn render_series(width: usize, height: usize, series: &[Series], path: &Path) -> Result<()> {
    assert!(
        width > 2 * MARGIN + 1 && height > 2 * MARGIN + 1,
        "canvas too small for the fixed margin"
    );
    let mut rgb = vec![BACKGROUND; width * height * 3];
    for col in MARGIN..width - MARGIN {
        set_px(&mut rgb, width, col, MARGIN, [FRAME; 3]);
        set_px(&mut rgb, width, col, height - 1 - MARGIN, [FRAME; 3]);
    }
    for row in MARGIN..=height - 1 - MARGIN {
        set_px(&mut rgb, width, MARGIN, row, [FRAME; 3]);
        set_px(&mut rgb, width, width - 1 - MARGIN, row, [FRAME; 3]);
    }

    let mut lo = 0.0f64;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in s.values {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !hi.is_finite() {
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }

    let inner_w = (width - 2 * MARGIN - 1) as f64;
    let inner_h = (height - 2 * MARGIN - 1) as f64;
    for s in series {
        let n = s.values.len();
        if n == 0 {
            continue;
        }
        let to_px = |i: usize| -> Option<(i64, i64)> {
            let v = s.values[i];
            if !v.is_finite() {
                return None;
            }
            let x = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            let y = (v - lo) / (hi - lo);
            Some((
                (MARGIN as f64 + x * inner_w).round() as i64,
                (MARGIN as f64 + (1.0 - y) * inner_h).round() as i64,
            ))
        };
        let mut prev: Option<(i64, i64)> = None;
        for i in 0..n {
            let cur = to_px(i);
            match (prev, cur) {
                (Some(a), Some(b)) => draw_line(&mut rgb, width, height, a, b, s.color),
                (None, Some(b)) => draw_line(&mut rgb, width, height, b, b, s.color),
                _ => {}
            }
            prev = cur;
        }
    }
    write_ppm(path, width, height, &rgb)
}

fn set_px(rgb: &mut [u8], width: usize, col: usize, row: usize, color: [u8; 3]) {
    let off = (row * width + col) * 3;
    rgb[off..off + 3].copy_from_slice(&color);
}

/// Bresenham segment, clipped to the canvas.
fn draw_line(
    rgb: &mut [u8],
    width: usize,
    height: usize,
    (x0, y0): (i64, i64),
    (x1, y1): (i64, i64),
    color: [u8; 3],
) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y) = (x0, y0);
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            set_px(rgb, width, x as usize, y as usize, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pnm::read_ppm;
    use tempfile::TempDir;

    #[test]
    fn plot_contains_the_series_color_and_round_trips() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("plot.ppm");
        let values: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() + 1.5).collect();
        render_series(
            200,
            120,
            &[Series {
                color: [255, 80, 80],
                values: &values,
            }],
            &path,
        )
        .unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!((img.width, img.height), (200, 120));
        let mut found = false;
        for px in img.pixels.chunks(3) {
            if px == [255, 80, 80] {
                found = true;
                break;
            }
        }
        assert!(found, "series color never drawn");
    }

    #[test]
    fn single_sample_and_flat_series_still_render() {
        let dir = TempDir::new().unwrap();
        for (name, values) in [("one.ppm", vec![2.0]), ("flat.ppm", vec![0.0; 10])] {
            let path = dir.path().join(name);
            render_series(
                64,
                64,
                &[Series {
                    color: [0, 255, 0],
                    values: &values,
                }],
                &path,
            )
            .unwrap();
            assert!(read_ppm(&path).is_ok());
        }
    }
}
