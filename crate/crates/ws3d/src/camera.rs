//! Pinhole cameras and point-splat rendering.
//!
//! Projection follows the usual homogeneous form: a world point is taken to
//! camera space by the extrinsic matrix, divided by its depth, and scaled by
//! the intrinsics, giving `u` (column) and `v` (row). Rendering splats every
//! point as a small disc into a z-buffer and keeps, per pixel, the exact
//! index of the winning point. That map is what makes mask reprojection
//! trivial and lossless: no ray casting, no nearest-neighbor search, just a
//! lookup.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::pnm;
use crate::synthgen::LabeledScan;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// Row-major [[fx, 0, cx], [0, fy, cy], [0, 0, 1]].
    pub intrinsics: Matrix3<f64>,
    /// Rigid world-to-camera transform, last row (0, 0, 0, 1).
    pub extrinsics: Matrix4<f64>,
    pub height: usize,
    pub width: usize,
}

impl Camera {
    pub fn new(
        intrinsics: Matrix3<f64>,
        extrinsics: Matrix4<f64>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config(format!(
                "camera viewport must be non-empty, got {height}x{width}"
            )));
        }
        if intrinsics[(0, 0)] <= 0.0 || intrinsics[(1, 1)] <= 0.0 {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                intrinsics[(0, 0)],
                intrinsics[(1, 1)]
            )));
        }
        if !intrinsics.iter().all(|v| v.is_finite()) || !extrinsics.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("camera matrices must be finite".into()));
        }
        Ok(Camera {
            intrinsics,
            extrinsics,
            height,
            width,
        })
    }

    fn world_to_camera(&self, p: [f64; 3]) -> Vector3<f64> {
        let q = self.extrinsics * nalgebra::Vector4::new(p[0], p[1], p[2], 1.0);
        Vector3::new(q.x, q.y, q.z)
    }

    /// Projects a world point to `(u, v, depth)` with `u` along columns and
    /// `v` along rows. Depth is the camera-space z coordinate.
    pub fn project(&self, p: [f64; 3]) -> Result<(f64, f64, f64)> {
        let q = self.world_to_camera(p);
        if q.z <= 0.0 {
            return Err(Error::BehindCamera { depth: q.z });
        }
        let u = self.intrinsics[(0, 0)] * q.x / q.z + self.intrinsics[(0, 2)];
        let v = self.intrinsics[(1, 1)] * q.y / q.z + self.intrinsics[(1, 2)];
        Ok((u, v, q.z))
    }

    /// Inverse of [`Camera::project`] for a known depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let x = (u - self.intrinsics[(0, 2)]) / self.intrinsics[(0, 0)] * depth;
        let y = (v - self.intrinsics[(1, 2)]) / self.intrinsics[(1, 1)] * depth;
        let r = self.extrinsics.fixed_view::<3, 3>(0, 0);
        let t = self.extrinsics.fixed_view::<3, 1>(0, 3);
        let world = r.transpose() * (Vector3::new(x, y, depth) - t);
        [world.x, world.y, world.z]
    }
}

/// One rendered view plus everything needed to go back to the cloud.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub camera: Camera,
    /// Camera-space depth per pixel, `f64::INFINITY` where empty.
    pub depth: Vec<f64>,
    /// Winning point index per pixel; the exact inverse of rendering.
    pub point_index: Vec<Option<u32>>,
    /// Class label of the winning point, -1 where empty.
    pub label_image: Vec<i32>,
    /// Instance id of the winning point, -1 where empty.
    pub instance_image: Vec<i32>,
    /// Rounded projected center `(u, v)` per scan point, `None` behind the
    /// camera. May lie outside the viewport.
    pub point_center: Vec<Option<(i32, i32)>>,
}

impl RenderedView {
    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> usize {
        row * self.camera.width + col
    }
}

/// Splats every point of `scan` into a z-buffer. Each point covers the disc
/// of `splat_radius` pixels around its rounded projection; nearer depth wins
/// a pixel, equal depths keep the lower point index. Points behind the
/// camera or projecting outside the viewport are skipped.
pub fn render(scan: &LabeledScan, camera: &Camera, splat_radius: usize) -> RenderedView {
    let (h, w) = (camera.height, camera.width);
    let mut depth = vec![f64::INFINITY; h * w];
    let mut point_index: Vec<Option<u32>> = vec![None; h * w];
    let mut point_center: Vec<Option<(i32, i32)>> = vec![None; scan.len()];
    let r = splat_radius as i64;

    for idx in 0..scan.len() {
        let (u, v, z) = match camera.project(scan.position_f64(idx)) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let (uc, vc) = (u.round() as i64, v.round() as i64);
        point_center[idx] = Some((uc as i32, vc as i32));
        for dv in -r..=r {
            for du in -r..=r {
                if du * du + dv * dv > r * r {
                    continue;
                }
                let (row, col) = (vc + dv, uc + du);
                if row < 0 || col < 0 || row >= h as i64 || col >= w as i64 {
                    continue;
                }
                let px = row as usize * w + col as usize;
                let better = z < depth[px]
                    || (z == depth[px] && point_index[px].is_some_and(|p| idx < p as usize));
                if better || point_index[px].is_none() {
                    depth[px] = z;
                    point_index[px] = Some(idx as u32);
                }
            }
        }
    }

    let label_image = point_index
        .iter()
        .map(|p| p.map_or(-1, |i| scan.class_labels[i as usize] as i32))
        .collect();
    let instance_image = point_index
        .iter()
        .map(|p| p.map_or(-1, |i| scan.instance_ids[i as usize] as i32))
        .collect();

    RenderedView {
        camera: camera.clone(),
        depth,
        point_index,
        label_image,
        instance_image,
        point_center,
    }
}

/// Looks up the point indices behind `(row, col)` pixels via the stored
/// pixel map. Duplicate hits collapse to the first occurrence; pixels with
/// no point are skipped.
pub fn reproject_pixels(pixels: &[(usize, usize)], view: &RenderedView) -> Result<Vec<usize>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for &(row, col) in pixels {
        if row >= view.height() || col >= view.width() {
            return Err(Error::PixelOutOfBounds {
                row: row as i64,
                col: col as i64,
                height: view.height(),
                width: view.width(),
            });
        }
        if let Some(idx) = view.point_index[view.pixel(row, col)] {
            if seen.insert(idx) {
                out.push(idx as usize);
            }
        }
    }
    Ok(out)
}

/// Builds `count` cameras framing the whole scan: one straight top-down
/// occlusal view, then views tilted 25 degrees off vertical at evenly spaced
/// azimuths. Focal length and principal point are fitted so the projected
/// cloud spans 0.9 of the smaller viewport side, centered.
pub fn default_cameras(
    scan: &LabeledScan,
    count: usize,
    height: usize,
    width: usize,
) -> Result<Vec<Camera>> {
    if count == 0 {
        return Err(Error::Config("camera count must be at least 1".into()));
    }
    if scan.is_empty() {
        return Err(Error::Data("cannot frame an empty scan".into()));
    }

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for i in 0..scan.len() {
        let p = scan.position_f64(i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center = Vector3::new(
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    );
    let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt();
    let dist = (2.0 * diag).max(1.0);

    let tilt = 25f64.to_radians();
    let mut cameras = Vec::with_capacity(count);
    for j in 0..count {
        let dir = if j == 0 {
            Vector3::new(0.0, 0.0, -1.0)
        } else {
            let phi = 2.0 * std::f64::consts::PI * (j - 1) as f64 / (count - 1) as f64;
            Vector3::new(tilt.sin() * phi.cos(), tilt.sin() * phi.sin(), -tilt.cos())
        };
        let eye = center - dir * dist;

        let up_hint = if dir.y.abs() > 0.999 {
            Vector3::new(1.0, 0.0, 0.0)
        } else {
            Vector3::new(0.0, 1.0, 0.0)
        };
        let right = up_hint.cross(&dir).normalize();
        let down = dir.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), dir.transpose()]);
        let trans = -rot * eye;
        let mut extrinsics = Matrix4::identity();
        extrinsics.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        extrinsics.fixed_view_mut::<3, 1>(0, 3).copy_from(&trans);

        cameras.push(fit_intrinsics(scan, extrinsics, height, width)?);
    }
    Ok(cameras)
}

/// Fits fx = fy and the principal point so the projected extent of `scan`
/// equals 0.9 of `min(height, width) - 1` pixels and sits centered.
fn fit_intrinsics(
    scan: &LabeledScan,
    extrinsics: Matrix4<f64>,
    height: usize,
    width: usize,
) -> Result<Camera> {
    let probe = Camera::new(Matrix3::identity(), extrinsics, height, width)?;
    let mut ulo = f64::INFINITY;
    let mut uhi = f64::NEG_INFINITY;
    let mut vlo = f64::INFINITY;
    let mut vhi = f64::NEG_INFINITY;
    let mut visible = 0usize;
    for i in 0..scan.len() {
        let Ok((u, v, _)) = probe.project(scan.position_f64(i)) else {
            continue;
        };
        ulo = ulo.min(u);
        uhi = uhi.max(u);
        vlo = vlo.min(v);
        vhi = vhi.max(v);
        visible += 1;
    }
    if visible == 0 {
        return Err(Error::Data("no scan point is in front of the camera".into()));
    }

    let extent = (uhi - ulo).max(vhi - vlo);
    let target = 0.9 * (height.min(width) as f64 - 1.0);
    let f = if extent > 1e-12 { target / extent } else { 1.0 };
    let cx = (width as f64 - 1.0) / 2.0 - f * (ulo + uhi) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0 - f * (vlo + vhi) / 2.0;
    let intrinsics = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
    Camera::new(intrinsics, extrinsics, height, width)
}

/// Distinct color per class id: -1 black, 0 light gray, teeth by
/// golden-angle hue rotation.
pub fn class_color(class: i32) -> [u8; 3] {
    match class {
        i32::MIN..=-1 => [0, 0, 0],
        0 => [190, 190, 190],
        c => {
            let hue = (c as f64 * 137.508).rem_euclid(360.0);
            hsv_to_rgb(hue, 0.85, 0.95)
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0).rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 / 60 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

pub fn write_label_ppm(view: &RenderedView, path: &Path) -> Result<()> {
    let rgb: Vec<u8> = view
        .label_image
        .iter()
        .flat_map(|&c| class_color(c))
        .collect();
    pnm::write_ppm(path, view.width(), view.height(), &rgb)
}

/// Depth buffer as 16-bit grayscale: 0 = empty, otherwise 1..=65535 scaled
/// linearly between the nearest and farthest hit.
pub fn write_depth_pgm(view: &RenderedView, path: &Path) -> Result<()> {
    let (lo, hi) = depth_range(view);
    let gray: Vec<u16> = view
        .depth
        .iter()
        .map(|&d| {
            if !d.is_finite() {
                0
            } else if hi > lo {
                1 + ((d - lo) / (hi - lo) * 65534.0).round() as u16
            } else {
                1
            }
        })
        .collect();
    pnm::write_pgm16(path, view.width(), view.height(), &gray)
}

/// Depth-shaded color render (near is bright); the image handed to mask
/// oracles.
pub fn write_view_ppm(view: &RenderedView, path: &Path) -> Result<()> {
    let (lo, hi) = depth_range(view);
    let mut rgb = Vec::with_capacity(view.depth.len() * 3);
    for &d in &view.depth {
        let shade = if !d.is_finite() {
            0u8
        } else if hi > lo {
            255 - ((d - lo) / (hi - lo) * 200.0).round() as u8
        } else {
            255
        };
        rgb.extend_from_slice(&[shade, shade, shade]);
    }
    pnm::write_ppm(path, view.width(), view.height(), &rgb)
}

fn depth_range(view: &RenderedView) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &d in &view.depth {
        if d.is_finite() {
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    (lo, hi)
}

/// Plain-text sidecar of the pixel map: one `row col index` line per
/// occupied pixel, row-major.
pub fn write_pixel_map(view: &RenderedView, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in 0..view.height() {
        for col in 0..view.width() {
            if let Some(idx) = view.point_index[view.pixel(row, col)] {
                writeln!(out, "{row} {col} {idx}").expect("string write");
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_jaw, JawConfig};
    use approx::assert_relative_eq;

    fn simple_camera() -> Camera {
        let k = Matrix3::new(100.0, 0.0, 64.0, 0.0, 100.0, 64.0, 0.0, 0.0, 1.0);
        Camera::new(k, Matrix4::identity(), 128, 128).unwrap()
    }

    #[test]
    fn projects_hand_computed_point() {
        let cam = simple_camera();
        let (u, v, z) = cam.project([0.1, -0.2, 1.0]).unwrap();
        assert_eq!((u, v, z), (74.0, 44.0, 1.0));
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = simple_camera();
        assert!(matches!(
            cam.project([0.0, 0.0, -1.0]),
            Err(Error::BehindCamera { .. })
        ));
        assert!(matches!(
            cam.project([0.0, 0.0, 0.0]),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn unproject_inverts_project() {
        let scan = generate_jaw(&JawConfig::default()).unwrap();
        let cams = default_cameras(&scan, 3, 128, 128).unwrap();
        for cam in &cams {
            for i in (0..scan.len()).step_by(97) {
                let p = scan.position_f64(i);
                let (u, v, z) = cam.project(p).unwrap();
                let q = cam.unproject(u, v, z);
                for a in 0..3 {
                    assert_relative_eq!(p[a], q[a], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn default_cameras_fit_extent() {
        let scan = generate_jaw(&JawConfig::default()).unwrap();
        for (h, w) in [(128usize, 128usize), (96, 160)] {
            let cams = default_cameras(&scan, 2, h, w).unwrap();
            assert_eq!(cams.len(), 2);
            for cam in &cams {
                let mut ulo = f64::INFINITY;
                let mut uhi = f64::NEG_INFINITY;
                let mut vlo = f64::INFINITY;
                let mut vhi = f64::NEG_INFINITY;
                for i in 0..scan.len() {
                    let (u, v, _) = cam.project(scan.position_f64(i)).unwrap();
                    assert!(u >= 0.0 && u <= (w - 1) as f64, "u {u} outside viewport");
                    assert!(v >= 0.0 && v <= (h - 1) as f64, "v {v} outside viewport");
                    ulo = ulo.min(u);
                    uhi = uhi.max(u);
                    vlo = vlo.min(v);
                    vhi = vhi.max(v);
                }
                let extent = (uhi - ulo).max(vhi - vlo);
                let side = h.min(w) as f64;
                assert!(
                    extent >= 0.85 * side && extent <= 0.95 * side,
                    "extent {extent} vs side {side}"
                );
            }
        }
    }

    #[test]
    fn nearer_point_wins_pixel_and_ties_keep_lower_index() {
        let scan = LabeledScan {
            positions: vec![
                [0.0, 0.0, 2.0],
                [0.0, 0.0, 1.0],
                [0.05, 0.05, 1.0],
                [0.055, 0.055, 1.0],
            ],
            normals: None,
            class_labels: vec![1, 2, 1, 2],
            instance_ids: vec![1, 2, 1, 2],
            num_classes: 3,
        };
        let cam = simple_camera();
        let view = render(&scan, &cam, 0);
        // Points 0 and 1 share pixel (64, 64); point 1 is nearer.
        assert_eq!(view.point_index[view.pixel(64, 64)], Some(1));
        assert_eq!(view.label_image[view.pixel(64, 64)], 2);
        // Points 2 and 3 both round to pixel (69, 69) at equal depth; the
        // lower index wins.
        assert_eq!(view.point_index[view.pixel(69, 69)], Some(2));
        assert_relative_eq!(view.depth[view.pixel(69, 69)], 1.0);
    }

    #[test]
    fn reprojection_is_identity_for_isolated_points() {
        let scan = LabeledScan {
            positions: vec![[-0.3, -0.3, 1.0], [0.0, 0.0, 1.0], [0.3, 0.3, 1.0]],
            normals: None,
            class_labels: vec![1, 2, 3],
            instance_ids: vec![1, 2, 3],
            num_classes: 4,
        };
        let cam = simple_camera();
        let view = render(&scan, &cam, 1);
        for i in 0..scan.len() {
            let (u, v, _) = cam.project(scan.position_f64(i)).unwrap();
            let px = (v.round() as usize, u.round() as usize);
            assert_eq!(reproject_pixels(&[px], &view).unwrap(), vec![i]);
        }
        // Duplicates collapse, empty pixels vanish.
        let hits = reproject_pixels(&[(64, 64), (64, 64), (0, 0)], &view).unwrap();
        assert_eq!(hits, vec![1]);
    }

    #[test]
    fn reprojection_rejects_out_of_bounds_pixels() {
        let scan = generate_jaw(&JawConfig {
            num_teeth: 2,
            points_per_tooth: 5,
            gingiva_points: 0,
            ..JawConfig::default()
        })
        .unwrap();
        let cam = default_cameras(&scan, 1, 64, 64).unwrap().remove(0);
        let view = render(&scan, &cam, 1);
        assert!(matches!(
            reproject_pixels(&[(64, 0)], &view),
            Err(Error::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn splat_radius_grows_coverage() {
        let scan = LabeledScan {
            positions: vec![[0.0, 0.0, 1.0]],
            normals: None,
            class_labels: vec![1],
            instance_ids: vec![1],
            num_classes: 2,
        };
        let cam = simple_camera();
        let count = |r: usize| {
            render(&scan, &cam, r)
                .point_index
                .iter()
                .filter(|p| p.is_some())
                .count()
        };
        assert_eq!(count(0), 1);
        assert_eq!(count(1), 5);
        assert_eq!(count(2), 13);
    }
}
