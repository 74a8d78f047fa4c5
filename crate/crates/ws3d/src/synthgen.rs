//! Synthetic jaw scans. Teeth are jittered ellipsoid shells spaced along a
//! semicircular arch, the gingiva is a noisy annulus band under their roots.
//! Class 0 is gingiva, classes 1..=K are teeth in arch order, and instance
//! ids coincide with class ids (one tooth per class). The generator refuses
//! geometry where neighboring teeth could touch, so class regions are
//! separable by construction.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, salt};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JawConfig {
    pub num_teeth: usize,
    pub points_per_tooth: usize,
    pub gingiva_points: usize,
    /// Radius of the arch the tooth centers sit on, in model units.
    pub arch_radius: f64,
    /// Ellipsoid semi-axes of one tooth (x, y, z).
    pub tooth_scale: [f64; 3],
    /// Stddev of the Gaussian jitter added to every surface sample.
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Default for JawConfig {
    fn default() -> Self {
        JawConfig {
            num_teeth: 14,
            points_per_tooth: 100,
            gingiva_points: 600,
            arch_radius: 30.0,
            tooth_scale: [2.5, 2.0, 3.0],
            jitter_sigma: 0.15,
            seed: 0,
        }
    }
}

impl JawConfig {
    pub fn total_points(&self) -> usize {
        self.num_teeth * self.points_per_tooth + self.gingiva_points
    }

    pub fn max_semi_axis(&self) -> f64 {
        self.tooth_scale.iter().cloned().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_teeth == 0 {
            return Err(Error::Config("num_teeth must be at least 1".into()));
        }
        if self.num_teeth > u16::MAX as usize - 1 {
            return Err(Error::Config(format!(
                "num_teeth {} does not fit the u16 class range",
                self.num_teeth
            )));
        }
        if self.points_per_tooth == 0 {
            return Err(Error::Config("points_per_tooth must be at least 1".into()));
        }
        if !(self.arch_radius.is_finite() && self.arch_radius > 0.0) {
            return Err(Error::Config(format!(
                "arch_radius must be positive, got {}",
                self.arch_radius
            )));
        }
        if self.tooth_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!(
                "tooth_scale axes must be positive, got {:?}",
                self.tooth_scale
            )));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "jitter_sigma must be non-negative, got {}",
                self.jitter_sigma
            )));
        }
        Ok(())
    }
}

/// Centers the teeth of `config` sit on, in arch order.
pub fn tooth_centers(config: &JawConfig) -> Vec<[f64; 3]> {
    let k = config.num_teeth;
    (0..k)
        .map(|i| {
            let theta = std::f64::consts::PI * (i as f64 + 0.5) / k as f64;
            [
                config.arch_radius * theta.cos(),
                config.arch_radius * theta.sin(),
                0.0,
            ]
        })
        .collect()
}

/// A point cloud with per-point semantic class and instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScan {
    pub positions: Vec<[f32; 3]>,
    /// Outward surface normals; `None` when the source has no normals.
    pub normals: Option<Vec<[f32; 3]>>,
    /// 0 = gingiva, 1..=K = tooth classes.
    pub class_labels: Vec<u16>,
    /// 0 = gingiva, otherwise a per-tooth instance id.
    pub instance_ids: Vec<u16>,
    /// K + 1: gingiva plus K tooth classes.
    pub num_classes: usize,
}

impl LabeledScan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn num_tooth_classes(&self) -> usize {
        self.num_classes - 1
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        for p in &self.positions {
            for a in 0..3 {
                c[a] += p[a] as f64;
            }
        }
        let n = self.len().max(1) as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    pub fn class_indices(&self, class: u16) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.class_labels[i] == class)
            .collect()
    }

    pub fn position_f64(&self, i: usize) -> [f64; 3] {
        let p = self.positions[i];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.class_labels.len() != n || self.instance_ids.len() != n {
            return Err(Error::Data(format!(
                "inconsistent lengths: {} positions, {} classes, {} instances",
                n,
                self.class_labels.len(),
                self.instance_ids.len()
            )));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::Data(format!(
                    "inconsistent lengths: {} positions, {} normals",
                    n,
                    normals.len()
                )));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Data(format!(
                "num_classes must be at least 2 (gingiva plus one tooth), got {}",
                self.num_classes
            )));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite position at index {i}")));
            }
        }
        for i in 0..n {
            let class = self.class_labels[i];
            if class as usize >= self.num_classes {
                return Err(Error::Data(format!(
                    "class {class} at index {i} exceeds the declared {} classes",
                    self.num_classes
                )));
            }
            if (class == 0) != (self.instance_ids[i] == 0) {
                return Err(Error::Data(format!(
                    "index {i}: gingiva class and zero instance id must coincide \
                     (class {class}, instance {})",
                    self.instance_ids[i]
                )));
            }
        }
        Ok(())
    }
}

pub fn generate_jaw(config: &JawConfig) -> Result<LabeledScan> {
    config.validate()?;
    let centers = tooth_centers(config);
    let min_gap = min_pairwise_distance(&centers);
    let required = 2.0 * config.max_semi_axis();
    if min_gap <= required {
        return Err(Error::Config(format!(
            "teeth too crowded: adjacent centers are {min_gap:.3} apart but \
             separability needs more than {required:.3}; increase arch_radius, \
             reduce num_teeth, or shrink tooth_scale"
        )));
    }

    let mut rng = rng::seeded(rng::derive(config.seed, salt::JAW));
    let n = config.total_points();
    let mut positions = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut class_labels = Vec::with_capacity(n);
    let mut instance_ids = Vec::with_capacity(n);

    let [sx, sy, sz] = config.tooth_scale;
    for (tooth, center) in centers.iter().enumerate() {
        let class = (tooth + 1) as u16;
        for _ in 0..config.points_per_tooth {
            let d = random_unit_vector(&mut rng);
            let jitter = gaussian3(&mut rng, config.jitter_sigma);
            positions.push([
                (center[0] + sx * d[0] + jitter[0]) as f32,
                (center[1] + sy * d[1] + jitter[1]) as f32,
                (center[2] + sz * d[2] + jitter[2]) as f32,
            ]);
            normals.push(normalize32([
                (d[0] / sx) as f32,
                (d[1] / sy) as f32,
                (d[2] / sz) as f32,
            ]));
            class_labels.push(class);
            instance_ids.push(class);
        }
    }

    // Gingiva: an annulus band under the tooth roots, wobbled vertically.
    let band = 3.0 * config.max_semi_axis();
    let floor = -(sz + 0.5);
    for _ in 0..config.gingiva_points {
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let r = rng.random_range((config.arch_radius - band).max(0.0)..config.arch_radius + band);
        let wobble: f64 = rng.sample::<f64, _>(StandardNormal) * config.jitter_sigma;
        positions.push([
            (r * theta.cos()) as f32,
            (r * theta.sin()) as f32,
            (floor + wobble) as f32,
        ]);
        normals.push([0.0, 0.0, 1.0]);
        class_labels.push(0);
        instance_ids.push(0);
    }

    let scan = LabeledScan {
        positions,
        normals: Some(normals),
        class_labels,
        instance_ids,
        num_classes: config.num_teeth + 1,
    };
    scan.validate()?;
    Ok(scan)
}

fn min_pairwise_distance(centers: &[[f64; 3]]) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d: f64 = (0..3)
                .map(|a| (centers[i][a] - centers[j][a]).powi(2))
                .sum::<f64>()
                .sqrt();
            min = min.min(d);
        }
    }
    min
}

fn random_unit_vector(rng: &mut rng::Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-9 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn gaussian3(rng: &mut rng::Rng, sigma: f64) -> [f64; 3] {
    [
        rng.sample::<f64, _>(StandardNormal) * sigma,
        rng.sample::<f64, _>(StandardNormal) * sigma,
        rng.sample::<f64, _>(StandardNormal) * sigma,
    ]
}

fn normalize32(v: [f32; 3]) -> [f32; 3] {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm > 1e-12 {
        [v[0] / norm, v[1] / norm, v[2] / norm]
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// Indices of the handful of points with known labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseLabelMask {
    /// Ascending within each class, classes in ascending order.
    pub indices: Vec<usize>,
    pub per_tooth: usize,
}

impl SparseLabelMask {
    pub fn labeled_fraction(&self, scan: &LabeledScan) -> f64 {
        self.indices.len() as f64 / scan.len().max(1) as f64
    }
}

/// Samples `per_tooth` labeled points from every tooth class. Gingiva gets
/// no labels; the background signal comes from the mask oracle instead.
pub fn sample_sparse_labels(
    scan: &LabeledScan,
    per_tooth: usize,
    seed: u64,
) -> Result<SparseLabelMask> {
    if per_tooth == 0 {
        return Err(Error::Config("per_tooth must be at least 1".into()));
    }
    let mut rng = rng::seeded(rng::derive(seed, salt::SPARSE_LABELS));
    let mut indices = Vec::with_capacity(per_tooth * scan.num_tooth_classes());
    for class in 1..=scan.num_tooth_classes() as u16 {
        let pool = scan.class_indices(class);
        if pool.len() < per_tooth {
            return Err(Error::Supervision(format!(
                "class {class} has {} points, cannot label {per_tooth}",
                pool.len()
            )));
        }
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), per_tooth)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picks.sort_unstable();
        indices.extend(picks);
    }
    Ok(SparseLabelMask { indices, per_tooth })
}

const SCAN_MAGIC: &[u8; 4] = b"WS3D";
const SCAN_VERSION: u8 = 1;

/// Writes the binary scan container:
/// magic "WS3D", version u8, point count u32, tooth-class count u16, then
/// positions and normals as little-endian f32 triples, then class labels and
/// instance ids as little-endian u16. A scan without normals stores zeros.
pub fn save_scan(scan: &LabeledScan, path: &Path) -> Result<()> {
    scan.validate()?;
    let n = scan.len();
    let mut out = Vec::with_capacity(11 + 28 * n);
    out.extend_from_slice(SCAN_MAGIC);
    out.push(SCAN_VERSION);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(scan.num_tooth_classes() as u16).to_le_bytes());
    for p in &scan.positions {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &scan.normals {
        Some(normals) => {
            for nr in normals {
                for v in nr {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        None => out.extend_from_slice(&vec![0u8; 12 * n]),
    }
    for c in &scan.class_labels {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for i in &scan.instance_ids {
        out.extend_from_slice(&i.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_scan(path: &Path) -> Result<LabeledScan> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };

    if bytes.len() < 4 || &bytes[..4] != SCAN_MAGIC {
        return Err(fail(0, "expected magic \"WS3D\"".into()));
    }
    if bytes.len() < 5 {
        return Err(fail(4, "truncated before version byte".into()));
    }
    if bytes[4] != SCAN_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: bytes[4],
            expected: SCAN_VERSION,
        });
    }
    if bytes.len() < 11 {
        return Err(fail(bytes.len(), "truncated inside header".into()));
    }
    let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let k = u16::from_le_bytes(bytes[9..11].try_into().unwrap()) as usize;
    if k == 0 {
        return Err(fail(9, "tooth-class count must be at least 1".into()));
    }
    let expected = 11 + 28 * n;
    if bytes.len() < expected {
        return Err(fail(
            bytes.len(),
            format!("truncated: need {expected} bytes for {n} points"),
        ));
    }
    if bytes.len() > expected {
        return Err(fail(expected, "trailing bytes after point data".into()));
    }

    let read_f32 = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let read_u16 = |off: usize| u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap());

    let pos_base = 11;
    let nrm_base = pos_base + 12 * n;
    let cls_base = nrm_base + 12 * n;
    let ins_base = cls_base + 2 * n;

    let mut positions = Vec::with_capacity(n);
    for i in 0..n {
        let off = pos_base + 12 * i;
        let p = [read_f32(off), read_f32(off + 4), read_f32(off + 8)];
        if p.iter().any(|v| !v.is_finite()) {
            return Err(fail(off, format!("non-finite position for point {i}")));
        }
        positions.push(p);
    }
    let mut normals = Vec::with_capacity(n);
    let mut any_normal = false;
    for i in 0..n {
        let off = nrm_base + 12 * i;
        let nr = [read_f32(off), read_f32(off + 4), read_f32(off + 8)];
        any_normal |= nr != [0.0, 0.0, 0.0];
        normals.push(nr);
    }
    let mut class_labels = Vec::with_capacity(n);
    for i in 0..n {
        let off = cls_base + 2 * i;
        let c = read_u16(off);
        if c as usize > k {
            return Err(fail(
                off,
                format!("class {c} for point {i} exceeds declared tooth count {k}"),
            ));
        }
        class_labels.push(c);
    }
    let mut instance_ids = Vec::with_capacity(n);
    for i in 0..n {
        instance_ids.push(read_u16(ins_base + 2 * i));
    }

    let scan = LabeledScan {
        positions,
        normals: any_normal.then_some(normals),
        class_labels,
        instance_ids,
        num_classes: k + 1,
    };
    scan.validate().map_err(|e| match e {
        Error::Data(message) => fail(11, message),
        other => other,
    })?;
    Ok(scan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn default_config_counts_and_classes() {
        let config = JawConfig::default();
        let scan = generate_jaw(&config).unwrap();
        assert_eq!(scan.len(), 2000);
        assert_eq!(scan.num_classes, 15);
        for class in 0..=14u16 {
            let count = scan.class_indices(class).len();
            if class == 0 {
                assert_eq!(count, 600);
            } else {
                assert_eq!(count, 100);
            }
        }
        scan.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let config = JawConfig {
            seed: 99,
            ..JawConfig::default()
        };
        let a = generate_jaw(&config).unwrap();
        let b = generate_jaw(&config).unwrap();
        assert_eq!(a, b);
        let c = generate_jaw(&JawConfig {
            seed: 100,
            ..config
        })
        .unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn centers_respect_separability() {
        let config = JawConfig::default();
        let centers = tooth_centers(&config);
        assert_eq!(centers.len(), 14);
        let min = min_pairwise_distance(&centers);
        assert!(
            min > 2.0 * config.max_semi_axis(),
            "min center gap {min} vs required {}",
            2.0 * config.max_semi_axis()
        );
    }

    #[test]
    fn crowded_arch_rejected() {
        let config = JawConfig {
            arch_radius: 10.0,
            ..JawConfig::default()
        };
        assert!(matches!(generate_jaw(&config), Err(Error::Config(_))));
    }

    #[test]
    fn single_tooth_no_gingiva() {
        let config = JawConfig {
            num_teeth: 1,
            gingiva_points: 0,
            points_per_tooth: 10,
            ..JawConfig::default()
        };
        let scan = generate_jaw(&config).unwrap();
        assert_eq!(scan.len(), 10);
        assert_eq!(scan.num_classes, 2);
        assert!(scan.class_labels.iter().all(|&c| c == 1));
    }

    #[test]
    fn sparse_labels_cover_each_tooth_once() {
        let scan = generate_jaw(&JawConfig::default()).unwrap();
        let mask = sample_sparse_labels(&scan, 1, 7).unwrap();
        assert_eq!(mask.indices.len(), 14);
        let classes: Vec<u16> = mask.indices.iter().map(|&i| scan.class_labels[i]).collect();
        assert_eq!(classes, (1..=14).collect::<Vec<u16>>());
        assert!((mask.labeled_fraction(&scan) - 0.007).abs() < 1e-12);

        let again = sample_sparse_labels(&scan, 1, 7).unwrap();
        assert_eq!(mask, again);
        let other = sample_sparse_labels(&scan, 1, 8).unwrap();
        assert_ne!(mask, other);
    }

    #[test]
    fn sparse_labels_multiple_per_tooth() {
        let scan = generate_jaw(&JawConfig::default()).unwrap();
        let mask = sample_sparse_labels(&scan, 3, 7).unwrap();
        assert_eq!(mask.indices.len(), 42);
        for chunk in mask.indices.chunks(3) {
            let class = scan.class_labels[chunk[0]];
            assert!(chunk.iter().all(|&i| scan.class_labels[i] == class));
            assert!(chunk.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn sparse_labels_missing_class_is_an_error() {
        let scan = LabeledScan {
            positions: vec![[0.0; 3]; 4],
            normals: None,
            class_labels: vec![0, 1, 1, 2],
            instance_ids: vec![0, 1, 1, 2],
            num_classes: 4,
        };
        assert!(matches!(
            sample_sparse_labels(&scan, 1, 0),
            Err(Error::Supervision(_))
        ));
    }

    #[test]
    fn scan_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("jaw.ws3d");
        let scan = generate_jaw(&JawConfig {
            seed: 5,
            ..JawConfig::default()
        })
        .unwrap();
        save_scan(&scan, &path).unwrap();
        let loaded = load_scan(&path).unwrap();
        assert_eq!(scan, loaded);
    }

    #[test]
    fn scan_without_normals_round_trips_to_none() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("plain.ws3d");
        let mut scan = generate_jaw(&JawConfig {
            num_teeth: 2,
            points_per_tooth: 5,
            gingiva_points: 3,
            ..JawConfig::default()
        })
        .unwrap();
        scan.normals = None;
        save_scan(&scan, &path).unwrap();
        let loaded = load_scan(&path).unwrap();
        assert_eq!(loaded.normals, None);
        assert_eq!(loaded, scan);
    }

    #[test]
    fn truncated_scan_reports_byte_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cut.ws3d");
        let scan = generate_jaw(&JawConfig {
            num_teeth: 2,
            points_per_tooth: 5,
            gingiva_points: 0,
            ..JawConfig::default()
        })
        .unwrap();
        save_scan(&scan, &path).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 7]).unwrap();
        match load_scan(&path).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, (full.len() - 7) as u64),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ws3d");
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            load_scan(&path).unwrap_err(),
            Error::Format { offset: 0, .. }
        ));

        let scan = generate_jaw(&JawConfig {
            num_teeth: 1,
            points_per_tooth: 2,
            gingiva_points: 0,
            ..JawConfig::default()
        })
        .unwrap();
        save_scan(&scan, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_scan(&path).unwrap_err(),
            Error::UnsupportedVersion { found: 9, .. }
        ));
    }

    #[test]
    fn out_of_range_class_reports_its_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cls.ws3d");
        let scan = generate_jaw(&JawConfig {
            num_teeth: 2,
            points_per_tooth: 3,
            gingiva_points: 1,
            ..JawConfig::default()
        })
        .unwrap();
        save_scan(&scan, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let n = scan.len();
        let cls_base = 11 + 24 * n;
        bytes[cls_base] = 0xff;
        bytes[cls_base + 1] = 0xff;
        fs::write(&path, bytes).unwrap();
        match load_scan(&path).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, cls_base as u64),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
