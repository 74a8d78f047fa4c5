//! Turns a prediction into per-class pixel prompts for the mask oracle.
//!
//! Points are partitioned by their argmax class (teeth only), each class
//! group is filtered down to the points the network is confident about
//! (strictly above tau), and the surviving points' mean position is
//! projected into every view and rounded to the nearest pixel. Filtering is
//! the difference between a prompt that sits on the tooth and one dragged
//! off it by early mispredictions; the unfiltered variant exists as an
//! ablation and for exactly that comparison.
//!
//! Every class group accounts for one prompt or one recorded drop per view,
//! so callers can audit where their prompts went.

use std::fmt::Write as _;
use std::path::Path;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::segnet::Prediction;
use crate::synthgen::LabeledScan;

/// Points sharing an argmax tooth class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgroup {
    pub class_id: u16,
    pub indices: Vec<usize>,
}

/// Non-empty argmax groups for tooth classes, ascending by class id. Logit
/// ties resolve to the lower class, and background points (argmax 0) are
/// never grouped.
pub fn partition_subgroups(pred: &Prediction) -> Vec<Subgroup> {
    let classes = pred.argmax_classes();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); pred.num_classes];
    for (i, &c) in classes.iter().enumerate() {
        if c > 0 {
            buckets[c as usize].push(i);
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .skip(1)
        .filter(|(_, indices)| !indices.is_empty())
        .map(|(class, indices)| Subgroup {
            class_id: class as u16,
            indices,
        })
        .collect()
}

/// Keeps the members predicted with confidence strictly above `tau`.
pub fn filter_confident(sub: &Subgroup, confidence: &[f64], tau: f64) -> Subgroup {
    Subgroup {
        class_id: sub.class_id,
        indices: sub
            .indices
            .iter()
            .copied()
            .filter(|&i| confidence[i] > tau)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    EmptyAfterFilter,
    BehindCamera,
    ProjectedOutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prompt {
    pub view_id: usize,
    pub class_id: u16,
    /// Column of the prompt pixel.
    pub u: u32,
    /// Row of the prompt pixel.
    pub v: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DroppedPrompt {
    pub view_id: usize,
    pub class_id: u16,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub prompts: Vec<Prompt>,
    pub dropped: Vec<DroppedPrompt>,
}

impl PromptSet {
    pub fn for_view(&self, view_id: usize) -> Vec<Prompt> {
        self.prompts
            .iter()
            .copied()
            .filter(|p| p.view_id == view_id)
            .collect()
    }
}

/// Projects each subgroup's mean position into every camera. Subgroups that
/// are empty, project behind a camera, or land outside the viewport are
/// recorded as dropped, so prompts plus drops always count
/// `subgroups.len()` per view.
pub fn generate_prompts(
    subgroups: &[Subgroup],
    scan: &LabeledScan,
    cameras: &[Camera],
) -> Result<PromptSet> {
    let mut prompts = Vec::new();
    let mut dropped = Vec::new();
    for (view_id, camera) in cameras.iter().enumerate() {
        for sub in subgroups {
            if sub.indices.is_empty() {
                dropped.push(DroppedPrompt {
                    view_id,
                    class_id: sub.class_id,
                    reason: DropReason::EmptyAfterFilter,
                });
                continue;
            }
            let mut mean = [0.0f64; 3];
            for &i in &sub.indices {
                if i >= scan.len() {
                    return Err(Error::IndexOutOfRange {
                        index: i,
                        len: scan.len(),
                    });
                }
                let p = scan.position_f64(i);
                for a in 0..3 {
                    mean[a] += p[a];
                }
            }
            for a in &mut mean {
                *a /= sub.indices.len() as f64;
            }

            let (u, v) = match camera.project(mean) {
                Ok((u, v, _)) => (u.round() as i64, v.round() as i64),
                Err(Error::BehindCamera { .. }) => {
                    dropped.push(DroppedPrompt {
                        view_id,
                        class_id: sub.class_id,
                        reason: DropReason::BehindCamera,
                    });
                    continue;
                }
                Err(other) => return Err(other),
            };
            if u < 0 || v < 0 || u >= camera.width as i64 || v >= camera.height as i64 {
                dropped.push(DroppedPrompt {
                    view_id,
                    class_id: sub.class_id,
                    reason: DropReason::ProjectedOutOfBounds,
                });
                continue;
            }
            prompts.push(Prompt {
                view_id,
                class_id: sub.class_id,
                u: u as u32,
                v: v as u32,
            });
        }
    }
    Ok(PromptSet { prompts, dropped })
}

/// Confidence-aware prompts: partition, filter at `tau`, project.
pub fn cpg_prompts(
    pred: &Prediction,
    scan: &LabeledScan,
    cameras: &[Camera],
    tau: f64,
) -> Result<PromptSet> {
    let filtered: Vec<Subgroup> = partition_subgroups(pred)
        .iter()
        .map(|s| filter_confident(s, &pred.confidence, tau))
        .collect();
    generate_prompts(&filtered, scan, cameras)
}

/// Ablation: plain averaging without the confidence filter.
pub fn agg_prompts(
    pred: &Prediction,
    scan: &LabeledScan,
    cameras: &[Camera],
) -> Result<PromptSet> {
    generate_prompts(&partition_subgroups(pred), scan, cameras)
}

/// Corrupts subgroups for the filtering stress test: the `per_group` scan
/// points farthest from each subgroup's mean join that subgroup and have
/// their confidence forced to `low_confidence`. Deterministic; mutates the
/// provided confidence copy, never the prediction itself.
pub fn plant_outliers(
    subgroups: &mut [Subgroup],
    confidence: &mut [f64],
    scan: &LabeledScan,
    per_group: usize,
    low_confidence: f64,
) {
    for sub in subgroups.iter_mut() {
        if sub.indices.is_empty() {
            continue;
        }
        let mut mean = [0.0f64; 3];
        for &i in &sub.indices {
            let p = scan.position_f64(i);
            for a in 0..3 {
                mean[a] += p[a];
            }
        }
        for a in &mut mean {
            *a /= sub.indices.len() as f64;
        }
        let member: std::collections::HashSet<usize> = sub.indices.iter().copied().collect();
        let mut candidates: Vec<(f64, usize)> = (0..scan.len())
            .filter(|i| !member.contains(i))
            .map(|i| {
                let p = scan.position_f64(i);
                let d2 = (0..3).map(|a| (p[a] - mean[a]).powi(2)).sum::<f64>();
                (d2, i)
            })
            .collect();
        candidates.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, idx) in candidates.iter().take(per_group) {
            confidence[idx] = low_confidence;
            sub.indices.push(idx);
        }
    }
}

/// Plain-text prompt table: one `view_id class_id u v` line per prompt.
pub fn write_prompt_table(set: &PromptSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in &set.prompts {
        writeln!(out, "{} {} {} {}", p.view_id, p.class_id, p.u, p.v).expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::default_cameras;
    use crate::synthgen::{generate_jaw, JawConfig};
    use nalgebra::{Matrix3, Matrix4};
    use proptest::prelude::*;

    fn pred_with_logits(logits: Vec<f64>, num_classes: usize, confidence: Vec<f64>) -> Prediction {
        let num_points = confidence.len();
        assert_eq!(logits.len(), num_points * num_classes);
        Prediction {
            num_points,
            num_classes,
            embed_dim: 1,
            embedding: vec![0.0; num_points],
            logits,
            confidence,
        }
    }

    #[test]
    fn partition_uses_argmax_with_low_class_ties() {
        // Point 0: clear class 2. Point 1: tie between 1 and 2 -> class 1.
        // Point 2: background wins -> not grouped. Point 3: tie between 0
        // and 1 -> background -> not grouped.
        let logits = vec![
            0.0, 0.5, 2.0, //
            0.0, 1.0, 1.0, //
            3.0, 1.0, 0.0, //
            1.0, 1.0, 0.0,
        ];
        let pred = pred_with_logits(logits, 3, vec![0.9; 4]);
        let subs = partition_subgroups(&pred);
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0], Subgroup { class_id: 1, indices: vec![1] });
        assert_eq!(subs[1], Subgroup { class_id: 2, indices: vec![0] });
    }

    #[test]
    fn filter_is_strictly_greater() {
        let sub = Subgroup {
            class_id: 1,
            indices: vec![0, 1, 2],
        };
        let filtered = filter_confident(&sub, &[0.6, 0.600001, 0.59], 0.6);
        assert_eq!(filtered.indices, vec![1]);
        assert_eq!(filtered.class_id, 1);
    }

    #[test]
    fn prompts_plus_drops_cover_every_group_per_view() {
        let scan = generate_jaw(&JawConfig::default()).unwrap();
        let cameras = default_cameras(&scan, 3, 128, 128).unwrap();
        // Ground-truth groups with one emptied class.
        let mut subs: Vec<Subgroup> = (1..=14u16)
            .map(|c| Subgroup {
                class_id: c,
                indices: scan.class_indices(c),
            })
            .collect();
        subs[4].indices.clear();
        let set = generate_prompts(&subs, &scan, &cameras).unwrap();
        assert_eq!(set.prompts.len() + set.dropped.len(), subs.len() * 3);
        for view in 0..3 {
            let p = set.prompts.iter().filter(|p| p.view_id == view).count();
            let d = set.dropped.iter().filter(|d| d.view_id == view).count();
            assert_eq!(p + d, subs.len());
        }
        assert!(set
            .dropped
            .iter()
            .all(|d| d.class_id == 5 && d.reason == DropReason::EmptyAfterFilter));
    }

    #[test]
    fn prompt_pixel_matches_hand_projection() {
        let scan = LabeledScan {
            positions: vec![[0.05, -0.15, 1.0], [0.15, -0.25, 1.0]],
            normals: None,
            class_labels: vec![1, 1],
            instance_ids: vec![1, 1],
            num_classes: 2,
        };
        let k = Matrix3::new(100.0, 0.0, 64.0, 0.0, 100.0, 64.0, 0.0, 0.0, 1.0);
        let cam = Camera::new(k, Matrix4::identity(), 128, 128).unwrap();
        let subs = vec![Subgroup {
            class_id: 1,
            indices: vec![0, 1],
        }];
        // Mean (0.1, -0.2, 1.0) projects to (74, 44).
        let set = generate_prompts(&subs, &scan, &[cam]).unwrap();
        assert_eq!(
            set.prompts,
            vec![Prompt {
                view_id: 0,
                class_id: 1,
                u: 74,
                v: 44
            }]
        );
    }

    #[test]
    fn behind_camera_and_out_of_bounds_are_recorded() {
        let scan = LabeledScan {
            positions: vec![[0.0, 0.0, -1.0], [5.0, 0.0, 1.0]],
            normals: None,
            class_labels: vec![1, 2],
            instance_ids: vec![1, 2],
            num_classes: 3,
        };
        let k = Matrix3::new(100.0, 0.0, 64.0, 0.0, 100.0, 64.0, 0.0, 0.0, 1.0);
        let cam = Camera::new(k, Matrix4::identity(), 128, 128).unwrap();
        let subs = vec![
            Subgroup { class_id: 1, indices: vec![0] },
            Subgroup { class_id: 2, indices: vec![1] },
        ];
        let set = generate_prompts(&subs, &scan, &[cam]).unwrap();
        assert!(set.prompts.is_empty());
        assert_eq!(set.dropped.len(), 2);
        assert_eq!(set.dropped[0].reason, DropReason::BehindCamera);
        assert_eq!(set.dropped[1].reason, DropReason::ProjectedOutOfBounds);
    }

    #[test]
    fn cpg_equals_agg_when_everything_is_confident() {
        let scan = generate_jaw(&JawConfig {
            num_teeth: 4,
            points_per_tooth: 20,
            gingiva_points: 30,
            ..JawConfig::default()
        })
        .unwrap();
        let cameras = default_cameras(&scan, 2, 96, 96).unwrap();
        // Fake a confident, correct prediction.
        let mut logits = vec![0.0; scan.len() * scan.num_classes];
        for i in 0..scan.len() {
            logits[i * scan.num_classes + scan.class_labels[i] as usize] = 8.0;
        }
        let pred = pred_with_logits(logits, scan.num_classes, vec![0.95; scan.len()]);
        let cpg = cpg_prompts(&pred, &scan, &cameras, 0.6).unwrap();
        let agg = agg_prompts(&pred, &scan, &cameras).unwrap();
        assert_eq!(cpg, agg);
        assert_eq!(cpg.prompts.len(), 4 * 2);
    }

    #[test]
    fn planted_outliers_move_agg_but_not_cpg() {
        let scan = generate_jaw(&JawConfig::default()).unwrap();
        let cameras = default_cameras(&scan, 1, 128, 128).unwrap();
        let mut logits = vec![0.0; scan.len() * scan.num_classes];
        for i in 0..scan.len() {
            logits[i * scan.num_classes + scan.class_labels[i] as usize] = 8.0;
        }
        let pred = pred_with_logits(logits, scan.num_classes, vec![0.95; scan.len()]);

        let mut subs = partition_subgroups(&pred);
        let clean = generate_prompts(&subs, &scan, &cameras).unwrap();
        let mut conf = pred.confidence.clone();
        plant_outliers(&mut subs, &mut conf, &scan, 5, 0.1);

        let agg = generate_prompts(&subs, &scan, &cameras).unwrap();
        let filtered: Vec<Subgroup> = subs
            .iter()
            .map(|s| filter_confident(s, &conf, 0.6))
            .collect();
        let cpg = generate_prompts(&filtered, &scan, &cameras).unwrap();

        assert_eq!(cpg.prompts, clean.prompts, "filtering removes the plants");
        let moved = agg
            .prompts
            .iter()
            .zip(&clean.prompts)
            .filter(|(a, c)| (a.u, a.v) != (c.u, c.v))
            .count();
        assert!(moved > 10, "only {moved} of 14 prompts moved");
    }

    proptest! {
        #[test]
        fn filtered_subgroup_is_a_subset(
            conf in proptest::collection::vec(0.0f64..1.0, 30),
            tau in 0.0f64..1.0,
        ) {
            let sub = Subgroup { class_id: 3, indices: (0..conf.len()).collect() };
            let filtered = filter_confident(&sub, &conf, tau);
            prop_assert!(filtered.indices.iter().all(|i| sub.indices.contains(i)));
            prop_assert!(filtered.indices.iter().all(|&i| conf[i] > tau));
            prop_assert!(sub
                .indices
                .iter()
                .filter(|&&i| conf[i] > tau)
                .eq(filtered.indices.iter()));
        }

        #[test]
        fn partition_covers_foreground_argmax_exactly_once(seed in 0u64..500) {
            let mut r = crate::rng::seeded(seed);
            use rand::Rng as _;
            let n = 40;
            let c = 5;
            let logits: Vec<f64> = (0..n * c).map(|_| r.random_range(-2.0..2.0)).collect();
            let pred = pred_with_logits(logits, c, vec![0.5; n]);
            let subs = partition_subgroups(&pred);
            let classes = pred.argmax_classes();
            let mut seen = vec![0usize; n];
            for sub in &subs {
                prop_assert!(!sub.indices.is_empty());
                for &i in &sub.indices {
                    prop_assert_eq!(classes[i], sub.class_id);
                    seen[i] += 1;
                }
            }
            for i in 0..n {
                prop_assert_eq!(seen[i], usize::from(classes[i] > 0));
            }
            prop_assert!(subs.windows(2).all(|w| w[0].class_id < w[1].class_id));
        }
    }
}
