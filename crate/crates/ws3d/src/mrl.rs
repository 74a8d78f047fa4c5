//! Lifting oracle masks back onto the point cloud.
//!
//! The rendered view keeps the exact pixel-to-point map, so a 2D mask
//! becomes a 3D point group by collecting the points visible under its set
//! pixels. Noisy masks can overlap; a point claimed by several masks goes to
//! the mask whose prompt pixel lies nearest the point's own projected pixel,
//! ties to the lower class id. Background pixels become the background point
//! group, minus anything a foreground group already claimed. The groups feed
//! the contrastive and background losses; for the contrastive loss each
//! group is first subsampled to a fixed cap.

use std::collections::HashMap;

use crate::camera::RenderedView;
use crate::error::{Error, Result};
use crate::mask_oracle::{Mask, MaskSet};
use crate::rng::{self, salt};
use crate::segnet::Prediction;
use crate::synthgen::LabeledScan;

/// Per-class point groups recovered from one view's masks, in mask order,
/// indices ascending. Groups may be empty when their mask hit no points.
pub fn reproject_mask_groups(
    set: &MaskSet,
    view: &RenderedView,
) -> Result<Vec<(u16, Vec<usize>)>> {
    if set.height != view.height() || set.width != view.width() {
        return Err(Error::Data(format!(
            "mask set is {}x{} but the view is {}x{}",
            set.height,
            set.width,
            view.height(),
            view.width()
        )));
    }
    for entry in &set.entries {
        if entry.mask.len() != set.height * set.width {
            return Err(Error::Data(format!(
                "mask for class {} has {} pixels, expected {}",
                entry.class_id,
                entry.mask.len(),
                set.height * set.width
            )));
        }
    }

    // best claim per point: (squared prompt distance, class id, entry slot)
    let mut claim: HashMap<u32, (i64, u16, usize)> = HashMap::new();

    for (slot, entry) in set.entries.iter().enumerate() {
        for px in 0..entry.mask.len() {
            if !entry.mask[px] {
                continue;
            }
            let Some(idx) = view.point_index[px] else {
                continue;
            };
            // Points in the map are in front of the camera by construction,
            // so a projected center exists.
            let center = view.point_center[idx as usize].expect("visible point projects");
            let du = center.0 as i64 - entry.prompt_u as i64;
            let dv = center.1 as i64 - entry.prompt_v as i64;
            let d2 = du * du + dv * dv;
            let candidate = (d2, entry.class_id, slot);
            claim
                .entry(idx)
                .and_modify(|best| {
                    if (candidate.0, candidate.1) < (best.0, best.1) {
                        *best = candidate;
                    }
                })
                .or_insert(candidate);
        }
    }

    let mut groups: Vec<(u16, Vec<usize>)> = set
        .entries
        .iter()
        .map(|e| (e.class_id, Vec::new()))
        .collect();
    let mut claims: Vec<(u32, usize)> = claim
        .into_iter()
        .map(|(idx, (_, _, slot))| (idx, slot))
        .collect();
    claims.sort_unstable();
    for (idx, slot) in claims {
        groups[slot].1.push(idx as usize);
    }
    Ok(groups)
}

/// Background point group: points visible under background pixels, minus
/// anything already claimed by a foreground group. Ascending, deduplicated.
pub fn reproject_background(
    bg: &Mask,
    view: &RenderedView,
    fg_groups: &[(u16, Vec<usize>)],
) -> Vec<usize> {
    let claimed: std::collections::HashSet<usize> = fg_groups
        .iter()
        .flat_map(|(_, g)| g.iter().copied())
        .collect();
    let mut out: Vec<usize> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (px, &m) in bg.iter().enumerate() {
        if !m {
            continue;
        }
        if let Some(idx) = view.point_index[px] {
            let idx = idx as usize;
            if !claimed.contains(&idx) && seen.insert(idx) {
                out.push(idx);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Subsamples each foreground group to at most `cap` members for the
/// contrastive loss, seeded per class so runs are reproducible. Groups at or
/// under the cap pass through unchanged; outputs stay ascending.
pub fn gather_group_embeddings(
    pred: &Prediction,
    fg_groups: &[(u16, Vec<usize>)],
    cap: usize,
    seed: u64,
) -> Result<Vec<(u16, Vec<usize>)>> {
    let mut out = Vec::with_capacity(fg_groups.len());
    for (class, indices) in fg_groups {
        for &i in indices {
            if i >= pred.num_points {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: pred.num_points,
                });
            }
        }
        let picked = if indices.len() > cap {
            let mut r = rng::seeded(rng::derive(
                rng::derive(seed, salt::GROUP_SUBSAMPLE),
                *class as u64,
            ));
            let mut picks: Vec<usize> = rand::seq::index::sample(&mut r, indices.len(), cap)
                .into_iter()
                .map(|k| indices[k])
                .collect();
            picks.sort_unstable();
            picks
        } else {
            indices.clone()
        };
        out.push((*class, picked));
    }
    Ok(out)
}

/// Fraction of `indices` whose ground-truth class is `class_id`; `None` for
/// an empty group.
pub fn group_purity(scan: &LabeledScan, class_id: u16, indices: &[usize]) -> Option<f64> {
    if indices.is_empty() {
        return None;
    }
    let hits = indices
        .iter()
        .filter(|&&i| scan.class_labels[i] == class_id)
        .count();
    Some(hits as f64 / indices.len() as f64)
}
