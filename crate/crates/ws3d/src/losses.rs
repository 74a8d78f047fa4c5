//! Training objectives. Three parts, each returning its value together with
//! cotangents on the network outputs so the caller can run one backward
//! pass per scan:
//!
//! * confidence-weighted segmentation loss over the sparsely labeled points,
//! * a contrastive loss pulling mask-derived foreground groups together and
//!   pushing different groups apart in embedding space,
//! * plain cross entropy against the background class on points under the
//!   background mask.
//!
//! The total is `l1 * coseg + (l2 * fg + l3 * bg) * [epoch > warmup]` with
//! 1-based epochs: mask guidance switches on only once the network has had
//! `warmup_epochs` epochs to stabilize its predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segnet::{Prediction, PredictionGrads};
use crate::synthgen::SparseLabelMask;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Confidence threshold for prompt generation; strictly-greater filter.
    pub tau: f64,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Mask guidance activates after this many epochs (1-based comparison).
    pub warmup_epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.6,
            temperature: 0.1,
            warmup_epochs: 10,
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.01,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) || !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "tau must be within [0, 1], got {}",
                self.tau
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Normalizer of the segmentation loss: divide by the labeled-point count
/// (default) or by the full cloud size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosegNorm {
    #[default]
    LabeledCount,
    FullCloud,
}

/// Confidence-weighted cross entropy over the labeled subset:
/// mean of `c_i * CE_i + (1 - c_i)^2`. Low confidence discounts a point's
/// classification error but pays the quadratic penalty, so the optimum
/// confidence for a point with error L is `clamp(1 - L/2, 0, 1)`.
pub fn coseg_loss(
    pred: &Prediction,
    gt_labels: &[u16],
    mask: &SparseLabelMask,
    norm: CosegNorm,
) -> Result<(f64, PredictionGrads)> {
    if mask.indices.is_empty() {
        return Err(Error::Supervision(
            "segmentation loss needs at least one labeled point".into(),
        ));
    }
    let c = pred.num_classes;
    let z = match norm {
        CosegNorm::LabeledCount => mask.indices.len() as f64,
        CosegNorm::FullCloud => pred.num_points as f64,
    };
    let mut grads = PredictionGrads::zeros_like(pred);
    let mut total = 0.0;
    for &i in &mask.indices {
        if i >= pred.num_points {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: pred.num_points,
            });
        }
        let y = gt_labels[i] as usize;
        if y >= c {
            return Err(Error::Data(format!(
                "label {y} at point {i} exceeds {c} classes"
            )));
        }
        let row = pred.logits_row(i);
        let (ce, probs) = cross_entropy(row, y);
        let conf = pred.confidence[i];
        total += conf * ce + (1.0 - conf) * (1.0 - conf);

        let d_row = &mut grads.d_logits[i * c..(i + 1) * c];
        for (k, p) in probs.iter().enumerate() {
            d_row[k] = conf * (p - if k == y { 1.0 } else { 0.0 }) / z;
        }
        grads.d_confidence[i] = (ce - 2.0 * (1.0 - conf)) / z;
    }
    Ok((total / z, grads))
}

/// Contrastive foreground loss over per-class feature groups.
///
/// Features are L2-normalized internally. Every ordered pair within a group
/// is an anchor-positive pair; all features of the other groups are that
/// anchor's negatives. With similarity `s` and temperature `t`, each pair
/// contributes `-log(exp(s_ij/t) / (exp(s_ij/t) + sum_k exp(s_ik/t)))` and
/// the result is the mean over pairs. Fewer than two non-empty groups, or
/// no group with two features, yields 0 with the degenerate flag set.
#[derive(Debug, Clone)]
pub struct ContrastiveResult {
    pub value: f64,
    /// Gradients w.r.t. the raw (un-normalized) input features, same shape.
    pub feature_grads: Vec<Vec<Vec<f64>>>,
    pub degenerate: bool,
}

pub fn contrastive_fg(groups: &[Vec<Vec<f64>>], temperature: f64) -> Result<ContrastiveResult> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let zero_grads = || {
        groups
            .iter()
            .map(|g| g.iter().map(|f| vec![0.0; f.len()]).collect())
            .collect()
    };

    // Flatten to one feature table with group markers.
    let mut feats: Vec<&[f64]> = Vec::new();
    let mut group_of: Vec<usize> = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        for f in group {
            feats.push(f);
            group_of.push(gi);
        }
    }
    let total = feats.len();
    let non_empty = groups.iter().filter(|g| !g.is_empty()).count();
    let pair_count: usize = groups
        .iter()
        .map(|g| g.len() * g.len().saturating_sub(1))
        .sum();
    if non_empty < 2 || pair_count == 0 {
        return Ok(ContrastiveResult {
            value: 0.0,
            feature_grads: zero_grads(),
            degenerate: true,
        });
    }

    let dim = feats[0].len();
    if feats.iter().any(|f| f.len() != dim) {
        return Err(Error::Data("contrastive features differ in length".into()));
    }

    // Normalize; near-zero features pass through unscaled.
    let mut norm = vec![1.0; total];
    let mut unit: Vec<Vec<f64>> = Vec::with_capacity(total);
    for (i, f) in feats.iter().enumerate() {
        let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            norm[i] = n;
            unit.push(f.iter().map(|v| v / n).collect());
        } else {
            unit.push(f.to_vec());
        }
    }

    // Pairwise scaled similarities, exponentiated.
    let mut exp_s = vec![0.0; total * total];
    let mut s = vec![0.0; total * total];
    for i in 0..total {
        for j in 0..total {
            let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            s[i * total + j] = dot / temperature;
            exp_s[i * total + j] = (dot / temperature).exp();
        }
    }
    // Per-anchor negative mass: features outside the anchor's group.
    let neg_mass: Vec<f64> = (0..total)
        .map(|i| {
            (0..total)
                .filter(|&k| group_of[k] != group_of[i])
                .map(|k| exp_s[i * total + k])
                .sum()
        })
        .collect();

    let scale = 1.0 / pair_count as f64;
    let mut value = 0.0;
    // coef[i*total+k] accumulates dL/ds (directional: anchor i, other k).
    let mut coef = vec![0.0; total * total];
    for i in 0..total {
        let g = group_of[i];
        let mut inv_denom_sum = 0.0;
        for j in 0..total {
            if j == i || group_of[j] != g {
                continue;
            }
            let denom = exp_s[i * total + j] + neg_mass[i];
            value += denom.ln() - s[i * total + j];
            coef[i * total + j] += exp_s[i * total + j] / denom - 1.0;
            inv_denom_sum += 1.0 / denom;
        }
        if inv_denom_sum != 0.0 {
            for k in 0..total {
                if group_of[k] != g {
                    coef[i * total + k] += exp_s[i * total + k] * inv_denom_sum;
                }
            }
        }
    }
    value *= scale;

    // dL/d unit_i, then back through the normalization.
    let factor = scale / temperature;
    let mut feature_grads: Vec<Vec<Vec<f64>>> = zero_grads();
    let mut flat = 0usize;
    for (gi, group) in groups.iter().enumerate() {
        for fi in 0..group.len() {
            let i = flat;
            flat += 1;
            let mut d_unit = vec![0.0; dim];
            for k in 0..total {
                let w = (coef[i * total + k] + coef[k * total + i]) * factor;
                if w != 0.0 {
                    for (du, uv) in d_unit.iter_mut().zip(&unit[k]) {
                        *du += w * uv;
                    }
                }
            }
            let out = &mut feature_grads[gi][fi];
            if norm[i] != 1.0 || feats[i].iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-12 {
                let dot: f64 = unit[i].iter().zip(&d_unit).map(|(a, b)| a * b).sum();
                for d in 0..dim {
                    out[d] = (d_unit[d] - dot * unit[i][d]) / norm[i];
                }
            } else {
                out.copy_from_slice(&d_unit);
            }
        }
    }

    Ok(ContrastiveResult {
        value,
        feature_grads,
        degenerate: false,
    })
}

/// [`contrastive_fg`] over rows of the prediction's embedding, scattering
/// gradients back to the referenced points.
pub fn contrastive_fg_indexed(
    pred: &Prediction,
    groups: &[(u16, Vec<usize>)],
    temperature: f64,
) -> Result<(f64, PredictionGrads, bool)> {
    let mut feature_groups: Vec<Vec<Vec<f64>>> = Vec::with_capacity(groups.len());
    for (_, indices) in groups {
        let mut g = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= pred.num_points {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: pred.num_points,
                });
            }
            g.push(pred.embedding_row(i).to_vec());
        }
        feature_groups.push(g);
    }
    let result = contrastive_fg(&feature_groups, temperature)?;
    let mut grads = PredictionGrads::zeros_like(pred);
    for (g, (_, indices)) in groups.iter().enumerate() {
        for (f, &i) in indices.iter().enumerate() {
            let dst = &mut grads.d_embedding[i * pred.embed_dim..(i + 1) * pred.embed_dim];
            for (d, v) in dst.iter_mut().zip(&result.feature_grads[g][f]) {
                *d += v;
            }
        }
    }
    Ok((result.value, grads, result.degenerate))
}

/// Mean cross entropy against class 0 over the background points. An empty
/// index list yields 0 with the degenerate flag set.
pub fn background_loss(pred: &Prediction, bg_indices: &[usize]) -> Result<(f64, PredictionGrads, bool)> {
    let mut grads = PredictionGrads::zeros_like(pred);
    if bg_indices.is_empty() {
        return Ok((0.0, grads, true));
    }
    let c = pred.num_classes;
    let scale = 1.0 / bg_indices.len() as f64;
    let mut total = 0.0;
    for &i in bg_indices {
        if i >= pred.num_points {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: pred.num_points,
            });
        }
        let (ce, probs) = cross_entropy(pred.logits_row(i), 0);
        total += ce;
        let d_row = &mut grads.d_logits[i * c..(i + 1) * c];
        for (k, p) in probs.iter().enumerate() {
            d_row[k] += scale * (p - if k == 0 { 1.0 } else { 0.0 });
        }
    }
    Ok((total * scale, grads, false))
}

/// The three loss values of one scan, before weighting.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub coseg: f64,
    pub fg: f64,
    pub bg: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TotalLoss {
    pub value: f64,
    pub mrl_active: bool,
}

/// Weighted total with the warmup gate. `epoch` is 1-based; mask guidance
/// contributes exactly `lambda2 * fg + lambda3 * bg` once `epoch` exceeds
/// `warmup_epochs` and exactly 0 before.
pub fn total_loss(parts: &LossParts, epoch: usize, config: &LossConfig) -> TotalLoss {
    let mrl_active = epoch > config.warmup_epochs;
    let mut value = config.lambda1 * parts.coseg;
    if mrl_active {
        value += config.lambda2 * parts.fg + config.lambda3 * parts.bg;
    }
    TotalLoss { value, mrl_active }
}

/// One training-log CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub scan: String,
    pub coseg: f64,
    pub fg: f64,
    pub bg: f64,
    pub total: f64,
    pub mrl_active: bool,
    pub fg_degenerate: bool,
    pub bg_degenerate: bool,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "epoch,scan,coseg,fg,bg,total,mrl_active,fg_degenerate,bg_degenerate";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.scan,
            self.coseg,
            self.fg,
            self.bg,
            self.total,
            self.mrl_active as u8,
            self.fg_degenerate as u8,
            self.bg_degenerate as u8
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Data(format!(
                "expected 9 CSV fields, got {}: {line:?}",
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Data(format!("bad number {s:?}: {e}")))
        };
        Ok(LossReport {
            epoch: fields[0]
                .parse()
                .map_err(|e| Error::Data(format!("bad epoch {:?}: {e}", fields[0])))?,
            scan: fields[1].to_string(),
            coseg: num(fields[2])?,
            fg: num(fields[3])?,
            bg: num(fields[4])?,
            total: num(fields[5])?,
            mrl_active: fields[6] == "1",
            fg_degenerate: fields[7] == "1",
            bg_degenerate: fields[8] == "1",
        })
    }
}

/// Numerically stable cross entropy of one logits row against `target`,
/// returning the loss and the softmax probabilities.
fn cross_entropy(row: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let ce = z.ln() - (row[target] - max);
    (ce, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck::{central_difference, relative_error};
    use crate::rng;
    use rand::Rng as _;

    fn pred_from_flat(flat: &[f64], n: usize, c: usize, e: usize) -> Prediction {
        // Layout: logits (n*c), raw confidence mapped through sigmoid (n),
        // embedding (n*e).
        let logits = flat[..n * c].to_vec();
        let confidence = flat[n * c..n * c + n]
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let embedding = flat[n * c + n..].to_vec();
        Prediction {
            num_points: n,
            num_classes: c,
            embed_dim: e,
            logits,
            confidence,
            embedding,
        }
    }

    fn random_flat(n: usize, c: usize, e: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n * c + n + n * e)
            .map(|_| r.random_range(-1.5..1.5))
            .collect()
    }

    #[test]
    fn coseg_hand_case_two_classes() {
        // One labeled point, uniform logits: CE = ln 2, c = 0.5 exactly at
        // raw score 0, so the loss is 0.5 ln 2 + 0.25.
        let flat = vec![0.0, 0.0, 0.0];
        let pred = pred_from_flat(&flat, 1, 2, 0);
        let mask = SparseLabelMask {
            indices: vec![0],
            per_tooth: 1,
        };
        let (value, _) = coseg_loss(&pred, &[1], &mask, CosegNorm::LabeledCount).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.25;
        assert!((value - expected).abs() < 1e-15, "{value} vs {expected}");
    }

    #[test]
    fn coseg_confidence_gradient_matches_closed_form() {
        let n = 12;
        let c = 4;
        let flat = random_flat(n, c, 0, 21);
        let pred = pred_from_flat(&flat, n, c, 0);
        let labels: Vec<u16> = (0..n).map(|i| (i % c) as u16).collect();
        let mask = SparseLabelMask {
            indices: (0..n).step_by(2).collect(),
            per_tooth: 1,
        };
        let (_, grads) = coseg_loss(&pred, &labels, &mask, CosegNorm::LabeledCount).unwrap();
        let z = mask.indices.len() as f64;
        for &i in &mask.indices {
            let (ce, _) = cross_entropy(pred.logits_row(i), labels[i] as usize);
            let conf = pred.confidence[i];
            let closed = ce - 2.0 * (1.0 - conf);
            assert!(
                (grads.d_confidence[i] * z - closed).abs() < 1e-12,
                "point {i}: {} vs {closed}",
                grads.d_confidence[i] * z
            );
        }
        // Unlabeled points get no gradient.
        assert_eq!(grads.d_confidence[1], 0.0);
    }

    #[test]
    fn coseg_norm_modes_are_proportional() {
        let n = 10;
        let c = 3;
        let flat = random_flat(n, c, 0, 5);
        let pred = pred_from_flat(&flat, n, c, 0);
        let labels: Vec<u16> = (0..n).map(|i| (i % c) as u16).collect();
        let mask = SparseLabelMask {
            indices: vec![0, 3, 7],
            per_tooth: 1,
        };
        let (by_labeled, _) = coseg_loss(&pred, &labels, &mask, CosegNorm::LabeledCount).unwrap();
        let (by_cloud, _) = coseg_loss(&pred, &labels, &mask, CosegNorm::FullCloud).unwrap();
        let expected = by_labeled * mask.indices.len() as f64 / n as f64;
        assert!((by_cloud - expected).abs() < 1e-15);
    }

    #[test]
    fn coseg_empty_mask_is_an_error() {
        let pred = pred_from_flat(&[0.0, 0.0, 0.0], 1, 2, 0);
        let mask = SparseLabelMask {
            indices: vec![],
            per_tooth: 1,
        };
        assert!(matches!(
            coseg_loss(&pred, &[0], &mask, CosegNorm::LabeledCount),
            Err(Error::Supervision(_))
        ));
    }

    #[test]
    fn coseg_gradients_match_finite_differences() {
        let n = 8;
        let c = 3;
        let mut flat = random_flat(n, c, 0, 31);
        let labels: Vec<u16> = (0..n).map(|i| ((i + 1) % c) as u16).collect();
        let mask = SparseLabelMask {
            indices: vec![0, 2, 5, 6],
            per_tooth: 1,
        };
        let pred = pred_from_flat(&flat, n, c, 0);
        let (_, grads) = coseg_loss(&pred, &labels, &mask, CosegNorm::LabeledCount).unwrap();

        let mut probe = |x: &[f64]| {
            let p = pred_from_flat(x, n, c, 0);
            coseg_loss(&p, &labels, &mask, CosegNorm::LabeledCount)
                .unwrap()
                .0
        };
        for i in 0..n * c {
            let fd = central_difference(&mut probe, &mut flat, i, 1e-5);
            assert!(
                relative_error(grads.d_logits[i], fd) < 1e-4,
                "logit {i}: {} vs {fd}",
                grads.d_logits[i]
            );
        }
        // Confidence enters through a sigmoid in the flat layout; chain it.
        for i in 0..n {
            let fd = central_difference(&mut probe, &mut flat, n * c + i, 1e-5);
            let conf = pred.confidence[i];
            let analytic = grads.d_confidence[i] * conf * (1.0 - conf);
            assert!(
                relative_error(analytic, fd) < 1e-4,
                "conf {i}: {analytic} vs {fd}"
            );
        }
    }

    #[test]
    fn contrastive_hand_case() {
        // Group A: two identical unit vectors; group B: one orthogonal.
        // With t = 1 both pairs contribute ln((e + 1) / e).
        let groups = vec![
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 1.0]],
        ];
        let r = contrastive_fg(&groups, 1.0).unwrap();
        assert!(!r.degenerate);
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((r.value - expected).abs() < 1e-12, "{} vs {expected}", r.value);
    }

    #[test]
    fn contrastive_degenerate_cases_flag_zero() {
        // One non-empty group.
        let r = contrastive_fg(&[vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![]], 0.1).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.value, 0.0);
        // Two groups but all singletons: no anchor-positive pairs.
        let r = contrastive_fg(&[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]], 0.1).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.value, 0.0);
        assert!(r.feature_grads.iter().flatten().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn contrastive_is_scale_invariant_per_feature() {
        let mut r = rng::seeded(3);
        let groups: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| {
                (0..4)
                    .map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let base = contrastive_fg(&groups, 0.1).unwrap().value;
        let scaled: Vec<Vec<Vec<f64>>> = groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|f| {
                        let s = r.random_range(0.1..10.0);
                        f.iter().map(|v| v * s).collect()
                    })
                    .collect()
            })
            .collect();
        let val = contrastive_fg(&scaled, 0.1).unwrap().value;
        assert!((base - val).abs() < 1e-9, "{base} vs {val}");
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let sizes = [3usize, 2, 4];
        let dim = 5;
        let total: usize = sizes.iter().sum();
        let mut r = rng::seeded(17);
        let mut flat: Vec<f64> = (0..total * dim).map(|_| r.random_range(-1.0..1.0)).collect();

        let unflatten = |x: &[f64]| -> Vec<Vec<Vec<f64>>> {
            let mut out = Vec::new();
            let mut off = 0;
            for &s in &sizes {
                let mut g = Vec::new();
                for _ in 0..s {
                    g.push(x[off..off + dim].to_vec());
                    off += dim;
                }
                out.push(g);
            }
            out
        };

        let result = contrastive_fg(&unflatten(&flat), 0.25).unwrap();
        let mut probe = |x: &[f64]| contrastive_fg(&unflatten(x), 0.25).unwrap().value;
        let mut off = 0;
        for (gi, &s) in sizes.iter().enumerate() {
            for fi in 0..s {
                for d in 0..dim {
                    let fd = central_difference(&mut probe, &mut flat, off, 1e-5);
                    let an = result.feature_grads[gi][fi][d];
                    assert!(
                        relative_error(an, fd) < 1e-4,
                        "group {gi} feature {fi} dim {d}: {an} vs {fd}"
                    );
                    off += 1;
                }
            }
        }
    }

    #[test]
    fn background_uniform_logits_give_ln_k() {
        let n = 6;
        let c = 15;
        let flat = vec![0.0; n * c + n];
        let pred = pred_from_flat(&flat, n, c, 0);
        let (value, _, degenerate) = background_loss(&pred, &[0, 2, 4]).unwrap();
        assert!(!degenerate);
        assert!((value - (c as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn background_empty_flags_degenerate_zero() {
        let pred = pred_from_flat(&[0.0; 5], 1, 4, 0);
        let (value, grads, degenerate) = background_loss(&pred, &[]).unwrap();
        assert_eq!(value, 0.0);
        assert!(degenerate);
        assert!(grads.d_logits.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn background_gradients_match_finite_differences() {
        let n = 7;
        let c = 4;
        let mut flat = random_flat(n, c, 0, 41);
        let bg = vec![1, 3, 4, 6];
        let pred = pred_from_flat(&flat, n, c, 0);
        let (_, grads, _) = background_loss(&pred, &bg).unwrap();
        let mut probe = |x: &[f64]| {
            background_loss(&pred_from_flat(x, n, c, 0), &bg).unwrap().0
        };
        for i in 0..n * c {
            let fd = central_difference(&mut probe, &mut flat, i, 1e-5);
            assert!(
                relative_error(grads.d_logits[i], fd) < 1e-4,
                "logit {i}: {} vs {fd}",
                grads.d_logits[i]
            );
        }
    }

    #[test]
    fn total_gating_is_exact() {
        let config = LossConfig::default();
        let parts = LossParts {
            coseg: 0.37,
            fg: 1.21,
            bg: 0.55,
        };
        let before = total_loss(&parts, config.warmup_epochs, &config);
        let after = total_loss(&parts, config.warmup_epochs + 1, &config);
        assert!(!before.mrl_active);
        assert!(after.mrl_active);
        assert_eq!(before.value, config.lambda1 * parts.coseg);
        assert_eq!(
            after.value - before.value,
            config.lambda2 * parts.fg + config.lambda3 * parts.bg
        );
    }

    #[test]
    fn loss_report_csv_round_trip() {
        let report = LossReport {
            epoch: 12,
            scan: "train_0007".into(),
            coseg: 0.25,
            fg: 1.5,
            bg: 0.125,
            total: 0.41625,
            mrl_active: true,
            fg_degenerate: false,
            bg_degenerate: true,
        };
        let parsed = LossReport::parse_csv_row(&report.to_csv_row()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = LossConfig::default();
        c.tau = 1.5;
        assert!(c.validate().is_err());
        let mut c = LossConfig::default();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        let mut c = LossConfig::default();
        c.lambda2 = -0.1;
        assert!(c.validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }
}
