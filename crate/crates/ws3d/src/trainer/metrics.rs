//! Segmentation metrics from a confusion matrix: per-class IoU and DSC,
//! their means over the classes present in the ground truth, overall
//! accuracy, and tooth-type bucket summaries.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// counts[gt * num_classes + pred]
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn add(&mut self, gt: u16, pred: u16) {
        let (g, p) = (gt as usize, pred as usize);
        assert!(g < self.num_classes && p < self.num_classes, "class range");
        self.counts[g * self.num_classes + p] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn tp(&self, c: usize) -> u64 {
        self.counts[c * self.num_classes + c]
    }

    fn fp(&self, c: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&g| g != c)
            .map(|g| self.counts[g * self.num_classes + c])
            .sum()
    }

    fn fn_(&self, c: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&p| p != c)
            .map(|p| self.counts[c * self.num_classes + p])
            .sum()
    }

    pub fn present_in_gt(&self, c: usize) -> bool {
        self.tp(c) + self.fn_(c) > 0
    }

    /// Intersection over union; `None` when the class appears in neither
    /// ground truth nor prediction.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let denom = self.tp(c) + self.fp(c) + self.fn_(c);
        (denom > 0).then(|| self.tp(c) as f64 / denom as f64)
    }

    /// Dice coefficient, the harmonic companion: 2 IoU / (1 + IoU).
    pub fn dsc(&self, c: usize) -> Option<f64> {
        let denom = 2 * self.tp(c) + self.fp(c) + self.fn_(c);
        (denom > 0).then(|| 2.0 * self.tp(c) as f64 / denom as f64)
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.num_classes).map(|c| self.tp(c)).sum::<u64>() as f64 / total as f64
    }
}

/// Named groups of class ids for summary reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassBuckets {
    pub names: Vec<String>,
    pub members: Vec<Vec<u16>>,
}

impl ClassBuckets {
    /// Dental layout for `num_teeth` classes along the arch: the outer
    /// quarter of each side are molars, then premolars, one canine, and
    /// incisors in the middle, mirroring a 2:2:1:2 half-arch split.
    /// Gingiva (class 0) is its own bucket.
    pub fn dental_default(num_teeth: usize) -> Self {
        let mut molars = Vec::new();
        let mut premolars = Vec::new();
        let mut canines = Vec::new();
        let mut incisors = Vec::new();
        let half = (num_teeth as f64) / 2.0;
        for tooth in 1..=num_teeth as u16 {
            // Position from the nearer arch end, in half-arch fractions.
            let from_end = (tooth as f64 - 0.5).min(num_teeth as f64 + 0.5 - tooth as f64);
            let frac = from_end / half;
            if frac < 2.0 / 7.0 {
                molars.push(tooth);
            } else if frac < 4.0 / 7.0 {
                premolars.push(tooth);
            } else if frac < 5.0 / 7.0 {
                canines.push(tooth);
            } else {
                incisors.push(tooth);
            }
        }
        ClassBuckets {
            names: vec![
                "incisors".into(),
                "canines".into(),
                "premolars".into(),
                "molars".into(),
                "gingiva".into(),
            ],
            members: vec![incisors, canines, premolars, molars, vec![0]],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Metrics {
    /// Mean IoU over classes present in the ground truth.
    pub miou: f64,
    /// Mean DSC over the same classes.
    pub mean_dsc: f64,
    pub accuracy: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_dsc: Vec<Option<f64>>,
    /// Macro IoU per bucket over its ground-truth-present members.
    pub bucket_iou: Vec<(String, Option<f64>)>,
}

pub fn evaluate_confusion(cm: &ConfusionMatrix, buckets: &ClassBuckets) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let per_class_iou: Vec<Option<f64>> = (0..cm.num_classes).map(|c| cm.iou(c)).collect();
    let per_class_dsc: Vec<Option<f64>> = (0..cm.num_classes).map(|c| cm.dsc(c)).collect();

    let mut iou_sum = 0.0;
    let mut dsc_sum = 0.0;
    let mut present = 0usize;
    for c in 0..cm.num_classes {
        if cm.present_in_gt(c) {
            present += 1;
            iou_sum += per_class_iou[c].expect("present class has IoU");
            dsc_sum += per_class_dsc[c].expect("present class has DSC");
        }
    }
    if present == 0 {
        return Err(Error::Data("no class present in ground truth".into()));
    }

    let bucket_iou = buckets
        .names
        .iter()
        .zip(&buckets.members)
        .map(|(name, members)| {
            let vals: Vec<f64> = members
                .iter()
                .filter(|&&c| (c as usize) < cm.num_classes && cm.present_in_gt(c as usize))
                .map(|&c| per_class_iou[c as usize].expect("present class has IoU"))
                .collect();
            let iou = if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            };
            (name.clone(), iou)
        })
        .collect();

    Ok(Metrics {
        miou: iou_sum / present as f64,
        mean_dsc: dsc_sum / present as f64,
        accuracy: cm.accuracy(),
        per_class_iou,
        per_class_dsc,
        bucket_iou,
    })
}
