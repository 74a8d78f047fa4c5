//! End-to-end training on a small synthetic dataset: a sparse-labels-only
//! baseline against the mask-guided run, evaluated on held-out scans.

use ws3d::synthgen::{generate_jaw, JawConfig};
use ws3d::trainer::{attach_sparse_labels, evaluate, train, EvalConfig, TrainConfig};

fn main() -> ws3d::Result<()> {
    let jaw = JawConfig {
        num_teeth: 8,
        points_per_tooth: 60,
        gingiva_points: 280,
        ..JawConfig::default()
    };
    let make = |seeds: std::ops::Range<u64>| -> ws3d::Result<Vec<_>> {
        seeds
            .map(|seed| generate_jaw(&JawConfig { seed, ..jaw.clone() }))
            .collect()
    };
    let train_scans = make(0..4)?;
    let test_scans = make(100..102)?;
    println!(
        "{} train scans, {} test scans, {} points each, one labeled point per tooth",
        train_scans.len(),
        test_scans.len(),
        jaw.total_points()
    );

    // Batch 1 maximizes optimizer steps per epoch; the confidence freeze
    // holds the per-point weighting at its init value until the labeled
    // cross entropy is low enough for the weighting to self-stabilize.
    let mut config = TrainConfig {
        epochs: 40,
        batch_size: 1,
        learning_rate: 2e-3,
        seed: 0,
        conf_freeze_epochs: 15,
        hidden_dim: 24,
        conf_hidden: 12,
        embed_dim: 12,
        k_neighbors: 8,
        image_height: 96,
        image_width: 96,
        mask_refresh: 2,
        ..TrainConfig::default()
    };
    config.loss.warmup_epochs = 15;

    let mut baseline = config.clone();
    baseline.loss.lambda2 = 0.0;
    baseline.loss.lambda3 = 0.0;

    let to_ids = |scans: &[ws3d::synthgen::LabeledScan]| -> ws3d::Result<Vec<_>> {
        attach_sparse_labels(
            scans
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("scan_{i:02}"), s.clone()))
                .collect(),
            config.labels_per_tooth,
            config.seed,
        )
    };
    let train_set = to_ids(&train_scans)?;
    let test_set = to_ids(&test_scans)?;

    for (name, cfg) in [("baseline", &baseline), ("mask-guided", &config)] {
        let started = std::time::Instant::now();
        let outcome = train(&train_set, cfg)?;
        let eval = evaluate(&outcome.params, &test_set, &EvalConfig::default())?;
        let last = outcome.log.last().expect("training log");
        let fg_live = outcome
            .log
            .iter()
            .filter(|r| r.mrl_active && !r.fg_degenerate)
            .count();
        let mask_rows = outcome.log.iter().filter(|r| r.mrl_active).count();
        println!(
            "{name:<12} {:>5.1}s  final loss {:.4}  contrastive live {fg_live}/{mask_rows}  \
             test mIoU {:.4}  DSC {:.4}  acc {:.4}",
            started.elapsed().as_secs_f64(),
            last.total,
            eval.metrics.miou,
            eval.metrics.mean_dsc,
            eval.metrics.accuracy
        );
        for (bucket, iou) in &eval.metrics.bucket_iou {
            if let Some(iou) = iou {
                println!("    {bucket:<10} IoU {iou:.4}");
            }
        }
    }
    println!("the mask-guided run supervises gingiva and separates teeth; the baseline cannot");
    Ok(())
}
