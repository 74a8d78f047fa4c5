//! Subsampled inference: run the network on a fraction of the cloud and
//! lift its logits back to every point with inverse-distance k-nearest
//! interpolation. Useful when clouds are large and the network is the
//! bottleneck.

use ws3d::synthgen::{generate_jaw, JawConfig};
use ws3d::trainer::interpolate::knn_interpolate;
use ws3d::trainer::{attach_sparse_labels, evaluate, train, EvalConfig, TrainConfig};

fn main() -> ws3d::Result<()> {
    // The interpolator alone, against an analytic field: values at the
    // queries come out close to the true function.
    let field = |p: [f64; 3]| (p[0] * 0.2).sin() + (p[1] * 0.3).cos();
    let scan = generate_jaw(&JawConfig {
        seed: 31,
        ..JawConfig::default()
    })?;
    let samples: Vec<[f64; 3]> = (0..scan.len()).step_by(13).map(|i| scan.position_f64(i)).collect();
    let sample_values: Vec<Vec<f64>> = samples.iter().map(|&p| vec![field(p)]).collect();
    let queries: Vec<[f64; 3]> = (0..scan.len()).map(|i| scan.position_f64(i)).collect();
    let interpolated = knn_interpolate(&samples, &sample_values, &queries, 3);
    let mae = queries
        .iter()
        .zip(&interpolated)
        .map(|(&p, v)| (v[0] - field(p)).abs())
        .sum::<f64>()
        / queries.len() as f64;
    println!(
        "analytic field from {} samples to {} queries: MAE {:.4}",
        samples.len(),
        queries.len(),
        mae
    );

    // A quickly trained model, evaluated three ways on the same scans.
    let jaw = JawConfig::default();
    let scans: ws3d::Result<Vec<_>> = (0..6)
        .map(|i| Ok((format!("scan_{i}"), generate_jaw(&JawConfig { seed: i, ..jaw.clone() })?)))
        .collect();
    let config = TrainConfig {
        epochs: 60,
        batch_size: 1,
        learning_rate: 2e-3,
        conf_freeze_epochs: 20,
        hidden_dim: 32,
        conf_hidden: 16,
        embed_dim: 16,
        k_neighbors: 12,
        mask_refresh: 2,
        ..TrainConfig::default()
    };
    let dataset = attach_sparse_labels(scans?, config.labels_per_tooth, config.seed)?;
    let outcome = train(&dataset, &config)?;

    println!("evaluation    points/scan   mIoU     acc    time");
    for (label, subsample) in [("full", None), ("1/2", Some(1000)), ("1/5", Some(400))] {
        let eval_config = EvalConfig {
            subsample,
            interpolate_k: 3,
            seed: 0,
        };
        let started = std::time::Instant::now();
        let eval = evaluate(&outcome.params, &dataset, &eval_config)?;
        println!(
            "{label:<13} {:>11}   {:.4}  {:.4}  {:>5.2}s",
            subsample.unwrap_or(jaw.total_points()),
            eval.metrics.miou,
            eval.metrics.accuracy,
            started.elapsed().as_secs_f64()
        );
    }
    println!("subsampled runs trade a little accuracy for proportionally less network time");
    Ok(())
}
