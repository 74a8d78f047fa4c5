//! Checks the hand-derived backward pass against central differences. The
//! probe objective pushes all three losses through the network at once, so
//! logits, confidence, and embedding gradients are all exercised.

use ws3d::losses::{background_loss, contrastive_fg_indexed, coseg_loss, CosegNorm};
use ws3d::numcheck::{central_difference, relative_error};
use ws3d::segnet::{
    backward, build_neighbor_graph, forward_traced, init_params, NetDims, NetworkParams,
    PredictionGrads,
};
use ws3d::synthgen::{generate_jaw, sample_sparse_labels, JawConfig};

const TEMPERATURE: f64 = 0.1;
const LAMBDA_FG: f64 = 0.1;
const LAMBDA_BG: f64 = 0.01;

fn main() -> ws3d::Result<()> {
    let scan = generate_jaw(&JawConfig {
        num_teeth: 4,
        points_per_tooth: 30,
        gingiva_points: 60,
        seed: 3,
        ..JawConfig::default()
    })?;
    let sparse = sample_sparse_labels(&scan, 1, 5)?;

    let mut dims = NetDims::for_classes(scan.num_classes);
    dims.hidden_dim = 10;
    dims.conf_hidden = 6;
    dims.embed_dim = 5;
    dims.k_neighbors = 6;
    let params = init_params(&dims, 11);
    let graph = build_neighbor_graph(&scan, dims.k_neighbors);
    println!(
        "{} points, {} parameters, k = {}",
        scan.len(),
        params.values.len(),
        dims.k_neighbors
    );

    // Contrastive groups and background indices are held fixed (taken from
    // ground truth) so the probe objective is a smooth function of the
    // parameters alone.
    let groups: Vec<(u16, Vec<usize>)> = (1..=scan.num_tooth_classes() as u16)
        .map(|c| (c, scan.class_indices(c).into_iter().take(8).collect()))
        .collect();
    let bg: Vec<usize> = scan.class_indices(0).into_iter().take(20).collect();

    let objective = |values: &[f64]| -> f64 {
        let p = NetworkParams {
            dims: dims.clone(),
            values: values.to_vec(),
        };
        let (pred, _) = forward_traced(&scan, &graph, &p).expect("forward");
        let (coseg, _) =
            coseg_loss(&pred, &scan.class_labels, &sparse, CosegNorm::LabeledCount)
                .expect("coseg");
        let (fg, _, _) = contrastive_fg_indexed(&pred, &groups, TEMPERATURE).expect("fg");
        let (bgl, _, _) = background_loss(&pred, &bg).expect("bg");
        coseg + LAMBDA_FG * fg + LAMBDA_BG * bgl
    };

    let (pred, trace) = forward_traced(&scan, &graph, &params)?;
    let (_, g_coseg) = coseg_loss(&pred, &scan.class_labels, &sparse, CosegNorm::LabeledCount)?;
    let (_, g_fg, degenerate) = contrastive_fg_indexed(&pred, &groups, TEMPERATURE)?;
    assert!(!degenerate, "ground-truth groups cannot be degenerate");
    let (_, g_bg, _) = background_loss(&pred, &bg)?;
    let mut grads = PredictionGrads::zeros_like(&pred);
    grads.accumulate(1.0, &g_coseg);
    grads.accumulate(LAMBDA_FG, &g_fg);
    grads.accumulate(LAMBDA_BG, &g_bg);
    let analytic = backward(&params, &graph, &trace, &grads);

    let mut values = params.values.clone();
    let mut f = objective;
    let stride = (values.len() / 90).max(1);
    let mut worst = (0.0f64, 0usize);
    let mut checked = 0;
    for i in (0..values.len()).step_by(stride) {
        let numeric = central_difference(&mut f, &mut values, i, 1e-5);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 {
            worst = (err, i);
        }
        checked += 1;
    }
    println!(
        "checked {checked} coordinates: worst relative error {:.3e} at parameter {}",
        worst.0, worst.1
    );
    assert!(
        worst.0 < 1e-4,
        "analytic and numeric gradients disagree: {:.3e}",
        worst.0
    );
    println!("analytic backward pass agrees with central differences");
    Ok(())
}
