//! Inverse-distance k-NN interpolation of per-point feature vectors from a
//! subsampled cloud back onto the full cloud.

/// For each query position, find the `k` nearest sample positions and blend
/// their feature rows with weights 1/(d + 1e-8). A query coinciding exactly
/// with a sample copies that sample's row. When `k` exceeds the sample
/// count, all samples are used.
pub fn knn_interpolate(
    sample_positions: &[[f64; 3]],
    sample_features: &[Vec<f64>],
    query_positions: &[[f64; 3]],
    k: usize,
) -> Vec<Vec<f64>> {
    assert_eq!(sample_positions.len(), sample_features.len());
    assert!(!sample_positions.is_empty(), "need at least one sample");
    assert!(k >= 1, "k must be positive");
    let k = k.min(sample_positions.len());
    let dim = sample_features[0].len();

    let mut out = Vec::with_capacity(query_positions.len());
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(sample_positions.len());
    for q in query_positions {
        dists.clear();
        for (i, s) in sample_positions.iter().enumerate() {
            let d2 = (q[0] - s[0]).powi(2) + (q[1] - s[1]).powi(2) + (q[2] - s[2]).powi(2);
            dists.push((d2, i));
        }
        // Ties on distance resolve to the lower sample index.
        dists.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        let nearest = &mut dists[..k];
        nearest.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());

        if nearest[0].0 == 0.0 {
            out.push(sample_features[nearest[0].1].clone());
            continue;
        }
        let mut row = vec![0.0; dim];
        let mut wsum = 0.0;
        for &(d2, idx) in nearest.iter() {
            let w = 1.0 / (d2.sqrt() + 1e-8);
            wsum += w;
            for (r, f) in row.iter_mut().zip(&sample_features[idx]) {
                *r += w * f;
            }
        }
        for r in &mut row {
            *r /= wsum;
        }
        out.push(row);
    }
    out
}
