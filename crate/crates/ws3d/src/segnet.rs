//! The per-point segmentation network and its hand-derived backward pass.
//!
//! Architecture: three shared linear+relu encoder layers, one mean-pool over
//! the k nearest neighbors for local context, a mixer layer over the
//! concatenated point and context features, and three heads off the mixed
//! feature: a linear segmentation head (K+1 logits), a two-layer sigmoid
//! confidence head, and a two-layer projection head used by the contrastive
//! loss. Parameters live in one flat `f64` vector whose layout is fixed by
//! [`NetDims::layers`]; gradients come back in the same layout, which keeps
//! the optimizer and the checkpoint format trivial.
//!
//! Everything is deterministic: neighbor ties break on point index and all
//! reductions run in index order.

use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, salt};
use crate::synthgen::LabeledScan;

pub const INPUT_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub conf_hidden: usize,
    pub embed_dim: usize,
    /// K + 1 output classes (gingiva plus teeth).
    pub num_classes: usize,
    pub k_neighbors: usize,
}

impl NetDims {
    pub fn for_classes(num_classes: usize) -> Self {
        NetDims {
            input_dim: INPUT_DIM,
            hidden_dim: 64,
            conf_hidden: 32,
            embed_dim: 32,
            num_classes,
            k_neighbors: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != INPUT_DIM {
            return Err(Error::Config(format!(
                "input_dim must be {INPUT_DIM}, got {}",
                self.input_dim
            )));
        }
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("conf_hidden", self.conf_hidden),
            ("embed_dim", self.embed_dim),
            ("k_neighbors", self.k_neighbors),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Layer table in declaration order; weight offsets define both the flat
    /// parameter layout and the checkpoint tensor order.
    pub fn layers(&self) -> [LayerSpec; 9] {
        let h = self.hidden_dim;
        let hc = self.conf_hidden;
        let e = self.embed_dim;
        let c = self.num_classes;
        let shapes = [
            ("enc1", self.input_dim, h),
            ("enc2", h, h),
            ("enc3", h, h),
            ("mixer", 2 * h, h),
            ("seg", h, c),
            ("conf1", h, hc),
            ("conf2", hc, 1),
            ("proj1", h, h),
            ("proj2", h, e),
        ];
        let mut off = 0;
        shapes.map(|(name, in_dim, out_dim)| {
            let spec = LayerSpec {
                name,
                in_dim,
                out_dim,
                w_off: off,
                b_off: off + in_dim * out_dim,
            };
            off = spec.b_off + out_dim;
            spec
        })
    }

    pub fn param_count(&self) -> usize {
        let last = self.layers()[8];
        last.b_off + last.out_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_dim: usize,
    pub out_dim: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub dims: NetDims,
    /// All weights and biases, layer by layer, weights row-major.
    pub values: Vec<f64>,
}

/// Glorot-uniform weights, zero biases. Entries of a layer with fan-in `i`
/// and fan-out `o` are drawn from U(-b, b) with b = sqrt(6 / (i + o)).
pub fn init_params(dims: &NetDims, seed: u64) -> NetworkParams {
    let mut rng = rng::seeded(rng::derive(seed, salt::PARAMS));
    let mut values = vec![0.0; dims.param_count()];
    for layer in dims.layers() {
        let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
        for w in &mut values[layer.w_off..layer.b_off] {
            *w = rng.random_range(-bound..bound);
        }
    }
    NetworkParams { dims: *dims, values }
}

/// k-nearest-neighbor lists (self included), row `i` holding the `k`
/// neighbors of point `i` ordered by squared distance, ties by index.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub k: usize,
    pub neighbors: Vec<u32>,
}

pub fn build_neighbor_graph(scan: &LabeledScan, k: usize) -> NeighborGraph {
    let n = scan.len();
    let k = k.min(n).max(1);
    let pos: Vec<[f64; 3]> = (0..n).map(|i| scan.position_f64(i)).collect();
    let mut neighbors = Vec::with_capacity(n * k);
    let mut dist: Vec<(f64, u32)> = Vec::with_capacity(n);
    for i in 0..n {
        dist.clear();
        let p = pos[i];
        for (j, q) in pos.iter().enumerate() {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            dist.push((d2, j as u32));
        }
        if k < n {
            dist.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
            dist.truncate(k);
        }
        dist.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        neighbors.extend(dist.iter().map(|&(_, j)| j));
    }
    NeighborGraph { k, neighbors }
}

/// Per-point network outputs.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub num_points: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    /// N x num_classes, row-major.
    pub logits: Vec<f64>,
    /// N values, each strictly inside (0, 1).
    pub confidence: Vec<f64>,
    /// N x embed_dim, row-major, not normalized.
    pub embedding: Vec<f64>,
}

impl Prediction {
    pub fn logits_row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn embedding_row(&self, i: usize) -> &[f64] {
        &self.embedding[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    /// Argmax class per point, ties to the lower class id.
    pub fn argmax_classes(&self) -> Vec<u16> {
        (0..self.num_points)
            .map(|i| {
                let row = self.logits_row(i);
                let mut best = 0usize;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect()
    }
}

/// Cotangents flowing back into the network outputs. Losses accumulate into
/// one of these; `backward` turns it into parameter gradients.
#[derive(Debug, Clone)]
pub struct PredictionGrads {
    pub d_logits: Vec<f64>,
    pub d_confidence: Vec<f64>,
    pub d_embedding: Vec<f64>,
}

impl PredictionGrads {
    pub fn zeros_like(pred: &Prediction) -> Self {
        PredictionGrads {
            d_logits: vec![0.0; pred.logits.len()],
            d_confidence: vec![0.0; pred.confidence.len()],
            d_embedding: vec![0.0; pred.embedding.len()],
        }
    }

    /// self += weight * other.
    pub fn accumulate(&mut self, weight: f64, other: &PredictionGrads) {
        assert_eq!(self.d_logits.len(), other.d_logits.len());
        for (a, b) in self.d_logits.iter_mut().zip(&other.d_logits) {
            *a += weight * b;
        }
        for (a, b) in self.d_confidence.iter_mut().zip(&other.d_confidence) {
            *a += weight * b;
        }
        for (a, b) in self.d_embedding.iter_mut().zip(&other.d_embedding) {
            *a += weight * b;
        }
    }
}

/// Everything the backward pass needs: inputs and pre/post-activation
/// buffers of every layer, all N x dim row-major.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub features: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    a3: Vec<f64>,
    /// relu(a3); kept because both the pool and the mixer consume it.
    h3: Vec<f64>,
    ctx: Vec<f64>,
    am: Vec<f64>,
    /// relu(am), the shared backbone feature.
    hm: Vec<f64>,
    ac1: Vec<f64>,
    ap1: Vec<f64>,
}

/// Input features: centered coordinates and radial distance scaled by the
/// scan's maximum radial extent, plus the unit normal (zeros when absent).
pub fn input_features(scan: &LabeledScan) -> Vec<f64> {
    let n = scan.len();
    let c = scan.centroid();
    let mut radial = Vec::with_capacity(n);
    let mut scale = 0.0f64;
    for i in 0..n {
        let p = scan.position_f64(i);
        let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        radial.push(r);
        scale = scale.max(r);
    }
    if scale < 1e-12 {
        scale = 1.0;
    }
    let mut out = Vec::with_capacity(n * INPUT_DIM);
    for i in 0..n {
        let p = scan.position_f64(i);
        out.push((p[0] - c[0]) / scale);
        out.push((p[1] - c[1]) / scale);
        out.push((p[2] - c[2]) / scale);
        match &scan.normals {
            Some(normals) => out.extend(normals[i].iter().map(|&v| v as f64)),
            None => out.extend_from_slice(&[0.0, 0.0, 0.0]),
        }
        out.push(radial[i] / scale);
    }
    out
}

pub fn forward(
    scan: &LabeledScan,
    graph: &NeighborGraph,
    params: &NetworkParams,
) -> Result<Prediction> {
    forward_traced(scan, graph, params).map(|(pred, _)| pred)
}

pub fn forward_traced(
    scan: &LabeledScan,
    graph: &NeighborGraph,
    params: &NetworkParams,
) -> Result<(Prediction, ForwardTrace)> {
    let dims = &params.dims;
    dims.validate()?;
    assert_eq!(params.values.len(), dims.param_count(), "parameter layout");
    assert_eq!(graph.neighbors.len(), scan.len() * graph.k, "graph size");
    if params.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "network parameters contain non-finite values".into(),
        ));
    }

    let n = scan.len();
    let h = dims.hidden_dim;
    let [enc1, enc2, enc3, mixer, seg, conf1, conf2, proj1, proj2] = dims.layers();
    let p = &params.values;

    let features = input_features(scan);
    let a1 = linear(p, enc1, &features, n);
    let h1 = relu(&a1);
    let a2 = linear(p, enc2, &h1, n);
    let h2 = relu(&a2);
    let a3 = linear(p, enc3, &h2, n);
    let h3 = relu(&a3);

    // Mean-pooled neighborhood context.
    let mut ctx = vec![0.0; n * h];
    let inv_k = 1.0 / graph.k as f64;
    for i in 0..n {
        let out = &mut ctx[i * h..(i + 1) * h];
        for &j in &graph.neighbors[i * graph.k..(i + 1) * graph.k] {
            let src = &h3[j as usize * h..(j as usize + 1) * h];
            for (o, s) in out.iter_mut().zip(src) {
                *o += s;
            }
        }
        for o in out.iter_mut() {
            *o *= inv_k;
        }
    }

    let mut mixed_in = vec![0.0; n * 2 * h];
    for i in 0..n {
        mixed_in[i * 2 * h..i * 2 * h + h].copy_from_slice(&h3[i * h..(i + 1) * h]);
        mixed_in[i * 2 * h + h..(i + 1) * 2 * h].copy_from_slice(&ctx[i * h..(i + 1) * h]);
    }
    let am = linear(p, mixer, &mixed_in, n);
    let hm = relu(&am);

    let logits = linear(p, seg, &hm, n);
    let ac1 = linear(p, conf1, &hm, n);
    let hc1 = relu(&ac1);
    let ac2 = linear(p, conf2, &hc1, n);
    let confidence: Vec<f64> = ac2
        .iter()
        .map(|&a| sigmoid(a).clamp(1e-15, 1.0 - 1e-15))
        .collect();
    let ap1 = linear(p, proj1, &hm, n);
    let hp1 = relu(&ap1);
    let embedding = linear(p, proj2, &hp1, n);

    let pred = Prediction {
        num_points: n,
        num_classes: dims.num_classes,
        embed_dim: dims.embed_dim,
        logits,
        confidence,
        embedding,
    };
    let trace = ForwardTrace {
        features,
        a1,
        a2,
        a3,
        h3,
        ctx,
        am,
        hm,
        ac1,
        ap1,
    };
    Ok((pred, trace))
}

/// Exact reverse-mode pass: cotangents on the outputs become gradients for
/// every parameter, in the flat layout of `params.values`.
pub fn backward(
    params: &NetworkParams,
    graph: &NeighborGraph,
    trace: &ForwardTrace,
    grads: &PredictionGrads,
) -> Vec<f64> {
    let dims = &params.dims;
    let n = trace.a1.len() / dims.hidden_dim;
    let h = dims.hidden_dim;
    let [enc1, enc2, enc3, mixer, seg, conf1, conf2, proj1, proj2] = dims.layers();
    let p = &params.values;
    assert_eq!(grads.d_logits.len(), n * dims.num_classes);
    assert_eq!(grads.d_confidence.len(), n);
    assert_eq!(grads.d_embedding.len(), n * dims.embed_dim);

    let mut g = vec![0.0; dims.param_count()];

    // Heads share the backbone feature hm; their input cotangents add up.
    let mut d_hm = vec![0.0; n * h];

    // Segmentation head.
    linear_backward(p, seg, &trace.hm, &grads.d_logits, n, &mut g, &mut d_hm);

    // Confidence head: d/d_ac2 = d_conf * sigmoid'(ac2).
    let hc1 = relu(&trace.ac1);
    let mut d_ac2 = vec![0.0; n];
    for i in 0..n {
        let c = sigmoid(conf2_preact(p, conf2, &hc1, i));
        d_ac2[i] = grads.d_confidence[i] * c * (1.0 - c);
    }
    let mut d_hc1 = vec![0.0; n * dims.conf_hidden];
    linear_backward(p, conf2, &hc1, &d_ac2, n, &mut g, &mut d_hc1);
    let d_ac1 = relu_backward(&trace.ac1, &d_hc1);
    linear_backward(p, conf1, &trace.hm, &d_ac1, n, &mut g, &mut d_hm);

    // Projection head.
    let hp1 = relu(&trace.ap1);
    let mut d_hp1 = vec![0.0; n * h];
    linear_backward(p, proj2, &hp1, &grads.d_embedding, n, &mut g, &mut d_hp1);
    let d_ap1 = relu_backward(&trace.ap1, &d_hp1);
    linear_backward(p, proj1, &trace.hm, &d_ap1, n, &mut g, &mut d_hm);

    // Mixer over [h3, ctx].
    let d_am = relu_backward(&trace.am, &d_hm);
    let mut mixed_in = vec![0.0; n * 2 * h];
    for i in 0..n {
        mixed_in[i * 2 * h..i * 2 * h + h].copy_from_slice(&trace.h3[i * h..(i + 1) * h]);
        mixed_in[i * 2 * h + h..(i + 1) * 2 * h]
            .copy_from_slice(&trace.ctx[i * h..(i + 1) * h]);
    }
    let mut d_mixed = vec![0.0; n * 2 * h];
    linear_backward(p, mixer, &mixed_in, &d_am, n, &mut g, &mut d_mixed);

    // Split the mixer cotangent into the direct path and the pooled path;
    // pooling distributes each context cotangent over the contributing
    // neighbors.
    let mut d_h3 = vec![0.0; n * h];
    let inv_k = 1.0 / graph.k as f64;
    for i in 0..n {
        for d in 0..h {
            d_h3[i * h + d] += d_mixed[i * 2 * h + d];
        }
        for &j in &graph.neighbors[i * graph.k..(i + 1) * graph.k] {
            let dst = &mut d_h3[j as usize * h..(j as usize + 1) * h];
            let src = &d_mixed[i * 2 * h + h..(i + 1) * 2 * h];
            for (dv, sv) in dst.iter_mut().zip(src) {
                *dv += sv * inv_k;
            }
        }
    }

    // Encoder stack.
    let d_a3 = relu_backward(&trace.a3, &d_h3);
    let h2 = relu(&trace.a2);
    let mut d_h2 = vec![0.0; n * h];
    linear_backward(p, enc3, &h2, &d_a3, n, &mut g, &mut d_h2);
    let d_a2 = relu_backward(&trace.a2, &d_h2);
    let h1 = relu(&trace.a1);
    let mut d_h1 = vec![0.0; n * h];
    linear_backward(p, enc2, &h1, &d_a2, n, &mut g, &mut d_h1);
    let d_a1 = relu_backward(&trace.a1, &d_h1);
    let mut d_x = vec![0.0; n * dims.input_dim];
    linear_backward(p, enc1, &trace.features, &d_a1, n, &mut g, &mut d_x);

    g
}

fn conf2_preact(p: &[f64], conf2: LayerSpec, hc1: &[f64], i: usize) -> f64 {
    let w = &p[conf2.w_off..conf2.b_off];
    let row = &hc1[i * conf2.in_dim..(i + 1) * conf2.in_dim];
    w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + p[conf2.b_off]
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&v| v.max(0.0)).collect()
}

fn relu_backward(pre: &[f64], d_post: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(d_post)
        .map(|(&a, &d)| if a > 0.0 { d } else { 0.0 })
        .collect()
}

/// y = W x + b applied per point; x is N x in_dim, result N x out_dim.
fn linear(p: &[f64], layer: LayerSpec, x: &[f64], n: usize) -> Vec<f64> {
    let w = &p[layer.w_off..layer.b_off];
    let b = &p[layer.b_off..layer.b_off + layer.out_dim];
    let mut y = vec![0.0; n * layer.out_dim];
    for i in 0..n {
        let xr = &x[i * layer.in_dim..(i + 1) * layer.in_dim];
        let yr = &mut y[i * layer.out_dim..(i + 1) * layer.out_dim];
        for (o, yv) in yr.iter_mut().enumerate() {
            let wr = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = b[o];
            for (wv, xv) in wr.iter().zip(xr) {
                acc += wv * xv;
            }
            *yv = acc;
        }
    }
    y
}

/// Accumulates dW and db into `g` and the input cotangent into `d_x`.
fn linear_backward(
    p: &[f64],
    layer: LayerSpec,
    x: &[f64],
    d_y: &[f64],
    n: usize,
    g: &mut [f64],
    d_x: &mut [f64],
) {
    let w = &p[layer.w_off..layer.b_off];
    for i in 0..n {
        let xr = &x[i * layer.in_dim..(i + 1) * layer.in_dim];
        let dyr = &d_y[i * layer.out_dim..(i + 1) * layer.out_dim];
        let dxr = &mut d_x[i * layer.in_dim..(i + 1) * layer.in_dim];
        for (o, &dy) in dyr.iter().enumerate() {
            if dy == 0.0 {
                continue;
            }
            let wr = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
            let gw = &mut g[layer.w_off + o * layer.in_dim..layer.w_off + (o + 1) * layer.in_dim];
            for k in 0..layer.in_dim {
                gw[k] += dy * xr[k];
                dxr[k] += dy * wr[k];
            }
            g[layer.b_off + o] += dy;
        }
    }
}

const PARAMS_MAGIC: &[u8; 4] = b"WSNN";
const PARAMS_VERSION: u8 = 1;

/// Checkpoint: magic "WSNN", version u8, six u32 dims (input, hidden,
/// confidence hidden, embedding, classes, neighbors), then every parameter
/// as little-endian f64 in declaration order.
pub fn save_params(params: &NetworkParams, path: &Path) -> Result<()> {
    let d = &params.dims;
    let mut out = Vec::with_capacity(29 + 8 * params.values.len());
    out.extend_from_slice(PARAMS_MAGIC);
    out.push(PARAMS_VERSION);
    for v in [
        d.input_dim,
        d.hidden_dim,
        d.conf_hidden,
        d.embed_dim,
        d.num_classes,
        d.k_neighbors,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_params(path: &Path) -> Result<NetworkParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 4 || &bytes[..4] != PARAMS_MAGIC {
        return Err(fail(0, "expected magic \"WSNN\"".into()));
    }
    if bytes.len() < 5 {
        return Err(fail(4, "truncated before version byte".into()));
    }
    if bytes[4] != PARAMS_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: bytes[4],
            expected: PARAMS_VERSION,
        });
    }
    if bytes.len() < 29 {
        return Err(fail(bytes.len(), "truncated inside dims header".into()));
    }
    let dim_at =
        |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let dims = NetDims {
        input_dim: dim_at(0),
        hidden_dim: dim_at(1),
        conf_hidden: dim_at(2),
        embed_dim: dim_at(3),
        num_classes: dim_at(4),
        k_neighbors: dim_at(5),
    };
    dims.validate().map_err(|e| fail(5, e.to_string()))?;
    let count = dims.param_count();
    let expected = 29 + 8 * count;
    if bytes.len() < expected {
        return Err(fail(
            bytes.len(),
            format!("truncated: need {expected} bytes for {count} parameters"),
        ));
    }
    if bytes.len() > expected {
        return Err(fail(expected, "trailing bytes after parameters".into()));
    }
    let values: Vec<f64> = (0..count)
        .map(|i| f64::from_le_bytes(bytes[29 + 8 * i..37 + 8 * i].try_into().unwrap()))
        .collect();
    Ok(NetworkParams { dims, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck::{central_difference, relative_error};
    use crate::synthgen::{generate_jaw, JawConfig};
    use tempfile::tempdir;

    fn tiny_scan(seed: u64) -> LabeledScan {
        generate_jaw(&JawConfig {
            num_teeth: 3,
            points_per_tooth: 8,
            gingiva_points: 6,
            seed,
            ..JawConfig::default()
        })
        .unwrap()
    }

    fn tiny_dims(num_classes: usize) -> NetDims {
        NetDims {
            input_dim: INPUT_DIM,
            hidden_dim: 10,
            conf_hidden: 6,
            embed_dim: 5,
            num_classes,
            k_neighbors: 4,
        }
    }

    #[test]
    fn param_count_matches_layout() {
        let dims = NetDims::for_classes(15);
        let by_hand = (7 * 64 + 64)
            + 2 * (64 * 64 + 64)
            + (128 * 64 + 64)
            + (64 * 15 + 15)
            + (64 * 32 + 32)
            + (32 + 1)
            + (64 * 64 + 64)
            + (64 * 32 + 32);
        assert_eq!(dims.param_count(), by_hand);
        let layers = dims.layers();
        for w in layers.windows(2) {
            assert_eq!(w[0].b_off + w[0].out_dim, w[1].w_off);
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let dims = NetDims::for_classes(15);
        let a = init_params(&dims, 3);
        let b = init_params(&dims, 3);
        assert_eq!(a, b);
        assert_ne!(a, init_params(&dims, 4));
        for layer in dims.layers() {
            let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            assert!(a.values[layer.w_off..layer.b_off]
                .iter()
                .all(|w| w.abs() <= bound));
            assert!(a.values[layer.b_off..layer.b_off + layer.out_dim]
                .iter()
                .all(|&b| b == 0.0));
        }
    }

    #[test]
    fn neighbor_graph_orders_by_distance_then_index() {
        let scan = LabeledScan {
            positions: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
            ],
            normals: None,
            class_labels: vec![1; 4],
            instance_ids: vec![1; 4],
            num_classes: 2,
        };
        let graph = build_neighbor_graph(&scan, 3);
        // Point 0: self, then the distance-1 tie between 1 and 2 resolved
        // toward the lower index first.
        assert_eq!(&graph.neighbors[0..3], &[0, 1, 2]);
        // Point 1: points 2 and 3 tie at distance 2; the lower index wins.
        assert_eq!(&graph.neighbors[3..6], &[1, 0, 2]);
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let scan = generate_jaw(&JawConfig::default()).unwrap();
        let dims = NetDims::for_classes(scan.num_classes);
        let params = init_params(&dims, 0);
        let graph = build_neighbor_graph(&scan, dims.k_neighbors);
        let pred = forward(&scan, &graph, &params).unwrap();
        assert_eq!(pred.logits.len(), scan.len() * 15);
        assert_eq!(pred.confidence.len(), scan.len());
        assert_eq!(pred.embedding.len(), scan.len() * 32);
        assert!(pred.confidence.iter().all(|&c| c > 0.0 && c < 1.0));
        assert!(pred.logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn init_posteriors_are_near_uniform() {
        let scan = generate_jaw(&JawConfig::default()).unwrap();
        let dims = NetDims::for_classes(scan.num_classes);
        let params = init_params(&dims, 0);
        let graph = build_neighbor_graph(&scan, dims.k_neighbors);
        let pred = forward(&scan, &graph, &params).unwrap();
        for i in 0..pred.num_points {
            let row = pred.logits_row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            assert!(1.0 / z < 0.5, "point {i} has peaked posterior {}", 1.0 / z);
        }
    }

    #[test]
    fn nan_params_are_rejected() {
        let scan = tiny_scan(0);
        let dims = tiny_dims(scan.num_classes);
        let mut params = init_params(&dims, 0);
        params.values[17] = f64::NAN;
        let graph = build_neighbor_graph(&scan, dims.k_neighbors);
        assert!(matches!(
            forward(&scan, &graph, &params),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn permuting_points_permutes_outputs() {
        let scan = tiny_scan(5);
        let dims = tiny_dims(scan.num_classes);
        let params = init_params(&dims, 1);
        let graph = build_neighbor_graph(&scan, dims.k_neighbors);
        let pred = forward(&scan, &graph, &params).unwrap();

        let n = scan.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let mut shuffled = scan.clone();
        shuffled.positions = perm.iter().map(|&i| scan.positions[i]).collect();
        shuffled.normals = scan
            .normals
            .as_ref()
            .map(|ns| perm.iter().map(|&i| ns[i]).collect());
        shuffled.class_labels = perm.iter().map(|&i| scan.class_labels[i]).collect();
        shuffled.instance_ids = perm.iter().map(|&i| scan.instance_ids[i]).collect();
        let graph2 = build_neighbor_graph(&shuffled, dims.k_neighbors);
        let pred2 = forward(&shuffled, &graph2, &params).unwrap();

        for (new_i, &old_i) in perm.iter().enumerate() {
            for c in 0..pred.num_classes {
                let a = pred.logits[old_i * pred.num_classes + c];
                let b = pred2.logits[new_i * pred.num_classes + c];
                assert!((a - b).abs() < 1e-9, "logit mismatch {a} vs {b}");
            }
            assert!((pred.confidence[old_i] - pred2.confidence[new_i]).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let scan = tiny_scan(11);
        let dims = tiny_dims(scan.num_classes);
        let params = init_params(&dims, 7);
        let graph = build_neighbor_graph(&scan, dims.k_neighbors);
        let n = scan.len();

        // Fixed cotangents make the probe loss linear in every output, so
        // its gradient is exactly what backward propagates.
        let mut probe_rng = rng::seeded(123);
        let co_logits: Vec<f64> = (0..n * dims.num_classes)
            .map(|_| probe_rng.random_range(-1.0..1.0))
            .collect();
        let co_conf: Vec<f64> = (0..n).map(|_| probe_rng.random_range(-1.0..1.0)).collect();
        let co_emb: Vec<f64> = (0..n * dims.embed_dim)
            .map(|_| probe_rng.random_range(-1.0..1.0))
            .collect();

        let (pred, trace) = forward_traced(&scan, &graph, &params).unwrap();
        let grads = PredictionGrads {
            d_logits: co_logits.clone(),
            d_confidence: co_conf.clone(),
            d_embedding: co_emb.clone(),
        };
        let analytic = backward(&params, &graph, &trace, &grads);
        let _ = pred;

        let mut values = params.values.clone();
        let mut probe = |vals: &[f64]| {
            let p = NetworkParams {
                dims,
                values: vals.to_vec(),
            };
            let pred = forward(&scan, &graph, &p).unwrap();
            let mut loss = 0.0;
            for (a, b) in pred.logits.iter().zip(&co_logits) {
                loss += a * b;
            }
            for (a, b) in pred.confidence.iter().zip(&co_conf) {
                loss += a * b;
            }
            for (a, b) in pred.embedding.iter().zip(&co_emb) {
                loss += a * b;
            }
            loss
        };

        let count = values.len();
        let mut check_rng = rng::seeded(77);
        for _ in 0..60 {
            let i = check_rng.random_range(0..count);
            let fd = central_difference(&mut probe, &mut values, i, 1e-5);
            let err = relative_error(analytic[i], fd);
            assert!(
                err < 1e-4,
                "param {i}: analytic {} vs fd {fd}, rel err {err}",
                analytic[i]
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.wsnn");
        let dims = tiny_dims(5);
        let params = init_params(&dims, 9);
        save_params(&params, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.wsnn");
        let params = init_params(&tiny_dims(4), 0);
        save_params(&params, &path).unwrap();

        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 3]).unwrap();
        assert!(matches!(
            load_params(&path).unwrap_err(),
            Error::Format { .. }
        ));

        let mut bad = full.clone();
        bad[4] = 42;
        fs::write(&path, bad).unwrap();
        assert!(matches!(
            load_params(&path).unwrap_err(),
            Error::UnsupportedVersion { found: 42, .. }
        ));

        let mut bad = full;
        bad[0] = b'X';
        fs::write(&path, bad).unwrap();
        assert!(matches!(
            load_params(&path).unwrap_err(),
            Error::Format { offset: 0, .. }
        ));
    }
}
