//! Prompt placement from predicted groups: plain averaging versus the
//! confidence-filtered path, stress-tested with planted far-away outliers.
//!
//! A handful of low-confidence points on the far side of the jaw is enough
//! to drag a group's mean off its tooth. The filtered path drops them
//! before averaging, so its prompts stay put.

use ws3d::camera::default_cameras;
use ws3d::prompter::{
    agg_prompts, cpg_prompts, filter_confident, generate_prompts, partition_subgroups,
    plant_outliers, Prompt,
};
use ws3d::segnet::Prediction;
use ws3d::synthgen::{generate_jaw, JawConfig};

fn main() -> ws3d::Result<()> {
    let scan = generate_jaw(&JawConfig {
        seed: 9,
        ..JawConfig::default()
    })?;
    let cameras = default_cameras(&scan, 1, 128, 128)?;
    let camera = &cameras[0];

    // A confident, correct prediction built from ground truth. Examples of
    // the prompt machinery do not need a trained network.
    let n = scan.len();
    let c = scan.num_classes;
    let mut pred = Prediction {
        num_points: n,
        num_classes: c,
        embed_dim: 2,
        logits: vec![0.0; n * c],
        confidence: vec![0.9; n],
        embedding: vec![0.0; n * 2],
    };
    for i in 0..n {
        pred.logits[i * c + scan.class_labels[i] as usize] = 8.0;
    }

    // Reference prompts from the clean prediction. agg_prompts and
    // cpg_prompts agree here because every point is confident.
    let clean = cpg_prompts(&pred, &scan, &cameras, 0.6)?;
    assert_eq!(clean, agg_prompts(&pred, &scan, &cameras)?);

    // Corrupt every group with its 8 farthest non-members at confidence
    // 0.05, the mechanism the trainer exposes as planted_outliers, then
    // build prompts the way each mode would.
    let mut groups = partition_subgroups(&pred);
    let mut confidence = pred.confidence.clone();
    plant_outliers(&mut groups, &mut confidence, &scan, 8, 0.05);

    let agg = generate_prompts(&groups, &scan, &cameras)?;
    let filtered: Vec<_> = groups
        .iter()
        .map(|s| filter_confident(s, &confidence, 0.6))
        .collect();
    let cpg = generate_prompts(&filtered, &scan, &cameras)?;
    assert_eq!(clean.prompts.len(), scan.num_tooth_classes());

    let find = |set: &[Prompt], class: u16| set.iter().find(|p| p.class_id == class).copied();
    println!("class  clean(u,v)  agg(u,v)  cpg(u,v)  agg-drift  cpg-drift");
    let (mut agg_total, mut cpg_total) = (0.0f64, 0.0f64);
    for reference in &clean.prompts {
        let a = find(&agg.prompts, reference.class_id).expect("agg prompt");
        let f = find(&cpg.prompts, reference.class_id).expect("cpg prompt");
        let drift = |p: Prompt| {
            let du = p.u as f64 - reference.u as f64;
            let dv = p.v as f64 - reference.v as f64;
            (du * du + dv * dv).sqrt()
        };
        let (da, df) = (drift(a), drift(f));
        agg_total += da;
        cpg_total += df;
        println!(
            "{:>5}  ({:>3},{:>3})   ({:>3},{:>3})  ({:>3},{:>3})  {:>9.2}  {:>9.2}",
            reference.class_id, reference.u, reference.v, a.u, a.v, f.u, f.v, da, df
        );
    }
    println!(
        "mean prompt drift under outliers: averaging {:.2} px, filtered {:.2} px",
        agg_total / clean.prompts.len() as f64,
        cpg_total / clean.prompts.len() as f64
    );
    assert!(cpg_total <= agg_total, "filtering should not hurt");

    // The drifted prompt can leave its tooth entirely; check what the
    // camera sees under each prompt pixel.
    let view = ws3d::camera::render(&scan, camera, 1);
    let looks_at = |p: Prompt| {
        let pix = view.pixel(p.v as usize, p.u as usize);
        view.label_image[pix]
    };
    let agg_hits = agg.prompts.iter().filter(|p| looks_at(**p) == p.class_id as i32).count();
    let cpg_hits = cpg.prompts.iter().filter(|p| looks_at(**p) == p.class_id as i32).count();
    println!(
        "prompts landing on their own tooth: averaging {agg_hits}/{}, filtered {cpg_hits}/{}",
        agg.prompts.len(),
        cpg.prompts.len()
    );
    Ok(())
}
