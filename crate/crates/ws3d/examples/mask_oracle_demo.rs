//! The ground-truth-backed mask oracle: instance-footprint answers, the
//! noise knobs, and the background-mask algebra that the mask-guided losses
//! are built on.

use ws3d::camera::{default_cameras, render};
use ws3d::mask_oracle::{background_mask, GtOracle, MaskOracle, OracleNoiseConfig};
use ws3d::mrl::{group_purity, reproject_background, reproject_mask_groups};
use ws3d::prompter::{generate_prompts, Subgroup};
use ws3d::synthgen::{generate_jaw, JawConfig};

fn main() -> ws3d::Result<()> {
    let scan = generate_jaw(&JawConfig {
        seed: 12,
        ..JawConfig::default()
    })?;
    let cameras = default_cameras(&scan, 1, 128, 128)?;
    let view = render(&scan, &cameras[0], 1);

    // Prompts at the projected ground-truth class centers.
    let subgroups: Vec<Subgroup> = (1..=scan.num_tooth_classes() as u16)
        .map(|c| Subgroup {
            class_id: c,
            indices: scan.class_indices(c),
        })
        .collect();
    let set = generate_prompts(&subgroups, &scan, &cameras)?;
    let prompts = set.for_view(0);
    println!(
        "{} prompts placed, {} dropped (off-screen or behind the camera)",
        prompts.len(),
        set.dropped.len()
    );

    let report = |label: &str, noise: OracleNoiseConfig| -> ws3d::Result<()> {
        let oracle = GtOracle { noise };
        let masks = oracle.segment_all(&view, &prompts)?;
        let groups = reproject_mask_groups(&masks, &view)?;
        let mean_px = masks.entries.iter().map(|e| e.mask.iter().filter(|&&b| b).count()).sum::<usize>()
            as f64
            / masks.entries.len().max(1) as f64;
        let purities: Vec<f64> = groups
            .iter()
            .filter_map(|(class, indices)| group_purity(&scan, *class, indices))
            .collect();
        let mean_purity = purities.iter().sum::<f64>() / purities.len().max(1) as f64;
        println!(
            "{label:<28} mean mask {mean_px:>6.1} px, lifted group purity {:.4}",
            mean_purity
        );
        Ok(())
    };

    report("noiseless", OracleNoiseConfig::default())?;
    report(
        "dilate 2 px",
        OracleNoiseConfig {
            dilate_px: 2,
            ..OracleNoiseConfig::default()
        },
    )?;
    report(
        "erode 1 px",
        OracleNoiseConfig {
            erode_px: 1,
            ..OracleNoiseConfig::default()
        },
    )?;
    report(
        "2% pixel flips",
        OracleNoiseConfig {
            flip_prob: 0.02,
            seed: 1,
            ..OracleNoiseConfig::default()
        },
    )?;

    // Background algebra: complement of the union of all masks. No pixel is
    // both claimed and background, and lifting the background yields points
    // the foreground groups never touch.
    let oracle = GtOracle {
        noise: OracleNoiseConfig::default(),
    };
    let masks = oracle.segment_all(&view, &prompts)?;
    let bg = background_mask(&masks);
    let claimed = masks
        .entries
        .iter()
        .fold(vec![false; bg.len()], |mut acc, e| {
            for (a, &m) in acc.iter_mut().zip(&e.mask) {
                *a |= m;
            }
            acc
        });
    assert!(bg.iter().zip(&claimed).all(|(&b, &c)| !(b && c)));
    let groups = reproject_mask_groups(&masks, &view)?;
    let bg_points = reproject_background(&bg, &view, &groups);
    let fg_points: usize = groups.iter().map(|(_, g)| g.len()).sum();
    println!(
        "background: {} px -> {} points; foreground groups hold {} points, overlap 0",
        bg.iter().filter(|&&b| b).count(),
        bg_points.len(),
        fg_points
    );
    let gingiva_frac = group_purity(&scan, 0, &bg_points).unwrap_or(0.0);
    println!("lifted background is {:.1}% gingiva", 100.0 * gingiva_frac);
    Ok(())
}
