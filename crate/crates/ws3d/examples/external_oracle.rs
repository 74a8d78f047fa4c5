//! Both sides of the subprocess mask-oracle protocol.
//!
//! The adapter writes `view.ppm` (the rendered scene) and `prompts.json`
//! into a fresh work directory, runs the oracle command with that directory
//! as its one argument, and reads back one `mask_<id>.pgm` per prompt; a
//! missing file means "no object here". `WS3D_ORACLE_TIMEOUT_SECS` bounds
//! the child's runtime.
//!
//! This example is its own counterparty: invoked as `serve <workdir>` it
//! answers prompts with fixed-radius discs, so the plain invocation can
//! exercise the adapter against a real subprocess with no external model
//! installed.

use std::path::PathBuf;

use ws3d::camera::{default_cameras, render};
use ws3d::mask_oracle::{ExternalOracle, MaskOracle, PromptRecord};
use ws3d::mrl::reproject_mask_groups;
use ws3d::pnm::{read_ppm, write_pgm8};
use ws3d::prompter::{generate_prompts, Subgroup};
use ws3d::synthgen::{generate_jaw, JawConfig};

fn main() -> ws3d::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() == 3 && args[1] == "serve" {
        return serve(PathBuf::from(&args[2]));
    }

    let workdir = std::env::temp_dir().join(format!("ws3d-oracle-{}", std::process::id()));
    let scan = generate_jaw(&JawConfig {
        seed: 21,
        ..JawConfig::default()
    })?;
    let cameras = default_cameras(&scan, 1, 128, 128)?;
    let view = render(&scan, &cameras[0], 1);
    let subgroups: Vec<Subgroup> = (1..=scan.num_tooth_classes() as u16)
        .map(|c| Subgroup {
            class_id: c,
            indices: scan.class_indices(c),
        })
        .collect();
    let prompts = generate_prompts(&subgroups, &scan, &cameras)?.for_view(0);

    let oracle = ExternalOracle {
        command: vec![
            std::env::current_exe()
                .expect("own executable path")
                .to_string_lossy()
                .into_owned(),
            "serve".into(),
        ],
        workdir: workdir.clone(),
    };
    println!(
        "spawning {:?} per view, workdir {}",
        oracle.command[0],
        workdir.display()
    );
    let masks = oracle.segment_all(&view, &prompts)?;
    println!("oracle answered {} prompts", masks.entries.len());
    for entry in masks.entries.iter().take(4) {
        println!(
            "  class {:>2}: {} px around prompt ({}, {})",
            entry.class_id,
            entry.mask.iter().filter(|&&b| b).count(),
            entry.prompt_u,
            entry.prompt_v
        );
    }

    let groups = reproject_mask_groups(&masks, &view)?;
    let lifted: usize = groups.iter().map(|(_, g)| g.len()).sum();
    println!("masks lifted back to {lifted} scan points across {} groups", groups.len());
    std::fs::remove_dir_all(&workdir).ok();
    Ok(())
}

/// The oracle side: read the view and prompts, answer with disc masks. A
/// real deployment would put a promptable segmentation model here.
fn serve(workdir: PathBuf) -> ws3d::Result<()> {
    let view = read_ppm(&workdir.join("view.ppm"))?;
    let text = std::fs::read_to_string(workdir.join("prompts.json")).expect("prompts.json");
    let prompts: Vec<PromptRecord> = serde_json::from_str(&text).expect("valid prompt list");
    for p in &prompts {
        let mut mask = vec![0u8; view.height * view.width];
        for row in 0..view.height as i64 {
            for col in 0..view.width as i64 {
                let (dv, du) = (row - p.v as i64, col - p.u as i64);
                if dv * dv + du * du <= 36 {
                    mask[row as usize * view.width + col as usize] = 255;
                }
            }
        }
        write_pgm8(
            &workdir.join(format!("mask_{}.pgm", p.id)),
            view.width,
            view.height,
            &mask,
        )?;
    }
    Ok(())
}
