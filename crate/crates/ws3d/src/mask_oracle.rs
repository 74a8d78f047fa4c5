//! Promptable 2D mask oracles.
//!
//! An oracle answers a pixel prompt on a rendered view with a binary object
//! mask. Two implementations ship: a ground-truth-backed oracle that reads
//! the instance footprint at the prompt (with optional boundary noise to
//! mimic an imperfect segmenter), and a subprocess adapter speaking a small
//! file protocol, so any external promptable segmenter can stand in.
//!
//! The subprocess protocol, per view: the adapter writes `view.ppm` (binary
//! P6 render) and `prompts.json` (`[{"id": k, "u": col, "v": row}, ...]`)
//! into a working directory, invokes `<command> <workdir>`, and reads one
//! `mask_<id>.pgm` (binary P5, 0/255) per prompt. A missing mask file makes
//! that prompt's mask empty and is logged; wrong dimensions, unreadable
//! masks, a non-zero exit, or a timeout (`WS3D_ORACLE_TIMEOUT_SECS`,
//! default 60) fail the whole call.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{write_view_ppm, RenderedView};
use crate::error::{Error, Result};
use crate::pnm;
use crate::prompter::Prompt;
use crate::rng::{self, salt};

pub const TIMEOUT_ENV: &str = "WS3D_ORACLE_TIMEOUT_SECS";
pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

/// Row-major H x W binary mask.
pub type Mask = Vec<bool>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskEntry {
    pub class_id: u16,
    /// Prompt pixel column this mask answers.
    pub prompt_u: u32,
    /// Prompt pixel row this mask answers.
    pub prompt_v: u32,
    pub mask: Mask,
}

/// All masks returned for one view, in prompt order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub view_id: usize,
    pub height: usize,
    pub width: usize,
    pub entries: Vec<MaskEntry>,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle command is empty")]
    EmptyCommand,
    #[error("failed to launch oracle {command:?}: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("oracle command failed with {status}: {stderr}")]
    CommandFailed { status: String, stderr: String },
    #[error("oracle timed out after {secs} s")]
    Timeout { secs: u64 },
    #[error("oracle mask {path} is malformed: {message}")]
    MalformedMask { path: PathBuf, message: String },
    #[error(
        "oracle mask {path}: expected {expected_h}x{expected_w}, got {got_h}x{got_w}"
    )]
    MaskDimensions {
        path: PathBuf,
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("oracle workdir {path}: {source}")]
    Workdir {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub trait MaskOracle {
    fn name(&self) -> &'static str;

    /// Answers every prompt of one view. All prompts must target `view`.
    fn segment_all(
        &self,
        view: &RenderedView,
        prompts: &[Prompt],
    ) -> std::result::Result<MaskSet, OracleError>;
}

/// Degradation knobs for the ground-truth oracle: morphological closing
/// (dilate then erode, square structuring elements) plus independent
/// per-pixel flips.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleNoiseConfig {
    pub dilate_px: usize,
    pub erode_px: usize,
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for OracleNoiseConfig {
    fn default() -> Self {
        OracleNoiseConfig {
            dilate_px: 0,
            erode_px: 0,
            flip_prob: 0.0,
            seed: 0,
        }
    }
}

impl OracleNoiseConfig {
    pub fn is_noiseless(&self) -> bool {
        self.dilate_px == 0 && self.erode_px == 0 && self.flip_prob == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) || !self.flip_prob.is_finite() {
            return Err(Error::Config(format!(
                "flip_prob must be within [0, 1], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }
}

/// Ground-truth-backed oracle: the mask is the rendered footprint of the
/// instance under the prompt pixel, then noise. A prompt on an empty pixel
/// snaps to the nearest occupied pixel within distance 3; failing that the
/// mask is empty. Deterministic per (view, prompt, noise config).
pub struct GtOracle {
    pub noise: OracleNoiseConfig,
}

impl MaskOracle for GtOracle {
    fn name(&self) -> &'static str {
        "ground-truth"
    }

    fn segment_all(
        &self,
        view: &RenderedView,
        prompts: &[Prompt],
    ) -> std::result::Result<MaskSet, OracleError> {
        let entries = prompts
            .iter()
            .map(|p| MaskEntry {
                class_id: p.class_id,
                prompt_u: p.u,
                prompt_v: p.v,
                mask: gt_oracle_segment(view, p.u, p.v, &self.noise),
            })
            .collect();
        Ok(MaskSet {
            view_id: prompts.first().map_or(0, |p| p.view_id),
            height: view.height(),
            width: view.width(),
            entries,
        })
    }
}

/// One ground-truth mask for the prompt at column `u`, row `v`.
pub fn gt_oracle_segment(view: &RenderedView, u: u32, v: u32, noise: &OracleNoiseConfig) -> Mask {
    let (h, w) = (view.height(), view.width());
    let empty = vec![false; h * w];
    if v as usize >= h || u as usize >= w {
        return empty;
    }
    let Some(instance) = instance_at_or_near(view, u as usize, v as usize) else {
        return empty;
    };
    let mut mask: Mask = view.instance_image.iter().map(|&i| i == instance).collect();
    if noise.dilate_px > 0 {
        mask = dilate(&mask, h, w, noise.dilate_px);
    }
    if noise.erode_px > 0 {
        mask = erode(&mask, h, w, noise.erode_px);
    }
    if noise.flip_prob > 0.0 {
        let stream = rng::derive(
            rng::derive(noise.seed, ((u as u64) << 32) | v as u64),
            salt::ORACLE_NOISE,
        );
        let mut r = rng::seeded(stream);
        use rand::Rng as _;
        for px in mask.iter_mut() {
            if r.random::<f64>() < noise.flip_prob {
                *px = !*px;
            }
        }
    }
    mask
}

/// Instance id at the pixel, or at the nearest occupied pixel within
/// Euclidean distance 3 (ties favor smaller row, then column offsets).
fn instance_at_or_near(view: &RenderedView, u: usize, v: usize) -> Option<i32> {
    let at = view.instance_image[view.pixel(v, u)];
    if at >= 0 {
        return Some(at);
    }
    let mut offsets: Vec<(i64, i64, i64)> = Vec::new();
    for dv in -3i64..=3 {
        for du in -3i64..=3 {
            let d2 = dv * dv + du * du;
            if d2 > 0 && d2 <= 9 {
                offsets.push((d2, dv, du));
            }
        }
    }
    offsets.sort_unstable();
    for (_, dv, du) in offsets {
        let (row, col) = (v as i64 + dv, u as i64 + du);
        if row < 0 || col < 0 || row >= view.height() as i64 || col >= view.width() as i64 {
            continue;
        }
        let inst = view.instance_image[view.pixel(row as usize, col as usize)];
        if inst >= 0 {
            return Some(inst);
        }
    }
    None
}

/// Morphological dilation with a (2r+1)^2 square structuring element.
pub fn dilate(mask: &Mask, h: usize, w: usize, r: usize) -> Mask {
    morph(mask, h, w, r, true)
}

/// Morphological erosion; pixels beyond the border count as background.
pub fn erode(mask: &Mask, h: usize, w: usize, r: usize) -> Mask {
    morph(mask, h, w, r, false)
}

fn morph(mask: &Mask, h: usize, w: usize, r: usize, grow: bool) -> Mask {
    assert_eq!(mask.len(), h * w, "mask size");
    let r = r as i64;
    let mut out = vec![!grow; h * w];
    for row in 0..h as i64 {
        for col in 0..w as i64 {
            let mut hit = !grow;
            'probe: for dv in -r..=r {
                for du in -r..=r {
                    let (pr, pc) = (row + dv, col + du);
                    let val = if pr < 0 || pc < 0 || pr >= h as i64 || pc >= w as i64 {
                        false
                    } else {
                        mask[pr as usize * w + pc as usize]
                    };
                    if val == grow {
                        hit = grow;
                        break 'probe;
                    }
                }
            }
            out[row as usize * w + col as usize] = hit;
        }
    }
    out
}

/// Complement of the union of all masks in the set: exactly the pixels no
/// foreground mask claims.
pub fn background_mask(set: &MaskSet) -> Mask {
    let mut bg = vec![true; set.height * set.width];
    for entry in &set.entries {
        for (b, &m) in bg.iter_mut().zip(&entry.mask) {
            *b &= !m;
        }
    }
    bg
}

/// JSON record of one prompt in the subprocess protocol.
#[derive(Debug, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: u16,
    pub u: u32,
    pub v: u32,
}

/// Adapter running an external promptable segmenter per the file protocol.
/// Each call gets `<workdir>/view_<id>/`, recreated from scratch.
pub struct ExternalOracle {
    /// Program and fixed arguments; the workdir is appended.
    pub command: Vec<String>,
    pub workdir: PathBuf,
}

/// Timeout for one oracle invocation, from `WS3D_ORACLE_TIMEOUT_SECS`.
fn oracle_timeout() -> Duration {
    let secs = std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or(DEFAULT_TIMEOUT_SECS);
    Duration::from_secs(secs)
}

impl MaskOracle for ExternalOracle {
    fn name(&self) -> &'static str {
        "external"
    }

    fn segment_all(
        &self,
        view: &RenderedView,
        prompts: &[Prompt],
    ) -> std::result::Result<MaskSet, OracleError> {
        let view_id = prompts.first().map_or(0, |p| p.view_id);
        external_oracle_segment(&self.command, &self.workdir, view_id, view, prompts)
    }
}

/// One protocol round trip: write inputs, run the command, collect masks.
pub fn external_oracle_segment(
    command: &[String],
    workdir_base: &Path,
    view_id: usize,
    view: &RenderedView,
    prompts: &[Prompt],
) -> std::result::Result<MaskSet, OracleError> {
    if command.is_empty() {
        return Err(OracleError::EmptyCommand);
    }
    let workdir = workdir_base.join(format!("view_{view_id}"));
    let io_err = |source: std::io::Error| OracleError::Workdir {
        path: workdir.clone(),
        source,
    };
    if workdir.exists() {
        fs::remove_dir_all(&workdir).map_err(io_err)?;
    }
    fs::create_dir_all(&workdir).map_err(io_err)?;

    write_view_ppm(view, &workdir.join("view.ppm")).map_err(|e| match e {
        Error::Io { source, .. } => io_err(source),
        other => io_err(std::io::Error::other(other.to_string())),
    })?;
    let records: Vec<PromptRecord> = prompts
        .iter()
        .map(|p| PromptRecord {
            id: p.class_id,
            u: p.u,
            v: p.v,
        })
        .collect();
    let json = serde_json::to_vec_pretty(&records).expect("prompt records serialize");
    fs::write(workdir.join("prompts.json"), json).map_err(io_err)?;

    run_with_timeout(command, &workdir, oracle_timeout())?;

    let mut entries = Vec::with_capacity(prompts.len());
    for p in prompts {
        let path = workdir.join(format!("mask_{}.pgm", p.class_id));
        let mask = if path.exists() {
            read_mask(&path, view.height(), view.width())?
        } else {
            log::warn!(
                "oracle produced no {} for prompt ({}, {}); treating as empty",
                path.display(),
                p.u,
                p.v
            );
            vec![false; view.height() * view.width()]
        };
        entries.push(MaskEntry {
            class_id: p.class_id,
            prompt_u: p.u,
            prompt_v: p.v,
            mask,
        });
    }
    Ok(MaskSet {
        view_id,
        height: view.height(),
        width: view.width(),
        entries,
    })
}

fn run_with_timeout(
    command: &[String],
    workdir: &Path,
    timeout: Duration,
) -> std::result::Result<(), OracleError> {
    let stderr_path = workdir.join("oracle_stderr.log");
    let stderr_file = fs::File::create(&stderr_path).map_err(|source| OracleError::Workdir {
        path: stderr_path.clone(),
        source,
    })?;
    let mut child = Command::new(&command[0])
        .args(&command[1..])
        .arg(workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(stderr_file)
        .spawn()
        .map_err(|source| OracleError::Spawn {
            command: command.join(" "),
            source,
        })?;

    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if start.elapsed() >= timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(OracleError::Timeout {
                        secs: timeout.as_secs(),
                    });
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(source) => {
                return Err(OracleError::Spawn {
                    command: command.join(" "),
                    source,
                })
            }
        }
    };
    if !status.success() {
        let stderr = fs::read_to_string(&stderr_path).unwrap_or_default();
        return Err(OracleError::CommandFailed {
            status: status.to_string(),
            stderr: stderr.chars().take(500).collect(),
        });
    }
    Ok(())
}

fn read_mask(
    path: &Path,
    expected_h: usize,
    expected_w: usize,
) -> std::result::Result<Mask, OracleError> {
    let img = pnm::read_pgm8(path).map_err(|e| OracleError::MalformedMask {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if img.height != expected_h || img.width != expected_w {
        return Err(OracleError::MaskDimensions {
            path: path.to_path_buf(),
            expected_h,
            expected_w,
            got_h: img.height,
            got_w: img.width,
        });
    }
    Ok(img.pixels.iter().map(|&p| p != 0).collect())
}
